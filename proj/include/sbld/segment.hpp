#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sbld/common.hpp"
#include "sbld/io.hpp"
#include "sbld/metrics.hpp"
#include "sbld/nn.hpp"
#include "sbld/volume.hpp"

// Desk-scale segmentation harness: classic augmentation ops, a fixed small
// 3D U-Net trained with Dice + BCE, and the multi-regime data benchmark.

namespace sbld {

struct SegCase {
    VolumeGrid image;
    MaskGrid mask;
};

// ---- classic augmentation -------------------------------------------------

inline SegCase flip_case(const SegCase& c, int axis) {
    if (axis < 0 || axis > 2) throw validation_error("flip_case: axis must be 0, 1 or 2");
    const Dims d = c.image.dims;
    SegCase out{VolumeGrid(d), MaskGrid(d)};
    out.image.value_range = c.image.value_range;
    for (int z = 0; z < d.d; ++z)
        for (int y = 0; y < d.h; ++y)
            for (int x = 0; x < d.w; ++x) {
                const int sx = axis == 0 ? d.w - 1 - x : x;
                const int sy = axis == 1 ? d.h - 1 - y : y;
                const int sz = axis == 2 ? d.d - 1 - z : z;
                out.image.at(x, y, z) = c.image.at(sx, sy, sz);
                out.mask.at(x, y, z) = c.mask.at(sx, sy, sz);
            }
    return out;
}

// rotation in the x-y (axial) plane about the volume center, nearest neighbor
inline SegCase rotate_axial_case(const SegCase& c, double angle_deg) {
    const Dims d = c.image.dims;
    SegCase out{VolumeGrid(d), MaskGrid(d)};
    out.image.value_range = c.image.value_range;
    const double rad = angle_deg * std::numbers::pi / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cx = 0.5 * (d.w - 1), cy = 0.5 * (d.h - 1);
    for (int z = 0; z < d.d; ++z)
        for (int y = 0; y < d.h; ++y)
            for (int x = 0; x < d.w; ++x) {
                // inverse rotation of the output coordinate
                const double dx = x - cx, dy = y - cy;
                const int sx = int(std::lround(cx + cs * dx + sn * dy));
                const int sy = int(std::lround(cy - sn * dx + cs * dy));
                if (sx < 0 || sx >= d.w || sy < 0 || sy >= d.h) continue;
                out.image.at(x, y, z) = c.image.at(sx, sy, z);
                out.mask.at(x, y, z) = c.mask.at(sx, sy, z);
            }
    return out;
}

inline SegCase add_image_noise(const SegCase& c, double sigma, Rng& rng) {
    if (sigma < 0.0 || sigma > 0.02) throw validation_error("add_image_noise: sigma must be in [0, 0.02]");
    SegCase out = c;
    for (auto& v : out.image.voxels)
        v = float(std::clamp(double(v) + sigma * rng.normal(), 0.0, 1.0));
    return out;
}

// random composition of flips, a +-10 degree axial rotation and image noise
inline SegCase classic_augment(const SegCase& c, uint64_t seed) {
    Rng rng(derive_seed(seed, 0x5e6));
    SegCase out = c;
    for (int axis = 0; axis < 3; ++axis)
        if (rng.uniform() < 0.5) out = flip_case(out, axis);
    const double angle = rng.uniform(-10.0, 10.0);
    out = rotate_axial_case(out, angle);
    const double sigma = rng.uniform(0.0, 0.02);
    return add_image_noise(out, sigma, rng);
}

// ---- Dice + BCE loss ------------------------------------------------------

struct SegLossTerms {
    double total = 0.0;
    double bce = 0.0;
    double dice = 0.0;  // soft dice loss, 1 - score
};

template <typename T>
SegLossTerms dice_bce_loss(std::span<const T> logits, std::span<const T> targets,
                           std::vector<T>* dlogits = nullptr) {
    if (logits.size() != targets.size() || logits.empty())
        throw validation_error("dice_bce_loss: shape mismatch");
    const size_t n = logits.size();
    const double smooth = 1.0;

    std::vector<double> probs(n);
    double inter = 0.0, psum = 0.0, gsum = 0.0;
    for (size_t i = 0; i < n; ++i) {
        probs[i] = 1.0 / (1.0 + std::exp(-double(logits[i])));
        inter += probs[i] * double(targets[i]);
        psum += probs[i];
        gsum += double(targets[i]);
    }
    const double denom = psum + gsum + smooth;
    const double score = (2.0 * inter + smooth) / denom;

    SegLossTerms t;
    t.dice = 1.0 - score;
    std::vector<T> dbce;
    t.bce = nn::bce_with_logits<T>(logits, targets, dlogits ? &dbce : nullptr);
    t.total = t.bce + t.dice;

    if (dlogits) {
        dlogits->assign(n, T(0));
        for (size_t i = 0; i < n; ++i) {
            const double dscore_dp = (2.0 * double(targets[i]) * denom - (2.0 * inter + smooth)) / (denom * denom);
            const double dp_dz = probs[i] * (1.0 - probs[i]);
            (*dlogits)[i] = dbce[i] + T(-dscore_dp * dp_dz);
        }
    }
    return t;
}

// ---- fixed small 3D U-Net ---------------------------------------------------

namespace detail {

// conv -> GroupNorm -> SiLU
template <typename T>
struct SegBlock {
    nn::Conv3d<T> conv;
    nn::GroupNorm<T> gn;
    nn::SiLU<T> act;

    void init(int cin, int cout, Rng& rng) {
        conv.init(cin, cout, 3, 1, rng);
        gn.init(cout, nn::norm_groups(cout));
    }
    std::vector<T> forward(std::span<const T> x, int W, int H, int D) {
        auto h = conv.forward(x, W, H, D);
        h = gn.forward(h, W * H * D);
        return act.forward(h);
    }
    std::vector<T> backward(std::span<const T> gy) {
        auto g = act.backward(gy);
        g = gn.backward(g);
        return conv.backward(g);
    }
    template <typename Fn>
    void for_each_param(const std::string& prefix, Fn&& fn) {
        conv.for_each_param(prefix + ".conv", fn);
        gn.for_each_param(prefix + ".gn", fn);
    }
};

}  // namespace detail

struct SegConfig {
    int base = 16;

    void validate() const {
        if (base < 1) throw config_error("SegConfig: base must be positive");
    }
};

template <typename T>
struct SegModel {
    SegConfig cfg;
    nn::Conv3d<T> conv_in;
    detail::SegBlock<T> b0;
    nn::Conv3d<T> down;
    detail::SegBlock<T> b1;
    nn::Upsample2x3d<T> up;
    nn::Conv3d<T> upc;
    detail::SegBlock<T> b2;
    nn::Conv3d<T> conv_out;

    int W_ = 0, H_ = 0, D_ = 0;

    void init(const SegConfig& config, Rng& rng) {
        cfg = config;
        cfg.validate();
        const int C = cfg.base;
        conv_in.init(1, C, 3, 1, rng);
        b0.init(C, C, rng);
        down.init(C, 2 * C, 3, 2, rng);
        b1.init(2 * C, 2 * C, rng);
        upc.init(2 * C, C, 3, 1, rng);
        b2.init(2 * C, C, rng);
        conv_out.init(C, 1, 3, 1, rng);
    }

    static void check_dims(int W, int H, int D) {
        if (W < 2 || H < 2 || D < 2 || W % 2 != 0 || H % 2 != 0 || D % 2 != 0)
            throw config_error("SegModel: dims must be even");
    }

    // image is a W*H*D volume; returns per-voxel mask logits
    std::vector<T> forward(std::span<const T> image, int W, int H, int D) {
        check_dims(W, H, D);
        if (image.size() != size_t(W) * H * D) throw validation_error("SegModel: input size mismatch");
        W_ = W;
        H_ = H;
        D_ = D;
        auto h = conv_in.forward(image, W, H, D);
        const auto e0 = b0.forward(h, W, H, D);
        h = down.forward(e0, W, H, D);
        h = b1.forward(h, W / 2, H / 2, D / 2);
        h = up.forward(h, 2 * cfg.base, W / 2, H / 2, D / 2);
        h = upc.forward(h, W, H, D);
        h.insert(h.end(), e0.begin(), e0.end());
        h = b2.forward(h, W, H, D);
        return conv_out.forward(h, W, H, D);
    }

    void backward(std::span<const T> dlogits) {
        auto g = conv_out.backward(dlogits);
        g = b2.backward(g);
        const size_t full = size_t(W_) * H_ * D_;
        std::vector<T> ge0(g.begin() + size_t(cfg.base) * full, g.end());
        g.resize(size_t(cfg.base) * full);
        g = upc.backward(g);
        g = up.backward(g);
        g = b1.backward(g);
        g = down.backward(g);
        for (size_t i = 0; i < g.size(); ++i) g[i] += ge0[i];
        g = b0.backward(g);
        conv_in.backward(g);
    }

    template <typename Fn>
    void for_each_param(Fn&& fn) {
        conv_in.for_each_param("in", fn);
        b0.for_each_param("b0", fn);
        down.for_each_param("down", fn);
        b1.for_each_param("b1", fn);
        upc.for_each_param("up", fn);
        b2.for_each_param("b2", fn);
        conv_out.for_each_param("out", fn);
    }
};

// ---- training and evaluation ------------------------------------------------

struct SegTrainConfig {
    SegConfig model;
    int steps = 240;
    double lr = 2e-3;

    void validate() const {
        model.validate();
        if (steps < 1) throw config_error("SegTrainConfig: steps must be positive");
        if (!(lr > 0.0)) throw config_error("SegTrainConfig: lr must be positive");
    }
};

struct SegTrainResult {
    SegModel<float> model;
    std::vector<double> losses;
};

inline SegTrainResult train_segmenter(const std::vector<SegCase>& cases, const SegTrainConfig& cfg,
                                      uint64_t seed) {
    cfg.validate();
    if (cases.empty()) throw validation_error("train_segmenter: empty training set");
    for (const auto& c : cases) {
        c.image.validate();
        c.mask.validate();
        if (!(c.image.dims == c.mask.dims)) throw validation_error("train_segmenter: case dims mismatch");
    }

    SegTrainResult r;
    Rng init_rng(derive_seed(seed, 1));
    r.model.init(cfg.model, init_rng);
    nn::Adam<float> opt(cfg.lr);
    Rng order_rng(derive_seed(seed, 2));

    std::vector<float> targets;
    for (int step = 0; step < cfg.steps; ++step) {
        const auto& c = cases[size_t(order_rng.uniform_int(cases.size()))];
        const Dims d = c.image.dims;
        targets.resize(c.mask.voxels.size());
        for (size_t i = 0; i < targets.size(); ++i) targets[i] = float(c.mask.voxels[i]);

        nn::zero_grads(r.model);
        const auto logits = r.model.forward(c.image.voxels, d.w, d.h, d.d);
        std::vector<float> dlogits;
        const auto terms = dice_bce_loss<float>(logits, targets, &dlogits);
        if (!std::isfinite(terms.total)) throw training_error("train_segmenter: non-finite loss");
        r.losses.push_back(terms.total);
        r.model.backward(dlogits);
        opt.step(r.model);
    }
    return r;
}

inline MaskGrid predict_mask(SegModel<float>& model, const VolumeGrid& image) {
    const Dims d = image.dims;
    const auto logits = model.forward(image.voxels, d.w, d.h, d.d);
    MaskGrid out(d);
    for (size_t i = 0; i < logits.size(); ++i) out.voxels[i] = logits[i] > 0.0f ? 1 : 0;
    return out;
}

// ---- benchmark regimes ------------------------------------------------------

struct RegimeSpec {
    std::string name;
    int n_real = 0;
    int n_synth = 0;
    int aug_factor = 1;

    void validate() const {
        const bool known = name == "real" || name == "real_aug" || name == "synth_only" ||
                           name == "real_plus_synth" || name == "real_plus_synth_aug";
        if (!known) throw validation_error("RegimeSpec: unknown regime " + name);
        if (aug_factor < 1) throw validation_error("RegimeSpec: aug_factor must be >= 1");
        if (name == "synth_only" && n_real != 0) throw validation_error("RegimeSpec: synth_only takes no real cases");
        if (name != "synth_only" && n_real < 1) throw validation_error("RegimeSpec: regime needs real cases");
        const bool wants_synth = name == "synth_only" || name == "real_plus_synth" || name == "real_plus_synth_aug";
        if (wants_synth && n_synth < 1) throw validation_error("RegimeSpec: regime needs synthetic cases");
        if (!wants_synth && n_synth != 0) throw validation_error("RegimeSpec: regime takes no synthetic cases");
        const bool wants_aug = name == "real_aug" || name == "real_plus_synth_aug";
        if (wants_aug && aug_factor < 2) throw validation_error("RegimeSpec: augmented regime needs aug_factor >= 2");
        if (!wants_aug && aug_factor != 1) throw validation_error("RegimeSpec: non-augmented regime has aug_factor 1");
    }
};

inline std::vector<RegimeSpec> standard_regimes(int n_real = 20, int n_synth = 20, int aug_factor = 5) {
    return {
        {"real", n_real, 0, 1},
        {"real_aug", n_real, 0, aug_factor},
        {"synth_only", 0, n_synth, 1},
        {"real_plus_synth", n_real, n_synth, 1},
        {"real_plus_synth_aug", n_real, n_synth, aug_factor},
    };
}

inline RegimeSpec regime_from_name(const std::string& name, int n_real, int n_synth, int aug_factor) {
    for (auto& r : standard_regimes(n_real, n_synth, aug_factor))
        if (r.name == name) return r;
    throw validation_error("unknown regime: " + name);
}

struct SegResult {
    RegimeSpec regime;
    double dsc_mean = 0.0, dsc_std = 0.0;
    double iou_mean = 0.0, iou_std = 0.0;
    std::vector<uint64_t> seeds;
};

struct SegBenchConfig {
    SegTrainConfig train;
    int n_seeds = 3;
    uint64_t seed_base = 1234;
};

// one regime: build the training set, train once per seed, evaluate on test
inline SegResult run_regime(const RegimeSpec& regime, const std::vector<SegCase>& real_train,
                            const std::vector<SegCase>& synth, const std::vector<SegCase>& test,
                            const SegBenchConfig& cfg, size_t regime_index) {
    regime.validate();
    if (regime.n_real > int(real_train.size()))
        throw validation_error("run_regime: not enough real training cases for " + regime.name);
    if (regime.n_synth > int(synth.size()))
        throw validation_error("run_regime: not enough synthetic cases for " + regime.name);
    if (test.empty()) throw validation_error("run_regime: empty test set");

    std::vector<SegCase> base_set;
    for (int i = 0; i < regime.n_real; ++i) base_set.push_back(real_train[size_t(i)]);
    for (int i = 0; i < regime.n_synth; ++i) base_set.push_back(synth[size_t(i)]);

    SegResult result;
    result.regime = regime;
    std::vector<double> dscs, ious;
    for (int k = 0; k < cfg.n_seeds; ++k) {
        const uint64_t seed = derive_seed(cfg.seed_base, regime_index * 1000 + size_t(k));
        result.seeds.push_back(seed);

        std::vector<SegCase> train_set = base_set;
        for (int rep = 1; rep < regime.aug_factor; ++rep)
            for (size_t i = 0; i < base_set.size(); ++i)
                train_set.push_back(classic_augment(base_set[i], derive_seed(seed, 7000 + rep * 100 + i)));

        auto trained = train_segmenter(train_set, cfg.train, seed);
        for (const auto& tc : test) {
            const auto pred = predict_mask(trained.model, tc.image);
            dscs.push_back(dice(pred, tc.mask));
            ious.push_back(iou(pred, tc.mask));
        }
    }
    const auto ds = mean_std(dscs);
    const auto is = mean_std(ious);
    result.dsc_mean = ds.mean;
    result.dsc_std = ds.std;
    result.iou_mean = is.mean;
    result.iou_std = is.std;
    return result;
}

inline std::vector<SegCase> load_manifest_cases(const DatasetManifest& man, const std::filesystem::path& dir,
                                                std::string_view split, int limit = -1) {
    std::vector<SegCase> out;
    for (const auto* rec : man.split_cases(split)) {
        if (limit >= 0 && int(out.size()) >= limit) break;
        out.push_back({read_volume(dir / rec->image_path), read_mask(dir / rec->mask_path)});
    }
    return out;
}

// benchmark over regimes; real cases come from the manifest train split,
// evaluation always uses the untouched test split
inline std::vector<SegResult> run_benchmark(const DatasetManifest& man, const std::filesystem::path& data_dir,
                                            const std::vector<SegCase>& synth,
                                            const std::vector<RegimeSpec>& regimes, const SegBenchConfig& cfg) {
    if (regimes.empty()) throw validation_error("run_benchmark: no regimes requested");
    // hard isolation assertion: training inputs never reference a test id
    std::vector<std::string> test_ids;
    for (const auto* rec : man.split_cases("test")) test_ids.push_back(rec->case_id);
    for (const auto* rec : man.split_cases("train"))
        if (std::find(test_ids.begin(), test_ids.end(), rec->case_id) != test_ids.end())
            throw validation_error("run_benchmark: case " + rec->case_id + " appears in train and test");

    const auto real_train = load_manifest_cases(man, data_dir, "train");
    const auto test = load_manifest_cases(man, data_dir, "test");
    std::vector<SegResult> results;
    for (size_t i = 0; i < regimes.size(); ++i)
        results.push_back(run_regime(regimes[i], real_train, synth, test, cfg, i));
    return results;
}

inline nlohmann::ordered_json benchmark_report_json(const std::vector<SegResult>& results) {
    nlohmann::ordered_json j;
    j["report"] = "segmentation_benchmark";
    auto rows = nlohmann::ordered_json::array();
    for (const auto& r : results) {
        nlohmann::ordered_json row;
        row["regime"] = r.regime.name;
        row["n_real"] = r.regime.n_real;
        row["n_synth"] = r.regime.n_synth;
        row["aug_factor"] = r.regime.aug_factor;
        row["seeds"] = r.seeds;
        row["dsc_mean"] = r.dsc_mean;
        row["dsc_std"] = r.dsc_std;
        row["iou_mean"] = r.iou_mean;
        row["iou_std"] = r.iou_std;
        rows.push_back(row);
    }
    j["rows"] = rows;
    return j;
}

inline std::string benchmark_report_table(const std::vector<SegResult>& results) {
    std::string out;
    char line[160];
    std::snprintf(line, sizeof(line), "%-22s %7s %8s %5s %16s %16s\n", "regime", "n_real", "n_synth", "aug",
                  "DSC", "IoU");
    out += line;
    out += std::string(78, '-') + "\n";
    for (const auto& r : results) {
        std::snprintf(line, sizeof(line), "%-22s %7d %8d %5d %8.3f ~ %5.3f %8.3f ~ %5.3f\n",
                      r.regime.name.c_str(), r.regime.n_real, r.regime.n_synth, r.regime.aug_factor, r.dsc_mean,
                      r.dsc_std, r.iou_mean, r.iou_std);
        out += line;
    }
    return out;
}

}  // namespace sbld

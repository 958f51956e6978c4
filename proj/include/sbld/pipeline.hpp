#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sbld/common.hpp"
#include "sbld/denoiser.hpp"
#include "sbld/diffusion.hpp"
#include "sbld/features.hpp"
#include "sbld/io.hpp"
#include "sbld/latent.hpp"
#include "sbld/metrics.hpp"
#include "sbld/nn.hpp"
#include "sbld/vae.hpp"
#include "sbld/volume.hpp"

// End-to-end orchestration: one RunConfig drives VAE training, latent
// encoding, diffusion training, sampling, and the evaluation reports. Every
// numeric output is a pure function of (config, seed, dataset), so reruns
// reproduce artifacts byte for byte.

namespace sbld {

// ------------------------------------------------------------- run config

struct RunConfig {
    Dims dims{32, 32, 16};
    VaeConfig vae{};
    double lambda_mask = kVaeLambdaMask;
    double lambda_kl = kVaeLambdaKl;
    int diffusion_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    DenoiserConfig denoiser{};
    double vae_lr = 1e-5;
    double ldm_lr = 1e-5;
    int vae_steps = 4000;
    int vae_batch = 8;
    int ldm_steps = 4000;
    int ldm_batch = 4;
    int log_every = 50;
    uint64_t seed = 2024;

    int latent_w() const { return dims.w / 4; }
    int latent_h() const { return dims.h / 4; }
    int latent_d() const { return dims.d; }

    void validate() const {
        if (dims.w < 4 || dims.h < 4 || dims.d < 1) throw config_error("RunConfig: dims too small");
        if (dims.w % 4 != 0 || dims.h % 4 != 0)
            throw config_error("RunConfig: width and height must be divisible by 4");
        if (latent_w() % 4 != 0 || latent_h() % 4 != 0 || latent_d() % 4 != 0)
            throw config_error("RunConfig: latent grid must be divisible by 4 for the denoiser");
        vae.validate();
        denoiser.validate();
        if (denoiser.in_channels != vae.latent_channels)
            throw config_error("RunConfig: denoiser in_channels must match vae latent_channels");
        if (diffusion_steps < 1) throw config_error("RunConfig: diffusion_steps must be >= 1");
        if (!(beta_start > 0.0) || beta_end < beta_start || beta_end >= 1.0)
            throw config_error("RunConfig: need 0 < beta_start <= beta_end < 1");
        if (!(vae_lr > 0.0) || !(ldm_lr > 0.0)) throw config_error("RunConfig: learning rates must be positive");
        if (vae_steps < 1 || ldm_steps < 1) throw config_error("RunConfig: step counts must be >= 1");
        if (vae_batch < 1 || ldm_batch < 1) throw config_error("RunConfig: batch sizes must be >= 1");
        if (log_every < 1) throw config_error("RunConfig: log_every must be >= 1");
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["version"] = 1;
        j["seed"] = seed;
        j["dims"] = {dims.w, dims.h, dims.d};
        j["vae"] = {{"base", vae.base},
                    {"latent_channels", vae.latent_channels},
                    {"d_pos", vae.d_pos},
                    {"lambda_mask", lambda_mask},
                    {"lambda_kl", lambda_kl},
                    {"lr", vae_lr},
                    {"steps", vae_steps},
                    {"batch", vae_batch}};
        j["diffusion"] = {{"timesteps", diffusion_steps}, {"beta_start", beta_start}, {"beta_end", beta_end}};
        j["denoiser"] = {{"in_channels", denoiser.in_channels},
                         {"base_channels", denoiser.base_channels},
                         {"channel_mult", denoiser.channel_mult},
                         {"d_emb", denoiser.d_emb},
                         {"tau_hidden", denoiser.tau_hidden},
                         {"lr", ldm_lr},
                         {"steps", ldm_steps},
                         {"batch", ldm_batch}};
        j["log_every"] = log_every;
        return j;
    }

    static RunConfig from_json(const nlohmann::json& j) {
        RunConfig c;
        c.seed = j.at("seed").get<uint64_t>();
        const auto& jd = j.at("dims");
        c.dims = Dims{jd.at(0).get<int>(), jd.at(1).get<int>(), jd.at(2).get<int>()};
        const auto& jv = j.at("vae");
        c.vae.base = jv.at("base").get<int>();
        c.vae.latent_channels = jv.at("latent_channels").get<int>();
        c.vae.d_pos = jv.at("d_pos").get<int>();
        c.lambda_mask = jv.at("lambda_mask").get<double>();
        c.lambda_kl = jv.at("lambda_kl").get<double>();
        c.vae_lr = jv.at("lr").get<double>();
        c.vae_steps = jv.at("steps").get<int>();
        c.vae_batch = jv.at("batch").get<int>();
        const auto& jf = j.at("diffusion");
        c.diffusion_steps = jf.at("timesteps").get<int>();
        c.beta_start = jf.at("beta_start").get<double>();
        c.beta_end = jf.at("beta_end").get<double>();
        const auto& jn = j.at("denoiser");
        c.denoiser.in_channels = jn.at("in_channels").get<int>();
        c.denoiser.base_channels = jn.at("base_channels").get<int>();
        c.denoiser.channel_mult = jn.at("channel_mult").get<std::vector<int>>();
        c.denoiser.d_emb = jn.at("d_emb").get<int>();
        c.denoiser.tau_hidden = jn.at("tau_hidden").get<std::vector<int>>();
        c.ldm_lr = jn.at("lr").get<double>();
        c.ldm_steps = jn.at("steps").get<int>();
        c.ldm_batch = jn.at("batch").get<int>();
        c.log_every = j.at("log_every").get<int>();
        c.validate();
        return c;
    }

    // Small widths and a hot learning rate so the full two-stage run fits a
    // desk-class CPU budget while still clearing the quality gates.
    static RunConfig desk_preset() {
        RunConfig c;
        c.vae.base = 16;
        c.vae.d_pos = 64;
        c.denoiser.base_channels = 16;
        c.lambda_mask = 3.0;
        c.vae_lr = 2e-3;
        c.ldm_lr = 1e-3;
        c.vae_steps = 4000;
        c.vae_batch = 8;
        c.ldm_steps = 2400;
        c.ldm_batch = 4;
        return c;
    }
};

inline void write_run_config(const RunConfig& cfg, const std::filesystem::path& run_dir) {
    cfg.validate();
    std::filesystem::create_directories(run_dir);
    std::ofstream out(run_dir / "config.json", std::ios::trunc);
    if (!out) throw io_error("cannot write config: " + (run_dir / "config.json").string());
    out << cfg.to_json().dump(2) << "\n";
    if (!out) throw io_error("write failed: " + (run_dir / "config.json").string());
}

inline RunConfig read_run_config(const std::filesystem::path& run_dir) {
    const auto path = run_dir / "config.json";
    std::ifstream in(path);
    if (!in) throw io_error("cannot read config: " + path.string());
    try {
        return RunConfig::from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw format_error("bad run config in " + path.string() + ": " + e.what());
    }
}

inline void write_text_file(const std::string& text, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot open for write: " + path.string());
    out << text;
    if (!out) throw io_error("write failed: " + path.string());
}

inline void write_json_file(const nlohmann::ordered_json& j, const std::filesystem::path& path) {
    write_text_file(j.dump(2) + "\n", path);
}

// ------------------------------------------------------------ data access

struct LoadedCase {
    CaseRecord rec;
    VolumeGrid image;
    MaskGrid mask;
};

inline std::vector<LoadedCase> load_split(const DatasetManifest& man, const std::filesystem::path& data_dir,
                                          const std::string& split, Dims expect) {
    if (!(man.dims == expect))
        throw config_error("dataset dims do not match config (dataset " + std::to_string(man.dims.w) + "x" +
                           std::to_string(man.dims.h) + "x" + std::to_string(man.dims.d) + ")");
    std::vector<LoadedCase> out;
    for (const auto* rec : man.split_cases(split)) {
        LoadedCase c;
        c.rec = *rec;
        c.image = read_volume(data_dir / rec->image_path);
        c.mask = read_mask(data_dir / rec->mask_path);
        if (!(c.image.dims == man.dims) || !(c.mask.dims == man.dims))
            throw format_error("case " + rec->case_id + " dims do not match manifest");
        out.push_back(std::move(c));
    }
    return out;
}

namespace detail {

inline std::vector<float> mask_slice_f32(const MaskGrid& mask, int z) {
    const auto s = mask.slice(z);
    std::vector<float> f(s.size());
    for (size_t i = 0; i < s.size(); ++i) f[i] = float(s[i]);
    return f;
}

inline bool mask_slice_any(const MaskGrid& mask, int z) {
    for (auto v : mask.slice(z))
        if (v) return true;
    return false;
}

inline void flip_slice(std::vector<float>& v, int W, int H, bool fx, bool fy) {
    if (fx)
        for (int y = 0; y < H; ++y) std::reverse(v.begin() + ptrdiff_t(y) * W, v.begin() + ptrdiff_t(y + 1) * W);
    if (fy)
        for (int y = 0; y < H / 2; ++y)
            std::swap_ranges(v.begin() + ptrdiff_t(y) * W, v.begin() + ptrdiff_t(y + 1) * W,
                             v.begin() + ptrdiff_t(H - 1 - y) * W);
}

}  // namespace detail

// --------------------------------------------------------------- stage 1

struct VaeValMetrics {
    double psnr = 0.0;
    double baseline_psnr = 0.0;
    double mask_dice = 0.0;
    int n_cases = 0;
};

struct VaeTrainResult {
    std::vector<double> losses;
    VaeValMetrics val;
};

// Deterministic reconstruction through the latent bottleneck: z = mu.
template <typename T>
std::pair<VolumeGrid, MaskGrid> reconstruct_volume(VaeModel<T>& model, const VolumeGrid& image,
                                                   const MaskGrid& mask) {
    const int W = image.dims.w, H = image.dims.h, D = image.dims.d;
    VolumeGrid rec;
    rec.dims = image.dims;
    rec.voxels.assign(size_t(image.dims.voxels()), 0.f);
    MaskGrid rmask;
    rmask.dims = image.dims;
    rmask.voxels.assign(size_t(image.dims.voxels()), 0);
    for (int z = 0; z < D; ++z) {
        const auto pos = positional_embedding<T>(z, D, model.cfg.d_pos);
        std::vector<T> img(image.slice(z).begin(), image.slice(z).end());
        const auto mk = detail::mask_slice_f32(mask, z);
        std::vector<T> mkt(mk.begin(), mk.end());
        auto [mu, logvar] = model.encode(std::span<const T>(img), std::span<const T>(mkt),
                                         std::span<const T>(pos), W, H);
        (void)logvar;
        auto [image_hat, mask_logits] = model.decode(std::span<const T>(mu), std::span<const T>(pos), W, H);
        auto ro = rec.slice(z);
        for (size_t i = 0; i < ro.size(); ++i) ro[i] = float(image_hat[i]);
        auto mo = rmask.slice(z);
        for (size_t i = 0; i < mo.size(); ++i) mo[i] = mask_logits[i] > 0 ? 1 : 0;
    }
    return {std::move(rec), std::move(rmask)};
}

// Voxel-wise mean of the training images; the reference floor for val PSNR.
inline VolumeGrid mean_image(const std::vector<LoadedCase>& cases) {
    if (cases.empty()) throw validation_error("mean_image: empty case list");
    VolumeGrid m;
    m.dims = cases.front().image.dims;
    std::vector<double> acc(size_t(m.dims.voxels()), 0.0);
    for (const auto& c : cases)
        for (size_t i = 0; i < acc.size(); ++i) acc[i] += c.image.voxels[i];
    m.voxels.resize(acc.size());
    for (size_t i = 0; i < acc.size(); ++i) m.voxels[i] = float(acc[i] / double(cases.size()));
    return m;
}

// Mean Dice over ground-truth-nonempty slices of the reconstructed masks.
inline double nonempty_slice_dice(const MaskGrid& pred, const MaskGrid& gt, double* count = nullptr) {
    double sum = 0.0;
    int n = 0;
    for (int z = 0; z < gt.dims.d; ++z) {
        const auto gs = gt.slice(z);
        const auto ps = pred.slice(z);
        int64_t inter = 0, a = 0, b = 0;
        for (size_t i = 0; i < gs.size(); ++i) {
            a += ps[i] ? 1 : 0;
            b += gs[i] ? 1 : 0;
            inter += (ps[i] && gs[i]) ? 1 : 0;
        }
        if (b == 0) continue;
        sum += 2.0 * double(inter) / double(a + b);
        ++n;
    }
    if (count) *count = n;
    return n > 0 ? sum / n : 0.0;
}

template <typename T>
VaeValMetrics validate_vae(VaeModel<T>& model, const std::vector<LoadedCase>& val,
                           const VolumeGrid& baseline) {
    VaeValMetrics m;
    if (val.empty()) return m;
    double dice_sum = 0.0;
    int dice_n = 0;
    for (const auto& c : val) {
        auto [rec, rmask] = reconstruct_volume(model, c.image, c.mask);
        m.psnr += psnr(rec, c.image);
        m.baseline_psnr += psnr(baseline, c.image);
        double cnt = 0.0;
        const double d = nonempty_slice_dice(rmask, c.mask, &cnt);
        if (cnt > 0) {
            dice_sum += d;
            ++dice_n;
        }
    }
    m.n_cases = int(val.size());
    m.psnr /= val.size();
    m.baseline_psnr /= val.size();
    m.mask_dice = dice_n > 0 ? dice_sum / dice_n : 0.0;
    return m;
}

inline VaeTrainResult train_vae(const RunConfig& cfg, const std::filesystem::path& data_dir,
                                const std::filesystem::path& run_dir) {
    cfg.validate();
    const auto man = read_manifest(data_dir / "manifest.json");
    const auto train = load_split(man, data_dir, "train", cfg.dims);
    const auto val = load_split(man, data_dir, "val", cfg.dims);
    if (train.empty()) throw validation_error("train_vae: train split is empty");
    write_run_config(cfg, run_dir);

    VaeModel<float> model;
    {
        Rng init_rng(derive_seed(cfg.seed, 0xA0));
        model.init(cfg.vae, init_rng);
    }
    nn::Adam<float> opt(cfg.vae_lr);

    // Tumor-bearing slices are scarce but carry the whole mask loss; sample
    // them 3x as often. Every slice stays in the pool.
    std::vector<std::pair<int, int>> slices;  // (case, z)
    for (int i = 0; i < int(train.size()); ++i)
        for (int z = 0; z < cfg.dims.d; ++z) {
            slices.emplace_back(i, z);
            if (detail::mask_slice_any(train[size_t(i)].mask, z)) {
                slices.emplace_back(i, z);
                slices.emplace_back(i, z);
            }
        }

    const int W = cfg.dims.w, H = cfg.dims.h, D = cfg.dims.d;
    const size_t latent_plane = size_t(cfg.vae.latent_channels) * (W / 4) * (H / 4);
    VaeTrainResult result;
    for (int s = 0; s < cfg.vae_steps; ++s) {
        Rng srng(derive_seed(cfg.seed, 0xAE000000ULL + uint64_t(s)));
        nn::zero_grads(model);
        double loss = 0.0;
        for (int b = 0; b < cfg.vae_batch; ++b) {
            const auto [ci, z] = slices[size_t(srng.uniform_int(slices.size()))];
            const auto& c = train[size_t(ci)];
            const auto pos = positional_embedding<float>(z, D, cfg.vae.d_pos);
            // random in-plane flips; the phantom distribution is flip-symmetric
            const bool fx = srng.uniform_int(2) != 0, fy = srng.uniform_int(2) != 0;
            const auto is = c.image.slice(z);
            std::vector<float> img(is.begin(), is.end());
            auto mk = detail::mask_slice_f32(c.mask, z);
            detail::flip_slice(img, W, H, fx, fy);
            detail::flip_slice(mk, W, H, fx, fy);
            std::vector<float> eps(latent_plane);
            for (auto& e : eps) e = float(srng.normal());
            const auto terms =
                vae_step_grads(model, std::span<const float>(img), std::span<const float>(mk),
                               std::span<const float>(pos), std::span<const float>(eps), W, H, cfg.lambda_mask,
                               cfg.lambda_kl);
            loss += terms.total;
        }
        loss /= cfg.vae_batch;
        if (!std::isfinite(loss)) throw training_error("train_vae: diverged at step " + std::to_string(s));
        nn::scale_grads(model, 1.0f / float(cfg.vae_batch));
        opt.step(model);
        result.losses.push_back(loss);
    }

    const auto baseline = mean_image(train);
    result.val = validate_vae(model, val.empty() ? train : val, baseline);

    CheckpointFile ck;
    ck.kind = "slice-vae";
    ck.config = {{"dims", {cfg.dims.w, cfg.dims.h, cfg.dims.d}},
                 {"vae",
                  {{"base", cfg.vae.base},
                   {"latent_channels", cfg.vae.latent_channels},
                   {"d_pos", cfg.vae.d_pos}}},
                 {"trained_steps", cfg.vae_steps}};
    store_model_tensors(ck, model);
    write_checkpoint(ck, run_dir / "vae.sblc");

    nlohmann::ordered_json log;
    log["stage"] = "vae";
    log["steps"] = cfg.vae_steps;
    log["final_loss"] = result.losses.back();
    log["val"] = {{"psnr", result.val.psnr},
                  {"baseline_psnr", result.val.baseline_psnr},
                  {"mask_dice", result.val.mask_dice},
                  {"n_cases", result.val.n_cases}};
    log["losses"] = result.losses;
    write_json_file(log, run_dir / "vae_log.json");
    return result;
}

// Rebuild a VAE from its checkpoint; returns the model plus the volume dims
// it was trained for.
inline std::pair<VaeModel<float>, Dims> load_vae_checkpoint(const std::filesystem::path& path) {
    const auto ck = read_checkpoint(path);
    if (ck.kind != "slice-vae") throw format_error("expected slice-vae checkpoint, got kind " + ck.kind);
    VaeConfig vc;
    const auto& jv = ck.config.at("vae");
    vc.base = jv.at("base").get<int>();
    vc.latent_channels = jv.at("latent_channels").get<int>();
    vc.d_pos = jv.at("d_pos").get<int>();
    const auto& jd = ck.config.at("dims");
    const Dims dims{jd.at(0).get<int>(), jd.at(1).get<int>(), jd.at(2).get<int>()};
    VaeModel<float> model;
    Rng rng(0);
    model.init(vc, rng);
    load_model_tensors(ck, model);
    return {std::move(model), dims};
}

// --------------------------------------------------------------- stage 2a

struct EncodeResult {
    int count = 0;
    LatentScaler scaler;
};

// Cache the deterministic posterior means of every training case as latent
// volumes, then fit the global scaler over the cache.
inline EncodeResult encode_dataset(const std::filesystem::path& run_dir, const std::filesystem::path& data_dir) {
    const auto cfg = read_run_config(run_dir);
    auto [vae, vae_dims] = load_vae_checkpoint(run_dir / "vae.sblc");
    if (!(vae_dims == cfg.dims)) throw config_error("encode_dataset: checkpoint dims do not match run config");
    const auto man = read_manifest(data_dir / "manifest.json");
    const auto train = load_split(man, data_dir, "train", cfg.dims);
    if (train.empty()) throw validation_error("encode_dataset: train split is empty");

    const auto latents_dir = run_dir / "latents";
    std::filesystem::create_directories(latents_dir);
    const int W = cfg.dims.w, H = cfg.dims.h, D = cfg.dims.d;
    std::vector<LatentVolume> latents;
    auto ids = nlohmann::ordered_json::array();
    for (const auto& c : train) {
        std::vector<LatentSlice> ls(static_cast<size_t>(D));
        for (int z = 0; z < D; ++z) {
            const auto pos = positional_embedding<float>(z, D, cfg.vae.d_pos);
            const auto mk = detail::mask_slice_f32(c.mask, z);
            auto [mu, logvar] = vae.encode(c.image.slice(z), std::span<const float>(mk),
                                           std::span<const float>(pos), W, H);
            (void)logvar;
            ls[size_t(z)] = LatentSlice{cfg.vae.latent_channels, W / 4, H / 4, std::move(mu)};
        }
        auto vol = assemble(ls);
        write_latent(vol, latents_dir / (c.rec.case_id + ".sblv"));
        ids.push_back(c.rec.case_id);
        latents.push_back(std::move(vol));
    }

    EncodeResult r;
    r.count = int(latents.size());
    r.scaler = fit_scaler(latents);
    nlohmann::ordered_json meta;
    meta["count"] = r.count;
    meta["scaler"] = r.scaler.to_json();
    meta["cases"] = ids;
    write_json_file(meta, latents_dir / "encode_meta.json");
    return r;
}

// --------------------------------------------------------------- stage 2b

// Summary of the training-set condition distribution, stored in the LDM
// checkpoint so sampling needs no access to the dataset.
struct CondStats {
    double vol_lo = 0.0, vol_hi = 0.0, vol_median = 0.0;
    std::array<double, 9> median_components{};
    std::array<double, 9> component_mean{};
    std::array<double, 9> component_std{};

    ConditionVector median_condition() const { return ConditionVector::from_components(median_components); }

    nlohmann::ordered_json to_json() const {
        return {{"volume_lo", vol_lo},
                {"volume_hi", vol_hi},
                {"volume_median", vol_median},
                {"median_components", median_components},
                {"component_mean", component_mean},
                {"component_std", component_std}};
    }
    static CondStats from_json(const nlohmann::json& j) {
        CondStats s;
        s.vol_lo = j.at("volume_lo").get<double>();
        s.vol_hi = j.at("volume_hi").get<double>();
        s.vol_median = j.at("volume_median").get<double>();
        auto read9 = [&j](const char* key, std::array<double, 9>& out) {
            const auto& ja = j.at(key);
            if (!ja.is_array() || ja.size() != 9) throw format_error(std::string("CondStats: bad ") + key);
            for (size_t i = 0; i < 9; ++i) out[i] = ja[i].get<double>();
        };
        read9("median_components", s.median_components);
        read9("component_mean", s.component_mean);
        read9("component_std", s.component_std);
        return s;
    }
};

inline double median_of(std::vector<double> v) {
    if (v.empty()) throw validation_error("median_of: empty input");
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline CondStats condition_stats(const std::vector<ConditionVector>& conds) {
    if (conds.empty()) throw validation_error("condition_stats: empty input");
    CondStats s;
    for (size_t k = 0; k < 9; ++k) {
        std::vector<double> col(conds.size());
        for (size_t i = 0; i < conds.size(); ++i) col[i] = conds[i].components()[k];
        s.median_components[k] = median_of(col);
        double mean = 0.0;
        for (double v : col) mean += v;
        mean /= double(col.size());
        double var = 0.0;
        for (double v : col) var += (v - mean) * (v - mean);
        s.component_mean[k] = mean;
        s.component_std[k] = std::sqrt(var / double(col.size()));
        if (k == 0) {
            s.vol_lo = *std::min_element(col.begin(), col.end());
            s.vol_hi = *std::max_element(col.begin(), col.end());
            s.vol_median = s.median_components[0];
        }
    }
    return s;
}

struct LdmTrainResult {
    std::vector<double> losses;  // full history including any resumed prefix
    int start_step = 0;
    int end_step = 0;
};

// Train the conditional denoiser on the scaled latent cache. With resume,
// picks up a partially trained checkpoint; per-step RNG streams make the
// next-step loss identical to an uninterrupted run.
inline LdmTrainResult train_diffusion(const std::filesystem::path& run_dir, const std::filesystem::path& data_dir,
                                      bool resume = false) {
    const auto cfg = read_run_config(run_dir);
    const auto man = read_manifest(data_dir / "manifest.json");
    if (!(man.dims == cfg.dims)) throw config_error("train_diffusion: dataset dims do not match run config");

    const auto latents_dir = run_dir / "latents";
    std::ifstream meta_in(latents_dir / "encode_meta.json");
    if (!meta_in) throw io_error("missing latent cache; run encode first: " + latents_dir.string());
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(meta_in);
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("bad encode_meta.json: ") + e.what());
    }
    const auto scaler = LatentScaler::from_json(meta.at("scaler"));

    const int lw = cfg.latent_w(), lh = cfg.latent_h(), ld = cfg.latent_d();
    std::vector<LatentVolume> latents;
    std::vector<ConditionVector> conds;
    for (const auto* rec : man.split_cases("train")) {
        auto vol = read_latent(latents_dir / (rec->case_id + ".sblv"));
        if (vol.cz != cfg.vae.latent_channels || vol.w != lw || vol.h != lh || vol.d != ld)
            throw config_error("train_diffusion: cached latent shape does not match run config");
        latents.push_back(apply_scaler(vol, scaler));
        conds.push_back(rec->condition);
    }
    if (latents.empty()) throw validation_error("train_diffusion: no cached latents for the train split");
    const auto stats = condition_stats(conds);
    const auto sched = linear_schedule(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end);

    DenoiserModel<float> model;
    LdmTrainResult result;
    const auto ckpt_path = run_dir / "ldm.sblc";
    if (resume) {
        const auto ck = read_checkpoint(ckpt_path);
        if (ck.kind != "denoiser") throw format_error("expected denoiser checkpoint, got kind " + ck.kind);
        result.start_step = ck.config.at("trained_steps").get<int>();
        Rng rng(0);
        model.init(cfg.denoiser, rng);
        load_model_tensors(ck, model);
        const auto log_path = run_dir / "ldm_log.json";
        std::ifstream log_in(log_path);
        if (log_in) {
            const auto prev = nlohmann::json::parse(log_in);
            result.losses = prev.at("losses").get<std::vector<double>>();
            result.losses.resize(size_t(std::min(result.start_step, int(result.losses.size()))));
        }
    } else {
        Rng init_rng(derive_seed(cfg.seed, 0xD0));
        model.init(cfg.denoiser, init_rng);
    }
    model.set_cond_norm(stats.component_mean, stats.component_std);

    nn::Adam<float> opt(cfg.ldm_lr);
    const size_t n_el = latents.front().elements();
    for (int s = result.start_step; s < cfg.ldm_steps; ++s) {
        Rng srng(derive_seed(cfg.seed, 0x1D300000ULL + uint64_t(s)));
        nn::zero_grads(model);
        double loss = 0.0;
        for (int b = 0; b < cfg.ldm_batch; ++b) {
            const size_t idx = size_t(srng.uniform_int(latents.size()));
            const int t = 1 + int(srng.uniform_int(uint64_t(cfg.diffusion_steps)));
            std::vector<float> eps(n_el);
            for (auto& e : eps) e = float(srng.normal());
            const auto xt = forward_sample(std::span<const float>(latents[idx].code), t,
                                           std::span<const float>(eps), sched);
            const auto eps_hat = model.predict_noise(std::span<const float>(xt), lw, lh, ld, t, conds[idx]);
            std::vector<float> g(n_el);
            double mse = 0.0;
            for (size_t i = 0; i < n_el; ++i) {
                const double d = double(eps_hat[i]) - double(eps[i]);
                mse += d * d;
                g[i] = float(2.0 * d / double(n_el));
            }
            loss += mse / double(n_el);
            model.backward(std::span<const float>(g));
        }
        loss /= cfg.ldm_batch;
        if (!std::isfinite(loss)) throw training_error("train_diffusion: diverged at step " + std::to_string(s));
        nn::scale_grads(model, 1.0f / float(cfg.ldm_batch));
        opt.step(model);
        result.losses.push_back(loss);
    }
    result.end_step = cfg.ldm_steps;

    CheckpointFile ck;
    ck.kind = "denoiser";
    ck.config = {{"dims", {cfg.dims.w, cfg.dims.h, cfg.dims.d}},
                 {"latent", {{"cz", cfg.vae.latent_channels}, {"w", lw}, {"h", lh}, {"d", ld}}},
                 {"denoiser",
                  {{"in_channels", cfg.denoiser.in_channels},
                   {"base_channels", cfg.denoiser.base_channels},
                   {"channel_mult", cfg.denoiser.channel_mult},
                   {"d_emb", cfg.denoiser.d_emb},
                   {"tau_hidden", cfg.denoiser.tau_hidden}}},
                 {"diffusion",
                  {{"timesteps", cfg.diffusion_steps},
                   {"beta_start", cfg.beta_start},
                   {"beta_end", cfg.beta_end}}},
                 {"scaler", scaler.to_json()},
                 {"cond_stats", stats.to_json()},
                 {"trained_steps", cfg.ldm_steps}};
    store_model_tensors(ck, model);
    write_checkpoint(ck, ckpt_path);

    nlohmann::ordered_json log;
    log["stage"] = "ldm";
    log["steps"] = cfg.ldm_steps;
    log["final_loss"] = result.losses.back();
    log["losses"] = result.losses;
    write_json_file(log, run_dir / "ldm_log.json");
    return result;
}

// -------------------------------------------------------------- sampling

struct SyntheticCase {
    std::string case_id;
    VolumeGrid image;
    MaskGrid mask;
    ConditionVector requested;
    std::optional<ConditionVector> measured;  // empty mask -> nullopt
};

// Everything needed to sample volumes, rebuilt from the two checkpoints.
struct Generator {
    RunConfig cfg;
    VaeModel<float> vae;
    DenoiserModel<float> denoiser;
    NoiseSchedule schedule;
    LatentScaler scaler;
    CondStats stats;

    SyntheticCase generate_one(const ConditionVector& c, SamplerKind sampler, int ddim_steps, uint64_t seed) {
        c.validate();
        const int lw = cfg.latent_w(), lh = cfg.latent_h(), ld = cfg.latent_d();
        const int cz = cfg.vae.latent_channels;
        auto model_fn = [&](std::span<const float> xt, int t) {
            return denoiser.predict_noise(xt, lw, lh, ld, t, c);
        };
        auto values = sample<float>(model_fn, schedule, size_t(cz) * lw * lh * ld, sampler, ddim_steps, seed);
        for (float v : values)
            if (!std::isfinite(v)) throw generation_error("generate_one: sampler produced non-finite latent");
        LatentVolume lz;
        lz.cz = cz;
        lz.w = lw;
        lz.h = lh;
        lz.d = ld;
        lz.code = std::move(values);
        lz.scaler_applied = true;
        const auto slices = decompose(invert_scaler(lz, scaler));

        SyntheticCase out;
        out.requested = c;
        const int W = cfg.dims.w, H = cfg.dims.h, D = cfg.dims.d;
        out.image.dims = cfg.dims;
        out.image.voxels.assign(size_t(cfg.dims.voxels()), 0.f);
        out.mask.dims = cfg.dims;
        out.mask.voxels.assign(size_t(cfg.dims.voxels()), 0);
        for (int z = 0; z < D; ++z) {
            const auto pos = positional_embedding<float>(z, D, cfg.vae.d_pos);
            auto [image_hat, mask_logits] =
                vae.decode(std::span<const float>(slices[size_t(z)].values), std::span<const float>(pos), W, H);
            auto io = out.image.slice(z);
            for (size_t i = 0; i < io.size(); ++i) io[i] = std::clamp(image_hat[i], 0.f, 1.f);
            auto mo = out.mask.slice(z);
            for (size_t i = 0; i < mo.size(); ++i) mo[i] = mask_logits[i] > 0 ? 1 : 0;
        }
        bool any = false;
        for (auto v : out.mask.voxels) any = any || v != 0;
        if (any) out.measured = condition_vector(out.mask);
        return out;
    }
};

inline Generator load_generator(const std::filesystem::path& run_dir) {
    Generator g;
    g.cfg = read_run_config(run_dir);
    auto [vae, vae_dims] = load_vae_checkpoint(run_dir / "vae.sblc");
    if (!(vae_dims == g.cfg.dims)) throw config_error("load_generator: vae checkpoint dims mismatch");
    g.vae = std::move(vae);

    const auto ck = read_checkpoint(run_dir / "ldm.sblc");
    if (ck.kind != "denoiser") throw format_error("expected denoiser checkpoint, got kind " + ck.kind);
    const auto& jl = ck.config.at("latent");
    if (jl.at("cz").get<int>() != g.cfg.vae.latent_channels || jl.at("w").get<int>() != g.cfg.latent_w() ||
        jl.at("h").get<int>() != g.cfg.latent_h() || jl.at("d").get<int>() != g.cfg.latent_d())
        throw config_error("load_generator: ldm checkpoint latent shape does not match run config");
    const auto& jf = ck.config.at("diffusion");
    g.schedule = linear_schedule(jf.at("timesteps").get<int>(), jf.at("beta_start").get<double>(),
                                 jf.at("beta_end").get<double>());
    g.scaler = LatentScaler::from_json(ck.config.at("scaler"));
    g.stats = CondStats::from_json(ck.config.at("cond_stats"));
    Rng rng(0);
    g.denoiser.init(g.cfg.denoiser, rng);
    load_model_tensors(ck, g.denoiser);
    g.denoiser.set_cond_norm(g.stats.component_mean, g.stats.component_std);
    return g;
}

// ------------------------------------------------------- generated sets

inline std::string synth_case_id(int k) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "synth_%04d", k);
    return buf;
}

struct GenSetSpec {
    int count = 1;
    SamplerKind sampler = SamplerKind::ddim;
    int ddim_steps = 50;
    uint64_t seed = 7;
};

inline std::vector<SyntheticCase> generate_set(Generator& gen, const ConditionVector& c, const GenSetSpec& spec) {
    if (spec.count < 1) throw validation_error("generate_set: count must be >= 1");
    std::vector<SyntheticCase> out;
    for (int k = 0; k < spec.count; ++k) {
        auto sc = gen.generate_one(c, spec.sampler, spec.ddim_steps, derive_seed(spec.seed, uint64_t(k)));
        sc.case_id = synth_case_id(k);
        out.push_back(std::move(sc));
    }
    return out;
}

inline void write_generated_set(const std::vector<SyntheticCase>& cases, const GenSetSpec& spec,
                                const std::filesystem::path& out_dir) {
    if (cases.empty()) throw validation_error("write_generated_set: empty case list");
    std::filesystem::create_directories(out_dir);
    nlohmann::ordered_json j;
    j["version"] = 1;
    j["dims"] = {cases.front().image.dims.w, cases.front().image.dims.h, cases.front().image.dims.d};
    j["sampler"] = to_string(spec.sampler);
    j["ddim_steps"] = spec.ddim_steps;
    j["seed"] = spec.seed;
    j["count"] = int(cases.size());
    auto rows = nlohmann::ordered_json::array();
    for (const auto& sc : cases) {
        write_volume(sc.image, out_dir / (sc.case_id + ".sblv"));
        write_mask(sc.mask, out_dir / (sc.case_id + ".sblm"));
        nlohmann::ordered_json row;
        row["case_id"] = sc.case_id;
        row["image"] = sc.case_id + ".sblv";
        row["mask"] = sc.case_id + ".sblm";
        row["requested"] = sc.requested.to_json();
        row["measured"] = sc.measured ? sc.measured->to_json() : nlohmann::ordered_json(nullptr);
        rows.push_back(row);
    }
    j["cases"] = rows;
    write_json_file(j, out_dir / "gen_manifest.json");
}

struct GenRecord {
    std::string case_id;
    std::string image_path;
    std::string mask_path;
    ConditionVector requested;
    std::optional<ConditionVector> measured;
};

struct GenManifest {
    Dims dims{};
    std::string sampler;
    int ddim_steps = 0;
    uint64_t seed = 0;
    std::vector<GenRecord> cases;
};

inline GenManifest read_gen_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot read gen manifest: " + path.string());
    try {
        const auto j = nlohmann::json::parse(in);
        GenManifest m;
        const auto& jd = j.at("dims");
        m.dims = Dims{jd.at(0).get<int>(), jd.at(1).get<int>(), jd.at(2).get<int>()};
        m.sampler = j.at("sampler").get<std::string>();
        m.ddim_steps = j.at("ddim_steps").get<int>();
        m.seed = j.at("seed").get<uint64_t>();
        for (const auto& row : j.at("cases")) {
            GenRecord r;
            r.case_id = row.at("case_id").get<std::string>();
            r.image_path = row.at("image").get<std::string>();
            r.mask_path = row.at("mask").get<std::string>();
            r.requested = ConditionVector::from_json(row.at("requested"));
            if (!row.at("measured").is_null()) r.measured = ConditionVector::from_json(row.at("measured"));
            m.cases.push_back(std::move(r));
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw format_error("bad gen manifest in " + path.string() + ": " + e.what());
    }
}

// ------------------------------------------------------------ size sweep

// Requested condition for a sweep point: the training-median tumor rescaled
// to the target volume. Surface area follows V^(2/3), box edges V^(1/3).
inline ConditionVector sweep_condition(const CondStats& stats, double grid_value) {
    if (!(grid_value > 0.0) || grid_value > 1.0)
        throw validation_error("sweep_condition: grid value must be in (0,1]");
    ConditionVector c = stats.median_condition();
    const double v_req = stats.vol_lo + grid_value * (stats.vol_hi - stats.vol_lo);
    const double ratio = v_req / c.voxel_volume_norm;
    c.voxel_volume_norm = v_req;
    c.surface_area_norm = std::min(1.0, c.surface_area_norm * std::pow(ratio, 2.0 / 3.0));
    const double edge = std::pow(ratio, 1.0 / 3.0);
    c.bbox_w = std::clamp(c.bbox_w * edge, 1e-6, 1.0);
    c.bbox_h = std::clamp(c.bbox_h * edge, 1e-6, 1.0);
    c.bbox_d = std::clamp(c.bbox_d * edge, 1e-6, 1.0);
    c.validate();
    return c;
}

struct SweepPoint {
    double grid_value = 0.0;
    double requested_volume = 0.0;
    double mean_measured_volume = 0.0;  // empty masks count as zero volume
    double nonempty_fraction = 0.0;
    std::array<double, 3> mean_com{};  // over nonempty samples only
    int n_nonempty = 0;
};

struct SweepReport {
    std::vector<SweepPoint> points;
    double spearman = 0.0;
    double com_drift = 0.0;  // max pairwise distance between per-point mean CoMs
    int samples_per_point = 0;
    std::string sampler;
    int ddim_steps = 0;
    uint64_t seed = 0;
};

inline SweepReport size_sweep(Generator& gen, const std::vector<double>& grid, int samples_per_point,
                              SamplerKind sampler, int ddim_steps, uint64_t seed) {
    if (grid.empty()) throw validation_error("size_sweep: empty grid");
    if (samples_per_point < 1) throw validation_error("size_sweep: samples_per_point must be >= 1");
    SweepReport rep;
    rep.samples_per_point = samples_per_point;
    rep.sampler = to_string(sampler);
    rep.ddim_steps = ddim_steps;
    rep.seed = seed;
    for (size_t pi = 0; pi < grid.size(); ++pi) {
        SweepPoint p;
        p.grid_value = grid[pi];
        const auto c = sweep_condition(gen.stats, grid[pi]);
        p.requested_volume = c.voxel_volume_norm;
        std::array<double, 3> com_acc{};
        for (int k = 0; k < samples_per_point; ++k) {
            const auto sc =
                gen.generate_one(c, sampler, ddim_steps, derive_seed(seed, uint64_t(pi) * 1000 + uint64_t(k)));
            if (sc.measured) {
                p.mean_measured_volume += sc.measured->voxel_volume_norm;
                com_acc[0] += sc.measured->com_x;
                com_acc[1] += sc.measured->com_y;
                com_acc[2] += sc.measured->com_z;
                ++p.n_nonempty;
            }
        }
        p.mean_measured_volume /= samples_per_point;
        p.nonempty_fraction = double(p.n_nonempty) / samples_per_point;
        if (p.n_nonempty > 0)
            for (int a = 0; a < 3; ++a) p.mean_com[size_t(a)] = com_acc[size_t(a)] / p.n_nonempty;
        rep.points.push_back(p);
    }

    std::vector<double> xs, ys;
    for (const auto& p : rep.points) {
        xs.push_back(p.grid_value);
        ys.push_back(p.mean_measured_volume);
    }
    rep.spearman = spearman(xs, ys);
    for (size_t i = 0; i < rep.points.size(); ++i)
        for (size_t k = i + 1; k < rep.points.size(); ++k) {
            if (rep.points[i].n_nonempty == 0 || rep.points[k].n_nonempty == 0) continue;
            double d2 = 0.0;
            for (int a = 0; a < 3; ++a) {
                const double d = rep.points[i].mean_com[size_t(a)] - rep.points[k].mean_com[size_t(a)];
                d2 += d * d;
            }
            rep.com_drift = std::max(rep.com_drift, std::sqrt(d2));
        }
    return rep;
}

inline nlohmann::ordered_json sweep_report_json(const SweepReport& rep) {
    nlohmann::ordered_json j;
    j["report"] = "size_sweep";
    j["sampler"] = rep.sampler;
    j["ddim_steps"] = rep.ddim_steps;
    j["seed"] = rep.seed;
    j["samples_per_point"] = rep.samples_per_point;
    j["spearman"] = rep.spearman;
    j["com_drift"] = rep.com_drift;
    auto rows = nlohmann::ordered_json::array();
    for (const auto& p : rep.points) {
        nlohmann::ordered_json row;
        row["grid_value"] = p.grid_value;
        row["requested_volume"] = p.requested_volume;
        row["mean_measured_volume"] = p.mean_measured_volume;
        row["nonempty_fraction"] = p.nonempty_fraction;
        row["mean_com"] = p.mean_com;
        rows.push_back(row);
    }
    j["points"] = rows;
    return j;
}

inline std::string sweep_report_table(const SweepReport& rep) {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof(line), "%6s %12s %12s %9s %18s\n", "grid", "req_vol", "meas_vol", "nonempty",
                  "mean_com");
    out += line;
    out += std::string(62, '-') + "\n";
    for (const auto& p : rep.points) {
        std::snprintf(line, sizeof(line), "%6.2f %12.5f %12.5f %9.2f (%.2f,%.2f,%.2f)\n", p.grid_value,
                      p.requested_volume, p.mean_measured_volume, p.nonempty_fraction, p.mean_com[0], p.mean_com[1],
                      p.mean_com[2]);
        out += line;
    }
    std::snprintf(line, sizeof(line), "spearman %.4f   com_drift %.4f\n", rep.spearman, rep.com_drift);
    out += line;
    return out;
}

// ------------------------------------------------------------- gen eval

struct GenEvalReport {
    int count = 0;
    int nonempty = 0;
    double nonempty_fraction = 0.0;
    double volume_spearman = 0.0;  // requested vs measured, empty as zero
    double volume_mae = 0.0;       // over nonempty cases
    std::array<double, 9> mean_requested{};
    std::array<double, 9> mean_measured{};  // over nonempty cases
    std::array<double, 9> mean_real{};      // training split reference
};

inline GenEvalReport eval_generated(const std::filesystem::path& gen_dir, const std::filesystem::path& data_dir) {
    const auto gm = read_gen_manifest(gen_dir / "gen_manifest.json");
    if (gm.cases.empty()) throw validation_error("eval_generated: empty generated set");
    const auto man = read_manifest(data_dir / "manifest.json");
    const auto real = man.split_cases("train");
    if (real.empty()) throw validation_error("eval_generated: dataset has no train cases");

    GenEvalReport r;
    r.count = int(gm.cases.size());
    std::vector<double> req_vol, meas_vol;
    for (const auto& c : gm.cases) {
        const auto rc = c.requested.components();
        for (size_t k = 0; k < 9; ++k) r.mean_requested[k] += rc[k];
        req_vol.push_back(c.requested.voxel_volume_norm);
        if (c.measured) {
            ++r.nonempty;
            const auto mc = c.measured->components();
            for (size_t k = 0; k < 9; ++k) r.mean_measured[k] += mc[k];
            meas_vol.push_back(c.measured->voxel_volume_norm);
            r.volume_mae += std::abs(c.measured->voxel_volume_norm - c.requested.voxel_volume_norm);
        } else {
            meas_vol.push_back(0.0);
        }
    }
    for (size_t k = 0; k < 9; ++k) {
        r.mean_requested[k] /= r.count;
        if (r.nonempty > 0) r.mean_measured[k] /= r.nonempty;
    }
    if (r.nonempty > 0) r.volume_mae /= r.nonempty;
    r.nonempty_fraction = double(r.nonempty) / r.count;
    r.volume_spearman = r.count > 1 ? spearman(req_vol, meas_vol) : 0.0;
    for (const auto* rec : real) {
        const auto cc = rec->condition.components();
        for (size_t k = 0; k < 9; ++k) r.mean_real[k] += cc[k];
    }
    for (size_t k = 0; k < 9; ++k) r.mean_real[k] /= double(real.size());
    return r;
}

inline nlohmann::ordered_json gen_eval_report_json(const GenEvalReport& r) {
    static const char* kNames[9] = {"voxel_volume_norm", "surface_area_norm", "sphericity", "com_x", "com_y",
                                    "com_z",             "bbox_w",            "bbox_h",     "bbox_d"};
    nlohmann::ordered_json j;
    j["report"] = "generation_eval";
    j["count"] = r.count;
    j["nonempty"] = r.nonempty;
    j["nonempty_fraction"] = r.nonempty_fraction;
    j["volume_spearman"] = r.volume_spearman;
    j["volume_mae"] = r.volume_mae;
    auto comp = nlohmann::ordered_json::array();
    for (size_t k = 0; k < 9; ++k) {
        nlohmann::ordered_json row;
        row["component"] = kNames[k];
        row["mean_requested"] = r.mean_requested[k];
        row["mean_measured"] = r.mean_measured[k];
        row["mean_real_train"] = r.mean_real[k];
        comp.push_back(row);
    }
    j["components"] = comp;
    return j;
}

inline std::string gen_eval_report_table(const GenEvalReport& r) {
    static const char* kNames[9] = {"voxel_volume_norm", "surface_area_norm", "sphericity", "com_x", "com_y",
                                    "com_z",             "bbox_w",            "bbox_h",     "bbox_d"};
    std::string out;
    char line[160];
    std::snprintf(line, sizeof(line), "cases %d   nonempty %d (%.2f)   volume_spearman %.4f   volume_mae %.5f\n",
                  r.count, r.nonempty, r.nonempty_fraction, r.volume_spearman, r.volume_mae);
    out += line;
    std::snprintf(line, sizeof(line), "%-18s %12s %12s %12s\n", "component", "requested", "measured", "real");
    out += line;
    out += std::string(58, '-') + "\n";
    for (size_t k = 0; k < 9; ++k) {
        std::snprintf(line, sizeof(line), "%-18s %12.5f %12.5f %12.5f\n", kNames[k], r.mean_requested[k],
                      r.mean_measured[k], r.mean_real[k]);
        out += line;
    }
    return out;
}

}  // namespace sbld

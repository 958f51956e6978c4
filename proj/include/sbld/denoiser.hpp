#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "sbld/common.hpp"
#include "sbld/features.hpp"
#include "sbld/latent.hpp"
#include "sbld/nn.hpp"

// Conditional 3D U-Net noise predictor over the stacked latent volume.
// No attention anywhere; exactly one residual block per resolution per path.
// Conditioning: combined embedding = learned projection of a sinusoidal
// timestep encoding + tau(c), fused into every residual block through
// scale-shift modulation of the second group norm.

namespace sbld {

struct DenoiserConfig {
    int in_channels = 1;                     // C_z
    int base_channels = 32;                  // first-level width
    std::vector<int> channel_mult{1, 2, 4};  // one entry per resolution level
    int d_emb = 128;                         // combined embedding width
    std::vector<int> tau_hidden{64, 128};    // MLP widths before the d_emb output
    // fixed by design: residual blocks per resolution = 1, attention = none

    int levels() const { return int(channel_mult.size()); }

    void validate() const {
        if (in_channels < 1 || base_channels < 1) throw config_error("DenoiserConfig: channels must be positive");
        if (channel_mult.empty()) throw config_error("DenoiserConfig: channel_mult must be nonempty");
        for (int m : channel_mult)
            if (m < 1) throw config_error("DenoiserConfig: channel multipliers must be positive");
        if (d_emb < 2 || d_emb % 2 != 0) throw config_error("DenoiserConfig: d_emb must be even and >= 2");
        if (tau_hidden.empty()) throw config_error("DenoiserConfig: tau_hidden must be nonempty");
        for (int h : tau_hidden)
            if (h < 1) throw config_error("DenoiserConfig: tau hidden widths must be positive");
    }
};

struct LayerInfo {
    std::string name;
    std::string kind;  // conv | groupnorm | dense | activation | res_block | downsample | upsample
    int level = 0;
    std::string path;  // encoder | decoder | stem | head | embedding
};

// MLP embedding of the 9-component tumor feature vector. Components are
// standardized with per-component train-set statistics before the first
// layer; raw feature scales differ by orders of magnitude (normalized tumor
// volume lives in ~[1e-4, 1e-2]) and would otherwise barely register.
template <typename T>
struct TauMlp {
    std::vector<nn::Dense<T>> layers;
    std::vector<nn::SiLU<T>> acts;
    std::array<T, 9> shift{};
    std::array<T, 9> scale;

    TauMlp() { scale.fill(T(1)); }

    void init(const std::vector<int>& hidden, int d_emb, Rng& rng) {
        layers.clear();
        acts.clear();
        int prev = 9;
        for (int hdim : hidden) {
            layers.emplace_back();
            layers.back().init(prev, hdim, rng);
            prev = hdim;
        }
        layers.emplace_back();
        layers.back().init(prev, d_emb, rng);
        acts.resize(layers.size() - 1);
    }

    std::vector<T> forward(const ConditionVector& c) {
        c.validate();
        const auto comp = c.components();
        std::vector<T> h(comp.size());
        for (size_t i = 0; i < h.size(); ++i) h[i] = (T(comp[i]) - shift[i]) / scale[i];
        for (size_t i = 0; i < layers.size(); ++i) {
            h = layers[i].forward(h);
            if (i + 1 < layers.size()) h = acts[i].forward(h);
        }
        return h;
    }

    void backward(std::span<const T> gy) {
        std::vector<T> g(gy.begin(), gy.end());
        for (size_t i = layers.size(); i-- > 0;) {
            g = layers[i].backward(g);
            if (i > 0) g = acts[i - 1].backward(g);
        }
    }

    template <typename Fn>
    void for_each_param(const std::string& prefix, Fn&& fn) {
        for (size_t i = 0; i < layers.size(); ++i) layers[i].for_each_param(prefix + ".l" + std::to_string(i), fn);
    }
};

namespace detail {

// GN -> SiLU -> conv, then scale-shift-modulated GN -> SiLU -> conv, + skip.
template <typename T>
struct ResBlock3d {
    int cin = 0, cout = 0;
    nn::GroupNorm<T> gn1;
    nn::SiLU<T> a1;
    nn::Conv3d<T> conv1;
    nn::SiLU<T> emb_act;
    nn::Dense<T> emb_proj;  // d_emb -> 2*cout (scale, shift)
    nn::GroupNorm<T> gn2;
    nn::ScaleShift<T> mod;
    nn::SiLU<T> a2;
    nn::Conv3d<T> conv2;
    nn::Conv3d<T> skip;  // 1x1x1, only when cin != cout

    void init(int cin_, int cout_, int d_emb, Rng& rng) {
        cin = cin_;
        cout = cout_;
        gn1.init(cin, nn::norm_groups(cin));
        conv1.init(cin, cout, 3, 1, rng);
        emb_proj.init(d_emb, 2 * cout, rng, std::sqrt(1.0 / d_emb));
        gn2.init(cout, nn::norm_groups(cout));
        conv2.init(cout, cout, 3, 1, rng);
        if (cin != cout) skip.init(cin, cout, 1, 1, rng);
    }

    std::vector<T> forward(std::span<const T> x, std::span<const T> emb, int W, int H, int D) {
        const int S = W * H * D;
        auto h = gn1.forward(x, S);
        h = a1.forward(h);
        h = conv1.forward(h, W, H, D);
        const auto sb = emb_proj.forward(emb_act.forward(emb));
        h = gn2.forward(h, S);
        h = mod.forward(h, std::span<const T>(sb.data(), size_t(cout)),
                        std::span<const T>(sb.data() + cout, size_t(cout)), cout, S);
        h = a2.forward(h);
        h = conv2.forward(h, W, H, D);
        if (cin != cout) {
            const auto sk = skip.forward(x, W, H, D);
            for (size_t i = 0; i < h.size(); ++i) h[i] += sk[i];
        } else {
            for (size_t i = 0; i < h.size(); ++i) h[i] += x[i];
        }
        return h;
    }

    // returns gx; accumulates the block's embedding gradient into gemb
    std::vector<T> backward(std::span<const T> gy, std::vector<T>& gemb) {
        auto g = conv2.backward(gy);
        g = a2.backward(g);
        std::vector<T> gh, gs, gb;
        mod.backward(g, gh, gs, gb);
        g = gn2.backward(gh);
        g = conv1.backward(g);
        g = a1.backward(g);
        g = gn1.backward(g);

        std::vector<T> gsb(gs.size() + gb.size());
        std::copy(gs.begin(), gs.end(), gsb.begin());
        std::copy(gb.begin(), gb.end(), gsb.begin() + gs.size());
        auto ge = emb_proj.backward(gsb);
        ge = emb_act.backward(ge);
        for (size_t i = 0; i < gemb.size(); ++i) gemb[i] += ge[i];

        if (cin != cout) {
            const auto gsk = skip.backward(gy);
            for (size_t i = 0; i < g.size(); ++i) g[i] += gsk[i];
        } else {
            for (size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
        }
        return g;
    }

    template <typename Fn>
    void for_each_param(const std::string& prefix, Fn&& fn) {
        gn1.for_each_param(prefix + ".gn1", fn);
        conv1.for_each_param(prefix + ".conv1", fn);
        emb_proj.for_each_param(prefix + ".emb", fn);
        gn2.for_each_param(prefix + ".gn2", fn);
        conv2.for_each_param(prefix + ".conv2", fn);
        if (cin != cout) skip.for_each_param(prefix + ".skip", fn);
    }
};

}  // namespace detail

template <typename T>
struct DenoiserModel {
    DenoiserConfig cfg;

    nn::Dense<T> time_proj;
    TauMlp<T> tau_mlp;

    nn::Conv3d<T> conv_in;
    detail::ResBlock3d<T> enc_rb0, enc_rb1, enc_rb2;
    nn::Conv3d<T> down0, down1;
    detail::ResBlock3d<T> dec_rb2, dec_rb1, dec_rb0;
    nn::Upsample2x3d<T> up1, up0;
    nn::Conv3d<T> upc1, upc0;
    nn::GroupNorm<T> out_gn;
    nn::SiLU<T> out_act;
    nn::Conv3d<T> conv_out;

    int W_ = 0, H_ = 0, D_ = 0;
    std::vector<T> gemb_;  // embedding gradient accumulated across blocks

    void init(const DenoiserConfig& config, Rng& rng) {
        cfg = config;
        cfg.validate();
        if (cfg.levels() != 3) throw config_error("DenoiserModel: this build supports exactly 3 levels");
        const int C0 = cfg.base_channels * cfg.channel_mult[0];
        const int C1 = cfg.base_channels * cfg.channel_mult[1];
        const int C2 = cfg.base_channels * cfg.channel_mult[2];

        time_proj.init(cfg.d_emb, cfg.d_emb, rng, std::sqrt(1.0 / cfg.d_emb));
        tau_mlp.init(cfg.tau_hidden, cfg.d_emb, rng);

        conv_in.init(cfg.in_channels, C0, 3, 1, rng);
        enc_rb0.init(C0, C0, cfg.d_emb, rng);
        down0.init(C0, C1, 3, 2, rng);
        enc_rb1.init(C1, C1, cfg.d_emb, rng);
        down1.init(C1, C2, 3, 2, rng);
        enc_rb2.init(C2, C2, cfg.d_emb, rng);

        dec_rb2.init(C2, C2, cfg.d_emb, rng);
        upc1.init(C2, C1, 3, 1, rng);
        dec_rb1.init(2 * C1, C1, cfg.d_emb, rng);
        upc0.init(C1, C0, 3, 1, rng);
        dec_rb0.init(2 * C0, C0, cfg.d_emb, rng);

        out_gn.init(C0, nn::norm_groups(C0));
        // small output scale keeps early epsilon predictions tame
        conv_out.init(C0, cfg.in_channels, 3, 1, rng, 0.02);
    }

    // Per-component condition standardization, fitted on the train split and
    // persisted with the checkpoint. Stds are floored so near-constant
    // components cannot blow up off-median requests.
    void set_cond_norm(const std::array<double, 9>& mean, const std::array<double, 9>& sd) {
        for (size_t i = 0; i < 9; ++i) {
            tau_mlp.shift[i] = T(mean[i]);
            tau_mlp.scale[i] = T(std::max(sd[i], 1e-3));
        }
    }

    std::vector<T> timestep_embedding(int t) const {
        if (t < 1) throw validation_error("timestep_embedding: t must be >= 1");
        return nn::sinusoid_embedding<T>(double(t), cfg.d_emb);
    }

    void check_spatial(int W, int H, int D) const {
        const int div = 1 << (cfg.levels() - 1);
        if (W < div || H < div || D < div || W % div != 0 || H % div != 0 || D % div != 0)
            throw config_error("DenoiserModel: spatial dims must be divisible by " + std::to_string(div));
    }

    // x is [in_channels][D][H][W]; returns same-shaped epsilon prediction
    std::vector<T> predict_noise(std::span<const T> x, int W, int H, int D, int t, const ConditionVector& c) {
        check_spatial(W, H, D);
        if (x.size() != size_t(cfg.in_channels) * W * H * D)
            throw validation_error("DenoiserModel: input size mismatch");
        W_ = W;
        H_ = H;
        D_ = D;

        auto emb = time_proj.forward(timestep_embedding(t));
        const auto ce = tau_mlp.forward(c);
        for (size_t i = 0; i < emb.size(); ++i) emb[i] += ce[i];

        auto h0 = conv_in.forward(x, W, H, D);
        const auto e0 = enc_rb0.forward(h0, emb, W, H, D);
        auto h = down0.forward(e0, W, H, D);
        const auto e1 = enc_rb1.forward(h, emb, W / 2, H / 2, D / 2);
        h = down1.forward(e1, W / 2, H / 2, D / 2);
        h = enc_rb2.forward(h, emb, W / 4, H / 4, D / 4);

        h = dec_rb2.forward(h, emb, W / 4, H / 4, D / 4);
        const int C2 = cfg.base_channels * cfg.channel_mult[2];
        const int C1 = cfg.base_channels * cfg.channel_mult[1];
        h = up1.forward(h, C2, W / 4, H / 4, D / 4);
        h = upc1.forward(h, W / 2, H / 2, D / 2);
        // concat [h; e1] along channels
        h.insert(h.end(), e1.begin(), e1.end());
        h = dec_rb1.forward(h, emb, W / 2, H / 2, D / 2);
        h = up0.forward(h, C1, W / 2, H / 2, D / 2);
        h = upc0.forward(h, W, H, D);
        h.insert(h.end(), e0.begin(), e0.end());
        h = dec_rb0.forward(h, emb, W, H, D);

        h = out_gn.forward(h, W * H * D);
        h = out_act.forward(h);
        return conv_out.forward(h, W, H, D);
    }

    LatentVolume predict_noise(const LatentVolume& zt, int t, const ConditionVector& c) {
        if (zt.cz != cfg.in_channels) throw config_error("DenoiserModel: latent channel mismatch");
        LatentVolume out = zt;
        out.code.resize(zt.code.size());
        std::vector<T> x(zt.code.begin(), zt.code.end());
        const auto y = predict_noise(std::span<const T>(x), zt.w, zt.h, zt.d, t, c);
        for (size_t i = 0; i < y.size(); ++i) out.code[i] = float(y[i]);
        return out;
    }

    // backpropagates through the whole net; parameter gradients accumulate
    std::vector<T> backward(std::span<const T> gy) {
        gemb_.assign(size_t(cfg.d_emb), T(0));
        auto g = conv_out.backward(gy);
        g = out_act.backward(g);
        g = out_gn.backward(g);

        g = dec_rb0.backward(g, gemb_);
        const int C0 = cfg.base_channels * cfg.channel_mult[0];
        const int C1 = cfg.base_channels * cfg.channel_mult[1];
        const size_t full = size_t(W_) * H_ * D_;
        const size_t half = full / 8;
        // split the concat gradient
        std::vector<T> ge0(g.begin() + size_t(C0) * full, g.end());
        g.resize(size_t(C0) * full);
        g = upc0.backward(g);
        g = up0.backward(g);
        g = dec_rb1.backward(g, gemb_);
        std::vector<T> ge1(g.begin() + size_t(C1) * half, g.end());
        g.resize(size_t(C1) * half);
        g = upc1.backward(g);
        g = up1.backward(g);
        g = dec_rb2.backward(g, gemb_);

        g = enc_rb2.backward(g, gemb_);
        g = down1.backward(g);
        for (size_t i = 0; i < g.size(); ++i) g[i] += ge1[i];
        g = enc_rb1.backward(g, gemb_);
        g = down0.backward(g);
        for (size_t i = 0; i < g.size(); ++i) g[i] += ge0[i];
        g = enc_rb0.backward(g, gemb_);
        g = conv_in.backward(g);

        tau_mlp.backward(gemb_);
        time_proj.backward(gemb_);
        return g;
    }

    template <typename Fn>
    void for_each_param(Fn&& fn) {
        time_proj.for_each_param("time", fn);
        tau_mlp.for_each_param("tau", fn);
        conv_in.for_each_param("in", fn);
        enc_rb0.for_each_param("enc.rb0", fn);
        down0.for_each_param("enc.down0", fn);
        enc_rb1.for_each_param("enc.rb1", fn);
        down1.for_each_param("enc.down1", fn);
        enc_rb2.for_each_param("enc.rb2", fn);
        dec_rb2.for_each_param("dec.rb2", fn);
        upc1.for_each_param("dec.up1", fn);
        dec_rb1.for_each_param("dec.rb1", fn);
        upc0.for_each_param("dec.up0", fn);
        dec_rb0.for_each_param("dec.rb0", fn);
        out_gn.for_each_param("out.gn", fn);
        conv_out.for_each_param("out.conv", fn);
    }

    // structural description for the no-attention / one-res-block audit
    std::vector<LayerInfo> layer_summary() const {
        std::vector<LayerInfo> s;
        s.push_back({"time.proj", "dense", 0, "embedding"});
        for (size_t i = 0; i < tau_mlp.layers.size(); ++i)
            s.push_back({"tau.l" + std::to_string(i), "dense", 0, "embedding"});
        s.push_back({"in.conv", "conv", 0, "stem"});
        s.push_back({"enc.rb0", "res_block", 0, "encoder"});
        s.push_back({"enc.down0", "downsample", 0, "encoder"});
        s.push_back({"enc.rb1", "res_block", 1, "encoder"});
        s.push_back({"enc.down1", "downsample", 1, "encoder"});
        s.push_back({"enc.rb2", "res_block", 2, "encoder"});
        s.push_back({"dec.rb2", "res_block", 2, "decoder"});
        s.push_back({"dec.up1", "upsample", 1, "decoder"});
        s.push_back({"dec.rb1", "res_block", 1, "decoder"});
        s.push_back({"dec.up0", "upsample", 0, "decoder"});
        s.push_back({"dec.rb0", "res_block", 0, "decoder"});
        s.push_back({"out.gn", "groupnorm", 0, "head"});
        s.push_back({"out.conv", "conv", 0, "head"});
        return s;
    }
};

}  // namespace sbld

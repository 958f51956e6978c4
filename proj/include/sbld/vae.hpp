#pragma once

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "sbld/common.hpp"
#include "sbld/nn.hpp"

// 2D slice VAE. Each slice of a volume is encoded independently, conditioned
// on its through-axis position via a sinusoid embedding that is projected and
// broadcast-added after the first convolution on both the encoder and the
// decoder side. Spatial downsampling factor is 4 (two stride-2 stages).

namespace sbld {

struct VaeConfig {
    int base = 16;            // first-stage channel count
    int latent_channels = 1;  // C_z
    int d_pos = 64;           // positional embedding width

    void validate() const {
        if (base < 1 || latent_channels < 1) throw config_error("VaeConfig: channel counts must be positive");
        if (d_pos < 2 || d_pos % 2 != 0) throw config_error("VaeConfig: d_pos must be even and >= 2");
    }
};

// Position of slice i in a stack of depth D, mapped onto [0, 1000] before the
// sinusoid so neighbouring slices stay distinguishable at any depth.
template <typename T>
std::vector<T> positional_embedding(int slice_index, int depth, int d_pos = 64) {
    if (depth < 1) throw validation_error("positional_embedding: depth must be >= 1");
    if (slice_index < 0 || slice_index >= depth) throw validation_error("positional_embedding: slice out of range");
    const double p = depth > 1 ? 1000.0 * double(slice_index) / double(depth - 1) : 500.0;
    return nn::sinusoid_embedding<T>(p, d_pos);
}

// z = mu + exp(logvar / 2) * eps
template <typename T>
std::vector<T> reparameterize(std::span<const T> mu, std::span<const T> logvar, std::span<const T> eps) {
    if (mu.size() != logvar.size() || mu.size() != eps.size())
        throw validation_error("reparameterize: shape mismatch");
    std::vector<T> z(mu.size());
    for (size_t i = 0; i < mu.size(); ++i) z[i] = mu[i] + std::exp(logvar[i] / T(2)) * eps[i];
    return z;
}

template <typename T>
std::vector<T> reparameterize(std::span<const T> mu, std::span<const T> logvar, Rng& rng,
                              std::vector<T>* eps_out = nullptr) {
    if (mu.size() != logvar.size()) throw validation_error("reparameterize: shape mismatch");
    std::vector<T> eps(mu.size());
    for (auto& e : eps) e = T(rng.normal());
    if (eps_out) *eps_out = eps;
    return reparameterize(mu, logvar, std::span<const T>(eps));
}

// KL(q || N(0,I)) = 0.5 * mean(exp(logvar) + mu^2 - 1 - logvar)
template <typename T>
double kl_divergence(std::span<const T> mu, std::span<const T> logvar) {
    if (mu.size() != logvar.size() || mu.empty()) throw validation_error("kl_divergence: shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < mu.size(); ++i)
        acc += std::exp(double(logvar[i])) + double(mu[i]) * double(mu[i]) - 1.0 - double(logvar[i]);
    return 0.5 * acc / double(mu.size());
}

struct VaeLossTerms {
    double total = 0.0;
    double recon_mse = 0.0;
    double mask_bce = 0.0;
    double kl = 0.0;
};

inline constexpr double kVaeLambdaMask = 1.0;
inline constexpr double kVaeLambdaKl = 1e-4;

template <typename T>
VaeLossTerms vae_loss(std::span<const T> image_hat, std::span<const T> image, std::span<const T> mask_logits,
                      std::span<const T> mask, std::span<const T> mu, std::span<const T> logvar,
                      double lambda_mask = kVaeLambdaMask, double lambda_kl = kVaeLambdaKl) {
    VaeLossTerms t;
    t.recon_mse = nn::mse_loss(image_hat, image);
    t.mask_bce = nn::bce_with_logits(mask_logits, mask);
    t.kl = kl_divergence(mu, logvar);
    t.total = t.recon_mse + lambda_mask * t.mask_bce + lambda_kl * t.kl;
    return t;
}

namespace detail {

// SiLU -> 3x3 conv -> GroupNorm. The activation leads so that additive
// conditioning on the block input survives the normalization.
template <typename T>
struct VaeBlock {
    nn::SiLU<T> act;
    nn::Conv2d<T> conv;
    nn::GroupNorm<T> gn;

    void init(int cin, int cout, Rng& rng) {
        conv.init(cin, cout, 3, 1, rng);
        gn.init(cout, nn::norm_groups(cout));
    }
    std::vector<T> forward(std::span<const T> x, int W, int H) {
        auto h = act.forward(x);
        h = conv.forward(h, W, H);
        return gn.forward(h, W * H);
    }
    std::vector<T> backward(std::span<const T> gy) {
        auto g = gn.backward(gy);
        g = conv.backward(g);
        return act.backward(g);
    }
    template <typename Fn>
    void for_each_param(const std::string& prefix, Fn&& fn) {
        conv.for_each_param(prefix + ".conv", fn);
        gn.for_each_param(prefix + ".gn", fn);
    }
};

}  // namespace detail

template <typename T>
struct VaeModel {
    VaeConfig cfg;

    // encoder
    nn::Conv2d<T> enc_in;
    nn::Dense<T> enc_pos;
    detail::VaeBlock<T> enc_b0;
    nn::Conv2d<T> enc_down1;
    detail::VaeBlock<T> enc_b1;
    nn::Conv2d<T> enc_down2;
    detail::VaeBlock<T> enc_b2;
    nn::Conv2d<T> mu_head;
    nn::Conv2d<T> logvar_head;

    // decoder
    nn::Conv2d<T> dec_in;
    nn::Dense<T> dec_pos;
    detail::VaeBlock<T> dec_b0;
    nn::Upsample2x2d<T> dec_up1;
    nn::Conv2d<T> dec_upc1;
    detail::VaeBlock<T> dec_b1;
    nn::Upsample2x2d<T> dec_up2;
    nn::Conv2d<T> dec_upc2;
    detail::VaeBlock<T> dec_b2;
    nn::Conv2d<T> image_head;
    nn::Sigmoid<T> image_act;
    nn::Conv2d<T> mask_head;

    int W_ = 0, H_ = 0;  // input dims of the last encode/decode

    void init(const VaeConfig& config, Rng& rng) {
        cfg = config;
        cfg.validate();
        const int F = cfg.base, F2 = 2 * cfg.base, Cz = cfg.latent_channels;
        enc_in.init(2, F, 3, 1, rng);
        enc_pos.init(cfg.d_pos, F, rng, std::sqrt(1.0 / cfg.d_pos));
        enc_b0.init(F, F, rng);
        enc_down1.init(F, F2, 3, 2, rng);
        enc_b1.init(F2, F2, rng);
        enc_down2.init(F2, F2, 3, 2, rng);
        enc_b2.init(F2, F2, rng);
        mu_head.init(F2, Cz, 3, 1, rng);
        logvar_head.init(F2, Cz, 3, 1, rng, 1e-3);

        dec_in.init(Cz, F2, 3, 1, rng);
        dec_pos.init(cfg.d_pos, F2, rng, std::sqrt(1.0 / cfg.d_pos));
        dec_b0.init(F2, F2, rng);
        dec_upc1.init(F2, F2, 3, 1, rng);
        dec_b1.init(F2, F2, rng);
        dec_upc2.init(F2, F, 3, 1, rng);
        dec_b2.init(F, F, rng);
        image_head.init(F, 1, 3, 1, rng);
        mask_head.init(F, 1, 3, 1, rng);
    }

    static void check_dims(int W, int H) {
        if (W < 4 || H < 4 || W % 4 != 0 || H % 4 != 0)
            throw config_error("VaeModel: slice dims must be multiples of 4");
    }

    // image and mask are W*H slices; returns {mu, logvar}, each Cz*(W/4)*(H/4)
    std::pair<std::vector<T>, std::vector<T>> encode(std::span<const T> image, std::span<const T> mask,
                                                     std::span<const T> pos, int W, int H) {
        check_dims(W, H);
        if (image.size() != size_t(W) * H || mask.size() != size_t(W) * H)
            throw validation_error("VaeModel::encode: slice size mismatch");
        W_ = W;
        H_ = H;
        std::vector<T> x(2 * size_t(W) * H);
        std::copy(image.begin(), image.end(), x.begin());
        std::copy(mask.begin(), mask.end(), x.begin() + size_t(W) * H);

        auto h = enc_in.forward(x, W, H);
        const auto pb = enc_pos.forward(pos);
        for (int c = 0; c < cfg.base; ++c)
            for (size_t i = 0; i < size_t(W) * H; ++i) h[size_t(c) * W * H + i] += pb[size_t(c)];
        h = enc_b0.forward(h, W, H);
        h = enc_down1.forward(h, W, H);
        h = enc_b1.forward(h, W / 2, H / 2);
        h = enc_down2.forward(h, W / 2, H / 2);
        h = enc_b2.forward(h, W / 4, H / 4);
        auto mu = mu_head.forward(h, W / 4, H / 4);
        auto logvar = logvar_head.forward(h, W / 4, H / 4);
        return {std::move(mu), std::move(logvar)};
    }

    void encode_backward(std::span<const T> dmu, std::span<const T> dlogvar) {
        auto g = mu_head.backward(dmu);
        const auto g2 = logvar_head.backward(dlogvar);
        for (size_t i = 0; i < g.size(); ++i) g[i] += g2[i];
        g = enc_b2.backward(g);
        g = enc_down2.backward(g);
        g = enc_b1.backward(g);
        g = enc_down1.backward(g);
        g = enc_b0.backward(g);
        // positional projection sees the summed spatial gradient per channel
        std::vector<T> dpb(size_t(cfg.base), T(0));
        for (int c = 0; c < cfg.base; ++c) {
            T acc = T(0);
            for (size_t i = 0; i < size_t(W_) * H_; ++i) acc += g[size_t(c) * W_ * H_ + i];
            dpb[size_t(c)] = acc;
        }
        enc_pos.backward(dpb);
        enc_in.backward(g);
    }

    // z is Cz*(W/4)*(H/4); returns {image in [0,1], mask logits}, each W*H
    std::pair<std::vector<T>, std::vector<T>> decode(std::span<const T> z, std::span<const T> pos, int W, int H) {
        check_dims(W, H);
        if (z.size() != size_t(cfg.latent_channels) * (W / 4) * (H / 4))
            throw validation_error("VaeModel::decode: latent size mismatch");
        W_ = W;
        H_ = H;
        const int F2 = 2 * cfg.base;
        auto h = dec_in.forward(z, W / 4, H / 4);
        const auto pb = dec_pos.forward(pos);
        const size_t s4 = size_t(W / 4) * (H / 4);
        for (int c = 0; c < F2; ++c)
            for (size_t i = 0; i < s4; ++i) h[size_t(c) * s4 + i] += pb[size_t(c)];
        h = dec_b0.forward(h, W / 4, H / 4);
        h = dec_up1.forward(h, F2, W / 4, H / 4);
        h = dec_upc1.forward(h, W / 2, H / 2);
        h = dec_b1.forward(h, W / 2, H / 2);
        h = dec_up2.forward(h, F2, W / 2, H / 2);
        h = dec_upc2.forward(h, W, H);
        h = dec_b2.forward(h, W, H);
        auto image = image_act.forward(image_head.forward(h, W, H));
        auto logits = mask_head.forward(h, W, H);
        return {std::move(image), std::move(logits)};
    }

    // returns the gradient w.r.t. z
    std::vector<T> decode_backward(std::span<const T> dimage, std::span<const T> dmask_logits) {
        auto g = image_head.backward(image_act.backward(dimage));
        const auto gm = mask_head.backward(dmask_logits);
        for (size_t i = 0; i < g.size(); ++i) g[i] += gm[i];
        g = dec_b2.backward(g);
        g = dec_upc2.backward(g);
        g = dec_up2.backward(g);
        g = dec_b1.backward(g);
        g = dec_upc1.backward(g);
        g = dec_up1.backward(g);
        g = dec_b0.backward(g);
        const int F2 = 2 * cfg.base;
        const size_t s4 = size_t(W_ / 4) * (H_ / 4);
        std::vector<T> dpb(size_t(F2), T(0));
        for (int c = 0; c < F2; ++c) {
            T acc = T(0);
            for (size_t i = 0; i < s4; ++i) acc += g[size_t(c) * s4 + i];
            dpb[size_t(c)] = acc;
        }
        dec_pos.backward(dpb);
        return dec_in.backward(g);
    }

    template <typename Fn>
    void for_each_param(Fn&& fn) {
        enc_in.for_each_param("enc.in", fn);
        enc_pos.for_each_param("enc.pos", fn);
        enc_b0.for_each_param("enc.b0", fn);
        enc_down1.for_each_param("enc.down1", fn);
        enc_b1.for_each_param("enc.b1", fn);
        enc_down2.for_each_param("enc.down2", fn);
        enc_b2.for_each_param("enc.b2", fn);
        mu_head.for_each_param("enc.mu", fn);
        logvar_head.for_each_param("enc.logvar", fn);
        dec_in.for_each_param("dec.in", fn);
        dec_pos.for_each_param("dec.pos", fn);
        dec_b0.for_each_param("dec.b0", fn);
        dec_upc1.for_each_param("dec.up1", fn);
        dec_b1.for_each_param("dec.b1", fn);
        dec_upc2.for_each_param("dec.up2", fn);
        dec_b2.for_each_param("dec.b2", fn);
        image_head.for_each_param("dec.image", fn);
        mask_head.for_each_param("dec.mask", fn);
    }
};

// Full forward + loss + backward for one slice with a fixed noise draw.
// Parameter gradients accumulate into the model; caller zeroes and steps.
template <typename T>
VaeLossTerms vae_step_grads(VaeModel<T>& model, std::span<const T> image, std::span<const T> mask,
                            std::span<const T> pos, std::span<const T> eps, int W, int H,
                            double lambda_mask = kVaeLambdaMask, double lambda_kl = kVaeLambdaKl) {
    auto [mu, logvar] = model.encode(image, mask, pos, W, H);
    const auto z = reparameterize<T>(mu, logvar, eps);
    auto [image_hat, mask_logits] = model.decode(z, pos, W, H);

    std::vector<T> dimage, dlogits;
    VaeLossTerms t;
    t.recon_mse = nn::mse_loss<T>(image_hat, image, &dimage);
    t.mask_bce = nn::bce_with_logits<T>(mask_logits, mask, &dlogits);
    t.kl = kl_divergence<T>(mu, logvar);
    t.total = t.recon_mse + lambda_mask * t.mask_bce + lambda_kl * t.kl;

    for (auto& g : dlogits) g *= T(lambda_mask);
    const auto dz = model.decode_backward(dimage, dlogits);

    const double n = double(mu.size());
    std::vector<T> dmu(mu.size()), dlogvar(mu.size());
    for (size_t i = 0; i < mu.size(); ++i) {
        dmu[i] = dz[i] + T(lambda_kl) * mu[i] / T(n);
        dlogvar[i] = dz[i] * eps[i] * std::exp(logvar[i] / T(2)) / T(2) +
                     T(lambda_kl) * (std::exp(logvar[i]) - T(1)) / T(2 * n);
    }
    model.encode_backward(dmu, dlogvar);
    return t;
}

}  // namespace sbld

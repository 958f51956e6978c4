#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sbld/common.hpp"

namespace sbld {

// Variance schedule tables. Arrays are stored for t = 1..T at index t-1;
// alpha_bar(0) is defined as 1 so posterior_var(1) is exactly 0.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;
    std::vector<double> posterior_vars;  // beta_tilde_t

    double beta(int t) const { return betas[size_t(t - 1)]; }
    double alpha(int t) const { return alphas[size_t(t - 1)]; }
    double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars[size_t(t - 1)]; }
    double posterior_var(int t) const { return posterior_vars[size_t(t - 1)]; }

    void check_step(int t) const {
        if (t < 1 || t > T)
            throw validation_error("diffusion step t=" + std::to_string(t) + " out of [1," + std::to_string(T) + "]");
    }
};

inline NoiseSchedule schedule_from_betas(std::vector<double> betas) {
    NoiseSchedule s;
    s.T = int(betas.size());
    if (s.T < 1) throw validation_error("schedule: T must be >= 1");
    for (size_t i = 0; i < betas.size(); ++i) {
        if (!(betas[i] > 0.0 && betas[i] < 1.0)) throw validation_error("schedule: beta out of (0,1)");
        if (i > 0 && betas[i] < betas[i - 1]) throw validation_error("schedule: betas must be non-decreasing");
    }
    s.betas = std::move(betas);
    s.alphas.resize(s.T);
    s.alpha_bars.resize(s.T);
    s.posterior_vars.resize(s.T);
    double bar = 1.0;
    for (int t = 1; t <= s.T; ++t) {
        const double prev_bar = bar;
        s.alphas[t - 1] = 1.0 - s.betas[t - 1];
        bar *= s.alphas[t - 1];
        s.alpha_bars[t - 1] = bar;
        s.posterior_vars[t - 1] = (1.0 - prev_bar) / (1.0 - bar) * s.betas[t - 1];
    }
    return s;
}

inline NoiseSchedule linear_schedule(int T = 1000, double beta_start = 1e-4, double beta_end = 0.02) {
    if (T < 1) throw validation_error("linear_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw validation_error("linear_schedule: need 0 < beta_start <= beta_end < 1");
    std::vector<double> betas(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t)
        betas[size_t(t)] = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * double(t) / double(T - 1);
    return schedule_from_betas(std::move(betas));
}

// x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps
template <typename T>
std::vector<T> forward_sample(std::span<const T> x0, int t, std::span<const T> eps, const NoiseSchedule& s) {
    s.check_step(t);
    if (x0.size() != eps.size()) throw validation_error("forward_sample: shape mismatch");
    const double a = std::sqrt(s.alpha_bar(t));
    const double b = std::sqrt(1.0 - s.alpha_bar(t));
    std::vector<T> out(x0.size());
    for (size_t i = 0; i < x0.size(); ++i) out[i] = T(a * double(x0[i]) + b * double(eps[i]));
    return out;
}

// x0_hat = (x_t - sqrt(1-abar_t) eps_hat) / sqrt(abar_t)
template <typename T>
std::vector<T> predict_x0(std::span<const T> x_t, std::span<const T> eps_hat, int t, const NoiseSchedule& s) {
    s.check_step(t);
    if (x_t.size() != eps_hat.size()) throw validation_error("predict_x0: shape mismatch");
    const double a = std::sqrt(s.alpha_bar(t));
    const double b = std::sqrt(1.0 - s.alpha_bar(t));
    std::vector<T> out(x_t.size());
    for (size_t i = 0; i < x_t.size(); ++i) out[i] = T((double(x_t[i]) - b * double(eps_hat[i])) / a);
    return out;
}

// mean((eps - model(x_t, t))^2), the epsilon-prediction objective
template <typename T, typename Model>
double noise_prediction_loss(Model&& model, std::span<const T> x0, int t, std::span<const T> eps,
                             const NoiseSchedule& s) {
    const auto x_t = forward_sample(x0, t, eps, s);
    const auto eps_hat = model(std::span<const T>(x_t), t);
    if (eps_hat.size() != eps.size()) throw validation_error("noise_prediction_loss: model output shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < eps.size(); ++i) {
        const double d = double(eps[i]) - double(eps_hat[i]);
        acc += d * d;
    }
    return acc / double(eps.size());
}

// One ancestral step: mu + sigma_t * noise, with sigma_1 = 0 by construction
// (abar_0 = 1) and the noise forced to zero at t = 1.
template <typename T>
std::vector<T> ddpm_step(std::span<const T> x_t, std::span<const T> eps_hat, int t, const NoiseSchedule& s,
                         std::span<const T> noise) {
    s.check_step(t);
    if (x_t.size() != eps_hat.size() || x_t.size() != noise.size())
        throw validation_error("ddpm_step: shape mismatch");
    const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha(t));
    const double coef = s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t));
    const double sigma = t == 1 ? 0.0 : std::sqrt(s.posterior_var(t));
    std::vector<T> out(x_t.size());
    for (size_t i = 0; i < x_t.size(); ++i)
        out[i] = T(inv_sqrt_alpha * (double(x_t[i]) - coef * double(eps_hat[i])) + sigma * double(noise[i]));
    return out;
}

// Deterministic DDIM step (eta = 0):
// x_{t_prev} = sqrt(abar_{t_prev}) x0_hat + sqrt(1-abar_{t_prev}) eps_hat
template <typename T>
std::vector<T> ddim_step(std::span<const T> x_t, std::span<const T> eps_hat, int t, int t_prev,
                         const NoiseSchedule& s) {
    s.check_step(t);
    if (t_prev >= t || t_prev < 0) throw validation_error("ddim_step: need 0 <= t_prev < t");
    if (x_t.size() != eps_hat.size()) throw validation_error("ddim_step: shape mismatch");
    const double a_t = std::sqrt(s.alpha_bar(t));
    const double b_t = std::sqrt(1.0 - s.alpha_bar(t));
    const double a_p = std::sqrt(s.alpha_bar(t_prev));
    const double b_p = std::sqrt(1.0 - s.alpha_bar(t_prev));
    std::vector<T> out(x_t.size());
    for (size_t i = 0; i < x_t.size(); ++i) {
        const double x0 = (double(x_t[i]) - b_t * double(eps_hat[i])) / a_t;
        out[i] = T(a_p * x0 + b_p * double(eps_hat[i]));
    }
    return out;
}

// Evenly spaced subset of {1..T} of the requested size, always including T.
inline std::vector<int> ddim_time_grid(int T, int steps) {
    if (steps < 1 || steps > T) throw validation_error("ddim_time_grid: steps must be in [1,T]");
    std::vector<int> grid(static_cast<size_t>(steps));
    for (int j = 1; j <= steps; ++j) grid[size_t(j - 1)] = int(std::llround(double(j) * double(T) / double(steps)));
    return grid;
}

enum class SamplerKind { ddpm, ddim };

inline SamplerKind sampler_from_string(const std::string& s) {
    if (s == "ddpm") return SamplerKind::ddpm;
    if (s == "ddim") return SamplerKind::ddim;
    throw validation_error("unknown sampler '" + s + "' (expected ddpm or ddim)");
}

inline const char* to_string(SamplerKind k) { return k == SamplerKind::ddpm ? "ddpm" : "ddim"; }

// Full reverse chain from x_T ~ N(0,I). The model callable binds any
// conditioning; it maps (x_t, t) -> eps_hat. Deterministic per seed.
template <typename T, typename Model>
std::vector<T> sample(Model&& model, const NoiseSchedule& s, size_t n_elements, SamplerKind sampler,
                      int ddim_steps, uint64_t seed) {
    Rng rng(seed);
    std::vector<T> x(n_elements);
    for (auto& v : x) v = T(rng.normal());

    if (sampler == SamplerKind::ddpm) {
        std::vector<T> noise(n_elements);
        for (int t = s.T; t >= 1; --t) {
            const auto eps_hat = model(std::span<const T>(x), t);
            for (auto& v : noise) v = t == 1 ? T(0) : T(rng.normal());
            x = ddpm_step(std::span<const T>(x), std::span<const T>(eps_hat), t, s, std::span<const T>(noise));
        }
    } else {
        const auto grid = ddim_time_grid(s.T, ddim_steps);
        for (int j = int(grid.size()) - 1; j >= 0; --j) {
            const int t = grid[size_t(j)];
            const int t_prev = j == 0 ? 0 : grid[size_t(j - 1)];
            const auto eps_hat = model(std::span<const T>(x), t);
            x = ddim_step(std::span<const T>(x), std::span<const T>(eps_hat), t, t_prev, s);
        }
    }
    return x;
}

}  // namespace sbld

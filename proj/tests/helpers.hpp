#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <gtest/gtest.h>

namespace testutil {

inline std::filesystem::path temp_dir(const std::string& tag) {
    auto p = std::filesystem::temp_directory_path() / ("sbld_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline double rel_err(double a, double b) {
    const double scale = std::max(1e-8, std::abs(a) + std::abs(b));
    return std::abs(a - b) / scale;
}

// Central-difference check of every parameter of `model` against the
// analytic gradients left in place by a prior backward pass. `loss` must
// re-run the forward pass from current parameter values.
// The error is |numeric - analytic| / max(atol/tol, |numeric| + |analytic|),
// so err < tol is equivalent to the mixed bound
// |numeric - analytic| < atol + tol * (|numeric| + |analytic|); the absolute
// floor keeps finite-difference rounding noise from failing parameters whose
// true gradient is ~0.
template <typename Model>
double max_param_grad_err(Model& model, const std::function<double()>& loss, double h = 1e-6, double tol = 1e-4,
                          double atol = 1e-9) {
    double worst = 0.0;
    model.for_each_param([&](const std::string& name, std::vector<double>& w, std::vector<double>& g) {
        for (size_t i = 0; i < w.size(); ++i) {
            const double keep = w[i];
            w[i] = keep + h;
            const double lp = loss();
            w[i] = keep - h;
            const double lm = loss();
            w[i] = keep;
            const double numeric = (lp - lm) / (2.0 * h);
            const double denom = std::max(atol / tol, std::abs(numeric) + std::abs(g[i]));
            const double err = std::abs(numeric - g[i]) / denom;
            if (err > worst) worst = err;
            EXPECT_LT(err, tol) << name << "[" << i << "] numeric=" << numeric << " analytic=" << g[i];
        }
    });
    return worst;
}

// Same check for an input vector against an analytic input gradient.
inline double max_input_grad_err(std::vector<double>& x, const std::vector<double>& gx,
                                 const std::function<double()>& loss, double h = 1e-6, double tol = 1e-4,
                                 double atol = 1e-9) {
    double worst = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double lp = loss();
        x[i] = keep - h;
        const double lm = loss();
        x[i] = keep;
        const double numeric = (lp - lm) / (2.0 * h);
        const double denom = std::max(atol / tol, std::abs(numeric) + std::abs(gx[i]));
        const double err = std::abs(numeric - gx[i]) / denom;
        if (err > worst) worst = err;
        EXPECT_LT(err, tol) << "input[" << i << "] numeric=" << numeric << " analytic=" << gx[i];
    }
    return worst;
}

}  // namespace testutil

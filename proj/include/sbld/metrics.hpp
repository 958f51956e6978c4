#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sbld/common.hpp"
#include "sbld/volume.hpp"

namespace sbld {

struct MetricReport {
    std::string name;
    double value = 0.0;
    std::optional<double> std;
    int64_t n = 0;
    bool saturated = false;
};

// ------------------------------------------------------------------- PSNR

inline constexpr double kPsnrSaturation = 100.0;  // dB cap for MSE == 0

template <typename T>
double mse(std::span<const T> a, std::span<const T> b) {
    if (a.size() != b.size()) throw validation_error("mse: size mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = double(a[i]) - double(b[i]);
        acc += d * d;
    }
    return acc / double(a.size());
}

template <typename T>
double psnr(std::span<const T> a, std::span<const T> b, double data_range = 1.0, bool* saturated = nullptr) {
    const double m = mse(a, b);
    if (saturated) *saturated = (m == 0.0);
    if (m == 0.0) return kPsnrSaturation;
    return 10.0 * std::log10(data_range * data_range / m);
}

inline double psnr(const VolumeGrid& a, const VolumeGrid& b, double data_range = 1.0, bool* saturated = nullptr) {
    if (a.dims != b.dims) throw validation_error("psnr: dims mismatch");
    return psnr<float>(a.voxels, b.voxels, data_range, saturated);
}

// ------------------------------------------------------------------- SSIM
//
// Uniform (box) window over all fully-contained windows, population
// statistics, C1=(k1*range)^2, C2=(k2*range)^2. Absolute values shift
// slightly versus Gaussian-window implementations.

template <typename T>
double ssim(std::span<const T> a, std::span<const T> b, Dims dims, int window = 7,
            double k1 = 0.01, double k2 = 0.03, double data_range = 1.0) {
    if (a.size() != b.size() || a.size() != size_t(dims.voxels()))
        throw validation_error("ssim: size mismatch");
    const int W = dims.w, H = dims.h, D = dims.d;
    if (W < window || H < window || D < window)
        throw validation_error("ssim: volume smaller than window (" + std::to_string(window) + ")");

    // summed-volume tables with a zero border at index 0
    const size_t TW = W + 1, TH = H + 1, TD = D + 1;
    std::vector<double> Sa(TW * TH * TD, 0.0), Sb(Sa), Saa(Sa), Sbb(Sa), Sab(Sa);
    auto tix = [&](int x, int y, int z) { return (size_t(z) * TH + y) * TW + x; };
    for (int z = 1; z <= D; ++z)
        for (int y = 1; y <= H; ++y)
            for (int x = 1; x <= W; ++x) {
                const size_t vi = (size_t(z - 1) * H + (y - 1)) * W + (x - 1);
                const double va = double(a[vi]), vb = double(b[vi]);
                const size_t i = tix(x, y, z);
                auto accum = [&](std::vector<double>& S, double v) {
                    S[i] = v + S[tix(x - 1, y, z)] + S[tix(x, y - 1, z)] + S[tix(x, y, z - 1)] -
                           S[tix(x - 1, y - 1, z)] - S[tix(x - 1, y, z - 1)] - S[tix(x, y - 1, z - 1)] +
                           S[tix(x - 1, y - 1, z - 1)];
                };
                accum(Sa, va);
                accum(Sb, vb);
                accum(Saa, va * va);
                accum(Sbb, vb * vb);
                accum(Sab, va * vb);
            }

    auto window_sum = [&](const std::vector<double>& S, int x, int y, int z) {
        const int x1 = x + window, y1 = y + window, z1 = z + window;
        return S[tix(x1, y1, z1)] - S[tix(x, y1, z1)] - S[tix(x1, y, z1)] - S[tix(x1, y1, z)] +
               S[tix(x, y, z1)] + S[tix(x, y1, z)] + S[tix(x1, y, z)] - S[tix(x, y, z)];
    };

    const double C1 = (k1 * data_range) * (k1 * data_range);
    const double C2 = (k2 * data_range) * (k2 * data_range);
    const double N = double(window) * window * window;
    double acc = 0.0;
    int64_t count = 0;
    for (int z = 0; z + window <= D; ++z)
        for (int y = 0; y + window <= H; ++y)
            for (int x = 0; x + window <= W; ++x) {
                const double ma = window_sum(Sa, x, y, z) / N;
                const double mb = window_sum(Sb, x, y, z) / N;
                const double va = window_sum(Saa, x, y, z) / N - ma * ma;
                const double vb = window_sum(Sbb, x, y, z) / N - mb * mb;
                const double cab = window_sum(Sab, x, y, z) / N - ma * mb;
                const double num = (2.0 * ma * mb + C1) * (2.0 * cab + C2);
                const double den = (ma * ma + mb * mb + C1) * (va + vb + C2);
                acc += num / den;
                ++count;
            }
    return acc / double(count);
}

inline double ssim(const VolumeGrid& a, const VolumeGrid& b, int window = 7,
                   double k1 = 0.01, double k2 = 0.03, double data_range = 1.0) {
    if (a.dims != b.dims) throw validation_error("ssim: dims mismatch");
    return ssim<float>(a.voxels, b.voxels, a.dims, window, k1, k2, data_range);
}

// --------------------------------------------------------------- Dice/IoU

struct OverlapCounts {
    int64_t intersection = 0;
    int64_t union_ = 0;
    int64_t n1 = 0;
    int64_t n2 = 0;
};

inline OverlapCounts overlap_counts(const MaskGrid& m1, const MaskGrid& m2) {
    if (m1.dims != m2.dims) throw validation_error("overlap: dims mismatch");
    OverlapCounts c;
    for (size_t i = 0; i < m1.voxels.size(); ++i) {
        const int a = m1.voxels[i], b = m2.voxels[i];
        c.intersection += a & b;
        c.union_ += a | b;
        c.n1 += a;
        c.n2 += b;
    }
    return c;
}

// 2|A∩B| / (|A|+|B|); both-empty defined as 1.
inline double dice(const MaskGrid& m1, const MaskGrid& m2) {
    const auto c = overlap_counts(m1, m2);
    if (c.n1 + c.n2 == 0) return 1.0;
    return 2.0 * double(c.intersection) / double(c.n1 + c.n2);
}

// |A∩B| / |A∪B|; both-empty defined as 1.
inline double iou(const MaskGrid& m1, const MaskGrid& m2) {
    const auto c = overlap_counts(m1, m2);
    if (c.union_ == 0) return 1.0;
    return double(c.intersection) / double(c.union_);
}

// --------------------------------------------------------------- Spearman

// Rank correlation with average ranks for ties. Returns 0 when either input
// is constant (no ordering information).
inline double spearman(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size() || xs.size() < 2) throw validation_error("spearman: need >= 2 paired samples");
    const size_t n = xs.size();
    auto ranks = [n](std::span<const double> v) {
        std::vector<size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
        std::vector<double> r(n);
        size_t i = 0;
        while (i < n) {
            size_t j = i;
            while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = 0.5 * (double(i) + double(j)) + 1.0;
            for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto rx = ranks(xs), ry = ranks(ys);
    double mx = 0, my = 0;
    for (size_t i = 0; i < n; ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= double(n);
    my /= double(n);
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < n; ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

// ------------------------------------------------------------- aggregates

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // n-1 denominator; 0 for a single sample
    int64_t n = 0;
};

inline MeanStd mean_std(std::span<const double> v) {
    MeanStd r;
    r.n = int64_t(v.size());
    if (v.empty()) return r;
    for (double x : v) r.mean += x;
    r.mean /= double(v.size());
    if (v.size() > 1) {
        double acc = 0.0;
        for (double x : v) acc += (x - r.mean) * (x - r.mean);
        r.std = std::sqrt(acc / double(v.size() - 1));
    }
    return r;
}

}  // namespace sbld

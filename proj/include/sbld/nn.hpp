#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sbld/common.hpp"

// Minimal dense/conv/norm layers with explicit backward passes. Layers cache
// what they need during forward and are used once per sample between
// zero_grads() and the optimizer step; gradients accumulate across samples.
// Data layout is channel-major: 2D activations are [C][H][W], 3D are
// [C][D][H][W], rows contiguous along x.

namespace sbld::nn {

template <typename T>
inline void axpy(T a, const T* __restrict x, T* __restrict y, int n) {
    for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

// Fixed-order 8-lane reduction so the loop vectorizes without -ffast-math.
template <typename T>
inline T dot(const T* __restrict x, const T* __restrict y, int n) {
    T a0 = T(0), a1 = T(0), a2 = T(0), a3 = T(0), a4 = T(0), a5 = T(0), a6 = T(0), a7 = T(0);
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        a0 += x[i] * y[i];
        a1 += x[i + 1] * y[i + 1];
        a2 += x[i + 2] * y[i + 2];
        a3 += x[i + 3] * y[i + 3];
        a4 += x[i + 4] * y[i + 4];
        a5 += x[i + 5] * y[i + 5];
        a6 += x[i + 6] * y[i + 6];
        a7 += x[i + 7] * y[i + 7];
    }
    T tail = T(0);
    for (; i < n; ++i) tail += x[i] * y[i];
    return ((a0 + a1) + (a2 + a3)) + ((a4 + a5) + (a6 + a7)) + tail;
}

template <typename T>
void fill_normal(std::vector<T>& v, double stddev, Rng& rng) {
    for (auto& x : v) x = T(stddev * rng.normal());
}

// largest group count <= 8 that divides the channel count
inline int norm_groups(int channels) {
    for (int g = 8; g >= 2; --g)
        if (channels % g == 0) return g;
    return 1;
}

// sinusoid embedding: values[2k] = sin(p / 10000^(2k/d)), values[2k+1] = cos(...)
template <typename T>
std::vector<T> sinusoid_embedding(double p, int d) {
    if (d < 2 || d % 2 != 0) throw validation_error("sinusoid_embedding: dimension must be even and >= 2");
    std::vector<T> out(static_cast<size_t>(d));
    for (int k = 0; 2 * k < d; ++k) {
        const double freq = std::pow(10000.0, -2.0 * double(k) / double(d));
        out[size_t(2 * k)] = T(std::sin(p * freq));
        out[size_t(2 * k + 1)] = T(std::cos(p * freq));
    }
    return out;
}

template <typename T>
struct Dense {
    int in = 0, out = 0;
    std::vector<T> w, b, gw, gb;  // w: [out][in]
    std::vector<T> x_;

    void init(int in_dim, int out_dim, Rng& rng, double w_std = -1.0) {
        in = in_dim;
        out = out_dim;
        w.assign(size_t(out) * size_t(in), T(0));
        b.assign(size_t(out), T(0));
        gw.assign(w.size(), T(0));
        gb.assign(b.size(), T(0));
        fill_normal(w, w_std >= 0.0 ? w_std : std::sqrt(2.0 / double(in)), rng);
    }

    std::vector<T> forward(std::span<const T> x) {
        x_.assign(x.begin(), x.end());
        std::vector<T> y(static_cast<size_t>(out));
        for (int o = 0; o < out; ++o) y[size_t(o)] = b[size_t(o)] + dot(w.data() + size_t(o) * in, x.data(), in);
        return y;
    }

    std::vector<T> backward(std::span<const T> gy) {
        std::vector<T> gx(size_t(in), T(0));
        for (int o = 0; o < out; ++o) {
            gb[size_t(o)] += gy[size_t(o)];
            axpy(gy[size_t(o)], x_.data(), gw.data() + size_t(o) * in, in);
            axpy(gy[size_t(o)], w.data() + size_t(o) * in, gx.data(), in);
        }
        return gx;
    }

    template <typename Fn>
    void for_each_param(const std::string& prefix, Fn&& fn) {
        fn(prefix + ".w", w, gw);
        fn(prefix + ".b", b, gb);
    }
    template <typename Fn>
    void for_each_param(Fn&& fn) {
        for_each_param("dense", fn);
    }
};

template <typename T>
struct SiLU {
    std::vector<T> x_;
    std::vector<T> forward(std::span<const T> x) {
        x_.assign(x.begin(), x.end());
        std::vector<T> y(x.size());
        for (size_t i = 0; i < x.size(); ++i) {
            const T s = T(1) / (T(1) + std::exp(-x[i]));
            y[i] = x[i] * s;
        }
        return y;
    }
    std::vector<T> backward(std::span<const T> gy) {
        std::vector<T> gx(gy.size());
        for (size_t i = 0; i < gy.size(); ++i) {
            const T s = T(1) / (T(1) + std::exp(-x_[i]));
            gx[i] = gy[i] * s * (T(1) + x_[i] * (T(1) - s));
        }
        return gx;
    }
};

template <typename T>
struct Sigmoid {
    std::vector<T> y_;
    std::vector<T> forward(std::span<const T> x) {
        y_.resize(x.size());
        for (size_t i = 0; i < x.size(); ++i) y_[i] = T(1) / (T(1) + std::exp(-x[i]));
        return y_;
    }
    std::vector<T> backward(std::span<const T> gy) {
        std::vector<T> gx(gy.size());
        for (size_t i = 0; i < gy.size(); ++i) gx[i] = gy[i] * y_[i] * (T(1) - y_[i]);
        return gx;
    }
};

namespace detail {

// Shared x-axis range for ix = stride*ox + kx - 1 staying inside [0, W).
inline void ox_range(int kx, int stride, int W, int Wo, int& ox0, int& ox1) {
    ox0 = 0;
    while (stride * ox0 + kx - 1 < 0) ++ox0;
    ox1 = Wo;
    while (ox1 > ox0 && stride * (ox1 - 1) + kx - 1 >= W) --ox1;
}

}  // namespace detail

// 2D convolution, kernel 1 or 3 (pad 0 / pad 1), stride 1 or 2.
template <typename T>
struct Conv2d {
    int cin = 0, cout = 0, k = 3, stride = 1;
    std::vector<T> w, b, gw, gb;  // w: [cout][cin][k][k]
    std::vector<T> x_;
    int W_ = 0, H_ = 0, Wo_ = 0, Ho_ = 0;

    void init(int cin_, int cout_, int k_, int stride_, Rng& rng, double w_std = -1.0) {
        if (k_ != 1 && k_ != 3) throw validation_error("Conv2d: kernel must be 1 or 3");
        if (stride_ != 1 && stride_ != 2) throw validation_error("Conv2d: stride must be 1 or 2");
        if (k_ == 1 && stride_ != 1) throw validation_error("Conv2d: 1x1 kernel requires stride 1");
        cin = cin_;
        cout = cout_;
        k = k_;
        stride = stride_;
        w.assign(size_t(cout) * cin * k * k, T(0));
        b.assign(size_t(cout), T(0));
        gw.assign(w.size(), T(0));
        gb.assign(b.size(), T(0));
        fill_normal(w, w_std >= 0.0 ? w_std : std::sqrt(2.0 / double(size_t(cin) * k * k)), rng);
    }

    std::vector<T> forward(std::span<const T> x, int W, int H) {
        if (x.size() != size_t(cin) * W * H) throw validation_error("Conv2d: input size mismatch");
        if (stride == 2 && (W % 2 != 0 || H % 2 != 0)) throw validation_error("Conv2d: stride 2 needs even dims");
        x_.assign(x.begin(), x.end());
        W_ = W;
        H_ = H;
        Wo_ = W / stride;
        Ho_ = H / stride;
        std::vector<T> y(size_t(cout) * Wo_ * Ho_);
        for (int oc = 0; oc < cout; ++oc) {
            T* yp = y.data() + size_t(oc) * Wo_ * Ho_;
            for (int i = 0; i < Wo_ * Ho_; ++i) yp[i] = b[size_t(oc)];
        }
        for (int oc = 0; oc < cout; ++oc)
            for (int ic = 0; ic < cin; ++ic) {
                const T* wk = w.data() + (size_t(oc) * cin + ic) * k * k;
                const T* xp = x_.data() + size_t(ic) * W_ * H_;
                T* yp = y.data() + size_t(oc) * Wo_ * Ho_;
                if (k == 1) {
                    axpy(wk[0], xp, yp, W_ * H_);
                    continue;
                }
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx) {
                        int ox0, ox1;
                        detail::ox_range(kx, stride, W_, Wo_, ox0, ox1);
                        if (ox0 >= ox1) continue;
                        const T wv = wk[ky * 3 + kx];
                        for (int oy = 0; oy < Ho_; ++oy) {
                            const int iy = stride * oy + ky - 1;
                            if (iy < 0 || iy >= H_) continue;
                            const T* xr = xp + size_t(iy) * W_;
                            T* yr = yp + size_t(oy) * Wo_ + ox0;
                            if (stride == 1) {
                                axpy(wv, xr + ox0 + kx - 1, yr, ox1 - ox0);
                            } else {
                                for (int ox = ox0; ox < ox1; ++ox) yp[size_t(oy) * Wo_ + ox] += wv * xr[2 * ox + kx - 1];
                            }
                        }
                    }
            }
        return y;
    }

    std::vector<T> backward(std::span<const T> gy) {
        if (gy.size() != size_t(cout) * Wo_ * Ho_) throw validation_error("Conv2d: grad size mismatch");
        std::vector<T> gx(size_t(cin) * W_ * H_, T(0));
        for (int oc = 0; oc < cout; ++oc) {
            const T* gp = gy.data() + size_t(oc) * Wo_ * Ho_;
            T acc = T(0);
            for (int i = 0; i < Wo_ * Ho_; ++i) acc += gp[i];
            gb[size_t(oc)] += acc;
        }
        for (int oc = 0; oc < cout; ++oc)
            for (int ic = 0; ic < cin; ++ic) {
                T* gwk = gw.data() + (size_t(oc) * cin + ic) * k * k;
                const T* wk = w.data() + (size_t(oc) * cin + ic) * k * k;
                const T* xp = x_.data() + size_t(ic) * W_ * H_;
                const T* gp = gy.data() + size_t(oc) * Wo_ * Ho_;
                T* gxp = gx.data() + size_t(ic) * W_ * H_;
                if (k == 1) {
                    gwk[0] += dot(gp, xp, W_ * H_);
                    axpy(wk[0], gp, gxp, W_ * H_);
                    continue;
                }
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx) {
                        int ox0, ox1;
                        detail::ox_range(kx, stride, W_, Wo_, ox0, ox1);
                        if (ox0 >= ox1) continue;
                        const T wv = wk[ky * 3 + kx];
                        T wacc = T(0);
                        for (int oy = 0; oy < Ho_; ++oy) {
                            const int iy = stride * oy + ky - 1;
                            if (iy < 0 || iy >= H_) continue;
                            const T* gr = gp + size_t(oy) * Wo_ + ox0;
                            const T* xr = xp + size_t(iy) * W_;
                            T* gxr = gxp + size_t(iy) * W_;
                            if (stride == 1) {
                                wacc += dot(gr, xr + ox0 + kx - 1, ox1 - ox0);
                                axpy(wv, gr, gxr + ox0 + kx - 1, ox1 - ox0);
                            } else {
                                for (int ox = ox0; ox < ox1; ++ox) {
                                    const int ix = 2 * ox + kx - 1;
                                    wacc += gp[size_t(oy) * Wo_ + ox] * xr[ix];
                                    gxr[ix] += wv * gp[size_t(oy) * Wo_ + ox];
                                }
                            }
                        }
                        gwk[ky * 3 + kx] += wacc;
                    }
            }
        return gx;
    }

    template <typename Fn>
    void for_each_param(const std::string& prefix, Fn&& fn) {
        fn(prefix + ".w", w, gw);
        fn(prefix + ".b", b, gb);
    }
    template <typename Fn>
    void for_each_param(Fn&& fn) {
        for_each_param("conv2d", fn);
    }
};

// 3D convolution, kernel 1 or 3 (pad 0 / pad 1), stride 1 or 2.
template <typename T>
struct Conv3d {
    int cin = 0, cout = 0, k = 3, stride = 1;
    std::vector<T> w, b, gw, gb;  // w: [cout][cin][k][k][k]
    std::vector<T> x_;
    int W_ = 0, H_ = 0, D_ = 0, Wo_ = 0, Ho_ = 0, Do_ = 0;

    void init(int cin_, int cout_, int k_, int stride_, Rng& rng, double w_std = -1.0) {
        if (k_ != 1 && k_ != 3) throw validation_error("Conv3d: kernel must be 1 or 3");
        if (stride_ != 1 && stride_ != 2) throw validation_error("Conv3d: stride must be 1 or 2");
        if (k_ == 1 && stride_ != 1) throw validation_error("Conv3d: 1x1x1 kernel requires stride 1");
        cin = cin_;
        cout = cout_;
        k = k_;
        stride = stride_;
        w.assign(size_t(cout) * cin * k * k * k, T(0));
        b.assign(size_t(cout), T(0));
        gw.assign(w.size(), T(0));
        gb.assign(b.size(), T(0));
        fill_normal(w, w_std >= 0.0 ? w_std : std::sqrt(2.0 / double(size_t(cin) * k * k * k)), rng);
    }

    std::vector<T> forward(std::span<const T> x, int W, int H, int D) {
        if (x.size() != size_t(cin) * W * H * D) throw validation_error("Conv3d: input size mismatch");
        if (stride == 2 && (W % 2 != 0 || H % 2 != 0 || D % 2 != 0))
            throw validation_error("Conv3d: stride 2 needs even dims");
        x_.assign(x.begin(), x.end());
        W_ = W;
        H_ = H;
        D_ = D;
        Wo_ = W / stride;
        Ho_ = H / stride;
        Do_ = D / stride;
        const size_t plane_o = size_t(Wo_) * Ho_;
        const size_t vol_o = plane_o * Do_;
        std::vector<T> y(size_t(cout) * vol_o);
        for (int oc = 0; oc < cout; ++oc) {
            T* yp = y.data() + size_t(oc) * vol_o;
            for (size_t i = 0; i < vol_o; ++i) yp[i] = b[size_t(oc)];
        }
        for (int oc = 0; oc < cout; ++oc)
            for (int ic = 0; ic < cin; ++ic) {
                const T* wk = w.data() + (size_t(oc) * cin + ic) * k * k * k;
                const T* xp = x_.data() + size_t(ic) * W_ * H_ * D_;
                T* yp = y.data() + size_t(oc) * vol_o;
                if (k == 1) {
                    axpy(wk[0], xp, yp, int(vol_o));
                    continue;
                }
                for (int kz = 0; kz < 3; ++kz)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            int ox0, ox1;
                            detail::ox_range(kx, stride, W_, Wo_, ox0, ox1);
                            if (ox0 >= ox1) continue;
                            const T wv = wk[(kz * 3 + ky) * 3 + kx];
                            for (int oz = 0; oz < Do_; ++oz) {
                                const int iz = stride * oz + kz - 1;
                                if (iz < 0 || iz >= D_) continue;
                                for (int oy = 0; oy < Ho_; ++oy) {
                                    const int iy = stride * oy + ky - 1;
                                    if (iy < 0 || iy >= H_) continue;
                                    const T* xr = xp + (size_t(iz) * H_ + iy) * W_;
                                    T* yr = yp + (size_t(oz) * Ho_ + oy) * Wo_;
                                    if (stride == 1) {
                                        axpy(wv, xr + ox0 + kx - 1, yr + ox0, ox1 - ox0);
                                    } else {
                                        for (int ox = ox0; ox < ox1; ++ox) yr[ox] += wv * xr[2 * ox + kx - 1];
                                    }
                                }
                            }
                        }
            }
        return y;
    }

    std::vector<T> backward(std::span<const T> gy) {
        const size_t plane_o = size_t(Wo_) * Ho_;
        const size_t vol_o = plane_o * Do_;
        if (gy.size() != size_t(cout) * vol_o) throw validation_error("Conv3d: grad size mismatch");
        std::vector<T> gx(size_t(cin) * W_ * H_ * D_, T(0));
        for (int oc = 0; oc < cout; ++oc) {
            const T* gp = gy.data() + size_t(oc) * vol_o;
            T acc = T(0);
            for (size_t i = 0; i < vol_o; ++i) acc += gp[i];
            gb[size_t(oc)] += acc;
        }
        for (int oc = 0; oc < cout; ++oc)
            for (int ic = 0; ic < cin; ++ic) {
                T* gwk = gw.data() + (size_t(oc) * cin + ic) * k * k * k;
                const T* wk = w.data() + (size_t(oc) * cin + ic) * k * k * k;
                const T* xp = x_.data() + size_t(ic) * W_ * H_ * D_;
                const T* gp = gy.data() + size_t(oc) * vol_o;
                T* gxp = gx.data() + size_t(ic) * W_ * H_ * D_;
                if (k == 1) {
                    gwk[0] += dot(gp, xp, int(vol_o));
                    axpy(wk[0], gp, gxp, int(vol_o));
                    continue;
                }
                for (int kz = 0; kz < 3; ++kz)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            int ox0, ox1;
                            detail::ox_range(kx, stride, W_, Wo_, ox0, ox1);
                            if (ox0 >= ox1) continue;
                            const T wv = wk[(kz * 3 + ky) * 3 + kx];
                            T wacc = T(0);
                            for (int oz = 0; oz < Do_; ++oz) {
                                const int iz = stride * oz + kz - 1;
                                if (iz < 0 || iz >= D_) continue;
                                for (int oy = 0; oy < Ho_; ++oy) {
                                    const int iy = stride * oy + ky - 1;
                                    if (iy < 0 || iy >= H_) continue;
                                    const T* gr = gp + (size_t(oz) * Ho_ + oy) * Wo_;
                                    const T* xr = xp + (size_t(iz) * H_ + iy) * W_;
                                    T* gxr = gxp + (size_t(iz) * H_ + iy) * W_;
                                    if (stride == 1) {
                                        wacc += dot(gr + ox0, xr + ox0 + kx - 1, ox1 - ox0);
                                        axpy(wv, gr + ox0, gxr + ox0 + kx - 1, ox1 - ox0);
                                    } else {
                                        for (int ox = ox0; ox < ox1; ++ox) {
                                            const int ix = 2 * ox + kx - 1;
                                            wacc += gr[ox] * xr[ix];
                                            gxr[ix] += wv * gr[ox];
                                        }
                                    }
                                }
                            }
                            gwk[(kz * 3 + ky) * 3 + kx] += wacc;
                        }
            }
        return gx;
    }

    template <typename Fn>
    void for_each_param(const std::string& prefix, Fn&& fn) {
        fn(prefix + ".w", w, gw);
        fn(prefix + ".b", b, gb);
    }
    template <typename Fn>
    void for_each_param(Fn&& fn) {
        for_each_param("conv3d", fn);
    }
};

// GroupNorm over [C][S] activations (S = spatial element count per channel).
template <typename T>
struct GroupNorm {
    int C = 0, G = 0;
    double eps = 1e-5;
    std::vector<T> gamma, beta, ggamma, gbeta;
    std::vector<T> xhat_;
    std::vector<double> invstd_;
    int S_ = 0;

    void init(int channels, int groups) {
        if (groups < 1 || channels % groups != 0) throw validation_error("GroupNorm: channels must divide by groups");
        C = channels;
        G = groups;
        gamma.assign(size_t(C), T(1));
        beta.assign(size_t(C), T(0));
        ggamma.assign(size_t(C), T(0));
        gbeta.assign(size_t(C), T(0));
    }

    std::vector<T> forward(std::span<const T> x, int S) {
        if (x.size() != size_t(C) * S) throw validation_error("GroupNorm: input size mismatch");
        S_ = S;
        xhat_.resize(x.size());
        invstd_.assign(size_t(G), 0.0);
        std::vector<T> y(x.size());
        const int cg = C / G;
        for (int g = 0; g < G; ++g) {
            const size_t off = size_t(g) * cg * S;
            const size_t n = size_t(cg) * S;
            double mean = 0.0;
            for (size_t i = 0; i < n; ++i) mean += double(x[off + i]);
            mean /= double(n);
            double var = 0.0;
            for (size_t i = 0; i < n; ++i) {
                const double d = double(x[off + i]) - mean;
                var += d * d;
            }
            var /= double(n);
            const double inv = 1.0 / std::sqrt(var + eps);
            invstd_[size_t(g)] = inv;
            for (int c = g * cg; c < (g + 1) * cg; ++c)
                for (int i = 0; i < S; ++i) {
                    const size_t idx = size_t(c) * S + i;
                    xhat_[idx] = T((double(x[idx]) - mean) * inv);
                    y[idx] = gamma[size_t(c)] * xhat_[idx] + beta[size_t(c)];
                }
        }
        return y;
    }

    std::vector<T> backward(std::span<const T> gy) {
        std::vector<T> gx(gy.size());
        const int cg = C / G;
        for (int c = 0; c < C; ++c) {
            double dg = 0.0, db = 0.0;
            for (int i = 0; i < S_; ++i) {
                const size_t idx = size_t(c) * S_ + i;
                dg += double(gy[idx]) * double(xhat_[idx]);
                db += double(gy[idx]);
            }
            ggamma[size_t(c)] += T(dg);
            gbeta[size_t(c)] += T(db);
        }
        for (int g = 0; g < G; ++g) {
            const size_t n = size_t(cg) * S_;
            double sum1 = 0.0, sum2 = 0.0;
            for (int c = g * cg; c < (g + 1) * cg; ++c)
                for (int i = 0; i < S_; ++i) {
                    const size_t idx = size_t(c) * S_ + i;
                    const double dxh = double(gy[idx]) * double(gamma[size_t(c)]);
                    sum1 += dxh;
                    sum2 += dxh * double(xhat_[idx]);
                }
            const double inv = invstd_[size_t(g)];
            for (int c = g * cg; c < (g + 1) * cg; ++c)
                for (int i = 0; i < S_; ++i) {
                    const size_t idx = size_t(c) * S_ + i;
                    const double dxh = double(gy[idx]) * double(gamma[size_t(c)]);
                    gx[idx] = T(inv * (dxh - (sum1 + double(xhat_[idx]) * sum2) / double(n)));
                }
        }
        return gx;
    }

    template <typename Fn>
    void for_each_param(const std::string& prefix, Fn&& fn) {
        fn(prefix + ".gamma", gamma, ggamma);
        fn(prefix + ".beta", beta, gbeta);
    }
    template <typename Fn>
    void for_each_param(Fn&& fn) {
        for_each_param("gn", fn);
    }
};

// FiLM-style modulation: out[c][i] = h[c][i] * (1 + s[c]) + b[c].
// s and b come from an embedding projection, so their grads flow back too.
template <typename T>
struct ScaleShift {
    std::vector<T> h_, s_;
    int C_ = 0, S_ = 0;

    std::vector<T> forward(std::span<const T> h, std::span<const T> s, std::span<const T> b, int C, int S) {
        if (h.size() != size_t(C) * S || s.size() != size_t(C) || b.size() != size_t(C))
            throw validation_error("ScaleShift: size mismatch");
        h_.assign(h.begin(), h.end());
        s_.assign(s.begin(), s.end());
        C_ = C;
        S_ = S;
        std::vector<T> y(h.size());
        for (int c = 0; c < C; ++c) {
            const T a = T(1) + s[size_t(c)];
            const T bb = b[size_t(c)];
            const size_t off = size_t(c) * S;
            for (int i = 0; i < S; ++i) y[off + i] = h[off + i] * a + bb;
        }
        return y;
    }

    void backward(std::span<const T> gy, std::vector<T>& gh, std::vector<T>& gs, std::vector<T>& gb) {
        gh.assign(size_t(C_) * S_, T(0));
        gs.assign(size_t(C_), T(0));
        gb.assign(size_t(C_), T(0));
        for (int c = 0; c < C_; ++c) {
            const T a = T(1) + s_[size_t(c)];
            const size_t off = size_t(c) * S_;
            double ds = 0.0, db = 0.0;
            for (int i = 0; i < S_; ++i) {
                gh[off + i] = gy[off + i] * a;
                ds += double(gy[off + i]) * double(h_[off + i]);
                db += double(gy[off + i]);
            }
            gs[size_t(c)] = T(ds);
            gb[size_t(c)] = T(db);
        }
    }
};

// Nearest-neighbour 2x upsampling.
template <typename T>
struct Upsample2x2d {
    int C_ = 0, W_ = 0, H_ = 0;
    std::vector<T> forward(std::span<const T> x, int C, int W, int H) {
        C_ = C;
        W_ = W;
        H_ = H;
        std::vector<T> y(size_t(C) * W * H * 4);
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < 2 * H; ++oy) {
                const T* xr = x.data() + (size_t(c) * H + oy / 2) * W;
                T* yr = y.data() + (size_t(c) * 2 * H + oy) * 2 * W;
                for (int ox = 0; ox < 2 * W; ++ox) yr[ox] = xr[ox / 2];
            }
        return y;
    }
    std::vector<T> backward(std::span<const T> gy) {
        std::vector<T> gx(size_t(C_) * W_ * H_, T(0));
        for (int c = 0; c < C_; ++c)
            for (int oy = 0; oy < 2 * H_; ++oy) {
                const T* gr = gy.data() + (size_t(c) * 2 * H_ + oy) * 2 * W_;
                T* gxr = gx.data() + (size_t(c) * H_ + oy / 2) * W_;
                for (int ox = 0; ox < 2 * W_; ++ox) gxr[ox / 2] += gr[ox];
            }
        return gx;
    }
};

template <typename T>
struct Upsample2x3d {
    int C_ = 0, W_ = 0, H_ = 0, D_ = 0;
    std::vector<T> forward(std::span<const T> x, int C, int W, int H, int D) {
        C_ = C;
        W_ = W;
        H_ = H;
        D_ = D;
        std::vector<T> y(size_t(C) * W * H * D * 8);
        for (int c = 0; c < C; ++c)
            for (int oz = 0; oz < 2 * D; ++oz)
                for (int oy = 0; oy < 2 * H; ++oy) {
                    const T* xr = x.data() + ((size_t(c) * D + oz / 2) * H + oy / 2) * W;
                    T* yr = y.data() + ((size_t(c) * 2 * D + oz) * 2 * H + oy) * 2 * W;
                    for (int ox = 0; ox < 2 * W; ++ox) yr[ox] = xr[ox / 2];
                }
        return y;
    }
    std::vector<T> backward(std::span<const T> gy) {
        std::vector<T> gx(size_t(C_) * W_ * H_ * D_, T(0));
        for (int c = 0; c < C_; ++c)
            for (int oz = 0; oz < 2 * D_; ++oz)
                for (int oy = 0; oy < 2 * H_; ++oy) {
                    const T* gr = gy.data() + ((size_t(c) * 2 * D_ + oz) * 2 * H_ + oy) * 2 * W_;
                    T* gxr = gx.data() + ((size_t(c) * D_ + oz / 2) * H_ + oy / 2) * W_;
                    for (int ox = 0; ox < 2 * W_; ++ox) gxr[ox / 2] += gr[ox];
                }
        return gx;
    }
};

// --- losses -----------------------------------------------------------------

// mean((pred - target)^2); grad w.r.t. pred written to gpred if non-null.
template <typename T>
double mse_loss(std::span<const T> pred, std::span<const T> target, std::vector<T>* gpred = nullptr) {
    if (pred.size() != target.size() || pred.empty()) throw validation_error("mse_loss: size mismatch");
    if (gpred) gpred->assign(pred.size(), T(0));
    double acc = 0.0;
    const double inv_n = 1.0 / double(pred.size());
    for (size_t i = 0; i < pred.size(); ++i) {
        const double d = double(pred[i]) - double(target[i]);
        acc += d * d;
        if (gpred) (*gpred)[i] = T(2.0 * d * inv_n);
    }
    return acc * inv_n;
}

// Numerically stable mean binary cross-entropy on logits.
template <typename T>
double bce_with_logits(std::span<const T> logits, std::span<const T> targets, std::vector<T>* glogits = nullptr) {
    if (logits.size() != targets.size() || logits.empty()) throw validation_error("bce_with_logits: size mismatch");
    if (glogits) glogits->assign(logits.size(), T(0));
    double acc = 0.0;
    const double inv_n = 1.0 / double(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) {
        const double z = double(logits[i]);
        const double y = double(targets[i]);
        acc += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
        if (glogits) {
            const double sig = 1.0 / (1.0 + std::exp(-z));
            (*glogits)[i] = T((sig - y) * inv_n);
        }
    }
    return acc * inv_n;
}

// --- optimizer --------------------------------------------------------------

template <typename T>
struct Adam {
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int64_t t = 0;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> state;

    template <typename Model>
    void step(Model& model) {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, double(t));
        const double bc2 = 1.0 - std::pow(beta2, double(t));
        model.for_each_param([&](const std::string& name, std::vector<T>& w, std::vector<T>& g) {
            auto& [m, v] = state[name];
            if (m.empty()) {
                m.assign(w.size(), 0.0);
                v.assign(w.size(), 0.0);
            }
            if (m.size() != w.size()) throw validation_error("Adam: param size changed for " + name);
            for (size_t i = 0; i < w.size(); ++i) {
                const double gi = double(g[i]);
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                w[i] = T(double(w[i]) - lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps));
            }
        });
    }
};

template <typename Model>
void zero_grads(Model& model) {
    model.for_each_param([](const std::string&, auto& w, auto& g) {
        (void)w;
        for (auto& x : g) x = 0;
    });
}

template <typename Model>
size_t param_count(Model& model) {
    size_t n = 0;
    model.for_each_param([&](const std::string&, auto& w, auto&) { n += w.size(); });
    return n;
}

// Scale every accumulated gradient, e.g. to average over a batch.
template <typename Model, typename T>
void scale_grads(Model& model, T factor) {
    model.for_each_param([&](const std::string&, auto& w, auto& g) {
        (void)w;
        for (auto& x : g) x *= factor;
    });
}

}  // namespace sbld::nn

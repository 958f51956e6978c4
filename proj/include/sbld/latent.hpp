#pragma once

#include <cmath>
#include <cstring>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "sbld/common.hpp"
#include "sbld/io.hpp"

// Per-slice latents stacked into the 3D latent volume the diffusion model
// operates on, plus the global normalization applied before training it.

namespace sbld {

struct LatentSlice {
    int cz = 0, w = 0, h = 0;
    std::vector<float> values;  // [c][h][w]

    bool same_shape(const LatentSlice& o) const { return cz == o.cz && w == o.w && h == o.h; }
};

struct LatentVolume {
    int cz = 0, w = 0, h = 0, d = 0;
    std::vector<float> code;  // [c][d][h][w]
    bool scaler_applied = false;

    size_t elements() const { return size_t(cz) * w * h * d; }

    float& at(int c, int x, int y, int z) { return code[((size_t(c) * d + z) * h + y) * w + x]; }
    float at(int c, int x, int y, int z) const { return code[((size_t(c) * d + z) * h + y) * w + x]; }

    void validate() const {
        if (cz < 1 || w < 1 || h < 1 || d < 1) throw validation_error("LatentVolume: non-positive shape");
        if (code.size() != elements()) throw validation_error("LatentVolume: element count mismatch");
        for (float v : code)
            if (!std::isfinite(v)) throw validation_error("LatentVolume: non-finite value");
    }
};

inline LatentVolume assemble(const std::vector<LatentSlice>& slices) {
    if (slices.empty()) throw validation_error("assemble: need at least one slice");
    const auto& first = slices.front();
    if (first.cz < 1 || first.w < 1 || first.h < 1) throw validation_error("assemble: non-positive slice shape");
    LatentVolume vol;
    vol.cz = first.cz;
    vol.w = first.w;
    vol.h = first.h;
    vol.d = int(slices.size());
    vol.code.resize(vol.elements());
    const size_t plane = size_t(vol.w) * vol.h;
    for (int z = 0; z < vol.d; ++z) {
        const auto& s = slices[size_t(z)];
        if (!s.same_shape(first)) throw validation_error("assemble: ragged slice shapes");
        if (s.values.size() != size_t(s.cz) * plane) throw validation_error("assemble: slice value count mismatch");
        for (int c = 0; c < vol.cz; ++c)
            std::copy(s.values.begin() + size_t(c) * plane, s.values.begin() + size_t(c + 1) * plane,
                      vol.code.begin() + (size_t(c) * vol.d + z) * plane);
    }
    return vol;
}

inline std::vector<LatentSlice> decompose(const LatentVolume& vol) {
    vol.validate();
    std::vector<LatentSlice> slices(size_t(vol.d));
    const size_t plane = size_t(vol.w) * vol.h;
    for (int z = 0; z < vol.d; ++z) {
        auto& s = slices[size_t(z)];
        s.cz = vol.cz;
        s.w = vol.w;
        s.h = vol.h;
        s.values.resize(size_t(vol.cz) * plane);
        for (int c = 0; c < vol.cz; ++c)
            std::copy(vol.code.begin() + (size_t(c) * vol.d + z) * plane,
                      vol.code.begin() + (size_t(c) * vol.d + z + 1) * plane, s.values.begin() + size_t(c) * plane);
    }
    return slices;
}

// Global scalar normalization of the latent space: (Z - mean) / std.
struct LatentScaler {
    static constexpr double kEpsilon = 1e-6;
    double mean = 0.0;
    double std = 1.0;

    void validate() const {
        if (!std::isfinite(mean) || !std::isfinite(std)) throw validation_error("LatentScaler: non-finite");
        if (std < kEpsilon) throw validation_error("LatentScaler: std below epsilon floor");
    }

    nlohmann::ordered_json to_json() const { return {{"mean", mean}, {"std", std}}; }
    static LatentScaler from_json(const nlohmann::json& j) {
        LatentScaler s;
        s.mean = j.at("mean").get<double>();
        s.std = j.at("std").get<double>();
        s.validate();
        return s;
    }
};

// Pooled population mean/std over every element of every volume.
inline LatentScaler fit_scaler(const std::vector<LatentVolume>& latents) {
    if (latents.empty()) throw validation_error("fit_scaler: empty collection");
    double sum = 0.0, sum2 = 0.0;
    size_t n = 0;
    for (const auto& vol : latents) {
        vol.validate();
        if (vol.scaler_applied) throw validation_error("fit_scaler: input already scaled");
        for (float v : vol.code) {
            sum += v;
            sum2 += double(v) * double(v);
        }
        n += vol.code.size();
    }
    LatentScaler s;
    s.mean = sum / double(n);
    const double var = std::max(0.0, sum2 / double(n) - s.mean * s.mean);
    s.std = std::max(LatentScaler::kEpsilon, std::sqrt(var));
    return s;
}

inline LatentVolume apply_scaler(const LatentVolume& vol, const LatentScaler& s) {
    s.validate();
    if (vol.scaler_applied) throw validation_error("apply_scaler: volume already scaled");
    LatentVolume out = vol;
    for (auto& v : out.code) v = float((double(v) - s.mean) / s.std);
    out.scaler_applied = true;
    return out;
}

inline LatentVolume invert_scaler(const LatentVolume& vol, const LatentScaler& s) {
    s.validate();
    if (!vol.scaler_applied) throw validation_error("invert_scaler: volume is not in scaled space");
    LatentVolume out = vol;
    for (auto& v : out.code) v = float(double(v) * s.std + s.mean);
    out.scaler_applied = false;
    return out;
}

// Latent cache files reuse the SBLV container with a "latent" role marker
// and a 4-component shape, so a latent file is never mistaken for a volume.
inline void write_latent(const LatentVolume& vol, const std::filesystem::path& path) {
    vol.validate();
    nlohmann::ordered_json h;
    h["version"] = 1;
    h["role"] = "latent";
    h["shape"] = {vol.cz, vol.w, vol.h, vol.d};
    h["dtype"] = "f32";
    h["order"] = "c-z-y-x";
    h["scaler_applied"] = vol.scaler_applied;
    detail::write_container(path, "SBLV", h, vol.code.data(), vol.code.size() * sizeof(float));
}

inline LatentVolume read_latent(const std::filesystem::path& path) {
    auto c = detail::read_container(path, "SBLV");
    if (c.header.value("role", "") != "latent") throw format_error("not a latent file: " + path.string());
    const auto& js = c.header.at("shape");
    if (!js.is_array() || js.size() != 4) throw format_error("bad shape in header of " + path.string());
    LatentVolume vol;
    vol.cz = js[0].get<int>();
    vol.w = js[1].get<int>();
    vol.h = js[2].get<int>();
    vol.d = js[3].get<int>();
    vol.scaler_applied = c.header.value("scaler_applied", false);
    if (vol.cz < 1 || vol.w < 1 || vol.h < 1 || vol.d < 1)
        throw format_error("non-positive latent shape in " + path.string());
    const size_t expect = vol.elements() * sizeof(float);
    if (c.payload.size() != expect)
        throw format_error("payload length mismatch in " + path.string() + ": expected " +
                           std::to_string(expect) + " bytes, got " + std::to_string(c.payload.size()));
    vol.code.resize(vol.elements());
    std::memcpy(vol.code.data(), c.payload.data(), expect);
    vol.validate();
    return vol;
}

}  // namespace sbld

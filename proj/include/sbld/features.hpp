#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include "sbld/common.hpp"
#include "sbld/volume.hpp"

#include <json.hpp>

namespace sbld {

// Tumor-characteristics conditioning vector: size/shape (voxel volume,
// surface area, sphericity) plus relative position (center of mass and
// bounding-box extents), all normalized against the grid.
// Canonical component order:
//   [volume, area, sphericity, com_x, com_y, com_z, bbox_w, bbox_h, bbox_d]
struct ConditionVector {
    double voxel_volume_norm = 0.0;  // count / (W*H*D), in (0,1]
    double surface_area_norm = 0.0;  // faces / (2*(WH+WD+HD)), clamped to 1
    double sphericity = 0.0;         // psi, in (0, ~0.81] for voxel shapes
    double com_x = 0.0, com_y = 0.0, com_z = 0.0;  // each in [0,1]
    double bbox_w = 0.0, bbox_h = 0.0, bbox_d = 0.0;  // each in (0,1]

    std::array<double, 9> components() const {
        return {voxel_volume_norm, surface_area_norm, sphericity,
                com_x, com_y, com_z, bbox_w, bbox_h, bbox_d};
    }

    static ConditionVector from_components(const std::array<double, 9>& c) {
        return {c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7], c[8]};
    }

    void validate() const {
        for (double v : components())
            if (!std::isfinite(v)) throw validation_error("ConditionVector: non-finite component");
        if (!(voxel_volume_norm > 0.0 && voxel_volume_norm <= 1.0))
            throw validation_error("ConditionVector: voxel_volume_norm out of (0,1]");
        if (!(surface_area_norm >= 0.0 && surface_area_norm <= 1.0))
            throw validation_error("ConditionVector: surface_area_norm out of [0,1]");
        if (!(sphericity > 0.0 && sphericity <= 1.1))
            throw validation_error("ConditionVector: sphericity out of (0,1.1]");
        for (double v : {com_x, com_y, com_z})
            if (!(v >= 0.0 && v <= 1.0)) throw validation_error("ConditionVector: com component out of [0,1]");
        for (double v : {bbox_w, bbox_h, bbox_d})
            if (!(v > 0.0 && v <= 1.0)) throw validation_error("ConditionVector: bbox component out of (0,1]");
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["voxel_volume_norm"] = voxel_volume_norm;
        j["surface_area_norm"] = surface_area_norm;
        j["sphericity"] = sphericity;
        j["com_x"] = com_x;
        j["com_y"] = com_y;
        j["com_z"] = com_z;
        j["bbox_w"] = bbox_w;
        j["bbox_h"] = bbox_h;
        j["bbox_d"] = bbox_d;
        return j;
    }

    static ConditionVector from_json(const nlohmann::json& j) {
        ConditionVector c;
        c.voxel_volume_norm = j.at("voxel_volume_norm").get<double>();
        c.surface_area_norm = j.at("surface_area_norm").get<double>();
        c.sphericity = j.at("sphericity").get<double>();
        c.com_x = j.at("com_x").get<double>();
        c.com_y = j.at("com_y").get<double>();
        c.com_z = j.at("com_z").get<double>();
        c.bbox_w = j.at("bbox_w").get<double>();
        c.bbox_h = j.at("bbox_h").get<double>();
        c.bbox_d = j.at("bbox_d").get<double>();
        return c;
    }
};

inline int64_t voxel_volume(const MaskGrid& mask) {
    return mask.count();
}

// Exposed voxel faces, 6-neighborhood. Counted as 6*V minus twice the number
// of set-set adjacent pairs along each axis; the brute-force per-voxel
// neighbor scan lives in the tests as the independent oracle.
inline int64_t surface_area(const MaskGrid& mask) {
    const int W = mask.dims.w, H = mask.dims.h, D = mask.dims.d;
    int64_t pairs = 0;
    for (int z = 0; z < D; ++z)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                if (!mask.at(x, y, z)) continue;
                if (x + 1 < W && mask.at(x + 1, y, z)) ++pairs;
                if (y + 1 < H && mask.at(x, y + 1, z)) ++pairs;
                if (z + 1 < D && mask.at(x, y, z + 1)) ++pairs;
            }
    return 6 * mask.count() - 2 * pairs;
}

// psi = pi^(1/3) * (6V)^(2/3) / A. Any solid cube gives (pi/6)^(1/3).
inline double sphericity(int64_t volume, int64_t area) {
    if (area <= 0) throw validation_error("sphericity: zero surface area");
    if (volume < 1) throw validation_error("sphericity: volume must be >= 1");
    return std::cbrt(M_PI) * std::pow(6.0 * double(volume), 2.0 / 3.0) / double(area);
}

struct Com {
    double x = 0.0, y = 0.0, z = 0.0;
};

// Unweighted mean of set-voxel index coordinates.
inline Com center_of_mass(const MaskGrid& mask) {
    const int W = mask.dims.w, H = mask.dims.h, D = mask.dims.d;
    double sx = 0, sy = 0, sz = 0;
    int64_t n = 0;
    for (int z = 0; z < D; ++z)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                if (mask.at(x, y, z)) {
                    sx += x;
                    sy += y;
                    sz += z;
                    ++n;
                }
    if (n == 0) throw validation_error("center_of_mass: empty mask");
    return {sx / double(n), sy / double(n), sz / double(n)};
}

struct BBox {
    int w = 0, h = 0, d = 0;
};

// Tight axis-aligned extents (max - min + 1 per axis).
inline BBox bounding_box(const MaskGrid& mask) {
    const int W = mask.dims.w, H = mask.dims.h, D = mask.dims.d;
    int x0 = W, y0 = H, z0 = D, x1 = -1, y1 = -1, z1 = -1;
    for (int z = 0; z < D; ++z)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                if (mask.at(x, y, z)) {
                    x0 = std::min(x0, x);
                    y0 = std::min(y0, y);
                    z0 = std::min(z0, z);
                    x1 = std::max(x1, x);
                    y1 = std::max(y1, y);
                    z1 = std::max(z1, z);
                }
    if (x1 < 0) throw validation_error("bounding_box: empty mask");
    return {x1 - x0 + 1, y1 - y0 + 1, z1 - z0 + 1};
}

inline ConditionVector condition_vector(const MaskGrid& mask) {
    mask.validate();
    const int64_t vol = voxel_volume(mask);
    if (vol == 0) throw validation_error("condition_vector: empty mask");
    const int W = mask.dims.w, H = mask.dims.h, D = mask.dims.d;
    const int64_t area = surface_area(mask);
    const Com com = center_of_mass(mask);
    const BBox bb = bounding_box(mask);

    ConditionVector c;
    c.voxel_volume_norm = double(vol) / double(mask.dims.voxels());
    const double max_faces = 2.0 * (double(W) * H + double(W) * D + double(H) * D);
    c.surface_area_norm = std::min(1.0, double(area) / max_faces);
    c.sphericity = sphericity(vol, area);
    c.com_x = W > 1 ? com.x / double(W - 1) : 0.5;
    c.com_y = H > 1 ? com.y / double(H - 1) : 0.5;
    c.com_z = D > 1 ? com.z / double(D - 1) : 0.5;
    c.bbox_w = double(bb.w) / double(W);
    c.bbox_h = double(bb.h) / double(H);
    c.bbox_d = double(bb.d) / double(D);
    return c;
}

}  // namespace sbld

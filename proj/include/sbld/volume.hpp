#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sbld/common.hpp"

namespace sbld {

struct Dims {
    int w = 0, h = 0, d = 0;

    bool operator==(const Dims&) const = default;
    int64_t voxels() const { return int64_t(w) * h * d; }
    std::string str() const { return std::to_string(w) + "x" + std::to_string(h) + "x" + std::to_string(d); }
};

// Scalar grid, z-major (slice-contiguous): index = (z*H + y)*W + x.
// Canonical image intensity range is [0,1]; latents declare their own range.
struct VolumeGrid {
    Dims dims;
    std::vector<float> voxels;
    std::array<float, 2> value_range{0.0f, 1.0f};

    VolumeGrid() = default;
    VolumeGrid(Dims dm, float fill = 0.0f) : dims(dm), voxels(size_t(dm.voxels()), fill) {}

    float& at(int x, int y, int z) { return voxels[(size_t(z) * dims.h + y) * dims.w + x]; }
    float at(int x, int y, int z) const { return voxels[(size_t(z) * dims.h + y) * dims.w + x]; }

    // contiguous view of slice z (H rows of W)
    std::span<float> slice(int z) {
        return {voxels.data() + size_t(z) * dims.w * dims.h, size_t(dims.w) * dims.h};
    }
    std::span<const float> slice(int z) const {
        return {voxels.data() + size_t(z) * dims.w * dims.h, size_t(dims.w) * dims.h};
    }

    void validate() const {
        if (dims.w <= 0 || dims.h <= 0 || dims.d <= 0)
            throw validation_error("VolumeGrid: non-positive dims " + dims.str());
        if (voxels.size() != size_t(dims.voxels()))
            throw validation_error("VolumeGrid: voxel count " + std::to_string(voxels.size()) +
                                   " does not match dims " + dims.str());
        for (float v : voxels)
            if (!std::isfinite(v)) throw validation_error("VolumeGrid: non-finite voxel value");
    }
};

// Binary grid stored as u8, same layout as VolumeGrid.
struct MaskGrid {
    Dims dims;
    std::vector<uint8_t> voxels;

    MaskGrid() = default;
    MaskGrid(Dims dm, uint8_t fill = 0) : dims(dm), voxels(size_t(dm.voxels()), fill) {}

    uint8_t& at(int x, int y, int z) { return voxels[(size_t(z) * dims.h + y) * dims.w + x]; }
    uint8_t at(int x, int y, int z) const { return voxels[(size_t(z) * dims.h + y) * dims.w + x]; }

    std::span<uint8_t> slice(int z) {
        return {voxels.data() + size_t(z) * dims.w * dims.h, size_t(dims.w) * dims.h};
    }
    std::span<const uint8_t> slice(int z) const {
        return {voxels.data() + size_t(z) * dims.w * dims.h, size_t(dims.w) * dims.h};
    }

    int64_t count() const {
        int64_t n = 0;
        for (uint8_t v : voxels) n += v;
        return n;
    }

    void validate() const {
        if (dims.w <= 0 || dims.h <= 0 || dims.d <= 0)
            throw validation_error("MaskGrid: non-positive dims " + dims.str());
        if (voxels.size() != size_t(dims.voxels()))
            throw validation_error("MaskGrid: voxel count " + std::to_string(voxels.size()) +
                                   " does not match dims " + dims.str());
        for (uint8_t v : voxels)
            if (v > 1) throw validation_error("MaskGrid: voxel value " + std::to_string(int(v)) + " not in {0,1}");
    }
};

}  // namespace sbld

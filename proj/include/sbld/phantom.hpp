#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <filesystem>
#include <string>
#include <vector>

#include "sbld/common.hpp"
#include "sbld/features.hpp"
#include "sbld/io.hpp"
#include "sbld/volume.hpp"

namespace sbld {

// Procedural brain-like phantom: an ellipsoidal head with smooth tissue
// texture and a brighter tumor made of overlapping ellipsoidal lobes.
struct PhantomSpec {
    Dims dims{32, 32, 16};
    std::array<double, 2> head_axes_range{0.30, 0.45};      // semi-axis as fraction of each dim
    double tissue_texture_scale = 0.06;                     // amplitude of low-frequency variation
    std::array<double, 2> tumor_radius_range{0.05, 0.20};   // fraction of min(W,H,D)
    double tumor_intensity_delta = 0.35;                    // tumor vs surrounding tissue
    std::array<int, 2> lobedness{1, 3};                     // lobes per tumor
    std::array<double, 2> lobe_aspect_range{0.80, 1.25};    // per-axis semi-axis multiplier

    void validate() const {
        if (dims.w <= 0 || dims.h <= 0 || dims.d <= 0)
            throw validation_error("PhantomSpec: non-positive dims");
        auto check_range = [](std::array<double, 2> r, double lo, double hi, const char* name) {
            if (!(r[0] <= r[1]) || !(r[0] > lo) || !(r[1] < hi))
                throw validation_error(std::string("PhantomSpec: bad range for ") + name);
        };
        check_range(head_axes_range, 0.0, 1.0, "head_axes_range");
        check_range(tumor_radius_range, 0.0, 1.0, "tumor_radius_range");
        check_range(lobe_aspect_range, 0.0, 10.0, "lobe_aspect_range");
        if (lobedness[0] < 1 || lobedness[0] > lobedness[1])
            throw validation_error("PhantomSpec: bad lobedness range");
        if (tissue_texture_scale <= 0.0) throw validation_error("PhantomSpec: tissue_texture_scale must be > 0");
    }
};

// 6-connected component count over set voxels.
inline int count_components_6(const MaskGrid& mask) {
    const int W = mask.dims.w, H = mask.dims.h, D = mask.dims.d;
    std::vector<uint8_t> seen(mask.voxels.size(), 0);
    auto idx = [&](int x, int y, int z) { return (size_t(z) * H + y) * W + x; };
    int components = 0;
    std::deque<std::array<int, 3>> queue;
    for (int z = 0; z < D; ++z)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                if (!mask.voxels[idx(x, y, z)] || seen[idx(x, y, z)]) continue;
                ++components;
                seen[idx(x, y, z)] = 1;
                queue.push_back({x, y, z});
                while (!queue.empty()) {
                    auto [cx, cy, cz] = queue.front();
                    queue.pop_front();
                    constexpr int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
                    for (const auto& o : off) {
                        const int nx = cx + o[0], ny = cy + o[1], nz = cz + o[2];
                        if (nx < 0 || ny < 0 || nz < 0 || nx >= W || ny >= H || nz >= D) continue;
                        if (!mask.voxels[idx(nx, ny, nz)] || seen[idx(nx, ny, nz)]) continue;
                        seen[idx(nx, ny, nz)] = 1;
                        queue.push_back({nx, ny, nz});
                    }
                }
            }
    return components;
}

namespace detail {

struct Ellipsoid {
    double cx, cy, cz;  // continuous center, voxel-index coordinates
    double ax, ay, az;  // semi-axes in voxels

    bool contains(double x, double y, double z) const {
        const double u = (x - cx) / ax, v = (y - cy) / ay, w = (z - cz) / az;
        return u * u + v * v + w * w <= 1.0;
    }
};

}  // namespace detail

// Deterministic function of (seed, spec). Image in [0,1] with background
// exactly 0 outside the head; mask is the union of the tumor lobes, always
// nonempty, 6-connected, and strictly inside the head.
inline std::pair<VolumeGrid, MaskGrid> generate_case(uint64_t seed, const PhantomSpec& spec) {
    spec.validate();
    Rng rng(seed);
    const int W = spec.dims.w, H = spec.dims.h, D = spec.dims.d;
    const double min_dim = double(std::min({W, H, D}));

    constexpr int kMaxAttempts = 64;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        // head ellipsoid, centered with slight jitter
        detail::Ellipsoid head;
        head.ax = rng.uniform(spec.head_axes_range[0], spec.head_axes_range[1]) * W;
        head.ay = rng.uniform(spec.head_axes_range[0], spec.head_axes_range[1]) * H;
        head.az = rng.uniform(spec.head_axes_range[0], spec.head_axes_range[1]) * D;
        head.cx = 0.5 * (W - 1) + rng.uniform(-0.02, 0.02) * W;
        head.cy = 0.5 * (H - 1) + rng.uniform(-0.02, 0.02) * H;
        head.cz = 0.5 * (D - 1) + rng.uniform(-0.02, 0.02) * D;

        // tumor lobes; each subsequent lobe is forced to overlap every
        // previous one so the union voxelizes into one component
        const int n_lobes = spec.lobedness[0] + int(rng.uniform_int(uint64_t(spec.lobedness[1] - spec.lobedness[0] + 1)));
        std::vector<detail::Ellipsoid> lobes;
        bool placement_ok = true;
        for (int k = 0; k < n_lobes && placement_ok; ++k) {
            const double r = rng.uniform(spec.tumor_radius_range[0], spec.tumor_radius_range[1]) * min_dim;
            detail::Ellipsoid lobe;
            lobe.ax = r * rng.uniform(spec.lobe_aspect_range[0], spec.lobe_aspect_range[1]);
            lobe.ay = r * rng.uniform(spec.lobe_aspect_range[0], spec.lobe_aspect_range[1]);
            lobe.az = r * rng.uniform(spec.lobe_aspect_range[0], spec.lobe_aspect_range[1]);

            // containment margin: ||c-hc||_head <= 1 - ||axes/head_axes||
            const double margin = std::sqrt((lobe.ax / head.ax) * (lobe.ax / head.ax) +
                                            (lobe.ay / head.ay) * (lobe.ay / head.ay) +
                                            (lobe.az / head.az) * (lobe.az / head.az));
            if (margin >= 0.95) {
                placement_ok = false;
                break;
            }

            bool placed = false;
            for (int tries = 0; tries < 32 && !placed; ++tries) {
                double px, py, pz;
                if (k == 0) {
                    // uniform direction, radius biased toward the interior
                    const double u = std::pow(rng.uniform(), 1.0 / 3.0) * (1.0 - margin) * 0.95;
                    double dx = rng.normal(), dy = rng.normal(), dz = rng.normal();
                    const double norm = std::sqrt(dx * dx + dy * dy + dz * dz) + 1e-12;
                    px = head.cx + head.ax * u * dx / norm;
                    py = head.cy + head.ay * u * dy / norm;
                    pz = head.cz + head.az * u * dz / norm;
                } else {
                    // offset from the first lobe, short enough to overlap
                    const auto& base = lobes[0];
                    const double reach = 0.6 * std::min({base.ax, base.ay, base.az, lobe.ax, lobe.ay, lobe.az});
                    px = base.cx + rng.uniform(-reach, reach);
                    py = base.cy + rng.uniform(-reach, reach);
                    pz = base.cz + rng.uniform(-reach, reach);
                }
                const double hx = (px - head.cx) / head.ax, hy = (py - head.cy) / head.ay,
                             hz = (pz - head.cz) / head.az;
                if (std::sqrt(hx * hx + hy * hy + hz * hz) + margin > 0.98) continue;
                bool overlaps_all = true;
                for (const auto& prev : lobes) {
                    const double dx = px - prev.cx, dy = py - prev.cy, dz = pz - prev.cz;
                    const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
                    const double rsum = 0.8 * (std::min({prev.ax, prev.ay, prev.az}) +
                                               std::min({lobe.ax, lobe.ay, lobe.az}));
                    if (dist > rsum) {
                        overlaps_all = false;
                        break;
                    }
                }
                if (!overlaps_all) continue;
                lobe.cx = px;
                lobe.cy = py;
                lobe.cz = pz;
                lobes.push_back(lobe);
                placed = true;
            }
            if (!placed) placement_ok = false;
        }
        if (!placement_ok) continue;

        // rasterize mask at voxel index points
        MaskGrid mask(spec.dims);
        for (int z = 0; z < D; ++z)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    for (const auto& lobe : lobes)
                        if (lobe.contains(x, y, z)) {
                            mask.at(x, y, z) = 1;
                            break;
                        }
        if (mask.count() == 0) continue;
        if (count_components_6(mask) != 1) continue;

        // smooth tissue texture: a few low-frequency cosines
        struct Wave {
            double fx, fy, fz, phase, amp;
        };
        std::vector<Wave> waves;
        for (int k = 0; k < 4; ++k) {
            Wave w;
            w.fx = double(1 + int(rng.uniform_int(3)));
            w.fy = double(1 + int(rng.uniform_int(3)));
            w.fz = double(1 + int(rng.uniform_int(3)));
            w.phase = rng.uniform(0.0, 2.0 * M_PI);
            w.amp = spec.tissue_texture_scale * rng.uniform(0.4, 1.0) / double(k + 1);
            waves.push_back(w);
        }

        VolumeGrid image(spec.dims, 0.0f);
        bool tumor_outside_head = false;
        for (int z = 0; z < D && !tumor_outside_head; ++z)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const double hx = (x - head.cx) / head.ax, hy = (y - head.cy) / head.ay,
                                 hz = (z - head.cz) / head.az;
                    const double rho2 = hx * hx + hy * hy + hz * hz;
                    if (rho2 > 1.0) {
                        if (mask.at(x, y, z)) {
                            tumor_outside_head = true;
                        }
                        continue;  // background stays exactly 0
                    }
                    double tex = 0.0;
                    for (const auto& w : waves)
                        tex += w.amp * std::cos(2.0 * M_PI * (w.fx * x / W + w.fy * y / H + w.fz * z / D) + w.phase);
                    double v = (0.42 + tex) * (1.0 - 0.10 * rho2);
                    if (mask.at(x, y, z)) v += spec.tumor_intensity_delta;
                    image.at(x, y, z) = float(std::clamp(v, 0.02, 1.0));
                }
        if (tumor_outside_head) continue;

        image.value_range = {0.0f, 1.0f};
        return {std::move(image), std::move(mask)};
    }
    throw generation_error("phantom generation failed after bounded retries (tumor cannot fit)");
}

// Rank-based split over hashed case ids: stable under regeneration, exact
// counts at the default 4/7 train, 1/7 val proportions.
inline std::vector<std::string> assign_splits(const std::vector<std::string>& case_ids,
                                              double train_frac = 4.0 / 7.0, double val_frac = 1.0 / 7.0) {
    const size_t n = case_ids.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        const uint64_t ha = fnv1a(case_ids[a]), hb = fnv1a(case_ids[b]);
        return ha != hb ? ha < hb : case_ids[a] < case_ids[b];
    });
    const size_t n_train = size_t(std::llround(train_frac * double(n)));
    const size_t n_val = size_t(std::llround(val_frac * double(n)));
    std::vector<std::string> splits(n);
    for (size_t rank = 0; rank < n; ++rank) {
        const char* s = rank < n_train ? "train" : (rank < n_train + n_val ? "val" : "test");
        splits[order[rank]] = s;
    }
    return splits;
}

inline DatasetManifest generate_dataset(uint64_t seed, int n_cases, const PhantomSpec& spec,
                                        const std::filesystem::path& out_dir) {
    if (n_cases < 1) throw validation_error("generate_dataset: n_cases must be >= 1");
    spec.validate();
    std::filesystem::create_directories(out_dir);

    std::vector<std::string> ids(n_cases);
    for (int i = 0; i < n_cases; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "case_%04d", i);
        ids[i] = buf;
    }
    const auto splits = assign_splits(ids);

    DatasetManifest manifest;
    manifest.dims = spec.dims;
    for (int i = 0; i < n_cases; ++i) {
        auto [image, mask] = generate_case(derive_seed(seed, uint64_t(i)), spec);
        CaseRecord rec;
        rec.case_id = ids[i];
        rec.image_path = ids[i] + ".sblv";
        rec.mask_path = ids[i] + ".sblm";
        rec.condition = condition_vector(mask);
        rec.split = splits[i];
        write_volume(image, out_dir / rec.image_path);
        write_mask(mask, out_dir / rec.mask_path);
        manifest.cases.push_back(std::move(rec));
    }
    write_manifest(manifest, out_dir / "manifest.json");
    return manifest;
}

}  // namespace sbld

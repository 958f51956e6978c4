#include <cmath>

#include <gtest/gtest.h>

#include "sbld/features.hpp"

using namespace sbld;

namespace {

// Independent oracle: count exposed faces by scanning all 6 neighbors of
// every set voxel.
int64_t face_count_oracle(const MaskGrid& m) {
    const int W = m.dims.w, H = m.dims.h, D = m.dims.d;
    int64_t faces = 0;
    constexpr int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (int z = 0; z < D; ++z)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                if (!m.at(x, y, z)) continue;
                for (const auto& o : off) {
                    const int nx = x + o[0], ny = y + o[1], nz = z + o[2];
                    const bool covered =
                        nx >= 0 && ny >= 0 && nz >= 0 && nx < W && ny < H && nz < D && m.at(nx, ny, nz);
                    if (!covered) ++faces;
                }
            }
    return faces;
}

MaskGrid cube_mask(Dims dims, int x0, int y0, int z0, int side) {
    MaskGrid m(dims);
    for (int z = z0; z < z0 + side; ++z)
        for (int y = y0; y < y0 + side; ++y)
            for (int x = x0; x < x0 + side; ++x) m.at(x, y, z) = 1;
    return m;
}

}  // namespace

TEST(SurfaceArea, MatchesBruteForceOracleOnRandomMasks) {
    Rng rng(2024);
    for (int trial = 0; trial < 10000; ++trial) {
        const Dims dims{int(1 + rng.uniform_int(6)), int(1 + rng.uniform_int(6)), int(1 + rng.uniform_int(6))};
        MaskGrid m(dims);
        const double p = rng.uniform(0.1, 0.9);
        for (auto& v : m.voxels) v = rng.uniform() < p ? 1 : 0;
        ASSERT_EQ(surface_area(m), face_count_oracle(m));
    }
}

TEST(SurfaceArea, HandCases) {
    // single voxel: 6 faces
    MaskGrid m(Dims{3, 3, 3});
    m.at(1, 1, 1) = 1;
    EXPECT_EQ(surface_area(m), 6);
    // domino: 10 faces
    m.at(2, 1, 1) = 1;
    EXPECT_EQ(surface_area(m), 10);
    // 2x2x2 cube: 24 faces
    EXPECT_EQ(surface_area(cube_mask(Dims{4, 4, 4}, 1, 1, 1, 2)), 24);
    // faces at the grid boundary still count as exposed
    EXPECT_EQ(surface_area(cube_mask(Dims{2, 2, 2}, 0, 0, 0, 2)), 24);
}

TEST(Sphericity, CubeValue) {
    // any solid cube: psi = cbrt(pi/6)
    const double want = std::cbrt(M_PI / 6.0);
    EXPECT_NEAR(sphericity(1, 6), want, 1e-12);
    EXPECT_NEAR(sphericity(8, 24), want, 1e-12);
    EXPECT_NEAR(sphericity(27, 54), want, 1e-12);
    EXPECT_NEAR(want, 0.80600, 5e-6);
}

TEST(Sphericity, DominoAndDegenerate) {
    // psi = cbrt(36 pi V^2) / A, the algebraically equivalent form
    EXPECT_NEAR(sphericity(2, 10), std::cbrt(36.0 * M_PI * 4.0) / 10.0, 1e-12);
    EXPECT_THROW(sphericity(0, 6), validation_error);
    EXPECT_THROW(sphericity(1, 0), validation_error);
}

TEST(Sphericity, CompactShapesScoreHigher) {
    // 3x3x3 cube vs a 27-voxel straight rod
    const double cube = sphericity(27, 54);
    const double rod = sphericity(27, 27 * 6 - 2 * 26);
    EXPECT_GT(cube, rod);
}

TEST(CenterOfMass, HandCaseAndTranslationCovariance) {
    auto m = cube_mask(Dims{8, 8, 8}, 1, 2, 3, 2);
    const auto c = center_of_mass(m);
    EXPECT_DOUBLE_EQ(c.x, 1.5);
    EXPECT_DOUBLE_EQ(c.y, 2.5);
    EXPECT_DOUBLE_EQ(c.z, 3.5);

    auto shifted = cube_mask(Dims{8, 8, 8}, 3, 4, 5, 2);
    const auto cs = center_of_mass(shifted);
    EXPECT_DOUBLE_EQ(cs.x, c.x + 2.0);
    EXPECT_DOUBLE_EQ(cs.y, c.y + 2.0);
    EXPECT_DOUBLE_EQ(cs.z, c.z + 2.0);

    MaskGrid empty(Dims{4, 4, 4});
    EXPECT_THROW(center_of_mass(empty), validation_error);
}

TEST(SurfaceAreaAndBBox, TranslationInvariance) {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        MaskGrid m(Dims{10, 10, 10});
        // random blob in the [2,5) corner box so +-2 shifts stay inside
        for (int z = 2; z < 5; ++z)
            for (int y = 2; y < 5; ++y)
                for (int x = 2; x < 5; ++x) m.at(x, y, z) = rng.uniform() < 0.5 ? 1 : 0;
        if (m.count() == 0) continue;
        MaskGrid s(Dims{10, 10, 10});
        for (int z = 2; z < 5; ++z)
            for (int y = 2; y < 5; ++y)
                for (int x = 2; x < 5; ++x) s.at(x + 2, y + 1, z + 2) = m.at(x, y, z);
        EXPECT_EQ(surface_area(m), surface_area(s));
        const auto b1 = bounding_box(m), b2 = bounding_box(s);
        EXPECT_EQ(b1.w, b2.w);
        EXPECT_EQ(b1.h, b2.h);
        EXPECT_EQ(b1.d, b2.d);
    }
}

TEST(BoundingBox, HandCase) {
    MaskGrid m(Dims{8, 8, 8});
    m.at(1, 2, 3) = 1;
    m.at(4, 2, 3) = 1;
    const auto b = bounding_box(m);
    EXPECT_EQ(b.w, 4);
    EXPECT_EQ(b.h, 1);
    EXPECT_EQ(b.d, 1);
}

TEST(ConditionVector, FrozenHandCase) {
    // 2x2x2 cube at the origin corner of an 8x8x8 grid
    const auto m = cube_mask(Dims{8, 8, 8}, 0, 0, 0, 2);
    const auto c = condition_vector(m);
    EXPECT_DOUBLE_EQ(c.voxel_volume_norm, 8.0 / 512.0);
    EXPECT_DOUBLE_EQ(c.surface_area_norm, 24.0 / 384.0);
    EXPECT_NEAR(c.sphericity, 0.8059959770082348, 1e-12);
    EXPECT_DOUBLE_EQ(c.com_x, 0.5 / 7.0);
    EXPECT_DOUBLE_EQ(c.com_y, 0.5 / 7.0);
    EXPECT_DOUBLE_EQ(c.com_z, 0.5 / 7.0);
    EXPECT_DOUBLE_EQ(c.bbox_w, 0.25);
    EXPECT_DOUBLE_EQ(c.bbox_h, 0.25);
    EXPECT_DOUBLE_EQ(c.bbox_d, 0.25);
    EXPECT_NO_THROW(c.validate());
}

TEST(ConditionVector, CanonicalComponentOrder) {
    ConditionVector c{0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09};
    const auto a = c.components();
    for (int i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(a[size_t(i)], 0.01 * (i + 1));
    const auto back = ConditionVector::from_components(a);
    EXPECT_EQ(back.components(), a);

    // canonical JSON key order
    const std::string dumped = c.to_json().dump();
    const char* keys[] = {"voxel_volume_norm", "surface_area_norm", "sphericity", "com_x", "com_y",
                          "com_z",             "bbox_w",            "bbox_h",     "bbox_d"};
    size_t pos = 0;
    for (const char* k : keys) {
        const auto at = dumped.find(std::string("\"") + k + "\"", pos);
        ASSERT_NE(at, std::string::npos) << k;
        pos = at;
    }
    const auto rt = ConditionVector::from_json(nlohmann::json::parse(dumped));
    EXPECT_EQ(rt.components(), c.components());
}

TEST(ConditionVector, ValidationRejectsOutOfRange) {
    ConditionVector ok{0.1, 0.2, 0.8, 0.5, 0.5, 0.5, 0.3, 0.3, 0.3};
    EXPECT_NO_THROW(ok.validate());
    auto bad = ok;
    bad.voxel_volume_norm = 0.0;
    EXPECT_THROW(bad.validate(), validation_error);
    bad = ok;
    bad.sphericity = 1.5;
    EXPECT_THROW(bad.validate(), validation_error);
    bad = ok;
    bad.com_x = -0.01;
    EXPECT_THROW(bad.validate(), validation_error);
    bad = ok;
    bad.bbox_d = 0.0;
    EXPECT_THROW(bad.validate(), validation_error);
    bad = ok;
    bad.surface_area_norm = std::nan("");
    EXPECT_THROW(bad.validate(), validation_error);
}

TEST(ConditionVector, EmptyMaskRejected) {
    MaskGrid empty(Dims{4, 4, 4});
    EXPECT_THROW(condition_vector(empty), validation_error);
}

TEST(ConditionVector, SphereishBlobIsRounderThanRod) {
    MaskGrid ball(Dims{16, 16, 16});
    for (int z = 0; z < 16; ++z)
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
                const double dx = x - 7.5, dy = y - 7.5, dz = z - 7.5;
                if (dx * dx + dy * dy + dz * dz <= 5.0 * 5.0) ball.at(x, y, z) = 1;
            }
    MaskGrid rod(Dims{16, 16, 16});
    for (int x = 0; x < 16; ++x) rod.at(x, 8, 8) = 1;
    EXPECT_GT(condition_vector(ball).sphericity, condition_vector(rod).sphericity);
}

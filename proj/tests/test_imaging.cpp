#include <gtest/gtest.h>

#include <cmath>

#include "dragon/imaging.hpp"
#include "dragon/raypath.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace dragon;
using namespace dragon::testing;

namespace {

int count(const GrayImage& img, float v) {
    return static_cast<int>(std::count(img.pixels.begin(), img.pixels.end(), v));
}

}  // namespace

TEST(RenderTop, EmptyScenarioIsBackground) {
    const Scenario s = flat_scenario({});
    const GrayImage img = render_top(s, {0, 0, 1.5}, {100, 40, 30});
    EXPECT_EQ(count(img, 1.0f), kImageSize * kImageSize);
    EXPECT_NO_THROW(validate(img));
}

TEST(RenderTop, FullCoverageIsAllBuilding) {
    const Scenario s = flat_scenario({box_building("huge", -400, -400, 400, 400, 10)});
    EXPECT_EQ(count(render_top(s, {0, 0, 20}, {100, 100, 30}), 0.0f), kImageSize * kImageSize);
}

TEST(RenderTop, BuildingTowardsTransmitterAppearsRightOfCenter) {
    const Scenario s = flat_scenario({box_building("n", -10, 40, 10, 60, 15)});
    const GrayImage img = render_top(s, {0, 0, 1.5}, {0, 300, 30});
    double sum_r = 0.0, sum_c = 0.0;
    int n = 0;
    for (int r = 0; r < kImageSize; ++r)
        for (int c = 0; c < kImageSize; ++c)
            if (img.at(r, c) == 0.0f) {
                sum_r += r, sum_c += c, ++n;
            }
    ASSERT_GT(n, 0);
    // pixel index of a point at u metres along the bearing is (u + 150) / 300 * 64 - 0.5
    EXPECT_NEAR(sum_c / n + 0.5, 64.0 * (150.0 + 50.0) / 300.0, 1.0);
    EXPECT_NEAR(sum_r / n + 0.5, 32.0, 1.0);
}

TEST(RenderTop, LeftOfBearingIsTheUpperHalf) {
    // tx due east: north is to the left of the bearing, which is the top of the image
    const Scenario s = flat_scenario({box_building("n", -10, 40, 10, 60, 15)});
    const GrayImage img = render_top(s, {0, 0, 1.5}, {300, 0, 30});
    int upper = 0, lower = 0;
    for (int r = 0; r < kImageSize; ++r)
        for (int c = 0; c < kImageSize; ++c)
            if (img.at(r, c) == 0.0f) (r < 32 ? upper : lower)++;
    EXPECT_GT(upper, 0);
    EXPECT_EQ(lower, 0);
}

TEST(RenderTop, CoincidentPointsAreDegenerate) {
    const Scenario s = flat_scenario({});
    EXPECT_THROW(render_top(s, {1, 1, 1}, {1, 1, 1}), DegenerateError);
    EXPECT_THROW(render_side(s, {1, 1, 1}, {1, 1, 1}), DegenerateError);
}

TEST(RenderSide, FlatTerrainWithoutBuildings) {
    const Scenario s = flat_scenario({}, {}, {-500, -500, 500, 500}, 10.0);
    const LocalPoint rx{0, 0, 11.5}, tx{200, 50, 40};
    const GrayImage img = render_side(s, rx, tx);
    EXPECT_EQ(count(img, 0.0f), 0);
    const double row_h = 150.0 / 64.0, top = rx.z + 75.0;
    for (int r = 0; r < kImageSize; ++r) {
        const float expected = top - (r + 0.5) * row_h < 10.0 ? 0.5f : 1.0f;
        for (int c = 0; c < kImageSize; ++c) ASSERT_EQ(img.at(r, c), expected) << r << "," << c;
    }
}

TEST(RenderSide, ClearLineOfSightHasNoBuildingPixels) {
    const Scenario s = flat_scenario({box_building("off", 50, 100, 90, 140, 30)});
    EXPECT_EQ(count(render_side(s, {0, 0, 1.5}, {200, 0, 40}), 0.0f), 0);
}

TEST(RenderSide, WallAtMidpoint) {
    const Scenario s = flat_scenario({box_building("wall", 98, -30, 102, 30, 20)});
    const LocalPoint rx{0, 0, 1.5}, tx{200, 0, 30};
    const GrayImage img = render_side(s, rx, tx);
    const double row_h = 150.0 / 64.0, top = rx.z + 75.0;
    double sum_c = 0.0;
    int n_cols = 0;
    for (int c = 0; c < kImageSize; ++c) {
        bool any = false;
        for (int r = 0; r < kImageSize; ++r)
            if (img.at(r, c) == 0.0f) any = true;
        if (any) sum_c += c, ++n_cols;
    }
    ASSERT_GT(n_cols, 0);
    EXPECT_NEAR(sum_c / n_cols, 32.0, 1.0);
    for (int c = 0; c < kImageSize; ++c) {
        const double h = (c + 0.5) / 64.0 * 200.0;
        const bool in_wall = h > 98.0 && h < 102.0;
        for (int r = 0; r < kImageSize; ++r) {
            const double z = top - (r + 0.5) * row_h;
            const float expected = in_wall && z > 0.0 && z < 20.0 ? 0.0f : (z < 0.0 ? 0.5f : 1.0f);
            ASSERT_EQ(img.at(r, c), expected) << r << "," << c;
        }
    }
}

TEST(RenderSide, BuildingColumnsMatchRayTracing) {
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Building> bs;
        for (int i = 0; i < 8; ++i) {
            Building b = random_box(rng, "b" + std::to_string(i), {-300, -300, 300, 300}, 10, 60, 20, 40);
            bs.push_back(rotated(b, {0, 0}, rng.uniform(0, M_PI)));
        }
        const Scenario s = flat_scenario(bs);
        // both ends stay below every roof so the path row never grazes a roof edge
        const LocalPoint rx{rng.uniform(-350, 350), rng.uniform(-350, 350), 1.5};
        const LocalPoint tx{rng.uniform(-350, 350), rng.uniform(-350, 350), rng.uniform(2, 15)};
        const PathProfile p = trace(s, rx, tx);
        const GrayImage img = render_side(s, rx, tx);
        const double row_h = 150.0 / 64.0, top = rx.z + 75.0;
        std::vector<bool> traced(kImageSize), drawn(kImageSize);
        for (int c = 0; c < kImageSize; ++c) {
            const double t = (c + 0.5) / kImageSize;
            for (const auto& iv : p.building_intervals)
                if (t * p.d_3d > iv.start && t * p.d_3d < iv.end) traced[c] = true;
            const double z = rx.z + t * (tx.z - rx.z);
            const int r = std::clamp(static_cast<int>(std::floor((top - z) / row_h)), 0, kImageSize - 1);
            drawn[c] = img.at(r, c) == 0.0f;
        }
        for (int c = 0; c < kImageSize; ++c) {
            if (drawn[c] == traced[c]) continue;
            const bool near = (c > 0 && (drawn[c - 1] != drawn[c] || traced[c - 1] != traced[c])) ||
                              (c + 1 < kImageSize && (drawn[c + 1] != drawn[c] || traced[c + 1] != traced[c]));
            ASSERT_TRUE(near) << "trial " << trial << " column " << c;
        }
    }
}

TEST(RenderProperties, RotationAboutReceiverLeavesTopViewUnchanged) {
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Building> bs;
        for (int i = 0; i < 10; ++i) bs.push_back(random_box(rng, "b" + std::to_string(i), {-200, -200, 200, 200}, 8, 50, 5, 30));
        const LocalPoint rx{rng.uniform(-50, 50), rng.uniform(-50, 50), 1.5};
        const LocalPoint tx{rng.uniform(-300, 300), rng.uniform(-300, 300), 30};
        const double angle = rng.uniform(-M_PI, M_PI);
        std::vector<Building> turned;
        for (const auto& b : bs) turned.push_back(rotated(b, rx.xy(), angle));
        const Vec2 t2 = rotated(tx.xy(), rx.xy(), angle);
        const LocalPoint tx2{t2.x, t2.y, tx.z};
        const GrayImage a = render_top(flat_scenario(bs, {}, {-2000, -2000, 2000, 2000}), rx, tx);
        const GrayImage b = render_top(flat_scenario(turned, {}, {-2000, -2000, 2000, 2000}), rx, tx2);
        int differing = 0;
        for (std::size_t i = 0; i < a.pixels.size(); ++i) differing += a.pixels[i] != b.pixels[i];
        EXPECT_EQ(differing, 0) << "trial " << trial;
    }
}

TEST(RenderProperties, TranslationLeavesBothViewsUnchanged) {
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        const double ox = std::round(rng.uniform(-300, 300)), oy = std::round(rng.uniform(-300, 300));
        std::vector<Building> bs, shifted;
        for (int i = 0; i < 10; ++i) {
            bs.push_back(dyadic_box(rng, "b" + std::to_string(i), 200));
            shifted.push_back(moved(bs.back(), ox, oy));
        }
        const LocalPoint rx{dyadic(rng.uniform(-100, 100)), dyadic(rng.uniform(-100, 100)), 1.5};
        const LocalPoint tx{dyadic(rng.uniform(-250, 250)), dyadic(rng.uniform(-250, 250)), 30};
        const Scenario s0 = flat_scenario(bs, {}, {-1024, -1024, 1024, 1024});
        const Scenario s1 = flat_scenario(shifted, {}, {-1024 + ox, -1024 + oy, 1024 + ox, 1024 + oy});
        const LocalPoint rx1{rx.x + ox, rx.y + oy, rx.z}, tx1{tx.x + ox, tx.y + oy, tx.z};
        EXPECT_EQ(render_top(s0, rx, tx), render_top(s1, rx1, tx1)) << "trial " << trial;
        EXPECT_EQ(render_side(s0, rx, tx), render_side(s1, rx1, tx1)) << "trial " << trial;
    }
}

TEST(ConcatVertical, StacksTopOverSide) {
    ImagePair pair;
    EXPECT_TRUE(std::all_of(concat_vertical(pair).values.begin(), concat_vertical(pair).values.end(),
                            [](float v) { return v == 1.0f; }));
    pair.side.at(5, 7) = 0.25f;
    pair.top.at(63, 0) = 0.0f;
    const IntensityGrid g = concat_vertical(pair);
    EXPECT_EQ(g.rows, 128);
    EXPECT_EQ(g.cols, 64);
    ASSERT_EQ(g.values.size(), 128u * 64u);
    EXPECT_EQ(g.at(69, 7), 0.25f);
    EXPECT_EQ(g.at(63, 0), 0.0f);
    EXPECT_EQ(g.at(5, 7), 1.0f);
}

TEST(ConcatVertical, FixtureChecksumIsFrozen) {
    const Scenario s = flat_scenario({box_building("a", 20, -15, 45, 10, 18), box_building("b", -60, 30, -20, 70, 32),
                                      box_building("c", 90, 5, 130, 35, 12)},
                                     {}, {-500, -500, 500, 500}, 2.0);
    const IntensityGrid g = concat_vertical(render_pair(s, {0, 0, 3.5}, {180, 25, 35}));
    std::vector<unsigned char> bytes(g.values.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = io::unit_to_byte(g.values[i]);
    ASSERT_GT(std::count(bytes.begin(), bytes.end(), 0), 0);
    ASSERT_GT(std::count(bytes.begin(), bytes.end(), 128), 0);
    EXPECT_EQ(fnv1a(bytes.data(), bytes.size()), 16756391912206151634ULL);
}

TEST(Pgm, ExportIsBitExact) {
    GrayImage img;
    img.at(0, 0) = 0.0f;
    img.at(0, 1) = 0.5f;
    const std::string pgm = to_pgm(img);
    const std::string header = "P5\n64 64\n255\n";
    ASSERT_EQ(pgm.substr(0, header.size()), header);
    ASSERT_EQ(pgm.size(), header.size() + 64 * 64);
    EXPECT_EQ(static_cast<unsigned char>(pgm[header.size()]), 0);
    EXPECT_EQ(static_cast<unsigned char>(pgm[header.size() + 1]), 128);
    EXPECT_EQ(static_cast<unsigned char>(pgm[header.size() + 2]), 255);
}

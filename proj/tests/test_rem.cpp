#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "dragon/rem.hpp"
#include "support.hpp"

using namespace dragon;
using namespace dragon::testing;

namespace {

const AnalyticalPredictor kFriis(ModelKind::friis);

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

// Grid with hand-set layers, for aggregation tests.
REMGrid manual_grid(const std::map<std::string, std::vector<double>>& layers, int rows, int cols) {
    REMGrid g = make_rem_grid({0, 0, cols * 10.0, rows * 10.0}, 10.0);
    g.layers = layers;
    return g;
}

}  // namespace

TEST(RemGrid, DimensionsFollowBboxAndResolution) {
    const REMGrid g = make_rem_grid({0, 0, 1000, 500}, 50.0);
    EXPECT_EQ(g.rows, 10);
    EXPECT_EQ(g.cols, 20);
    EXPECT_EQ(g.size(), 200u);
    const Vec2 nw = g.center(0, 0);
    EXPECT_DOUBLE_EQ(nw.x, 25.0);
    EXPECT_DOUBLE_EQ(nw.y, 475.0);
    // partial border cells round up
    EXPECT_EQ(make_rem_grid({0, 0, 1010, 500}, 50.0).cols, 21);
    EXPECT_THROW(make_rem_grid({0, 0, 100, 100}, 0.0), ValidationError);
    EXPECT_THROW(make_rem_grid({0, 0, 100, 100}, -5.0), ValidationError);
}

TEST(RemGrid, EirpOffsetShiftsLayerExactly) {
    const Scenario s = flat_scenario({box_building("b", 50, 50, 90, 120, 20)},
                                     {make_cell("lo", "A", 0, 0, 0, 25, 2600, 20, 60.0),
                                      make_cell("hi", "A", 0, 0, 0, 25, 2600, 20, 63.0)});
    const std::vector<std::string> ids{"lo", "hi"};
    const AnalyticalPredictor uma(ModelKind::uma_b);
    const REMGrid g = generate_rem(s, uma, ids, 50.0);
    ASSERT_EQ(g.layers.size(), 2u);
    for (std::size_t i = 0; i < g.size(); ++i)
        EXPECT_NEAR(g.layers.at("hi")[i] - g.layers.at("lo")[i], 3.0, 1e-9) << i;
}

TEST(RemGrid, FriisDecreasesRadially) {
    const Scenario s = flat_scenario({}, {make_cell("c", "A", -500, 0, 0, 30)}, {-500, -25, 500, 25});
    const std::vector<std::string> ids{"c"};
    const REMGrid g = generate_rem(s, kFriis, ids, 50.0);
    ASSERT_EQ(g.rows, 1);
    const auto& layer = g.layers.at("c");
    for (int c = 1; c < g.cols; ++c) EXPECT_LT(layer[c], layer[c - 1]) << c;
}

TEST(RemGrid, LayerMatchesPointPredictionAtCenters) {
    const Scenario s = flat_scenario({box_building("b", -60, 20, 40, 80, 18)}, {make_cell("c", "A", 10, -40, 0, 28)});
    const Cell& cell = s.cell("c");
    const AnalyticalPredictor uma(ModelKind::uma_b);
    REMGrid g = make_rem_grid(s.bbox(), 100.0);
    generate_rem(g, s, uma, cell);
    for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) {
            const Vec2 p = g.center(r, c);
            EXPECT_DOUBLE_EQ(g.at("c", r, c), uma.predict_one(s, cell, {p.x, p.y, 1.5})) << r << "," << c;
        }
}

TEST(RemGrid, JobsDoNotChangeValues) {
    const Scenario s = flat_scenario({box_building("b", -60, 20, 40, 80, 18)}, {make_cell("c", "A", 10, -40, 0, 28)});
    const std::vector<std::string> ids{"c"};
    const AnalyticalPredictor uma(ModelKind::uma_b);
    const REMGrid one = generate_rem(s, uma, ids, 40.0, 1.5, false, 1);
    const REMGrid four = generate_rem(s, uma, ids, 40.0, 1.5, false, 4);
    EXPECT_EQ(one.layers, four.layers);
}

TEST(RemGrid, OutdoorOnlyMasksBuildingInteriors) {
    const Scenario s = flat_scenario({box_building("b", -100, -100, 100, 100, 20)}, {make_cell("c", "A", 300, 300, 0, 30)});
    const std::vector<std::string> ids{"c"};
    const REMGrid g = generate_rem(s, kFriis, ids, 50.0, 1.5, true);
    int masked = 0;
    for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) {
            const Vec2 p = g.center(r, c);
            const bool inside = std::abs(p.x) < 100 && std::abs(p.y) < 100;
            const double v = g.layers.at("c")[static_cast<std::size_t>(r) * g.cols + c];
            EXPECT_EQ(std::isnan(v), inside) << p.x << "," << p.y;
            masked += inside;
        }
    EXPECT_EQ(masked, 16);
}

TEST(RemGrid, UnfittedCellIsMissingPrerequisite) {
    const Scenario s = flat_scenario({}, {make_cell("c", "A", 0, 0, 0, 30, 2600, 20, std::nullopt)});
    const std::vector<std::string> ids{"c"};
    EXPECT_THROW(generate_rem(s, kFriis, ids, 50.0), MissingPrerequisiteError);
}

TEST(BestServer, SingleCellServesEverywhere) {
    const REMGrid g = manual_grid({{"c1", {-80, -90, -100, -110}}}, 2, 2);
    const auto m = best_server(g, {{"A", {"c1"}}});
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(m.best_mno[i], "A");
        EXPECT_EQ(m.mno_serving.at("A")[i], "c1");
        EXPECT_EQ(m.mno_rsrp.at("A")[i], g.layers.at("c1")[i]);
    }
}

TEST(BestServer, DominantOperatorWins) {
    const REMGrid g = manual_grid({{"a1", {-80, -120}}, {"a2", {-95, -115}}, {"b1", {-90, -100}}}, 1, 2);
    const auto m = best_server(g, {{"A", {"a1", "a2"}}, {"B", {"b1"}}});
    EXPECT_EQ(m.best_mno[0], "A");
    EXPECT_EQ(m.mno_serving.at("A")[0], "a1");
    EXPECT_EQ(m.best_mno[1], "B");
    EXPECT_EQ(m.mno_serving.at("A")[1], "a2");
    EXPECT_EQ(m.mno_rsrp.at("A")[1], -115);
}

TEST(BestServer, TiesResolveToSmallestCellId) {
    const REMGrid g = manual_grid({{"zeta", {-90}}, {"alpha", {-90}}, {"mid", {-90}}}, 1, 1);
    const auto within = best_server(g, {{"A", {"zeta", "alpha"}}});
    EXPECT_EQ(within.mno_serving.at("A")[0], "alpha");
    const auto across = best_server(g, {{"A", {"zeta"}}, {"B", {"mid"}}});
    EXPECT_EQ(across.best_mno[0], "B");
}

TEST(BestServer, UncoveredCellsStayEmpty) {
    const REMGrid g = manual_grid({{"c1", {kNoCoverage, -90}}}, 1, 2);
    const auto m = best_server(g, {{"A", {"c1"}}});
    EXPECT_EQ(m.best_mno[0], "");
    EXPECT_TRUE(std::isnan(m.mno_rsrp.at("A")[0]));
    EXPECT_EQ(m.best_mno[1], "A");
}

TEST(BestServer, EmptyOperatorIsDomainError) {
    const REMGrid g = manual_grid({{"c1", {-90}}}, 1, 1);
    EXPECT_THROW(best_server(g, {{"A", {"c1"}}, {"B", {}}}), DomainError);
    EXPECT_THROW(best_server(g, {}), DomainError);
    EXPECT_THROW(best_server(g, {{"A", {"missing"}}}), ConsistencyError);
}

TEST(BestServer, ArgmaxInvariantUnderCommonShift) {
    Rng rng(11);
    std::map<std::string, std::vector<double>> layers;
    for (const char* id : {"a1", "a2", "b1", "c1"}) {
        auto& v = layers[id];
        for (int i = 0; i < 64; ++i) v.push_back(rng.uniform(-130, -60));
    }
    const std::map<std::string, std::vector<std::string>> groups{{"A", {"a1", "a2"}}, {"B", {"b1"}}, {"C", {"c1"}}};
    const auto base = best_server(manual_grid(layers, 8, 8), groups);
    for (auto& [id, v] : layers)
        for (double& x : v) x += 7.25;
    const auto shifted = best_server(manual_grid(layers, 8, 8), groups);
    EXPECT_EQ(base.best_mno, shifted.best_mno);
    EXPECT_EQ(base.mno_serving, shifted.mno_serving);
}

TEST(Evaluate, HandComputedErrors) {
    const std::vector<double> meas{-90, -90, -90};
    const std::vector<double> pred{-89, -91, -87};
    const EvalReport r = evaluate(pred, meas);
    EXPECT_EQ(r.n, 3u);
    EXPECT_NEAR(r.mae_db, 5.0 / 3.0, 1e-12);
    EXPECT_NEAR(r.rmse_db, std::sqrt(11.0 / 3.0), 1e-12);
    EXPECT_NEAR(r.bias_db, 1.0, 1e-12);
    EXPECT_EQ(r.abs_error_ecdf, (std::vector<double>{1, 1, 3}));
}

TEST(Evaluate, IdenticalInputsGiveZeroErrors) {
    const std::vector<double> v{-70, -85.5, -101};
    const EvalReport r = evaluate(v, v);
    EXPECT_EQ(r.rmse_db, 0.0);
    EXPECT_EQ(r.mae_db, 0.0);
    EXPECT_EQ(r.bias_db, 0.0);
}

TEST(Evaluate, ConstantOffsetAndOrdering) {
    Rng rng(3);
    std::vector<double> meas, pred;
    for (int i = 0; i < 50; ++i) {
        meas.push_back(rng.uniform(-120, -60));
        pred.push_back(meas.back() - 4.0);
    }
    const EvalReport r = evaluate(pred, meas);
    EXPECT_NEAR(r.rmse_db, 4.0, 1e-9);
    EXPECT_NEAR(r.mae_db, 4.0, 1e-9);
    EXPECT_NEAR(r.bias_db, -4.0, 1e-9);

    for (auto& p : pred) p += 3.0 * rng.normal();
    const EvalReport noisy = evaluate(pred, meas);
    EXPECT_GE(noisy.rmse_db, noisy.mae_db);
    EXPECT_GE(noisy.mae_db, std::abs(noisy.bias_db));
}

TEST(Evaluate, RejectsEmptyAndMismatchedInput) {
    EXPECT_THROW(evaluate({}, {}), InsufficientDataError);
    const std::vector<double> a{1, 2}, b{1};
    EXPECT_THROW(evaluate(a, b), ShapeError);
    const std::vector<double> bad{std::nan("")};
    EXPECT_THROW(evaluate(bad, b), NumericError);
}

TEST(Export, RemCsvLayout) {
    const Scenario s = flat_scenario({}, {make_cell("c2", "A", 0, 0, 0, 30), make_cell("c1", "B", 100, 0, 0, 30)});
    const std::vector<std::string> ids{"c2", "c1"};
    const REMGrid g = generate_rem(s, kFriis, ids, 100.0);
    const auto lines = lines_of(rem_csv(g, s));
    ASSERT_EQ(lines.size(), g.size() + 1);
    EXPECT_EQ(lines[0], "x_m,y_m,lat,lon,rsrp_c1,rsrp_c2");
    EXPECT_EQ(lines[1].rfind("-450.000,450.000,", 0), 0u) << lines[1];
}

TEST(Export, HeatmapMapping) {
    const REMGrid g = manual_grid({}, 1, 5);
    const std::vector<double> layer{-140, -100, -60, 0, kNoCoverage};
    const std::string pgm = heatmap_pgm(g, layer);
    ASSERT_GE(pgm.size(), 5u);
    EXPECT_EQ(pgm.substr(0, 2), "P5");
    const std::string px = pgm.substr(pgm.size() - 5);
    std::vector<int> bytes;
    for (char ch : px) bytes.push_back(static_cast<unsigned char>(ch));
    EXPECT_EQ(bytes, (std::vector<int>{0, 128, 255, 255, 0}));
    EXPECT_THROW(heatmap_pgm(g, {1.0}), ShapeError);
}

TEST(Export, EcdfCsv) {
    const std::vector<double> meas{-90, -90, -90, -90};
    const std::vector<double> pred{-88, -91, -90, -86};
    const auto lines = lines_of(ecdf_csv(evaluate(pred, meas)));
    ASSERT_EQ(lines.size(), 5u);
    EXPECT_EQ(lines[0], "abs_error_db,cum_probability");
    EXPECT_EQ(lines[1], "0.000000,0.250000");
    EXPECT_EQ(lines[4], "4.000000,1.000000");
}

TEST(Export, BestServerCsv) {
    const REMGrid g = manual_grid({{"a1", {-80, kNoCoverage}}, {"b1", {-90, kNoCoverage}}}, 1, 2);
    const auto lines = lines_of(best_server_csv(g, best_server(g, {{"A", {"a1"}}, {"B", {"b1"}}})));
    ASSERT_EQ(lines.size(), 3u);
    EXPECT_EQ(lines[0], "row,col,best_mno,rsrp_A,cell_A,rsrp_B,cell_B");
    EXPECT_EQ(lines[1], "0,0,A,-80.000,a1,-90.000,b1");
    EXPECT_EQ(lines[2], "0,1,,nan,,nan,");
}

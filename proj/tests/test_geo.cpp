#include <gtest/gtest.h>

#include <cmath>

#include "dragon/geo.hpp"
#include "dragon/scenario_io.hpp"
#include "support.hpp"

using namespace dragon;
using namespace dragon::testing;

TEST(Projection, ReferencePointMapsToOrigin) {
    const Projection p = Projection::around(56.1572, 10.2107);
    const LocalPoint o = project({56.1572, 10.2107, 0.0}, p);
    EXPECT_EQ(o.x, 0.0);
    EXPECT_EQ(o.y, 0.0);
}

TEST(Projection, OneDegreeOfLongitudeAtEquator) {
    const Projection p = Projection::around(0.0, 0.0);
    // equirectangular oracle with the WGS84 equatorial radius
    const double oracle = 6378137.0 * M_PI / 180.0;
    const LocalPoint q = project({0.0, 1.0, 0.0}, p);
    EXPECT_NEAR(q.x, 111320.0, 50.0);
    EXPECT_NEAR(q.x, oracle, 1e-6);
    EXPECT_EQ(q.y, 0.0);
}

TEST(Projection, LongitudeScaleFollowsCosine) {
    for (double lat : {-60.0, 0.0, 33.3, 56.1572, 89.0}) {
        const Projection p = Projection::around(lat, 10.0);
        EXPECT_GT(p.m_per_deg_lat, 0.0);
        EXPECT_NEAR(p.m_per_deg_lon, p.m_per_deg_lat * std::cos(lat * M_PI / 180.0), 1e-9 * p.m_per_deg_lat);
    }
}

TEST(Projection, RoundTripWithinHalfDegree) {
    Rng rng(7);
    const Projection p = Projection::around(56.1572, 10.2107);
    for (int i = 0; i < 10000; ++i) {
        const GeoPoint g{p.lat0 + rng.uniform(-0.5, 0.5), p.lon0 + rng.uniform(-0.5, 0.5), rng.uniform(0, 100)};
        const GeoPoint back = unproject(project(g, p), p);
        ASSERT_NEAR(back.lat, g.lat, 1e-9);
        ASSERT_NEAR(back.lon, g.lon, 1e-9);
        ASSERT_EQ(back.alt_m, g.alt_m);
    }
}

TEST(GeoPoint, RejectsOutOfRangeCoordinates) {
    EXPECT_THROW(validate(GeoPoint{91.0, 0.0, 0.0}), ValidationError);
    EXPECT_THROW(validate(GeoPoint{0.0, -180.5, 0.0}), ValidationError);
    EXPECT_NO_THROW(validate(GeoPoint{-90.0, 180.0, 0.0}));
}

TEST(LoadScenario, MinimalTriangleOnFlatTerrain) {
    const auto dir = scratch_dir("geo_minimal");
    write_text(dir / "s.json", fixture_scenario_json(kFixtureBuildings, "[]"));
    write_text(dir / "t.asc", fixture_terrain_asc(10.0));
    const Scenario s = load_scenario((dir / "s.json").string(), (dir / "t.asc").string());
    ASSERT_EQ(s.buildings().size(), 1u);
    const Building& b = s.buildings()[0];
    EXPECT_EQ(b.id, "tri");
    EXPECT_EQ(b.footprint.size(), 3u);
    EXPECT_GT(signed_area(b.footprint), 0.0);
    EXPECT_EQ(b.height_m, 15.0);
    EXPECT_EQ(b.height_source, HeightSource::annotated);
    EXPECT_NEAR(b.base_z_m, 10.0, 1e-9);
    EXPECT_TRUE(s.cells().empty());
}

TEST(LoadScenario, TwoVertexFootprintIsRejected) {
    ScenarioSources src;
    src.scenario_text = fixture_scenario_json(R"([{"id": "bad", "outline": [[56.154, 10.206], [56.155, 10.207]]}])", "[]");
    src.terrain_text = fixture_terrain_asc();
    EXPECT_THROW(parse_scenario(src), ValidationError);
}

TEST(LoadScenario, BuildingOutsideBboxIsRejected) {
    ScenarioSources src;
    src.scenario_text = fixture_scenario_json(
        R"([{"id": "far", "outline": [[56.170, 10.206], [56.170, 10.207], [56.171, 10.2065]]}])", "[]");
    src.terrain_text = fixture_terrain_asc();
    EXPECT_THROW(parse_scenario(src), ValidationError);
}

TEST(LoadScenario, CellsGroupedByOperator) {
    ScenarioSources src;
    src.scenario_text = fixture_scenario_json(kFixtureBuildings, kFixtureCells);
    src.terrain_text = fixture_terrain_asc(10.0);
    const Scenario s = parse_scenario(src);
    ASSERT_EQ(s.cells().size(), 3u);
    const auto groups = s.cells_by_mno();
    ASSERT_EQ(groups.size(), 2u);
    EXPECT_EQ(groups.at("A"), (std::vector<std::string>{"a1", "a2"}));
    EXPECT_EQ(groups.at("B"), (std::vector<std::string>{"b1"}));
    EXPECT_NEAR(s.cell("a1").position.z, 40.0, 1e-9);
    EXPECT_FALSE(s.cell("a1").eirp_dbm.has_value());
}

TEST(LoadScenario, MalformedJsonReportsLocation) {
    ScenarioSources src;
    src.scenario_name = "city.json";
    src.scenario_text = "{\n  \"bbox\": {\n    \"lat_min\": 56.15,\n  ";
    src.terrain_text = fixture_terrain_asc();
    try {
        parse_scenario(src);
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("city.json:4"), std::string::npos) << e.what();
    }
}

TEST(LoadScenario, MissingFieldNamesThePath) {
    ScenarioSources src;
    src.scenario_text = fixture_scenario_json("[]", R"([{"id": "x", "mno": "A", "lat": 56.155, "lon": 10.205}])");
    src.terrain_text = fixture_terrain_asc();
    try {
        parse_scenario(src);
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("cells[0]"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("antenna_height_m"), std::string::npos) << e.what();
    }
}

TEST(LoadScenario, MissingTerrainFileIsAnIoError) {
    const auto dir = scratch_dir("geo_missing");
    write_text(dir / "s.json", fixture_scenario_json("[]", "[]"));
    EXPECT_THROW(load_scenario((dir / "s.json").string(), (dir / "nope.asc").string()), IoError);
}

TEST(LoadScenario, Deterministic) {
    ScenarioSources src;
    src.scenario_text = fixture_scenario_json(kFixtureBuildings, kFixtureCells);
    src.terrain_text = fixture_terrain_asc(12.5);
    EXPECT_EQ(parse_scenario(src), parse_scenario(src));
    EXPECT_EQ(save_bundle(parse_scenario(src)), save_bundle(parse_scenario(src)));
}

TEST(LoadScenario, BundleRoundTripIsLossless) {
    ScenarioSources src;
    src.scenario_text = fixture_scenario_json(kFixtureBuildings, kFixtureCells);
    src.terrain_text = fixture_terrain_asc(12.5);
    const Scenario s = parse_scenario(src).with_cell_eirp("a2", 47.25);
    EXPECT_EQ(load_bundle_text(save_bundle(s)), s);
}

TEST(LoadScenario, HeightRasterCalibratesUnannotatedBuildings) {
    ScenarioSources src;
    src.scenario_text = fixture_scenario_json(
        R"([{"id": "u", "outline": [[56.1500, 10.2000], [56.1500, 10.2100], [56.1600, 10.2100], [56.1600, 10.2000]]}])",
        "[]");
    src.terrain_text = fixture_terrain_asc();
    std::string raster = "ncols 8\nnrows 8\nxllcorner 10.198\nyllcorner 56.148\ncellsize 0.002\nNODATA_value -9999\n";
    for (int r = 0; r < 8; ++r) {
        for (int c = 0; c < 8; ++c) raster += (c ? " 21" : "21");
        raster += "\n";
    }
    src.raster_text = raster;
    const Scenario s = parse_scenario(src);
    ASSERT_EQ(s.buildings().size(), 1u);
    EXPECT_EQ(s.buildings()[0].height_source, HeightSource::calibrated);
    EXPECT_DOUBLE_EQ(s.buildings()[0].height_m, 21.0);
}

namespace {

TerrainGrid raster_3x1(double a, double b, double c) {
    TerrainGrid t;
    t.origin = {0.0, 0.0, 0.0};
    t.cell_size_m = 10.0;
    t.rows = 1;
    t.cols = 3;
    t.elevation = {a, b, c};
    return t;
}

}  // namespace

TEST(CalibrateHeights, MedianOfCoveredCells) {
    Building b = box_building("b", 1.0, 1.0, 29.0, 9.0, 1.0);
    b.height_source = HeightSource::fallback;
    const auto out = calibrate_heights({b}, raster_3x1(10.0, 14.0, 12.4));
    EXPECT_DOUBLE_EQ(out[0].height_m, 12.4);
    EXPECT_EQ(out[0].height_source, HeightSource::calibrated);
}

TEST(CalibrateHeights, AnnotationTakesPrecedence) {
    const Building b = box_building("b", 1.0, 1.0, 29.0, 9.0, 30.0);
    const auto out = calibrate_heights({b}, raster_3x1(10.0, 14.0, 12.4));
    EXPECT_EQ(out[0].height_m, 30.0);
    EXPECT_EQ(out[0].height_source, HeightSource::annotated);
}

TEST(CalibrateHeights, NoCoverageFallsBackToDefault) {
    Building b = box_building("b", 100.0, 100.0, 110.0, 110.0, 1.0);
    b.height_source = HeightSource::fallback;
    const auto out = calibrate_heights({b}, raster_3x1(10.0, 14.0, 12.4));
    EXPECT_EQ(out[0].height_m, 8.0);
    EXPECT_EQ(out[0].height_source, HeightSource::fallback);
    EXPECT_EQ(to_string(out[0].height_source), "default");
}

TEST(CalibrateHeights, Idempotent) {
    Building b = box_building("b", 1.0, 1.0, 19.0, 9.0, 1.0);
    b.height_source = HeightSource::fallback;
    const auto once = calibrate_heights({b}, raster_3x1(10.0, 14.0, 12.4));
    EXPECT_EQ(calibrate_heights(once, raster_3x1(10.0, 14.0, 12.4)), once);
}

TEST(TerrainElevation, CellCenterIsExact) {
    Rng rng(3);
    TerrainGrid t = TerrainGrid::flat({0.0, 0.0, 100.0, 75.0}, 0.0);
    for (auto& v : t.elevation) v = rng.uniform(0.0, 50.0);
    for (int r = 0; r < t.rows; ++r)
        for (int c = 0; c < t.cols; ++c) {
            const Vec2 p = t.cell_center(r, c);
            EXPECT_NEAR(terrain_elevation(t, p.x, p.y), t.at(r, c), 1e-9);
        }
}

TEST(TerrainElevation, MidpointIsMean) {
    TerrainGrid t = raster_3x1(3.0, 8.0, -1.0);
    EXPECT_DOUBLE_EQ(terrain_elevation(t, 10.0, 5.0), 5.5);
    EXPECT_DOUBLE_EQ(terrain_elevation(t, 20.0, 5.0), 3.5);
}

TEST(TerrainElevation, OutsideExtentThrows) {
    const TerrainGrid t = raster_3x1(1.0, 2.0, 3.0);
    EXPECT_THROW(terrain_elevation(t, -1.0, 5.0), OutOfBoundsError);
    EXPECT_THROW(terrain_elevation(t, 31.0, 5.0), OutOfBoundsError);
    EXPECT_THROW(terrain_elevation(t, 15.0, 11.0), OutOfBoundsError);
    EXPECT_NO_THROW(terrain_elevation(t, 30.0, 10.0));
}

TEST(TerrainElevation, ContinuousAcrossCellBoundaries) {
    Rng rng(11);
    TerrainGrid t = TerrainGrid::flat({0.0, 0.0, 200.0, 200.0}, 0.0);
    for (auto& v : t.elevation) v = rng.uniform(-20.0, 80.0);
    for (int i = 0; i < 1000; ++i) {
        // a center line between cells, approached from both sides
        const double x = (1 + static_cast<int>(rng.below(6))) * t.cell_size_m + 0.5 * t.cell_size_m;
        const double y = rng.uniform(0.0, 200.0);
        EXPECT_NEAR(terrain_elevation(t, x - 1e-10, y), terrain_elevation(t, x + 1e-10, y), 1e-7);
    }
}

TEST(Measurements, LoaderResolvesAltitudeAndValidates) {
    ScenarioSources src;
    src.scenario_text = fixture_scenario_json("[]", kFixtureCells);
    src.terrain_text = fixture_terrain_asc(10.0);
    const Scenario s = parse_scenario(src);
    const auto dir = scratch_dir("geo_meas");
    write_text(dir / "m.csv", "lat,lon,alt_m,cell_id,rsrp_dbm\n56.1551,10.2051,,a1,-80.5\n56.1552,10.2052,3,b1,-90\n"
                              "57.0,10.2052,3,b1,-90\n");
    std::vector<std::size_t> rows;
    const auto ms = load_measurements((dir / "m.csv").string(), s, &rows);
    ASSERT_EQ(ms.size(), 2u);
    EXPECT_EQ(rows, (std::vector<std::size_t>{0, 1}));
    EXPECT_NEAR(ms[0].position.z, 11.5, 1e-9);
    EXPECT_NEAR(ms[1].position.z, 13.0, 1e-9);
    EXPECT_EQ(ms[1].cell_id, "b1");

    write_text(dir / "bad.csv", "lat,lon,alt_m,cell_id,rsrp_dbm\n56.1551,10.2051,,a1,-12\n");
    EXPECT_THROW(load_measurements((dir / "bad.csv").string(), s), ValidationError);
    write_text(dir / "hdr.csv", "lat,lon,cell,rsrp\n");
    EXPECT_THROW(load_measurements((dir / "hdr.csv").string(), s), ParseError);
    write_text(dir / "cell.csv", "lat,lon,alt_m,cell_id,rsrp_dbm\n56.1551,10.2051,,zz,-80\n");
    EXPECT_THROW(load_measurements((dir / "cell.csv").string(), s), ValidationError);
}

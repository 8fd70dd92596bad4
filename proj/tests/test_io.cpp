#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "instances.hpp"
#include "svcgfl/io.hpp"

using namespace svcgfl;
namespace fs = std::filesystem;

TEST(GraphJson, RoundTripIsOneBased) {
    const auto g = standard_topology(3);
    const auto j = io::graph_to_json(g);
    EXPECT_EQ(j["m_regions"], g.m_regions());
    for (const auto& e : j["edges"]) {
        EXPECT_GE(e[0].get<int>(), 1);
        EXPECT_LE(e[1].get<int>(), g.m_regions());
    }
    EXPECT_EQ(io::graph_from_json(j).edges(), g.edges());
    const auto path = (fs::temp_directory_path() / "svcgfl_graph_test.json").string();
    io::write_graph(path, g);
    EXPECT_EQ(io::read_graph(path).edges(), g.edges());
    fs::remove(path);
}

TEST(GraphJson, SchemaErrors) {
    EXPECT_THROW(io::graph_from_json(io::json::parse(R"({"edges": []})")), DataError);
    EXPECT_THROW(io::graph_from_json(io::json::parse(R"({"m_regions": 2, "edges": [[1]]})")), DataError);
    EXPECT_THROW(io::graph_from_json(io::json::parse(R"({"m_regions": 2, "edges": [[1, 3]]})")), DataError);
    EXPECT_THROW(io::graph_from_json(io::json::parse(R"({"m_regions": 2, "edges": [["a", 2]]})")), DataError);
    EXPECT_THROW(io::parse_json("{", "graph"), DataError);
    EXPECT_THROW(io::read_file("/nonexistent/svcgfl"), DataError);
}

TEST(DataCsv, RoundTripIsExact) {
    Rng rng(1);
    const auto d = inst::random_dataset(4, 3, 25, rng);
    std::istringstream is(io::data_to_csv(d));
    const auto back = io::data_from_csv(is, d.graph, false);
    ASSERT_EQ(back.n(), d.n());
    for (std::size_t i = 0; i < d.n(); ++i) {
        EXPECT_EQ(back.observations[i].psi, d.observations[i].psi);
        EXPECT_EQ(back.observations[i].y, d.observations[i].y);
        EXPECT_EQ(back.observations[i].x_tilde, d.observations[i].x_tilde);
    }
}

TEST(DataCsv, InterceptAppendedLast) {
    std::istringstream is("region,y,x1\n1,0.5,2\n2,1.5,3\n");
    const auto d = io::data_from_csv(is, topology::path(2), true);
    EXPECT_EQ(d.p_tilde(), 2);
    EXPECT_EQ(d.observations[1].x_tilde[0], 3.0);
    EXPECT_EQ(d.observations[1].x_tilde[1], 1.0);
    EXPECT_EQ(d.observations[1].psi, 1);
    // Writing drops the implicit intercept again.
    EXPECT_EQ(io::data_to_csv(d).substr(0, 12), "region,y,x1\n");
}

TEST(DataCsv, SchemaErrors) {
    const auto g = topology::path(2);
    auto parse = [&](const std::string& s, bool icpt = false) {
        std::istringstream is(s);
        return io::data_from_csv(is, g, icpt);
    };
    EXPECT_THROW(parse(""), DataError);
    EXPECT_THROW(parse("y,region,x1\n0,1,1\n"), DataError);
    EXPECT_THROW(parse("region,y\n1,0\n"), DataError);
    EXPECT_THROW(parse("region,y,x1\n3,0,1\n"), DataError);
    EXPECT_THROW(parse("region,y,x1\n0,0,1\n"), DataError);
    EXPECT_THROW(parse("region,y,x1\n1.5,0,1\n"), DataError);
    EXPECT_THROW(parse("region,y,x1\n1,abc,1\n"), DataError);
    EXPECT_THROW(parse("region,y,x1\n1,0\n"), DataError);
    EXPECT_NO_THROW(parse("region,y\n1,0\n2,1\n", true));
}

TEST(Results, SolutionJsonShape) {
    Rng rng(2);
    const auto d = inst::random_dataset(3, 2, 30, rng);
    const auto fd = make_fit_data(d);
    const auto sol = solve(GflProblem{fd, PenaltyWeights::tied(2, 0.0, 0.05), {}});
    const auto j = io::solution_to_json(sol, fd->graph);
    ASSERT_EQ(j["coefficients"].size(), 3u);
    EXPECT_EQ(j["coefficients"][1][0].get<double>(), sol.xi[fd->graph.index(1, 0)]);
    EXPECT_EQ(j["j3_count"].get<std::size_t>(), sol.j3_count);
    std::size_t covered = 0;
    for (const auto& b : j["fused_blocks"]) {
        covered += b["regions"].size();
        for (const auto& r : b["regions"]) EXPECT_GE(r.get<int>(), 1);
    }
    EXPECT_EQ(covered + j["zeros"].size(), 6u);
    const auto props = io::fused_group_properties(sol, fd->graph, {"a", "b"});
    EXPECT_TRUE(props[0].contains("coef_a"));
    EXPECT_TRUE(props[2].contains("group_b"));
}

TEST(Results, ReportAndErrorJson) {
    CriterionReport r;
    r.piic1 = 3.5;
    r.lambda = PenaltyWeights::tied(2, 0.0, 0.1);
    auto j = io::report_to_json(r);
    EXPECT_TRUE(j["piic2"].is_null());
    r.piic2 = 4.0;
    EXPECT_EQ(io::report_to_json(r)["piic2"], 4.0);
    EXPECT_EQ(j["lambda"]["lambda2"].size(), 2u);
    const auto e = io::error_to_json("data", "bad", 3);
    EXPECT_EQ(e["error"]["exit_code"], 3);
    EXPECT_EQ(e["error"]["kind"], "data");
}

TEST(Results, TrajectoryCsv) {
    SelectionResult s;
    s.trajectory.push_back({1, 0, PenaltyWeights::free({0, 0}, {0.5, 0.25}), 2.5});
    const auto csv = io::trajectory_to_csv(s, 2);
    EXPECT_EQ(csv, "model,cycle,coordinate,lambda1,lambda2,value\n2,1,1,0;0,0.5;0.25,2.5\n");
}

TEST(Spatial, AssignmentAndGeoJson) {
    GeoPoints p;
    p.coordinates = {{0, 0}, {1, 1}};
    p.ids = {"a", "b"};
    EXPECT_EQ(io::assignment_to_csv(p, {0, 1}), "id,region,lon,lat\na,1,0,0\nb,2,1,1\n");
    const std::vector<Point2> c{{0, 0}, {1, 1}};
    const auto g = io::cells_to_geojson(voronoi_cells(c, {-1, -1}, {2, 2}), c, {io::json{{"k", 1}}});
    EXPECT_EQ(g["type"], "FeatureCollection");
    ASSERT_EQ(g["features"].size(), 2u);
    EXPECT_EQ(g["features"][0]["properties"]["k"], 1);
    EXPECT_EQ(g["features"][1]["properties"]["region"], 2);
    const auto& ring = g["features"][0]["geometry"]["coordinates"][0];
    EXPECT_EQ(ring.front(), ring.back());
}

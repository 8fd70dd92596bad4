#pragma once

// File formats. Region ids are 1-based in every file.
//
//   graph JSON       {"m_regions": M, "edges": [[a, b], ...]}
//   data CSV         region,y,x1,...,xp
//   assignment CSV   id,region,lon,lat
//   trajectory CSV   cycle,coordinate,lambda1,lambda2,value

#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "svcgfl/criteria.hpp"
#include "svcgfl/errors.hpp"
#include "svcgfl/graph.hpp"
#include "svcgfl/model.hpp"
#include "svcgfl/selection.hpp"
#include "svcgfl/solver.hpp"
#include "svcgfl/spatial.hpp"

namespace svcgfl::io {

using json = nlohmann::ordered_json;

inline std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path + " for writing");
    os << text;
    if (!os) throw DataError("failed writing " + path);
}

inline json parse_json(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(what + " is not valid JSON: " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Graph

inline json graph_to_json(const RegionGraph& g) {
    json edges = json::array();
    for (const auto& e : g.edges()) edges.push_back({e.lo + 1, e.hi + 1});
    return {{"m_regions", g.m_regions()}, {"edges", edges}};
}

inline RegionGraph graph_from_json(const json& j) {
    try {
        const int m = j.at("m_regions").get<int>();
        std::vector<Edge> edges;
        for (const auto& e : j.at("edges")) {
            if (!e.is_array() || e.size() != 2) throw DataError("graph edges must be pairs of region ids");
            edges.push_back(make_edge(e[0].get<int>() - 1, e[1].get<int>() - 1));
        }
        return RegionGraph(m, std::move(edges));
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed graph JSON: ") + e.what());
    }
}

inline RegionGraph read_graph(const std::string& path) { return graph_from_json(parse_json(read_file(path), path)); }

inline void write_graph(const std::string& path, const RegionGraph& g) { write_file(path, graph_to_json(g).dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Data CSV

inline std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline std::string data_to_csv(const SvcDataset& d) {
    std::ostringstream os;
    os << "region,y";
    const int p = d.p_tilde() - (d.intercept ? 1 : 0);
    for (int j = 0; j < p; ++j) os << ",x" << j + 1;
    os << '\n';
    for (const auto& o : d.observations) {
        os << o.psi + 1 << ',' << format_double(o.y);
        for (int j = 0; j < p; ++j) os << ',' << format_double(o.x_tilde[j]);
        os << '\n';
    }
    return os.str();
}

/// Parses region,y,x1..xp against a graph; with `intercept` a constant
/// column is appended last.
inline SvcDataset data_from_csv(std::istream& is, const RegionGraph& graph, bool intercept) {
    std::string line;
    if (!std::getline(is, line)) throw DataError("empty data file");
    auto header = detail::split_csv_line(line);
    for (auto& h : header) h = detail::trim(h);
    if (header.size() < 2 || header[0] != "region" || header[1] != "y")
        throw DataError("data file must start with columns region,y");
    const std::size_t p = header.size() - 2;
    if (p == 0 && !intercept) throw DataError("data file has no covariates (add --intercept or x columns)");
    SvcDataset d;
    d.graph = graph;
    d.intercept = intercept;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        auto f = detail::split_csv_line(line);
        if (f.size() != header.size())
            throw DataError("line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) + " fields");
        std::vector<double> v(f.size());
        for (std::size_t c = 0; c < f.size(); ++c)
            if (!detail::parse_double(detail::trim(f[c]), v[c]))
                throw DataError("line " + std::to_string(lineno) + ": field '" + f[c] + "' is not a finite number");
        SvcObservation o;
        if (v[0] != std::floor(v[0]) || v[0] < 1 || v[0] > graph.m_regions())
            throw DataError("line " + std::to_string(lineno) + ": region " + f[0] + " outside 1.." +
                            std::to_string(graph.m_regions()) + " of the graph");
        o.psi = static_cast<int>(v[0]) - 1;
        o.y = v[1];
        o.x_tilde.resize(static_cast<Eigen::Index>(p + (intercept ? 1 : 0)));
        for (std::size_t j = 0; j < p; ++j) o.x_tilde[static_cast<Eigen::Index>(j)] = v[2 + j];
        if (intercept) o.x_tilde[static_cast<Eigen::Index>(p)] = 1.0;
        d.observations.push_back(std::move(o));
    }
    validate(d);
    return d;
}

inline SvcDataset read_data(const std::string& path, const RegionGraph& graph, bool intercept) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open " + path);
    return data_from_csv(is, graph, intercept);
}

// ---------------------------------------------------------------------------
// Results

inline json weights_to_json(const PenaltyWeights& w) {
    return {{"model_class", w.model_class}, {"lambda1", w.lambda1}, {"lambda2", w.lambda2}};
}

/// Coefficients as an M x p_tilde table plus the fused blocks, 1-based.
inline json solution_to_json(const GflSolution& s, const CoefficientGraph& g) {
    json coef = json::array();
    for (int m = 0; m < g.m_regions(); ++m) {
        json row = json::array();
        for (int j = 0; j < g.p_tilde(); ++j) row.push_back(s.xi[g.index(m, j)]);
        coef.push_back(row);
    }
    json blocks = json::array();
    for (std::size_t b = 0; b < s.fusion_partition.size(); ++b) {
        const auto& blk = s.fusion_partition.blocks[b];
        json regions = json::array();
        for (int i : blk) regions.push_back(g.region_of(i) + 1);
        blocks.push_back({{"variable", g.variable_of(blk.front()) + 1},
                          {"regions", regions},
                          {"value", s.fusion_partition.values[b]}});
    }
    json zeros = json::array();
    for (int i = 0; i < g.p(); ++i)
        if (s.zero_mask[static_cast<std::size_t>(i)]) zeros.push_back({g.region_of(i) + 1, g.variable_of(i) + 1});
    return {{"lambda", weights_to_json(s.weights)},
            {"coefficients", coef},
            {"zeros", zeros},
            {"fused_blocks", blocks},
            {"j3_count", s.j3_count},
            {"objective", s.objective},
            {"kkt_residual", s.kkt_residual},
            {"iterations", s.iterations},
            {"converged", s.converged},
            {"polished", s.polished},
            {"primal_residual", s.primal_residual},
            {"dual_residual", s.dual_residual}};
}

inline json report_to_json(const CriterionReport& r) {
    json j = {{"lambda", weights_to_json(r.lambda)},
              {"neg_log_pred_sum", r.neg_log_pred_sum},
              {"waic_penalty", r.waic_penalty},
              {"j3_count", r.j3_count},
              {"trace_term", r.trace_term ? json(*r.trace_term) : json(nullptr)},
              {"waic", r.waic},
              {"piic1", r.piic1},
              {"piic2", r.piic2 ? json(*r.piic2) : json(nullptr)}};
    j["diagnostics"] = {{"plug_in_predictive", r.diagnostics.plug_in_predictive},
                        {"draws", r.diagnostics.draws},
                        {"min_ess", r.diagnostics.min_ess},
                        {"degenerate_resamples", r.diagnostics.degenerate_resamples},
                        {"notes", r.diagnostics.notes}};
    return j;
}

inline json matrix_to_json(const Mat& m) {
    json out = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
        out.push_back(row);
    }
    return out;
}

inline json curvature_to_json(const HyperCurvature& c) {
    return {{"j1_hat", matrix_to_json(c.j1_hat)},
            {"j2_hat", matrix_to_json(c.j2_hat)},
            {"trace_term", c.trace_term},
            {"fd_step", c.fd_step},
            {"ridge_added", c.ridge_added},
            {"boundary_warning", c.boundary_warning}};
}

inline std::string join(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + format_double(v[i]);
    return s;
}

inline std::string trajectory_to_csv(const SelectionResult& r, int model) {
    std::ostringstream os;
    os << "model,cycle,coordinate,lambda1,lambda2,value\n";
    for (const auto& t : r.trajectory)
        os << model << ',' << t.cycle << ',' << t.coordinate + 1 << ',' << join(t.lambda.lambda1) << ','
           << join(t.lambda.lambda2) << ',' << format_double(t.value) << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------
// Spatial outputs

inline std::string assignment_to_csv(const GeoPoints& pts, const std::vector<int>& assignment) {
    std::ostringstream os;
    os << "id,region,lon,lat\n";
    for (std::size_t i = 0; i < pts.size(); ++i)
        os << pts.ids[i] << ',' << assignment[i] + 1 << ',' << format_double(pts.coordinates[i][0]) << ','
           << format_double(pts.coordinates[i][1]) << '\n';
    return os.str();
}

/// FeatureCollection of clipped Voronoi cells; `properties[m]` is merged into
/// region m's feature (region ids 1-based).
inline json cells_to_geojson(const std::vector<std::vector<Point2>>& cells, const std::vector<Point2>& centroids,
                             const std::vector<json>& properties = {}) {
    json features = json::array();
    for (std::size_t m = 0; m < cells.size(); ++m) {
        json ring = json::array();
        for (const auto& p : cells[m]) ring.push_back({p[0], p[1]});
        json props = {{"region", m + 1}, {"centroid", {centroids[m][0], centroids[m][1]}}};
        if (m < properties.size())
            for (const auto& [k, v] : properties[m].items()) props[k] = v;
        features.push_back({{"type", "Feature"},
                            {"properties", props},
                            {"geometry", {{"type", "Polygon"}, {"coordinates", json::array({ring})}}}});
    }
    return {{"type", "FeatureCollection"}, {"features", features}};
}

/// Per-region fused-group labels and coefficients for each variable.
inline std::vector<json> fused_group_properties(const GflSolution& s, const CoefficientGraph& g,
                                                const std::vector<std::string>& names) {
    std::vector<json> props(static_cast<std::size_t>(g.m_regions()), json::object());
    std::vector<int> label(static_cast<std::size_t>(g.p()), 0);
    std::vector<int> next(static_cast<std::size_t>(g.p_tilde()), 0);
    for (const auto& blk : s.fusion_partition.blocks) {
        const int j = g.variable_of(blk.front());
        const int id = ++next[j];
        for (int i : blk) label[i] = id;
    }
    for (int m = 0; m < g.m_regions(); ++m)
        for (int j = 0; j < g.p_tilde(); ++j) {
            const std::string name = j < static_cast<int>(names.size()) ? names[j] : "x" + std::to_string(j + 1);
            props[m]["coef_" + name] = s.xi[g.index(m, j)];
            props[m]["group_" + name] = label[g.index(m, j)];  // 0 = shrunk to zero
        }
    return props;
}

inline json error_to_json(const std::string& kind, const std::string& message, int code) {
    return {{"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}};
}

}  // namespace svcgfl::io

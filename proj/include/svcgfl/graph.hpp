#pragma once

// Region adjacency graphs, the coefficient-level fusion graph, and connected
// components. All indices are 0-based in the C++ API; file formats use 1-based
// region ids (see io.hpp).

#include <algorithm>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "svcgfl/errors.hpp"

namespace svcgfl {

/// Undirected edge stored with the larger endpoint first.
struct Edge {
    int hi = 0;
    int lo = 0;

    friend bool operator==(const Edge&, const Edge&) = default;
    friend auto operator<=>(const Edge&, const Edge&) = default;
};

inline Edge make_edge(int a, int b) { return a > b ? Edge{a, b} : Edge{b, a}; }

class RegionGraph {
public:
    RegionGraph() = default;

    /// Throws DataError on self-loops, duplicates, or out-of-range endpoints.
    RegionGraph(int m_regions, std::vector<Edge> edges) : m_(m_regions), edges_(std::move(edges)) {
        if (m_ < 1) throw DataError("region graph needs at least one region");
        std::set<Edge> seen;
        for (auto& e : edges_) {
            e = make_edge(e.hi, e.lo);
            if (e.hi == e.lo) throw DataError("self-loop on region " + std::to_string(e.hi + 1));
            if (e.lo < 0 || e.hi >= m_)
                throw DataError("edge endpoint out of range: (" + std::to_string(e.hi + 1) + "," +
                                std::to_string(e.lo + 1) + ")");
            if (!seen.insert(e).second)
                throw DataError("duplicate edge (" + std::to_string(e.hi + 1) + "," +
                                std::to_string(e.lo + 1) + ")");
        }
    }

    int m_regions() const { return m_; }
    const std::vector<Edge>& edges() const { return edges_; }

    std::vector<std::vector<int>> adjacency() const {
        std::vector<std::vector<int>> adj(static_cast<std::size_t>(m_));
        for (const auto& e : edges_) {
            adj[e.hi].push_back(e.lo);
            adj[e.lo].push_back(e.hi);
        }
        for (auto& a : adj) std::sort(a.begin(), a.end());
        return adj;
    }

private:
    int m_ = 1;
    std::vector<Edge> edges_;
};

/// Disjoint vertex blocks, each with one representative value.
struct Partition {
    std::vector<std::vector<int>> blocks;
    std::vector<double> values;

    std::size_t size() const { return blocks.size(); }
    int representative(std::size_t b) const { return blocks[b].front(); }
};

/// Connected components of (vertices, edges). Blocks are sorted internally and
/// ordered by their smallest member; edges touching vertices outside the set
/// are ignored.
inline Partition connected_components(const std::vector<int>& vertices, const std::vector<Edge>& edges) {
    if (vertices.empty()) return {};
    const int top = *std::max_element(vertices.begin(), vertices.end()) + 1;
    std::vector<int> parent(static_cast<std::size_t>(top), -1);
    for (int v : vertices) parent[v] = v;

    auto find = [&](int v) {
        while (parent[v] != v) {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        return v;
    };
    for (const auto& e : edges) {
        if (e.hi >= top || e.lo >= top || parent[e.hi] < 0 || parent[e.lo] < 0) continue;
        int a = find(e.hi), b = find(e.lo);
        if (a == b) continue;
        if (a < b) std::swap(a, b);
        parent[a] = b;  // root is always the smaller index
    }

    std::vector<int> sorted = vertices;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

    Partition out;
    std::vector<int> slot(static_cast<std::size_t>(top), -1);
    for (int v : sorted) {
        const int r = find(v);
        if (slot[r] < 0) {
            slot[r] = static_cast<int>(out.blocks.size());
            out.blocks.emplace_back();
        }
        out.blocks[slot[r]].push_back(v);
    }
    out.values.assign(out.blocks.size(), 0.0);
    return out;
}

/// Coefficient-level graph: vertex (m, j) has flat index m * p_tilde + j, and
/// an edge joins two indices of the same variable whose regions are adjacent.
class CoefficientGraph {
public:
    CoefficientGraph() = default;

    CoefficientGraph(const RegionGraph& rg, int p_tilde) : m_(rg.m_regions()), pt_(p_tilde) {
        if (p_tilde < 1) throw UsageError("p_tilde must be at least 1");
        edges_.reserve(rg.edges().size() * static_cast<std::size_t>(p_tilde));
        for (const auto& e : rg.edges())
            for (int j = 0; j < p_tilde; ++j) edges_.push_back(Edge{index(e.hi, j), index(e.lo, j)});
        std::sort(edges_.begin(), edges_.end(), [](const Edge& a, const Edge& b) {
            return std::pair(a.lo, a.hi) < std::pair(b.lo, b.hi);
        });
    }

    int p() const { return m_ * pt_; }
    int p_tilde() const { return pt_; }
    int m_regions() const { return m_; }
    const std::vector<Edge>& edges() const { return edges_; }

    int index(int region, int variable) const { return region * pt_ + variable; }
    int region_of(int idx) const { return idx / pt_; }
    int variable_of(int idx) const { return idx % pt_; }

private:
    int m_ = 0;
    int pt_ = 0;
    std::vector<Edge> edges_;
};

inline CoefficientGraph build_coefficient_graph(const RegionGraph& rg, int p_tilde) {
    return CoefficientGraph(rg, p_tilde);
}

namespace topology {

inline RegionGraph path(int m) {
    std::vector<Edge> e;
    for (int i = 1; i < m; ++i) e.push_back({i, i - 1});
    return RegionGraph(m, std::move(e));
}

inline RegionGraph cycle(int m) {
    auto e = path(m).edges();
    if (m > 2) e.push_back(make_edge(m - 1, 0));
    return RegionGraph(m, std::move(e));
}

inline RegionGraph star(int m) {
    std::vector<Edge> e;
    for (int i = 1; i < m; ++i) e.push_back({i, 0});
    return RegionGraph(m, std::move(e));
}

/// rows x cols lattice, regions numbered row-major.
inline RegionGraph lattice(int rows, int cols) {
    std::vector<Edge> e;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const int v = r * cols + c;
            if (c + 1 < cols) e.push_back(make_edge(v, v + 1));
            if (r + 1 < rows) e.push_back(make_edge(v, v + cols));
        }
    return RegionGraph(rows * cols, std::move(e));
}

}  // namespace topology

/// Region graphs used by the eight simulation cases.
inline RegionGraph standard_topology(int case_id) {
    switch (case_id) {
        case 1: return topology::path(3);
        case 2: return topology::path(5);
        case 3: return topology::cycle(5);
        case 4: return topology::star(5);
        case 5: return topology::path(50);
        case 6:
        case 7:
        case 8: return topology::lattice(6, 6);
        default: throw UsageError("unknown case id " + std::to_string(case_id) + " (expected 1..8)");
    }
}

/// True if every vertex is reachable from vertex 0.
inline bool is_connected(const RegionGraph& g) {
    std::vector<int> all(static_cast<std::size_t>(g.m_regions()));
    std::iota(all.begin(), all.end(), 0);
    return connected_components(all, g.edges()).size() == 1;
}

}  // namespace svcgfl

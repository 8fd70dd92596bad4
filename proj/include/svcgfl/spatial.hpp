#pragma once

// Regions from coordinates: k-means on (lon, lat), then adjacency from the
// Delaunay triangulation of the centroids (the dual of their Voronoi cells).

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "svcgfl/errors.hpp"
#include "svcgfl/graph.hpp"
#include "svcgfl/model.hpp"
#include "svcgfl/parallel.hpp"
#include "svcgfl/random.hpp"

namespace svcgfl {

using Point2 = std::array<double, 2>;

struct GeoPoints {
    std::vector<Point2> coordinates;  ///< (lon, lat)
    std::vector<std::string> ids;

    std::size_t size() const { return coordinates.size(); }
};

inline double dist2(const Point2& a, const Point2& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1];
    return dx * dx + dy * dy;
}

// ---------------------------------------------------------------------------
// k-means

struct KMeansResult {
    std::vector<int> assignment;  ///< 0-based cluster per point
    std::vector<Point2> centroids;
    double sse = 0.0;
    int iterations = 0;
    int restart = 0;                ///< index of the kept restart
    std::vector<double> sse_trace;  ///< SSE after every assignment step of the kept restart
    bool sse_monotone = true;       ///< across all restarts
};

namespace detail {

inline std::vector<Point2> kmeanspp_seeds(const std::vector<Point2>& pts, int k, Rng& rng) {
    const std::size_t n = pts.size();
    std::vector<Point2> c;
    c.reserve(static_cast<std::size_t>(k));
    c.push_back(pts[static_cast<std::size_t>(rng.uniform() * static_cast<double>(n)) % n]);
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = dist2(pts[i], c[0]);
    while (static_cast<int>(c.size()) < k) {
        const double total = std::accumulate(d.begin(), d.end(), 0.0);
        std::size_t pick = 0;
        if (total > 0.0) {
            pick = rng.categorical(d);
        } else {
            pick = static_cast<std::size_t>(rng.uniform() * static_cast<double>(n)) % n;
        }
        c.push_back(pts[pick]);
        for (std::size_t i = 0; i < n; ++i) d[i] = std::min(d[i], dist2(pts[i], c.back()));
    }
    return c;
}

inline KMeansResult lloyd(const std::vector<Point2>& pts, std::vector<Point2> c, int max_iter) {
    const std::size_t n = pts.size();
    const std::size_t k = c.size();
    KMeansResult r;
    r.assignment.assign(n, -1);
    for (int it = 1; it <= max_iter; ++it) {
        bool changed = false;
        double sse = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double bd = dist2(pts[i], c[0]);
            for (std::size_t j = 1; j < k; ++j) {
                const double dj = dist2(pts[i], c[j]);
                if (dj < bd) {
                    bd = dj;
                    best = static_cast<int>(j);
                }
            }
            sse += bd;
            if (r.assignment[i] != best) {
                r.assignment[i] = best;
                changed = true;
            }
        }
        if (!r.sse_trace.empty() && sse > r.sse_trace.back() * (1.0 + 1e-12) + 1e-300) r.sse_monotone = false;
        r.sse_trace.push_back(sse);
        r.iterations = it;
        if (!changed && it > 1) break;

        std::vector<Point2> sum(k, Point2{0.0, 0.0});
        std::vector<int> cnt(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            sum[r.assignment[i]][0] += pts[i][0];
            sum[r.assignment[i]][1] += pts[i][1];
            ++cnt[r.assignment[i]];
        }
        std::vector<bool> taken(n, false);
        for (std::size_t j = 0; j < k; ++j) {
            if (cnt[j] > 0) {
                c[j] = {sum[j][0] / cnt[j], sum[j][1] / cnt[j]};
                continue;
            }
            // Empty cluster: move it onto the point farthest from its centroid.
            std::size_t far = 0;
            double fd = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double di = dist2(pts[i], c[r.assignment[i]]);
                if (!taken[i] && di > fd) {
                    fd = di;
                    far = i;
                }
            }
            taken[far] = true;
            c[j] = pts[far];
            changed = true;
        }
    }
    r.centroids = std::move(c);
    r.sse = r.sse_trace.back();
    return r;
}

}  // namespace detail

/// Lloyd's algorithm with k-means++ seeding; the restart with the lowest SSE
/// is kept (earliest restart on ties).
inline KMeansResult kmeans(const GeoPoints& points, int k, std::uint64_t seed, int restarts = 20, int max_iter = 300,
                           unsigned jobs = 1) {
    const auto& pts = points.coordinates;
    if (k < 1) throw UsageError("k must be at least 1");
    if (static_cast<std::size_t>(k) > pts.size())
        throw DataError("cannot form " + std::to_string(k) + " clusters from " + std::to_string(pts.size()) + " points");
    for (const auto& p : pts)
        if (!std::isfinite(p[0]) || !std::isfinite(p[1])) throw DataError("non-finite coordinate");
    if (restarts < 1) throw UsageError("restarts must be at least 1");
    std::vector<KMeansResult> runs(static_cast<std::size_t>(restarts));
    parallel_for(runs.size(), jobs, [&](std::size_t r) {
        Rng rng(derive_seed(seed, {tag("kmeans"), r}));
        runs[r] = detail::lloyd(pts, detail::kmeanspp_seeds(pts, k, rng), max_iter);
        runs[r].restart = static_cast<int>(r);
    });
    bool mono = true;
    std::size_t best = 0;
    for (std::size_t r = 0; r < runs.size(); ++r) {
        mono = mono && runs[r].sse_monotone;
        if (runs[r].sse < runs[best].sse) best = r;
    }
    KMeansResult out = std::move(runs[best]);
    out.sse_monotone = mono;
    return out;
}

// ---------------------------------------------------------------------------
// Delaunay adjacency

struct AdjacencyResult {
    RegionGraph graph;
    bool fallback = false;  ///< collinear centroids: nearest-neighbour chain
    std::vector<std::string> warnings;
};

namespace detail {

inline double orient(const Point2& a, const Point2& b, const Point2& c) {
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
}

/// > 0 when d is inside the circumcircle of the counter-clockwise triangle abc.
inline long double incircle(const Point2& a, const Point2& b, const Point2& c, const Point2& d) {
    const long double adx = a[0] - d[0], ady = a[1] - d[1];
    const long double bdx = b[0] - d[0], bdy = b[1] - d[1];
    const long double cdx = c[0] - d[0], cdy = c[1] - d[1];
    const long double ad = adx * adx + ady * ady, bd = bdx * bdx + bdy * bdy, cd = cdx * cdx + cdy * cdy;
    return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx);
}

inline std::vector<std::size_t> convex_hull(const std::vector<Point2>& p, const std::vector<std::size_t>& idx) {
    std::vector<std::size_t> s = idx;
    std::sort(s.begin(), s.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
    if (s.size() < 3) return s;
    std::vector<std::size_t> h(2 * s.size());
    std::size_t k = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        while (k >= 2 && orient(p[h[k - 2]], p[h[k - 1]], p[s[i]]) <= 0) --k;
        h[k++] = s[i];
    }
    for (std::size_t i = s.size() - 1, t = k + 1; i-- > 0;) {
        while (k >= t && orient(p[h[k - 2]], p[h[k - 1]], p[s[i]]) <= 0) --k;
        h[k++] = s[i];
    }
    h.resize(k - 1);
    return h;
}

}  // namespace detail

/// Regions are adjacent when their Voronoi cells share a boundary segment,
/// read off the Delaunay triangulation (Bowyer-Watson). Cocircular ties are
/// resolved by insertion order: a point exactly on a circumcircle does not
/// break that triangle, which keeps one diagonal of a square.
inline AdjacencyResult voronoi_adjacency(const std::vector<Point2>& centroids) {
    const std::size_t k = centroids.size();
    if (k < 1) throw DataError("no centroids");
    AdjacencyResult out;
    if (k == 1) {
        out.graph = RegionGraph(1, {});
        return out;
    }
    for (const auto& c : centroids)
        if (!std::isfinite(c[0]) || !std::isfinite(c[1])) throw DataError("non-finite centroid");

    // Distinct sites; exact duplicates are tied to their first occurrence.
    std::vector<std::size_t> first(k);
    std::map<Point2, std::size_t> seen;
    std::vector<std::size_t> sites;
    for (std::size_t i = 0; i < k; ++i) {
        auto [it, fresh] = seen.emplace(centroids[i], i);
        first[i] = it->second;
        if (fresh) sites.push_back(i);
    }
    if (sites.size() == 1) throw DataError("all centroids are identical");
    std::set<Edge> edges;
    for (std::size_t i = 0; i < k; ++i)
        if (first[i] != i) edges.insert(make_edge(static_cast<int>(i), static_cast<int>(first[i])));

    double xmin = centroids[sites[0]][0], xmax = xmin, ymin = centroids[sites[0]][1], ymax = ymin;
    for (auto i : sites) {
        xmin = std::min(xmin, centroids[i][0]);
        xmax = std::max(xmax, centroids[i][0]);
        ymin = std::min(ymin, centroids[i][1]);
        ymax = std::max(ymax, centroids[i][1]);
    }
    const double span = std::max(xmax - xmin, ymax - ymin);

    // Collinear check relative to the extent.
    const auto& a0 = centroids[sites[0]];
    std::size_t far = sites[1];
    for (auto i : sites)
        if (dist2(centroids[i], a0) > dist2(centroids[far], a0)) far = i;
    bool collinear = true;
    for (auto i : sites)
        if (std::abs(detail::orient(a0, centroids[far], centroids[i])) > 1e-12 * span * span) collinear = false;
    if (collinear) {
        const double dx = centroids[far][0] - a0[0], dy = centroids[far][1] - a0[1];
        std::vector<std::size_t> order = sites;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const double ta = (centroids[a][0] - a0[0]) * dx + (centroids[a][1] - a0[1]) * dy;
            const double tb = (centroids[b][0] - a0[0]) * dx + (centroids[b][1] - a0[1]) * dy;
            return ta < tb || (ta == tb && a < b);
        });
        for (std::size_t i = 1; i < order.size(); ++i)
            edges.insert(make_edge(static_cast<int>(order[i - 1]), static_cast<int>(order[i])));
        out.fallback = true;
        out.warnings.push_back("centroids are collinear; using nearest-neighbour chain adjacency");
        out.graph = RegionGraph(static_cast<int>(k), {edges.begin(), edges.end()});
        return out;
    }

    // Bowyer-Watson with a large enclosing triangle (vertices k, k+1, k+2).
    std::vector<Point2> p(centroids);
    const double cx = 0.5 * (xmin + xmax), cy = 0.5 * (ymin + ymax), big = 1e4 * span;
    p.push_back({cx - 2.0 * big, cy - big});
    p.push_back({cx + 2.0 * big, cy - big});
    p.push_back({cx, cy + 2.0 * big});
    struct Tri {
        std::array<std::size_t, 3> v;
    };
    std::vector<Tri> tris{{{k, k + 1, k + 2}}};
    const long double tol = 1e-12L * static_cast<long double>(span) * span * span * span;
    for (auto s : sites) {
        std::vector<Tri> keep;
        std::map<std::pair<std::size_t, std::size_t>, int> boundary;
        std::vector<std::pair<std::size_t, std::size_t>> order;
        for (const auto& t : tris) {
            if (detail::incircle(p[t.v[0]], p[t.v[1]], p[t.v[2]], p[s]) > tol) {
                for (int e = 0; e < 3; ++e) {
                    auto a = t.v[e], b = t.v[(e + 1) % 3];
                    auto key = std::minmax(a, b);
                    if (boundary[key]++ == 0) order.emplace_back(a, b);
                }
            } else {
                keep.push_back(t);
            }
        }
        for (auto [a, b] : order)
            if (boundary[std::minmax(a, b)] == 1) keep.push_back({{a, b, s}});
        tris = std::move(keep);
    }
    for (const auto& t : tris)
        for (int e = 0; e < 3; ++e) {
            const auto a = t.v[e], b = t.v[(e + 1) % 3];
            if (a < k && b < k) edges.insert(make_edge(static_cast<int>(a), static_cast<int>(b)));
        }
    // Hull edges are always Delaunay; add them in case the enclosing triangle
    // cut one off.
    const auto hull = detail::convex_hull(centroids, sites);
    for (std::size_t i = 0; i < hull.size(); ++i)
        edges.insert(make_edge(static_cast<int>(hull[i]), static_cast<int>(hull[(i + 1) % hull.size()])));
    out.graph = RegionGraph(static_cast<int>(k), {edges.begin(), edges.end()});
    return out;
}

/// Voronoi cell of each centroid clipped to the box [lo, hi], as a closed
/// counter-clockwise ring.
inline std::vector<std::vector<Point2>> voronoi_cells(const std::vector<Point2>& centroids, const Point2& lo,
                                                      const Point2& hi) {
    std::vector<std::vector<Point2>> cells;
    for (std::size_t i = 0; i < centroids.size(); ++i) {
        std::vector<Point2> poly{{lo[0], lo[1]}, {hi[0], lo[1]}, {hi[0], hi[1]}, {lo[0], hi[1]}};
        const auto& c = centroids[i];
        for (std::size_t j = 0; j < centroids.size() && !poly.empty(); ++j) {
            if (j == i || centroids[j] == c) continue;
            // Keep points x with (x - mid) . (cj - c) <= 0.
            const Point2 d{centroids[j][0] - c[0], centroids[j][1] - c[1]};
            const Point2 mid{0.5 * (centroids[j][0] + c[0]), 0.5 * (centroids[j][1] + c[1])};
            auto f = [&](const Point2& x) { return (x[0] - mid[0]) * d[0] + (x[1] - mid[1]) * d[1]; };
            std::vector<Point2> next;
            for (std::size_t v = 0; v < poly.size(); ++v) {
                const auto& a = poly[v];
                const auto& b = poly[(v + 1) % poly.size()];
                const double fa = f(a), fb = f(b);
                if (fa <= 0.0) next.push_back(a);
                if ((fa < 0.0 && fb > 0.0) || (fa > 0.0 && fb < 0.0)) {
                    const double t = fa / (fa - fb);
                    next.push_back({a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])});
                }
            }
            poly = std::move(next);
        }
        if (!poly.empty()) poly.push_back(poly.front());
        cells.push_back(std::move(poly));
    }
    return cells;
}

// ---------------------------------------------------------------------------
// CSV ingestion: id,lon,lat,y,x1,...,xp

struct GeoTable {
    GeoPoints points;
    std::vector<double> y;
    Mat x;  ///< n x p covariates
    std::vector<std::string> covariate_names;
    std::size_t dropped_missing = 0;
    std::size_t dropped_malformed = 0;
    bool standardized = false;
    std::vector<double> covariate_mean, covariate_sd;

    std::size_t size() const { return y.size(); }
};

struct IngestOptions {
    bool standardize = false;
    double max_malformed_fraction = 0.01;  ///< beyond this the file is rejected
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

inline bool is_missing(const std::string& s) { return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "null"; }

/// Parses a finite double; false on junk.
inline bool parse_double(const std::string& s, double& out) {
    const char* b = s.data();
    const char* e = b + s.size();
    if (b != e && *b == '+') ++b;
    auto [ptr, ec] = std::from_chars(b, e, out);
    return ec == std::errc() && ptr == e && std::isfinite(out);
}

}  // namespace detail

inline GeoTable read_geo_csv(std::istream& is, const IngestOptions& opt = {}) {
    std::string line;
    if (!std::getline(is, line)) throw DataError("empty point file");
    auto header = detail::split_csv_line(line);
    for (auto& h : header) h = detail::trim(h);
    static const char* required[] = {"id", "lon", "lat", "y"};
    if (header.size() < 4) throw DataError("point file needs columns id,lon,lat,y[,x1,...]");
    for (int c = 0; c < 4; ++c)
        if (header[c] != required[c])
            throw DataError("column " + std::to_string(c + 1) + " must be '" + required[c] + "', found '" + header[c] + "'");
    GeoTable t;
    t.covariate_names.assign(header.begin() + 4, header.end());
    const std::size_t p = t.covariate_names.size();
    std::vector<std::vector<double>> xs;
    std::size_t rows = 0;
    std::string first_bad;
    while (std::getline(is, line)) {
        if (detail::trim(line).empty()) continue;
        ++rows;
        auto f = detail::split_csv_line(line);
        if (f.size() != header.size()) {
            ++t.dropped_malformed;
            if (first_bad.empty()) first_bad = "line " + std::to_string(rows + 1) + ": wrong field count";
            continue;
        }
        for (auto& s : f) s = detail::trim(s);
        bool missing = false, bad = false;
        std::vector<double> v(f.size(), 0.0);
        for (std::size_t c = 1; c < f.size(); ++c) {
            if (detail::is_missing(f[c])) missing = true;
            else if (!detail::parse_double(f[c], v[c])) bad = true;
        }
        if (detail::is_missing(f[0])) missing = true;
        if (bad) {
            ++t.dropped_malformed;
            if (first_bad.empty()) first_bad = "line " + std::to_string(rows + 1) + ": unparsable number";
            continue;
        }
        if (missing) {
            ++t.dropped_missing;
            continue;
        }
        t.points.ids.push_back(f[0]);
        t.points.coordinates.push_back({v[1], v[2]});
        t.y.push_back(v[3]);
        xs.emplace_back(v.begin() + 4, v.end());
    }
    if (rows > 0 && static_cast<double>(t.dropped_malformed) > opt.max_malformed_fraction * static_cast<double>(rows))
        throw DataError(std::to_string(t.dropped_malformed) + " of " + std::to_string(rows) + " rows are malformed (" +
                        first_bad + ")");
    if (t.y.empty()) throw DataError("no complete rows in point file");
    t.x.resize(static_cast<Eigen::Index>(t.y.size()), static_cast<Eigen::Index>(p));
    for (std::size_t i = 0; i < xs.size(); ++i)
        for (std::size_t c = 0; c < p; ++c) t.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = xs[i][c];
    if (opt.standardize) {
        t.standardized = true;
        for (Eigen::Index c = 0; c < t.x.cols(); ++c) {
            const double m = t.x.col(c).mean();
            const double sd = std::sqrt((t.x.col(c).array() - m).square().sum() / static_cast<double>(t.x.rows()));
            t.covariate_mean.push_back(m);
            t.covariate_sd.push_back(sd);
            t.x.col(c).array() -= m;
            if (sd > 0.0) t.x.col(c) /= sd;
        }
    }
    return t;
}

inline GeoTable ingest_csv(const std::string& path, const IngestOptions& opt = {}) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open " + path);
    return read_geo_csv(is, opt);
}

struct Regionalization {
    KMeansResult clusters;
    AdjacencyResult adjacency;
};

inline Regionalization regionalize(const GeoPoints& pts, int k, std::uint64_t seed, unsigned jobs = 1) {
    Regionalization r;
    r.clusters = kmeans(pts, k, seed, 20, 300, jobs);
    r.adjacency = voronoi_adjacency(r.clusters.centroids);
    return r;
}

/// SVC dataset from a table and its region assignment; with `intercept` a
/// constant column is appended last.
inline SvcDataset to_dataset(const GeoTable& t, const std::vector<int>& assignment, const RegionGraph& graph,
                             bool intercept) {
    if (assignment.size() != t.size()) throw DataError("assignment length does not match the table");
    SvcDataset d;
    d.graph = graph;
    d.intercept = intercept;
    const auto p = t.x.cols() + (intercept ? 1 : 0);
    if (p == 0) throw DataError("no covariates and no intercept");
    d.observations.resize(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        auto& o = d.observations[i];
        o.y = t.y[i];
        o.psi = assignment[i];
        o.x_tilde.resize(p);
        o.x_tilde.head(t.x.cols()) = t.x.row(static_cast<Eigen::Index>(i)).transpose();
        if (intercept) o.x_tilde[p - 1] = 1.0;
    }
    return d;
}

}  // namespace svcgfl

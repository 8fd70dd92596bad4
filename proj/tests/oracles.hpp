#pragma once

// Independent reference computations used only by the tests.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <set>
#include <utility>
#include <vector>

#include "svcgfl/graph.hpp"
#include "svcgfl/model.hpp"

namespace oracle {

using svcgfl::Mat;
using svcgfl::Vec;

/// One absolute-value term w |xi_a - xi_b| (b < 0: w |xi_a|).
struct AbsTerm {
    int a;
    int b;
    double w;
};

/// Penalty terms built straight from the region graph.
inline std::vector<AbsTerm> gfl_terms(const svcgfl::RegionGraph& g, int p_tilde, const std::vector<double>& l1,
                                      const std::vector<double>& l2, int exempt = -1) {
    std::vector<AbsTerm> t;
    for (int m = 0; m < g.m_regions(); ++m)
        for (int j = 0; j < p_tilde; ++j)
            if (l1[j] > 0.0 && j != exempt) t.push_back({m * p_tilde + j, -1, l1[j]});
    for (const auto& e : g.edges())
        for (int j = 0; j < p_tilde; ++j)
            if (l2[j] > 0.0) t.push_back({e.hi * p_tilde + j, e.lo * p_tilde + j, l2[j]});
    return t;
}

/// P = X^T X / (n s2), q = X^T y / (n s2) from the expanded design.
inline std::pair<Mat, Vec> scaled_moments(const svcgfl::SvcDataset& d, double s2) {
    const int p = d.p();
    Mat P = Mat::Zero(p, p);
    Vec q = Vec::Zero(p);
    for (const auto& o : d.observations) {
        const Vec x = svcgfl::expand_design(o, d.m_regions());
        P += x * x.transpose();
        q += o.y * x;
    }
    const double c = static_cast<double>(d.n()) * s2;
    return {P / c, q / c};
}

/// argmin 1/2 xi'P xi - q'xi + sum_k w_k |D_k xi| through its dual,
///   max_{|u_k| <= w_k} -1/2 (q - D'u)' P^{-1} (q - D'u),
/// by exact coordinate maximisation. Needs P positive definite.
inline Vec dual_gfl(const Mat& P, const Vec& q, const std::vector<AbsTerm>& terms, int max_sweeps = 2000000,
                    double tol = 1e-14) {
    const auto p = P.rows();
    const Mat Pinv = P.llt().solve(Mat::Identity(p, p));
    const std::size_t m = terms.size();
    // Rows of D as dense vectors.
    std::vector<Vec> D(m, Vec::Zero(p));
    for (std::size_t k = 0; k < m; ++k) {
        D[k][terms[k].a] = 1.0;
        if (terms[k].b >= 0) D[k][terms[k].b] = -1.0;
    }
    std::vector<Vec> PinvDt(m);
    std::vector<double> diag(m);
    for (std::size_t k = 0; k < m; ++k) {
        PinvDt[k] = Pinv * D[k];
        diag[k] = D[k].dot(PinvDt[k]);
    }
    std::vector<double> u(m, 0.0);
    Vec xi = Pinv * q;  // xi(u) = P^{-1}(q - D'u)
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double change = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
            // d/du_k of the dual objective is D_k xi(u); curvature diag[k].
            const double nu = std::clamp(u[k] + D[k].dot(xi) / diag[k], -terms[k].w, terms[k].w);
            const double du = nu - u[k];
            if (du != 0.0) {
                xi -= du * PinvDt[k];
                u[k] = nu;
                change = std::max(change, std::abs(du) * std::sqrt(diag[k]));
            }
        }
        if (change < tol) break;
    }
    return xi;
}

/// Gaussian posterior under a flat prior: mean H^{-1} b, covariance H^{-1}.
inline std::pair<Vec, Mat> gaussian_posterior(const svcgfl::SvcDataset& d, double s2) {
    auto [P, q] = scaled_moments(d, s2);
    const double n = static_cast<double>(d.n());
    const Mat H = P * n;
    const Mat cov = H.llt().solve(Mat::Identity(H.rows(), H.cols()));
    return {cov * (q * n), cov};
}

using Point = std::array<double, 2>;

/// Exact Voronoi adjacency: i and j are adjacent iff the part of their
/// bisector that is no closer to any other site has positive length.
inline std::set<std::pair<int, int>> voronoi_pairs(const std::vector<Point>& s, double min_length = 1e-9) {
    std::set<std::pair<int, int>> out;
    const int k = static_cast<int>(s.size());
    for (int i = 0; i < k; ++i)
        for (int j = i + 1; j < k; ++j) {
            const double mx = 0.5 * (s[i][0] + s[j][0]), my = 0.5 * (s[i][1] + s[j][1]);
            double nx = -(s[j][1] - s[i][1]), ny = s[j][0] - s[i][0];
            const double nn = std::hypot(nx, ny);
            nx /= nn;
            ny /= nn;
            double lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
            bool empty = false;
            for (int o = 0; o < k && !empty; ++o) {
                if (o == i || o == j) continue;
                // |c - s_o|^2 - |c - s_i|^2 >= 0 with c = mid + t n is a + b t >= 0.
                const double a = (mx - s[o][0]) * (mx - s[o][0]) + (my - s[o][1]) * (my - s[o][1]) -
                                 (mx - s[i][0]) * (mx - s[i][0]) - (my - s[i][1]) * (my - s[i][1]);
                const double b = 2.0 * (nx * (mx - s[o][0]) + ny * (my - s[o][1])) -
                                 2.0 * (nx * (mx - s[i][0]) + ny * (my - s[i][1]));
                if (b > 0.0) lo = std::max(lo, -a / b);
                else if (b < 0.0) hi = std::min(hi, -a / b);
                else if (a < 0.0) empty = true;
            }
            if (!empty && hi - lo > min_length) out.insert({i, j});
        }
    return out;
}

/// Pairs seen as the two nearest sites at points of a regular grid.
inline std::set<std::pair<int, int>> grid_sampled_pairs(const std::vector<Point>& s, double x0, double x1, double y0,
                                                        double y1, double step) {
    std::set<std::pair<int, int>> out;
    const int k = static_cast<int>(s.size());
    for (double x = x0; x <= x1; x += step)
        for (double y = y0; y <= y1; y += step) {
            int a = -1, b = -1;
            double da = std::numeric_limits<double>::infinity(), db = da;
            for (int o = 0; o < k; ++o) {
                const double d = (x - s[o][0]) * (x - s[o][0]) + (y - s[o][1]) * (y - s[o][1]);
                if (d < da) {
                    b = a;
                    db = da;
                    a = o;
                    da = d;
                } else if (d < db) {
                    b = o;
                    db = d;
                }
            }
            // Near the bisector of a and b only.
            if (std::sqrt(db) - std::sqrt(da) < step) out.insert({std::min(a, b), std::max(a, b)});
        }
    return out;
}

/// Best 2-partition SSE by exhaustive search over label vectors (n <= 20).
inline double best_two_partition_sse(const std::vector<Point>& p) {
    const int n = static_cast<int>(p.size());
    double best = std::numeric_limits<double>::infinity();
    for (unsigned mask = 1; mask + 1 < (1u << n); ++mask) {
        double sx[2] = {0, 0}, sy[2] = {0, 0}, ss[2] = {0, 0};
        int c[2] = {0, 0};
        for (int i = 0; i < n; ++i) {
            const int g = (mask >> i) & 1u;
            sx[g] += p[i][0];
            sy[g] += p[i][1];
            ss[g] += p[i][0] * p[i][0] + p[i][1] * p[i][1];
            ++c[g];
        }
        double sse = 0.0;
        for (int g = 0; g < 2; ++g) sse += ss[g] - (sx[g] * sx[g] + sy[g] * sy[g]) / c[g];
        best = std::min(best, sse);
    }
    return best;
}

}  // namespace oracle

#pragma once

// Spatially varying coefficient data model: observations, Gaussian
// likelihood, and the synthetic generators for simulation Cases 1-8.
//
// Densities are conditional on x: the parameter-free marginal of (psi, x) is
// an additive constant in every comparison and is left out.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "svcgfl/errors.hpp"
#include "svcgfl/graph.hpp"
#include "svcgfl/random.hpp"

namespace svcgfl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct SvcObservation {
    double y = 0.0;
    Vec x_tilde;
    int psi = 0;  ///< region, 0-based
};

struct SvcDataset {
    std::vector<SvcObservation> observations;
    RegionGraph graph;
    std::optional<double> sigma2;  ///< nullopt means "estimate"
    bool intercept = false;        ///< last x_tilde column is the constant 1

    std::size_t n() const { return observations.size(); }
    int m_regions() const { return graph.m_regions(); }
    int p_tilde() const { return observations.empty() ? 0 : static_cast<int>(observations.front().x_tilde.size()); }
    int p() const { return m_regions() * p_tilde(); }

    double resolved_sigma2() const {
        if (!sigma2) throw UsageError("noise variance not resolved; estimate it first");
        return *sigma2;
    }
};

/// Checks n >= 1, consistent widths, region ids in range, finite values.
inline void validate(const SvcDataset& d) {
    if (d.observations.empty()) throw DataError("dataset has no observations");
    const auto pt = d.observations.front().x_tilde.size();
    if (pt == 0) throw DataError("observations need at least one covariate");
    for (std::size_t i = 0; i < d.n(); ++i) {
        const auto& o = d.observations[i];
        if (o.x_tilde.size() != static_cast<Eigen::Index>(pt))
            throw DataError("observation " + std::to_string(i + 1) + " has inconsistent covariate count");
        if (o.psi < 0 || o.psi >= d.m_regions())
            throw DataError("observation " + std::to_string(i + 1) + " has region id " +
                            std::to_string(o.psi + 1) + " outside 1.." + std::to_string(d.m_regions()));
        if (!std::isfinite(o.y) || !o.x_tilde.allFinite())
            throw DataError("observation " + std::to_string(i + 1) + " contains non-finite values");
    }
    if (d.sigma2 && !(*d.sigma2 > 0.0)) throw DataError("sigma2 must be positive");
}

/// x_i = e_psi (kron) x_tilde.
inline Vec expand_design(const SvcObservation& obs, int m_regions) {
    const auto pt = obs.x_tilde.size();
    Vec x = Vec::Zero(m_regions * pt);
    x.segment(obs.psi * pt, pt) = obs.x_tilde;
    return x;
}

/// x_i^T xi without materialising the expanded design.
inline double linear_predictor(const SvcObservation& obs, const Vec& xi) {
    const auto pt = obs.x_tilde.size();
    return obs.x_tilde.dot(xi.segment(obs.psi * pt, pt));
}

inline double log_normal_density(double y, double mean, double sigma2) {
    const double r = y - mean;
    return -0.5 * std::log(2.0 * std::numbers::pi * sigma2) - r * r / (2.0 * sigma2);
}

inline Vec loglik_pointwise(const SvcDataset& d, const Vec& xi) {
    const double s2 = d.resolved_sigma2();
    Vec out(static_cast<Eigen::Index>(d.n()));
    for (std::size_t i = 0; i < d.n(); ++i) {
        const auto& o = d.observations[i];
        out[static_cast<Eigen::Index>(i)] = log_normal_density(o.y, linear_predictor(o, xi), s2);
    }
    return out;
}

inline double loglik(const SvcDataset& d, const Vec& xi) {
    if (xi.size() != d.p()) throw UsageError("coefficient vector has wrong length");
    return loglik_pointwise(d, xi).sum();
}

/// Sum_i x_i (y_i - x_i^T xi) / sigma2.
inline Vec loglik_grad(const SvcDataset& d, const Vec& xi) {
    const double s2 = d.resolved_sigma2();
    const int pt = d.p_tilde();
    Vec g = Vec::Zero(d.p());
    for (const auto& o : d.observations)
        g.segment(o.psi * pt, pt) += o.x_tilde * ((o.y - linear_predictor(o, xi)) / s2);
    return g;
}

/// Unscaled cross-products of the expanded design (block-diagonal by region).
struct DesignMoments {
    Mat xtx;   ///< X^T X
    Vec xty;   ///< X^T y
    double yty = 0.0;
    std::size_t n = 0;
};

inline DesignMoments design_moments(const SvcDataset& d) {
    const int pt = d.p_tilde();
    DesignMoments m;
    m.xtx = Mat::Zero(d.p(), d.p());
    m.xty = Vec::Zero(d.p());
    m.n = d.n();
    for (const auto& o : d.observations) {
        const int off = o.psi * pt;
        m.xtx.block(off, off, pt, pt).noalias() += o.x_tilde * o.x_tilde.transpose();
        m.xty.segment(off, pt) += o.y * o.x_tilde;
        m.yty += o.y * o.y;
    }
    return m;
}

/// -X^T X / sigma2; constant in xi.
inline Mat loglik_hess(const SvcDataset& d) { return -design_moments(d).xtx / d.resolved_sigma2(); }

inline double residual_sum_of_squares(const SvcDataset& d, const Vec& xi) {
    double rss = 0.0;
    for (const auto& o : d.observations) {
        const double r = o.y - linear_predictor(o, xi);
        rss += r * r;
    }
    return rss;
}

/// RSS / max(n - df, 1) with df = |J3|. Returns the raw value (0 for a
/// perfect fit); use resolve_sigma2 for the floored estimate.
inline double estimate_sigma2(const SvcDataset& d, const Vec& xi, std::size_t df) {
    const double denom = std::max(static_cast<double>(d.n()) - static_cast<double>(df), 1.0);
    return residual_sum_of_squares(d, xi) / denom;
}

inline constexpr double kSigma2Floor = 1e-8;

inline double resolve_sigma2(const SvcDataset& d, const Vec& xi, std::size_t df) {
    return std::max(estimate_sigma2(d, xi, df), kSigma2Floor);
}

// ---------------------------------------------------------------------------
// Synthetic generators.

struct TrueModel {
    RegionGraph graph;
    int p_tilde = 3;
    Vec theta;                  ///< flat, index m * p_tilde + j
    std::vector<double> p_psi;  ///< region probabilities
    double sigma2 = 1.0;
    double x_variance = 5.0;    ///< each covariate ~ N(0, x_variance)

    /// E[x x^T] for the expanded design.
    Mat second_moment() const {
        Mat j = Mat::Zero(theta.size(), theta.size());
        for (int m = 0; m < graph.m_regions(); ++m)
            for (int k = 0; k < p_tilde; ++k) j(m * p_tilde + k, m * p_tilde + k) = p_psi[m] * x_variance;
        return j;
    }
};

inline SvcDataset sample_dataset(const TrueModel& tm, std::size_t n, Rng& rng) {
    SvcDataset d;
    d.graph = tm.graph;
    d.sigma2 = tm.sigma2;
    d.observations.resize(n);
    const double sx = std::sqrt(tm.x_variance), se = std::sqrt(tm.sigma2);
    for (auto& o : d.observations) {
        o.psi = static_cast<int>(rng.categorical(tm.p_psi));
        o.x_tilde.resize(tm.p_tilde);
        for (int k = 0; k < tm.p_tilde; ++k) o.x_tilde[k] = sx * rng.normal();
        o.y = linear_predictor(o, tm.theta) + se * rng.normal();
    }
    return d;
}

namespace detail {

/// Concatenate (value, repeat) runs.
inline std::vector<double> runs(std::initializer_list<std::pair<double, int>> spec) {
    std::vector<double> out;
    for (auto [v, k] : spec) out.insert(out.end(), static_cast<std::size_t>(k), v);
    return out;
}

inline std::vector<double> blocks(std::initializer_list<double> values, int width) {
    std::vector<double> out;
    for (double v : values) out.insert(out.end(), static_cast<std::size_t>(width), v);
    return out;
}

inline std::vector<double> uniform_probs(int m) { return std::vector<double>(static_cast<std::size_t>(m), 1.0 / m); }

/// N(0, Sigma) with Sigma block-diagonal; each block has `diag` on the
/// diagonal and `off` elsewhere.
inline std::vector<double> equicorrelated_draw(Rng& rng, const std::vector<std::array<double, 3>>& blocks_spec) {
    std::vector<double> out;
    for (const auto& b : blocks_spec) {
        const int size = static_cast<int>(b[0]);
        Mat s = Mat::Constant(size, size, b[2]);
        s.diagonal().setConstant(b[1]);
        Eigen::LLT<Mat> llt(s);
        Vec z(size);
        for (int i = 0; i < size; ++i) z[i] = rng.normal();
        Vec x = llt.matrixL() * z;
        out.insert(out.end(), x.data(), x.data() + size);
    }
    return out;
}

/// theta = A z with A block indicator of `groups` equal blocks, z ~ N(0, var I).
inline std::vector<double> grouped_draw(Rng& rng, int m, int groups, double var) {
    std::vector<double> out;
    const int width = m / groups;
    for (int g = 0; g < groups; ++g) {
        const double z = std::sqrt(var) * rng.normal();
        out.insert(out.end(), static_cast<std::size_t>(width), z);
    }
    return out;
}

}  // namespace detail

struct CaseDesign {
    std::size_t n = 0;
    TrueModel model;
};

/// Simulation designs of Cases 1-8, Settings 1-2. Setting 2 of Cases 5-8
/// draws theta from its Gaussian construction using `rng`.
inline CaseDesign case_design(int case_id, int setting, double sigma2, Rng& rng) {
    if (setting != 1 && setting != 2) throw UsageError("setting must be 1 or 2");
    if (!(sigma2 > 0.0)) throw UsageError("sigma2 must be positive");
    CaseDesign cd;
    TrueModel& tm = cd.model;
    tm.graph = standard_topology(case_id);
    tm.p_tilde = 3;
    tm.sigma2 = sigma2;
    tm.x_variance = 5.0;
    const int m = tm.graph.m_regions();
    std::array<std::vector<double>, 3> by_var;
    using detail::blocks;
    using detail::runs;
    const bool s1 = setting == 1;
    switch (case_id) {
        case 1:
            cd.n = s1 ? 20 : 35;
            tm.p_psi = s1 ? std::vector<double>{1.0 / 3, 1.0 / 3, 1.0 / 3} : std::vector<double>{1.0 / 3, 1.0 / 6, 1.0 / 2};
            by_var = {{{1.0, 1.0, 1.0}, {2.0, -2.0, -3.5}, {3.0, -3.0, 1.5}}};
            break;
        case 2:
            cd.n = s1 ? 45 : 50;
            tm.p_psi = s1 ? detail::uniform_probs(5) : std::vector<double>{0.1, 0.3, 0.2, 0.2, 0.2};
            by_var = {{{1.0, 1.0, 1.0, 1.0, 1.0}, {2.0, 2.0, 1.5, 2.5, 1.5}, {3.0, -2.5, -3.0, 0.5, -0.5}}};
            break;
        case 3:
            cd.n = s1 ? 45 : 50;
            tm.p_psi = s1 ? detail::uniform_probs(5) : std::vector<double>{0.1, 0.3, 0.2, 0.2, 0.2};
            by_var = {{{1.0, 1.0, 1.0, -1.5, -1.5}, {2.0, -2.0, -3.5, 0.5, -0.5}, {3.0, -3.0, 1.5, -1.0, -2.5}}};
            break;
        case 4:
            cd.n = s1 ? 45 : 50;
            tm.p_psi = s1 ? detail::uniform_probs(5) : std::vector<double>{0.1, 0.2, 0.1, 0.2, 0.4};
            by_var = {{{1.0, 1.0, -1.5, -1.5, 5.0}, {2.0, -2.0, -2.5, -0.5, -3.5}, {3.0, -3.0, -1.0, 0.5, -5.0}}};
            break;
        case 5:
            cd.n = 400;
            tm.p_psi = detail::uniform_probs(50);
            if (s1) {
                by_var = {{std::vector<double>(50, 1.0), blocks({-2.0, -1.5, -1.0, 0.5, 1.5}, 10),
                           blocks({-3.0, -2.5, -2.0, -1.5, -1.0, 0.5, 1.5, 2.0, 2.5, 3.0}, 5)}};
            } else {
                by_var[0] = detail::grouped_draw(rng, 50, 1, 3.0);
                by_var[1] = detail::grouped_draw(rng, 50, 1, 3.0);
                by_var[2] = detail::equicorrelated_draw(rng, {{50, 5.0, 1.5}});
            }
            break;
        case 6:
            cd.n = 400;
            tm.p_psi = detail::uniform_probs(36);
            if (s1) {
                by_var = {{std::vector<double>(36, 2.0),
                           blocks({-2.0, -1.5, -1.0, -2.0, -1.5, -1.0, -2.0, -1.5, -1.0, 0.5, 1.5, 2.0, 0.5, 1.5, 2.0,
                                   0.5, 1.5, 2.0},
                                  2),
                           blocks({-3.0, -2.5, -2.0, -3.0, -2.5, -2.0, -1.5, -1.0, 0.5, -1.5, -1.0, 0.5, 1.0, 2.0, 2.5,
                                   1.0, 2.0, 2.5},
                                  2)}};
            } else {
                by_var[0] = detail::grouped_draw(rng, 36, 1, 3.0);
                by_var[1] = detail::grouped_draw(rng, 36, 1, 3.0);
                by_var[2] = detail::equicorrelated_draw(rng, {{36, 5.0, 1.5}});
            }
            break;
        case 7:
            cd.n = 400;
            tm.p_psi = detail::uniform_probs(36);
            if (s1) {
                by_var = {{runs({{-2.0, 18}, {2.0, 18}}),
                           blocks({-2.0, -1.5, -1.0, -2.0, -1.5, -1.0, -2.0, -1.5, -1.0, 1.0, 1.5, 2.0, 1.0, 1.5, 2.0,
                                   1.0, 1.5, 2.0},
                                  2),
                           blocks({-3.0, -2.5, -3.0, -2.5, -2.0, -1.5, 0.5, 1.0, 0.5, 1.0, 1.5, 2.0}, 3)}};
            } else {
                by_var[0] = detail::grouped_draw(rng, 36, 2, 3.0);
                by_var[1] = detail::grouped_draw(rng, 36, 2, 3.0);
                by_var[2] = detail::equicorrelated_draw(rng, {{18, 5.0, 0.5}, {18, 3.0, 0.9}});
            }
            break;
        case 8:
            cd.n = 400;
            tm.p_psi = detail::uniform_probs(36);
            if (s1) {
                std::vector<double> v2;
                for (int r = 0; r < 3; ++r)
                    for (double v : {-2.0, -2.0, -1.5, -1.0, -1.0, -0.5}) v2.push_back(v);
                for (int r = 0; r < 3; ++r)
                    for (double v : {0.5, 0.5, 1.0, 1.5, 1.5, 2.0}) v2.push_back(v);
                by_var = {{blocks({-2.0, -1.0, -2.0, -1.0, -2.0, -1.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0}, 3), v2,
                           blocks({-3.0, -1.5, -2.5, -1.0, -2.0, -0.5, 0.5, 2.0, 1.0, 2.5, 1.5, 3.0}, 3)}};
            } else {
                by_var[0] = detail::grouped_draw(rng, 36, 4, 0.5);
                by_var[1] = detail::grouped_draw(rng, 36, 4, 0.5);
                by_var[2] = detail::equicorrelated_draw(rng, {{9, 5.0, 0.5}, {9, 5.0, 0.5}, {9, 5.0, 0.5}, {9, 5.0, 0.5}});
            }
            break;
        default: throw UsageError("unknown case id " + std::to_string(case_id) + " (expected 1..8)");
    }
    tm.theta.resize(m * tm.p_tilde);
    for (int j = 0; j < tm.p_tilde; ++j) {
        if (static_cast<int>(by_var[j].size()) != m) throw std::logic_error("case table has wrong length");
        for (int r = 0; r < m; ++r) tm.theta[r * tm.p_tilde + j] = by_var[j][r];
    }
    return cd;
}

/// Training data and its generating model for one replicate.
inline std::pair<SvcDataset, TrueModel> generate_case(int case_id, int setting, double sigma2, std::uint64_t seed) {
    Rng theta_rng(derive_seed(seed, {tag("theta")}));
    CaseDesign cd = case_design(case_id, setting, sigma2, theta_rng);
    Rng data_rng(derive_seed(seed, {tag("data")}));
    SvcDataset d = sample_dataset(cd.model, cd.n, data_rng);
    return {std::move(d), std::move(cd.model)};
}

}  // namespace svcgfl

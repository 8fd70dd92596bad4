#pragma once

// Generalized fused lasso for the SVC model:
//
//   minimize  -sum_i log f(y_i | x_i, xi)
//             + n sum_j lambda1_j sum_m |theta_{m,j}|
//             + n sum_j lambda2_j sum_{(m,m') in E} |theta_{m,j} - theta_{m',j}|
//
// solved by ADMM on the stacked difference operator D (sparsity rows e_i and
// signed incidence rows e_a - e_b). Internally everything is divided by n, so
// the smooth part is 0.5 xi' P xi - q' xi with P = X'X / (n sigma2).
//
// Zero and fusion structure is read from the thresholded split variable
// z = D xi, which is exactly zero on collapsed rows. Once ADMM has converged
// the estimate is polished by solving the optimality system on that structure
// exactly (the same estimator, to machine precision).

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "svcgfl/errors.hpp"
#include "svcgfl/graph.hpp"
#include "svcgfl/model.hpp"

namespace svcgfl {

struct PenaltyWeights {
    std::vector<double> lambda1;  ///< per-variable sparsity weights
    std::vector<double> lambda2;  ///< per-variable fusion weights
    int model_class = 2;          ///< 1: all entries tied, 2: free per variable

    static PenaltyWeights tied(int p_tilde, double l1, double l2) {
        return {std::vector<double>(static_cast<std::size_t>(p_tilde), l1),
                std::vector<double>(static_cast<std::size_t>(p_tilde), l2), 1};
    }
    static PenaltyWeights free(std::vector<double> l1, std::vector<double> l2) { return {std::move(l1), std::move(l2), 2}; }

    int p_tilde() const { return static_cast<int>(lambda2.size()); }

    void validate(int p_tilde) const {
        if (static_cast<int>(lambda1.size()) != p_tilde || static_cast<int>(lambda2.size()) != p_tilde)
            throw UsageError("penalty weights must have one entry per variable");
        for (std::size_t j = 0; j < lambda1.size(); ++j) {
            if (!(lambda1[j] >= 0.0) || !(lambda2[j] >= 0.0) || !std::isfinite(lambda1[j]) || !std::isfinite(lambda2[j]))
                throw UsageError("penalty weights must be finite and nonnegative");
        }
        if (model_class == 1) {
            for (std::size_t j = 1; j < lambda1.size(); ++j)
                if (lambda1[j] != lambda1[0] || lambda2[j] != lambda2[0])
                    throw UsageError("model class 1 requires tied penalty weights");
        } else if (model_class != 2) {
            throw UsageError("model class must be 1 or 2");
        }
    }

    friend bool operator==(const PenaltyWeights&, const PenaltyWeights&) = default;
};

struct SolverControls {
    double rho = 1.0;
    bool residual_balancing = true;
    double abs_tol = 1e-8;
    double rel_tol = 1e-6;
    int max_iter = 50000;
    bool polish = true;
    double kkt_tol = 1e-6;
};

/// Data-dependent, penalty-independent part of a problem; shared across grids.
struct FitData {
    DesignMoments moments;
    CoefficientGraph graph;
    double sigma2 = 1.0;
    int sparsity_exempt_variable = -1;  ///< intercept column, never shrunk to zero

    std::size_t n() const { return moments.n; }
    int p() const { return graph.p(); }
};

inline std::shared_ptr<const FitData> make_fit_data(const SvcDataset& d) {
    validate(d);
    auto fd = std::make_shared<FitData>();
    fd->moments = design_moments(d);
    fd->graph = build_coefficient_graph(d.graph, d.p_tilde());
    fd->sigma2 = d.resolved_sigma2();
    fd->sparsity_exempt_variable = d.intercept ? d.p_tilde() - 1 : -1;
    return fd;
}

struct GflProblem {
    std::shared_ptr<const FitData> data;
    PenaltyWeights weights;
    SolverControls controls;
};

struct GflSolution {
    Vec xi;
    std::vector<bool> zero_mask;
    Partition fusion_partition;  ///< blocks over nonzero coefficients
    std::size_t j3_count = 0;
    double kkt_residual = 0.0;
    double objective = 0.0;
    int iterations = 0;
    bool converged = false;
    bool polished = false;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    PenaltyWeights weights;
};

/// Thrown when ADMM does not converge; carries the last iterate.
class SolveFailure : public NumericalError {
public:
    SolveFailure(const std::string& what, GflSolution last) : NumericalError(what), last_(std::move(last)) {}
    const GflSolution& last_iterate() const { return last_; }

private:
    GflSolution last_;
};

/// One row of the stacked difference operator.
struct PenaltyRow {
    enum class Kind { sparsity, fusion } kind;
    int a = 0;       ///< coefficient index (sparsity) or larger endpoint (fusion)
    int b = -1;      ///< smaller endpoint (fusion only)
    double weight;   ///< lambda (the n-scaled penalty divided by n)
    int edge = -1;   ///< index into the coefficient graph edge list (fusion only)

    double apply(const Vec& x) const { return kind == Kind::sparsity ? x[a] : x[a] - x[b]; }
};

inline std::vector<PenaltyRow> penalty_rows(const FitData& fd, const PenaltyWeights& w) {
    const auto& g = fd.graph;
    std::vector<PenaltyRow> rows;
    for (int i = 0; i < g.p(); ++i) {
        const int j = g.variable_of(i);
        if (j == fd.sparsity_exempt_variable) continue;
        if (w.lambda1[j] > 0.0) rows.push_back({PenaltyRow::Kind::sparsity, i, -1, w.lambda1[j], -1});
    }
    for (std::size_t e = 0; e < g.edges().size(); ++e) {
        const auto& ed = g.edges()[e];
        const double l2 = w.lambda2[g.variable_of(ed.hi)];
        if (l2 > 0.0) rows.push_back({PenaltyRow::Kind::fusion, ed.hi, ed.lo, l2, static_cast<int>(e)});
    }
    return rows;
}

namespace detail {

inline Eigen::SparseMatrix<double> difference_operator(const std::vector<PenaltyRow>& rows, int p) {
    std::vector<Eigen::Triplet<double>> t;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const int r = static_cast<int>(k);
        t.emplace_back(r, rows[k].a, 1.0);
        if (rows[k].kind == PenaltyRow::Kind::fusion) t.emplace_back(r, rows[k].b, -1.0);
    }
    Eigen::SparseMatrix<double> d(static_cast<Eigen::Index>(rows.size()), p);
    d.setFromTriplets(t.begin(), t.end());
    return d;
}

inline double soft_threshold(double v, double t) {
    if (v > t) return v - t;
    if (v < -t) return v + t;
    return 0.0;
}

inline double sign(double v) { return (v > 0.0) - (v < 0.0); }

}  // namespace detail

/// Scaled smooth part: P = X'X / (n sigma2), q = X'y / (n sigma2).
struct ScaledQuadratic {
    Mat P;
    Vec q;
};

inline ScaledQuadratic scaled_quadratic(const FitData& fd) {
    const double s = 1.0 / (static_cast<double>(fd.n()) * fd.sigma2);
    return {fd.moments.xtx * s, fd.moments.xty * s};
}

/// Full (unscaled) objective: -loglik + n * penalty.
inline double gfl_objective(const FitData& fd, const PenaltyWeights& w, const Vec& xi) {
    const auto& m = fd.moments;
    const double n = static_cast<double>(fd.n());
    const double rss = m.yty - 2.0 * xi.dot(m.xty) + xi.dot(m.xtx * xi);
    double pen = 0.0;
    for (const auto& r : penalty_rows(fd, w)) pen += r.weight * std::abs(r.apply(xi));
    return 0.5 * n * std::log(2.0 * std::numbers::pi * fd.sigma2) + 0.5 * rss / fd.sigma2 + n * pen;
}

struct KktReport {
    double max_violation = 0.0;
    std::vector<double> slack_a;  ///< per coefficient; NaN where no sparsity row
    std::vector<double> slack_b;  ///< per coefficient-graph edge; NaN where no fusion row
    bool valid = false;
};

namespace detail {

/// Structure flags per penalty row: true if the row is collapsed (free
/// subgradient), false if its sign is fixed by the estimate.
inline std::vector<bool> collapsed_rows(const std::vector<PenaltyRow>& rows, const GflSolution& s) {
    std::vector<int> block_of(s.xi.size(), -1);
    for (std::size_t b = 0; b < s.fusion_partition.blocks.size(); ++b)
        for (int v : s.fusion_partition.blocks[b]) block_of[v] = static_cast<int>(b);
    std::vector<bool> out(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto& r = rows[k];
        if (r.kind == PenaltyRow::Kind::sparsity) {
            out[k] = s.zero_mask[r.a];
        } else {
            const bool za = s.zero_mask[r.a], zb = s.zero_mask[r.b];
            out[k] = (za && zb) || (!za && !zb && block_of[r.a] == block_of[r.b]);
        }
    }
    return out;
}

}  // namespace detail

/// Builds subgradient certificates a_j, b_{j,k} in [-1, 1] for the collapsed
/// rows and reports the stationarity violation of the n-scaled problem,
/// i.e. the sample score at xi divided by n minus the penalty subgradient.
inline KktReport verify_kkt(const GflProblem& problem, const GflSolution& sol) {
    const FitData& fd = *problem.data;
    const auto rows = penalty_rows(fd, problem.weights);
    const auto sq = scaled_quadratic(fd);
    const int p = fd.p();
    const auto collapsed = detail::collapsed_rows(rows, sol);

    Vec r0 = sq.P * sol.xi - sq.q;
    std::vector<std::size_t> free_rows;
    std::vector<double> s(rows.size(), 0.0);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (collapsed[k]) {
            free_rows.push_back(k);
            continue;
        }
        s[k] = detail::sign(rows[k].apply(sol.xi));
        r0[rows[k].a] += rows[k].weight * s[k];
        if (rows[k].kind == PenaltyRow::Kind::fusion) r0[rows[k].b] -= rows[k].weight * s[k];
    }

    if (!free_rows.empty()) {
        // Box-constrained least squares: min ||r0 + A s||, s in [-1,1]^k, where
        // column k of A is weight_k * d_k. Start from the clipped minimum-norm
        // least-squares solution and finish with exact coordinate descent.
        const auto kf = static_cast<Eigen::Index>(free_rows.size());
        Mat A = Mat::Zero(p, kf);
        for (Eigen::Index c = 0; c < kf; ++c) {
            const auto& r = rows[free_rows[c]];
            A(r.a, c) = r.weight;
            if (r.kind == PenaltyRow::Kind::fusion) A(r.b, c) = -r.weight;
        }
        Vec sv = A.completeOrthogonalDecomposition().solve(-r0);
        sv = sv.cwiseMax(-1.0).cwiseMin(1.0);
        Vec res = r0 + A * sv;
        const Vec colsq = A.colwise().squaredNorm().transpose();
        for (int sweep = 0; sweep < 20000; ++sweep) {
            double change = 0.0;
            for (Eigen::Index c = 0; c < kf; ++c) {
                if (colsq[c] == 0.0) continue;
                const double old = sv[c];
                double nv = old - A.col(c).dot(res) / colsq[c];
                nv = std::clamp(nv, -1.0, 1.0);
                if (nv != old) {
                    res.noalias() += A.col(c) * (nv - old);
                    sv[c] = nv;
                    change = std::max(change, std::abs(nv - old));
                }
            }
            if (change < 1e-15) break;
        }
        for (Eigen::Index c = 0; c < kf; ++c) s[free_rows[c]] = sv[c];
        r0 = res;
    }

    KktReport rep;
    rep.max_violation = r0.size() ? r0.cwiseAbs().maxCoeff() : 0.0;
    rep.slack_a.assign(static_cast<std::size_t>(p), std::numeric_limits<double>::quiet_NaN());
    rep.slack_b.assign(fd.graph.edges().size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k].kind == PenaltyRow::Kind::sparsity)
            rep.slack_a[rows[k].a] = s[k];
        else
            rep.slack_b[rows[k].edge] = s[k];
    }
    rep.valid = rep.max_violation <= problem.controls.kkt_tol;
    return rep;
}

namespace detail {

inline void extract_structure(const FitData& fd, const std::vector<PenaltyRow>& rows, const Vec& z, GflSolution& s) {
    const int p = fd.p();
    s.zero_mask.assign(static_cast<std::size_t>(p), false);
    std::vector<Edge> fused;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (z[static_cast<Eigen::Index>(k)] != 0.0) continue;
        if (rows[k].kind == PenaltyRow::Kind::sparsity)
            s.zero_mask[rows[k].a] = true;
        else
            fused.push_back({rows[k].a, rows[k].b});
    }
    std::vector<int> nonzero;
    for (int i = 0; i < p; ++i)
        if (!s.zero_mask[i]) nonzero.push_back(i);
    s.fusion_partition = connected_components(nonzero, fused);
    for (std::size_t b = 0; b < s.fusion_partition.size(); ++b) {
        double acc = 0.0;
        for (int v : s.fusion_partition.blocks[b]) acc += s.xi[v];
        s.fusion_partition.values[b] = acc / static_cast<double>(s.fusion_partition.blocks[b].size());
    }
    s.j3_count = s.fusion_partition.size();
}

/// Exact minimiser on the face defined by the detected structure. Returns
/// nullopt if the reduced system is singular or signs are inconsistent.
inline std::optional<Vec> polish(const FitData& fd, const ScaledQuadratic& sq, const std::vector<PenaltyRow>& rows,
                                 const GflSolution& s) {
    const int p = fd.p();
    const auto nb = static_cast<Eigen::Index>(s.fusion_partition.size());
    if (nb == 0) return Vec::Zero(p);
    std::vector<int> block_of(static_cast<std::size_t>(p), -1);
    for (Eigen::Index b = 0; b < nb; ++b)
        for (int v : s.fusion_partition.blocks[b]) block_of[v] = static_cast<int>(b);

    // Reduced gradient of the fixed-sign penalty terms.
    Vec lin = Vec::Zero(nb);
    std::vector<std::pair<std::size_t, double>> fixed;
    const auto collapsed = collapsed_rows(rows, s);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (collapsed[k]) continue;
        const double sg = sign(rows[k].apply(s.xi));
        if (sg == 0.0) return std::nullopt;
        fixed.emplace_back(k, sg);
        const int ba = block_of[rows[k].a];
        if (ba >= 0) lin[ba] += rows[k].weight * sg;
        if (rows[k].kind == PenaltyRow::Kind::fusion) {
            const int bb = block_of[rows[k].b];
            if (bb >= 0) lin[bb] -= rows[k].weight * sg;
        }
    }
    Mat B = Mat::Zero(p, nb);
    for (int i = 0; i < p; ++i)
        if (block_of[i] >= 0) B(i, block_of[i]) = 1.0;
    const Mat red = B.transpose() * sq.P * B;
    Eigen::LLT<Mat> llt(red);
    if (llt.info() != Eigen::Success) return std::nullopt;
    const Vec beta = llt.solve(B.transpose() * sq.q - lin);
    Vec xi = B * beta;
    if (!xi.allFinite()) return std::nullopt;
    for (auto [k, sg] : fixed)
        if (sign(rows[k].apply(xi)) != sg) return std::nullopt;
    return xi;
}

}  // namespace detail

inline GflSolution solve(const GflProblem& problem, const std::optional<Vec>& warm_start = std::nullopt) {
    if (!problem.data) throw UsageError("problem has no data");
    const FitData& fd = *problem.data;
    const int p = fd.p();
    problem.weights.validate(fd.graph.p_tilde());
    if (!fd.moments.xtx.allFinite() || !fd.moments.xty.allFinite() || !std::isfinite(fd.moments.yty))
        throw DataError("non-finite values in data");
    const auto& c = problem.controls;

    const auto sq = scaled_quadratic(fd);
    const auto rows = penalty_rows(fd, problem.weights);
    const auto m = static_cast<Eigen::Index>(rows.size());

    GflSolution sol;
    sol.weights = problem.weights;

    if (m == 0) {
        Eigen::LLT<Mat> llt(sq.P);
        if (llt.info() != Eigen::Success)
            throw NumericalError("unpenalized problem is singular: some coefficients are not identified");
        sol.xi = llt.solve(sq.q);
        sol.converged = true;
        detail::extract_structure(fd, rows, Vec(), sol);
        sol.objective = gfl_objective(fd, problem.weights, sol.xi);
        sol.kkt_residual = verify_kkt(problem, sol).max_violation;
        return sol;
    }

    const auto D = detail::difference_operator(rows, p);
    const Eigen::SparseMatrix<double> Dt = D.transpose();
    const Mat DtD = Mat(Dt * D);
    Vec thresh(m);
    for (Eigen::Index k = 0; k < m; ++k) thresh[k] = rows[k].weight;

    double rho = c.rho;
    Eigen::LLT<Mat> llt;
    auto factor = [&] {
        llt.compute(sq.P + rho * DtD);
        if (llt.info() != Eigen::Success)
            throw NumericalError("ADMM system is singular: some coefficients are not identified");
    };
    factor();

    Vec xi = warm_start && warm_start->size() == p ? *warm_start : llt.solve(sq.q);
    Vec z = D * xi;
    Vec u = Vec::Zero(m);
    Vec z_old(m), dxi(m);
    double r_norm = 0.0, s_norm = 0.0;
    int it = 0;
    bool ok = false;
    for (it = 1; it <= c.max_iter; ++it) {
        xi = llt.solve(sq.q + rho * (Dt * (z - u)));
        dxi = D * xi;
        z_old = z;
        for (Eigen::Index k = 0; k < m; ++k) z[k] = detail::soft_threshold(dxi[k] + u[k], thresh[k] / rho);
        u += dxi - z;

        r_norm = (dxi - z).norm();
        s_norm = rho * (Dt * (z - z_old)).norm();
        if (!std::isfinite(r_norm) || !std::isfinite(s_norm) || !xi.allFinite())
            throw NumericalError("ADMM produced non-finite iterates");
        const double eps_pri = std::sqrt(static_cast<double>(m)) * c.abs_tol + c.rel_tol * std::max(dxi.norm(), z.norm());
        const double eps_dual = std::sqrt(static_cast<double>(p)) * c.abs_tol + c.rel_tol * rho * (Dt * u).norm();
        if (r_norm <= eps_pri && s_norm <= eps_dual) {
            ok = true;
            break;
        }
        if (c.residual_balancing && it % 10 == 0) {
            if (r_norm > 10.0 * s_norm) {
                rho *= 2.0;
                u /= 2.0;
                factor();
            } else if (s_norm > 10.0 * r_norm) {
                rho /= 2.0;
                u *= 2.0;
                factor();
            }
        }
    }
    sol.xi = xi;
    sol.iterations = std::min(it, c.max_iter);
    sol.primal_residual = r_norm;
    sol.dual_residual = s_norm;
    detail::extract_structure(fd, rows, z, sol);

    if (c.polish) {
        if (auto pol = detail::polish(fd, sq, rows, sol)) {
            const double before = gfl_objective(fd, problem.weights, sol.xi);
            const double after = gfl_objective(fd, problem.weights, *pol);
            if (after <= before + 1e-12 * std::max(1.0, std::abs(before))) {
                sol.xi = *pol;
                sol.polished = true;
                for (std::size_t b = 0; b < sol.fusion_partition.size(); ++b)
                    sol.fusion_partition.values[b] = sol.xi[sol.fusion_partition.representative(b)];
            }
        }
    }
    sol.objective = gfl_objective(fd, problem.weights, sol.xi);
    sol.kkt_residual = verify_kkt(problem, sol).max_violation;
    sol.converged = ok || sol.kkt_residual <= c.kkt_tol;
    if (!sol.converged)
        throw SolveFailure("ADMM did not converge in " + std::to_string(c.max_iter) +
                               " iterations (primal " + std::to_string(r_norm) + ", dual " + std::to_string(s_norm) + ")",
                           sol);
    return sol;
}

struct PathPoint {
    std::optional<GflSolution> solution;
    std::string error;
};

/// Solves along a grid, warm-starting each point from the previous success.
/// Failures are recorded per point and do not abort the path.
inline std::vector<PathPoint> solve_path(const GflProblem& problem, const std::vector<PenaltyWeights>& grid) {
    if (grid.empty()) throw UsageError("lambda grid is empty");
    std::vector<PathPoint> out;
    out.reserve(grid.size());
    std::optional<Vec> warm;
    for (const auto& w : grid) {
        GflProblem pr = problem;
        pr.weights = w;
        PathPoint pt;
        try {
            pt.solution = solve(pr, warm);
            warm = pt.solution->xi;
        } catch (const Error& e) {
            pt.error = e.what();
        }
        out.push_back(std::move(pt));
    }
    return out;
}

}  // namespace svcgfl

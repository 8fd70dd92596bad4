#pragma once

// WAIC, PIIC1, PIIC2 and the empirical predictive risk.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "svcgfl/errors.hpp"
#include "svcgfl/model.hpp"
#include "svcgfl/posterior.hpp"
#include "svcgfl/solver.hpp"

namespace svcgfl {

struct CriterionReport {
    double neg_log_pred_sum = 0.0;
    double waic_penalty = 0.0;
    std::size_t j3_count = 0;
    std::optional<double> trace_term;
    double waic = 0.0;
    double piic1 = 0.0;
    std::optional<double> piic2;
    PenaltyWeights lambda;

    struct Diagnostics {
        bool plug_in_predictive = false;
        std::size_t draws = 0;
        double min_ess = 0.0;
        std::size_t degenerate_resamples = 0;
        std::vector<std::string> notes;
    } diagnostics;
};

struct PointwisePredictive {
    Vec log_pred;  ///< log f(y_i | x_i, y, X; lambda)
    Vec var_logf;  ///< posterior variance of log f(y_i | x_i, xi)
};

inline PointwisePredictive pointwise_predictive(const PosteriorDraws& draws, const SvcDataset& data) {
    PointwisePredictive out;
    const auto n = static_cast<Eigen::Index>(data.n());
    out.log_pred.resize(n);
    out.var_logf.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vec l = draw_log_densities(draws, data.observations[i]);
        out.log_pred[i] = log_mean_exp(l);
        out.var_logf[i] = moments_of(l).var_logf;
    }
    return out;
}

/// -sum_i log predictive + sum_i Var_post[log f_i].
inline double waic(const PosteriorDraws& draws, const SvcDataset& data) {
    const auto pw = pointwise_predictive(draws, data);
    return -pw.log_pred.sum() + pw.var_logf.sum();
}

/// -sum_i log predictive + |J3|.
inline double piic1(const PosteriorDraws& draws, const SvcDataset& data, const GflSolution& sol) {
    return -pointwise_predictive(draws, data).log_pred.sum() + static_cast<double>(sol.j3_count);
}

/// WAIC and PIIC1 share the predictive; build both in one pass.
inline CriterionReport make_report(const PosteriorDraws& draws, const SvcDataset& data, const GflSolution& sol) {
    const auto pw = pointwise_predictive(draws, data);
    CriterionReport r;
    r.neg_log_pred_sum = -pw.log_pred.sum();
    r.waic_penalty = pw.var_logf.sum();
    r.j3_count = sol.j3_count;
    r.waic = r.neg_log_pred_sum + r.waic_penalty;
    r.piic1 = r.neg_log_pred_sum + static_cast<double>(r.j3_count);
    r.lambda = sol.weights;
    r.diagnostics.plug_in_predictive = draws.plug_in;
    r.diagnostics.draws = static_cast<std::size_t>(draws.size());
    r.diagnostics.min_ess = draws.ess.size() ? draws.ess.minCoeff() : static_cast<double>(draws.size());
    r.diagnostics.degenerate_resamples = draws.degenerate_resamples;
    return r;
}

// ---------------------------------------------------------------------------
// Hyperparameter coordinates and curvature.

/// A free hyperparameter: the set of lambda entries it controls (tied).
struct HyperCoordinate {
    std::vector<int> lambda1_vars;
    std::vector<int> lambda2_vars;

    double get(const PenaltyWeights& w) const {
        return lambda2_vars.empty() ? w.lambda1[lambda1_vars.front()] : w.lambda2[lambda2_vars.front()];
    }
    void set(PenaltyWeights& w, double v) const {
        for (int j : lambda1_vars) w.lambda1[j] = v;
        for (int j : lambda2_vars) w.lambda2[j] = v;
    }
};

/// Free coordinates of a model class: Model 1 ties everything, Model 2 has one
/// coordinate per variable. Sparsity coordinates are included only if enabled;
/// the exempt (intercept) variable carries no sparsity row, so Model 2 gives
/// it no sparsity coordinate.
inline std::vector<HyperCoordinate> model_coordinates(int model_class, int p_tilde, bool lambda1_enabled,
                                                      int sparsity_exempt_variable = -1) {
    std::vector<HyperCoordinate> out;
    std::vector<int> all, all_pen;
    for (int j = 0; j < p_tilde; ++j) {
        all.push_back(j);
        if (j != sparsity_exempt_variable) all_pen.push_back(j);
    }
    if (model_class == 1) {
        out.push_back({{}, all});
        if (lambda1_enabled && !all_pen.empty()) out.push_back({all, {}});
    } else {
        for (int j = 0; j < p_tilde; ++j) {
            out.push_back({{}, {j}});
            if (lambda1_enabled && j != sparsity_exempt_variable) out.push_back({{j}, {}});
        }
    }
    return out;
}

enum class StencilScale { log, linear };

/// Per-observation first derivatives (n x q) and averaged second derivatives
/// (q x q), both with respect to lambda itself, by central differences.
struct StencilDerivatives {
    Mat grad;
    Mat mean_hess;
};

using PointwiseFn = std::function<Vec(const Vec& lambda)>;

inline StencilDerivatives stencil_derivatives(const PointwiseFn& fn, const Vec& lambda0, double h,
                                              StencilScale scale = StencilScale::log) {
    const auto q = lambda0.size();
    for (Eigen::Index a = 0; a < q; ++a)
        if (!(lambda0[a] > 0.0)) throw UsageError("curvature needs strictly positive hyperparameters");
    // Move coordinate a by k steps in the chosen parameterisation.
    auto at = [&](std::initializer_list<std::pair<Eigen::Index, int>> moves) {
        Vec lam = lambda0;
        for (auto [a, k] : moves)
            lam[a] = scale == StencilScale::log ? lambda0[a] * std::exp(k * h) : lambda0[a] * (1.0 + k * h);
        return fn(lam);
    };
    const Vec f0 = fn(lambda0);
    const auto n = f0.size();
    Mat gp(n, q);  // derivatives in the stencil parameter
    std::vector<Vec> plus(q), minus(q);
    Mat hp = Mat::Zero(q, q);
    for (Eigen::Index a = 0; a < q; ++a) {
        plus[a] = at({{a, 1}});
        minus[a] = at({{a, -1}});
        gp.col(a) = (plus[a] - minus[a]) / (2.0 * h);
        hp(a, a) = (plus[a] - 2.0 * f0 + minus[a]).mean() / (h * h);
    }
    for (Eigen::Index a = 0; a < q; ++a)
        for (Eigen::Index b = a + 1; b < q; ++b) {
            const Vec v = at({{a, 1}, {b, 1}}) - at({{a, 1}, {b, -1}}) - at({{a, -1}, {b, 1}}) + at({{a, -1}, {b, -1}});
            hp(a, b) = hp(b, a) = v.mean() / (4.0 * h * h);
        }

    // Chain rule back to lambda: eta = log lambda or lambda = lambda0 (1 + t).
    StencilDerivatives out;
    out.grad.resize(n, q);
    out.mean_hess.resize(q, q);
    const Vec gmean = gp.colwise().mean().transpose();
    for (Eigen::Index a = 0; a < q; ++a) {
        const double da = lambda0[a];
        out.grad.col(a) = gp.col(a) / da;
        for (Eigen::Index b = 0; b < q; ++b) {
            const double db = lambda0[b];
            double v = hp(a, b);
            if (scale == StencilScale::log && a == b) v -= gmean[a];
            out.mean_hess(a, b) = v / (da * db);
        }
    }
    return out;
}

struct HyperCurvature {
    Mat j1_hat;
    Mat j2_hat;
    double trace_term = 0.0;
    double fd_step = 1e-3;
    double ridge_added = 0.0;
    bool boundary_warning = false;
};

/// tr((J1 + eps I)^{-1} J2); eps = 1e-8 ||J1|| only when J1 is near-singular.
inline std::pair<double, double> curvature_trace(const Mat& j1, const Mat& j2) {
    const auto q = j1.rows();
    Eigen::SelfAdjointEigenSolver<Mat> es(j1);
    const Vec ev = es.eigenvalues().cwiseAbs();
    const double norm = j1.norm();
    double eps = 0.0;
    if (q > 0 && (ev.maxCoeff() == 0.0 || ev.minCoeff() <= 1e-12 * ev.maxCoeff())) eps = norm > 0.0 ? 1e-8 * norm : 1e-8;
    const Mat a = j1 + eps * Mat::Identity(q, q);
    const double tr = a.fullPivLu().solve(j2).trace();
    return {tr, eps};
}

inline HyperCurvature curvature_from_derivatives(const StencilDerivatives& d, double h) {
    HyperCurvature c;
    const double n = static_cast<double>(d.grad.rows());
    c.fd_step = h;
    c.j2_hat = d.grad.transpose() * d.grad / n;
    const Mat j1 = -d.mean_hess;
    c.j1_hat = 0.5 * (j1 + j1.transpose());
    std::tie(c.trace_term, c.ridge_added) = curvature_trace(c.j1_hat, c.j2_hat);
    return c;
}

/// Refit closure: per-observation log predictive at a given lambda.
using RefitFn = std::function<Vec(const PenaltyWeights&)>;

/// J1-hat, J2-hat and the PIIC2 trace at lambda_hat over the free coordinates.
inline HyperCurvature hyper_curvature(const PenaltyWeights& lambda_hat, const std::vector<HyperCoordinate>& coords,
                                      const RefitFn& refit, double h = 1e-3, bool on_grid_boundary = false) {
    Vec lam0(static_cast<Eigen::Index>(coords.size()));
    for (std::size_t a = 0; a < coords.size(); ++a) lam0[static_cast<Eigen::Index>(a)] = coords[a].get(lambda_hat);
    PointwiseFn fn = [&](const Vec& lam) {
        PenaltyWeights w = lambda_hat;
        for (std::size_t a = 0; a < coords.size(); ++a) coords[a].set(w, lam[static_cast<Eigen::Index>(a)]);
        return refit(w);
    };
    auto c = curvature_from_derivatives(stencil_derivatives(fn, lam0, h), h);
    c.boundary_warning = on_grid_boundary;
    return c;
}

/// Plug-in refit: warm-started solve, then log f(y_i | x_i, xi_hat(lambda)).
inline RefitFn plugin_refit(std::shared_ptr<const FitData> fd, const SvcDataset& data, SolverControls controls,
                            std::optional<Vec> warm = std::nullopt) {
    return [fd = std::move(fd), &data, controls, warm](const PenaltyWeights& w) {
        GflProblem pr{fd, w, controls};
        const auto sol = solve(pr, warm);
        return loglik_pointwise(data, sol.xi);
    };
}

inline double piic2(const CriterionReport& report, const HyperCurvature& curvature) {
    return report.piic1 + curvature.trace_term;
}

inline void attach_curvature(CriterionReport& report, const HyperCurvature& curvature) {
    report.trace_term = curvature.trace_term;
    report.piic2 = piic2(report, curvature);
    if (curvature.ridge_added > 0.0)
        report.diagnostics.notes.push_back("J1 near-singular; ridge " + std::to_string(curvature.ridge_added) + " added");
    if (curvature.boundary_warning) report.diagnostics.notes.push_back("selected lambda on grid boundary");
}

/// Average negative log predictive density over a test sample.
inline double empirical_risk(const PosteriorDraws& predictive, const SvcDataset& test) {
    if (test.n() == 0) throw UsageError("empty test set");
    double acc = 0.0;
    for (const auto& o : test.observations) acc -= log_predictive(predictive, o);
    return acc / static_cast<double>(test.n());
}

}  // namespace svcgfl

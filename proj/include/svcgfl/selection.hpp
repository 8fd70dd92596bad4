#pragma once

// Hyperparameter grids, the cached criterion evaluator, and the Model 1 /
// Model 2 searches.

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "svcgfl/criteria.hpp"
#include "svcgfl/errors.hpp"
#include "svcgfl/graph.hpp"
#include "svcgfl/model.hpp"
#include "svcgfl/parallel.hpp"
#include "svcgfl/posterior.hpp"
#include "svcgfl/random.hpp"
#include "svcgfl/solver.hpp"

namespace svcgfl {

enum class Criterion { waic, piic1, piic2 };

inline std::string to_string(Criterion c) {
    switch (c) {
        case Criterion::waic: return "waic";
        case Criterion::piic1: return "piic1";
        case Criterion::piic2: return "piic2";
    }
    return "?";
}

inline Criterion parse_criterion(std::string s) {
    for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (s == "waic") return Criterion::waic;
    if (s == "piic1") return Criterion::piic1;
    if (s == "piic2") return Criterion::piic2;
    throw UsageError("unknown criterion '" + s + "' (expected waic, piic1 or piic2)");
}

/// Value a search minimizes. PIIC2 falls back to PIIC1 until a curvature is attached.
inline double criterion_value(const CriterionReport& r, Criterion c) {
    switch (c) {
        case Criterion::waic: return r.waic;
        case Criterion::piic1: return r.piic1;
        case Criterion::piic2: return r.piic2.value_or(r.piic1);
    }
    return r.piic1;
}

struct SearchSpec {
    int model_class = 1;
    int grid_size = 20;
    bool lambda1_enabled = false;
    double low_fraction = 1e-4;
    double high_fraction = 1.0;
    int max_cycles = 10;
    Criterion criterion = Criterion::piic1;

    void validate() const {
        if (model_class != 1 && model_class != 2) throw UsageError("model class must be 1 or 2");
        if (grid_size < 1) throw UsageError("grid size must be at least 1");
        if (!(low_fraction > 0.0) || !(high_fraction >= low_fraction)) throw UsageError("grid bounds must be positive and ordered");
        if (max_cycles < 1) throw UsageError("max_cycles must be at least 1");
    }
};

// ---------------------------------------------------------------------------
// lambda_max

enum class PenaltyKind { sparsity, fusion };

namespace detail {

inline std::vector<int> indices_where(const CoefficientGraph& g, bool of_variable, int j) {
    std::vector<int> out;
    for (int i = 0; i < g.p(); ++i)
        if ((g.variable_of(i) == j) == of_variable) out.push_back(i);
    return out;
}

inline Vec take(const Vec& a, const std::vector<int>& r) {
    Vec out(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) out[i] = a[r[i]];
    return out;
}

/// min ||u||_inf subject to D^T u = g over the region graph edges.
inline double min_flow_bound(const RegionGraph& rg, const Vec& g) {
    const int m = rg.m_regions();
    const auto& edges = rg.edges();
    if (edges.empty()) return 0.0;
    if (m <= 16) {
        // Gale: feasible at level t iff |g(S)| <= t cut(S) for every S.
        double best = 0.0;
        for (unsigned s = 1; s + 1 < (1u << m); ++s) {
            double gs = 0.0;
            for (int v = 0; v < m; ++v)
                if (s >> v & 1u) gs += g[v];
            int cut = 0;
            for (const auto& e : edges) cut += ((s >> e.hi) & 1u) != ((s >> e.lo) & 1u);
            if (cut > 0) best = std::max(best, std::abs(gs) / cut);
        }
        return best;
    }
    // Least-squares flow: exact on forests, an upper bound otherwise.
    Mat dt = Mat::Zero(m, static_cast<Eigen::Index>(edges.size()));
    for (std::size_t k = 0; k < edges.size(); ++k) {
        dt(edges[k].hi, static_cast<Eigen::Index>(k)) = 1.0;
        dt(edges[k].lo, static_cast<Eigen::Index>(k)) = -1.0;
    }
    const Vec u = dt.completeOrthogonalDecomposition().solve(g);
    return u.lpNorm<Eigen::Infinity>();
}

}  // namespace detail

/// Smallest lambda_j at which the fully collapsed fit satisfies variable j's
/// optimality conditions. "Collapsed" means every penalized variable is zero
/// (sparsity) or every variable has one value per connected component of the
/// region graph (fusion); the thresholds are therefore jointly exact: with
/// lambda_j >= lambda_max_j for all j the collapsed fit is the solution.
inline double lambda_max(const FitData& fd, int j, PenaltyKind kind) {
    const auto& g = fd.graph;
    const int pt = g.p_tilde();
    if (j < 0 || j >= pt) throw UsageError("variable index out of range");
    const double n = static_cast<double>(fd.n());
    const auto J = detail::indices_where(g, true, j);
    const Mat& xtx = fd.moments.xtx;
    bool degenerate = true;
    for (int i : J) degenerate = degenerate && xtx(i, i) == 0.0;
    if (degenerate) return 1e-8;

    // Region edges carry every variable, so one region partition serves all.
    std::vector<Edge> re;
    for (const auto& ce : g.edges())
        if (g.variable_of(ce.hi) == 0) re.push_back(make_edge(g.region_of(ce.hi), g.region_of(ce.lo)));
    std::vector<int> regions(static_cast<std::size_t>(g.m_regions()));
    std::iota(regions.begin(), regions.end(), 0);
    const auto parts = connected_components(regions, re);

    // Basis of the collapsed face: one column per (component, variable) for
    // fusion; the exempt variable's own coordinates for sparsity.
    std::vector<Vec> cols;
    for (int k = 0; k < pt; ++k) {
        if (kind == PenaltyKind::fusion) {
            for (const auto& blk : parts.blocks) {
                Vec c = Vec::Zero(g.p());
                for (int r : blk) c[g.index(r, k)] = 1.0;
                cols.push_back(std::move(c));
            }
        } else if (k == fd.sparsity_exempt_variable) {
            for (int r = 0; r < g.m_regions(); ++r) {
                Vec c = Vec::Zero(g.p());
                c[g.index(r, k)] = 1.0;
                cols.push_back(std::move(c));
            }
        }
    }
    Vec xi = Vec::Zero(g.p());
    if (!cols.empty()) {
        Mat B(g.p(), static_cast<Eigen::Index>(cols.size()));
        for (std::size_t c = 0; c < cols.size(); ++c) B.col(static_cast<Eigen::Index>(c)) = cols[c];
        const Mat red = B.transpose() * xtx * B;
        xi = B * Vec(red.completeOrthogonalDecomposition().solve(B.transpose() * fd.moments.xty));
    }
    const Vec score_all = (fd.moments.xty - xtx * xi) / fd.sigma2;
    const Vec score = detail::take(score_all, J);

    if (kind == PenaltyKind::sparsity) return score.lpNorm<Eigen::Infinity>() / n;
    return detail::min_flow_bound(RegionGraph(g.m_regions(), re), score) / n;
}

inline double lambda_max(const SvcDataset& d, int j, PenaltyKind kind) { return lambda_max(*make_fit_data(d), j, kind); }

/// `size` log-spaced values from hi down to lo.
inline std::vector<double> log_grid(double lo, double hi, int size) {
    if (size < 1 || !(lo > 0.0) || !(hi >= lo)) throw UsageError("invalid grid bounds");
    if (size == 1) return {hi};
    std::vector<double> out(static_cast<std::size_t>(size));
    const double a = std::log(hi), b = std::log(lo);
    for (int k = 0; k < size; ++k) out[k] = std::exp(a + (b - a) * k / (size - 1));
    out.front() = hi;
    out.back() = lo;
    return out;
}

/// Shared grids, descending. Every coordinate of both models uses the same
/// grid for its kind, so tied candidates sit inside the Model 2 product grid.
struct GridSet {
    std::vector<double> lambda1;
    std::vector<double> lambda2;
    double lambda1_max = 0.0;
    double lambda2_max = 0.0;
};

inline GridSet make_grids(const FitData& fd, const SearchSpec& spec) {
    spec.validate();
    GridSet gs;
    for (int j = 0; j < fd.graph.p_tilde(); ++j) {
        gs.lambda2_max = std::max(gs.lambda2_max, lambda_max(fd, j, PenaltyKind::fusion));
        if (spec.lambda1_enabled && j != fd.sparsity_exempt_variable)
            gs.lambda1_max = std::max(gs.lambda1_max, lambda_max(fd, j, PenaltyKind::sparsity));
    }
    auto grid = [&](double top) {
        top = std::max(top, 1e-8);
        return log_grid(spec.low_fraction * top, spec.high_fraction * top, spec.grid_size);
    };
    gs.lambda2 = grid(gs.lambda2_max);
    if (spec.lambda1_enabled) gs.lambda1 = grid(gs.lambda1_max);
    return gs;
}

// ---------------------------------------------------------------------------
// Evaluator

struct Evaluation {
    GflSolution solution;
    PosteriorDraws draws;
    CriterionReport report;
};

struct EvaluatorOptions {
    SolverControls solver;
    PosteriorControls posterior;
    bool plug_in = false;      ///< point mass at xi_hat instead of MCMC
    bool intensified = true;
    /// Same posterior seed for every lambda, so criterion curves are smooth
    /// along the grid; otherwise the seed also hashes the lambda values.
    bool common_random_numbers = true;
};

/// Solves, samples and scores one lambda; results are cached by the lambda
/// values, and the posterior seed depends on nothing else, so equal lambdas
/// always give identical reports regardless of call order.
class CachedEvaluator {
public:
    CachedEvaluator(const SvcDataset& data, EvaluatorOptions opt)
        : data_(&data), fd_(make_fit_data(data)), opt_(std::move(opt)) {}

    std::shared_ptr<const FitData> fit_data() const { return fd_; }
    const SvcDataset& dataset() const { return *data_; }
    const EvaluatorOptions& options() const { return opt_; }

    std::shared_ptr<const Evaluation> evaluate(const PenaltyWeights& w) {
        const auto key = key_of(w);
        {
            std::lock_guard lk(mu_);
            if (auto it = cache_.find(key); it != cache_.end()) return it->second;
        }
        auto ev = std::make_shared<Evaluation>();
        ev->solution = solve(GflProblem{fd_, w, opt_.solver});
        if (opt_.plug_in) {
            ev->draws = plugin_draws(ev->solution.xi, fd_->sigma2);
        } else {
            PosteriorControls pc = opt_.posterior;
            pc.seed = seed_for(w);
            ev->draws = gibbs_sample(*fd_, IntensifiedPrior{w, opt_.intensified}, pc);
        }
        ev->report = make_report(ev->draws, *data_, ev->solution);
        std::lock_guard lk(mu_);
        return cache_.emplace(key, std::move(ev)).first->second;
    }

    /// Report for w, with its lambda field set to w (model class included).
    CriterionReport report(const PenaltyWeights& w) {
        CriterionReport r = evaluate(w)->report;
        r.lambda = w;
        return r;
    }

    std::uint64_t seed_for(const PenaltyWeights& w) const {
        if (opt_.common_random_numbers) return opt_.posterior.seed;
        std::uint64_t h = derive_seed(opt_.posterior.seed, {tag("lambda")});
        for (double v : w.lambda1) h = derive_seed(h, {double_bits(v)});
        for (double v : w.lambda2) h = derive_seed(h, {double_bits(v)});
        return h;
    }

    RefitFn plugin_refit_fn() const { return plugin_refit(fd_, *data_, opt_.solver); }

    std::size_t cache_size() const {
        std::lock_guard lk(mu_);
        return cache_.size();
    }

private:
    using Key = std::vector<std::uint64_t>;
    static Key key_of(const PenaltyWeights& w) {
        Key k;
        for (double v : w.lambda1) k.push_back(double_bits(v));
        for (double v : w.lambda2) k.push_back(double_bits(v));
        return k;
    }

    const SvcDataset* data_;
    std::shared_ptr<const FitData> fd_;
    EvaluatorOptions opt_;
    mutable std::mutex mu_;
    std::map<Key, std::shared_ptr<const Evaluation>> cache_;
};

// ---------------------------------------------------------------------------
// Searches

/// Scores one candidate; throws svcgfl::Error on failure.
using EvaluateFn = std::function<CriterionReport(const PenaltyWeights&)>;

struct TrajectoryEntry {
    int cycle = 0;
    int coordinate = 0;
    PenaltyWeights lambda;
    double value = 0.0;  ///< +inf when the candidate failed
};

struct SelectionResult {
    PenaltyWeights best_lambda;
    CriterionReport best_report;
    Criterion criterion = Criterion::piic1;
    std::vector<TrajectoryEntry> trajectory;
    std::vector<double> cycle_values;  ///< best value after each cycle
    int cycles_used = 0;
    bool converged = false;
    bool on_grid_boundary = false;
    std::vector<std::string> failures;
    std::vector<HyperCoordinate> coordinates;
    std::optional<HyperCurvature> curvature;

    double best_value() const { return criterion_value(best_report, criterion); }
};

namespace detail {

inline std::size_t grid_position(const std::vector<double>& grid, double v) {
    for (std::size_t k = 0; k < grid.size(); ++k)
        if (grid[k] == v) return k;
    return grid.size();
}

}  // namespace detail

/// Cyclic coordinate search over fixed grids. Each coordinate takes the grid
/// argmin with the others held fixed (ties toward the larger lambda); stops
/// when a full cycle leaves every coordinate unchanged.
inline SelectionResult coordinate_search(const std::vector<HyperCoordinate>& coords,
                                         const std::vector<std::vector<double>>& grids, PenaltyWeights start,
                                         const EvaluateFn& evaluate, Criterion criterion, int max_cycles,
                                         unsigned jobs = 1) {
    if (coords.empty() || coords.size() != grids.size()) throw UsageError("search needs one grid per coordinate");
    SelectionResult res;
    res.criterion = criterion;
    res.coordinates = coords;
    PenaltyWeights cur = std::move(start);
    for (std::size_t a = 0; a < coords.size(); ++a) {
        if (grids[a].empty()) throw UsageError("empty grid");
        if (detail::grid_position(grids[a], coords[a].get(cur)) == grids[a].size()) coords[a].set(cur, grids[a].front());
    }
    std::optional<CriterionReport> best;

    for (int cycle = 1; cycle <= max_cycles; ++cycle) {
        bool changed = false;
        for (std::size_t a = 0; a < coords.size(); ++a) {
            const auto& grid = grids[a];
            std::vector<PenaltyWeights> cand(grid.size(), cur);
            for (std::size_t k = 0; k < grid.size(); ++k) coords[a].set(cand[k], grid[k]);
            std::vector<std::optional<CriterionReport>> reps(grid.size());
            std::vector<std::string> errs(grid.size());
            parallel_for(grid.size(), jobs, [&](std::size_t k) {
                try {
                    reps[k] = evaluate(cand[k]);
                } catch (const Error& e) {
                    errs[k] = e.what();
                }
            });
            std::size_t arg = grid.size();
            double best_v = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < grid.size(); ++k) {
                const double v = reps[k] ? criterion_value(*reps[k], criterion) : std::numeric_limits<double>::infinity();
                res.trajectory.push_back({cycle, static_cast<int>(a), cand[k], v});
                if (!reps[k]) res.failures.push_back("lambda " + std::to_string(grid[k]) + ": " + errs[k]);
                // Grids are descending, so strict < keeps the larger lambda on ties.
                if (reps[k] && v < best_v) {
                    best_v = v;
                    arg = k;
                }
            }
            if (arg == grid.size()) {
                std::string msg = "every grid point failed:";
                for (std::size_t k = 0; k < grid.size(); ++k) msg += "\n  " + errs[k];
                throw NumericalError(msg);
            }
            if (grid[arg] != coords[a].get(cur)) changed = true;
            cur = cand[arg];
            best = reps[arg];
        }
        res.cycle_values.push_back(criterion_value(*best, criterion));
        res.cycles_used = cycle;
        if (!changed) {
            res.converged = true;
            break;
        }
    }
    res.best_lambda = cur;
    res.best_report = *best;
    res.best_report.lambda = cur;
    for (std::size_t a = 0; a < coords.size(); ++a) {
        const auto pos = detail::grid_position(grids[a], coords[a].get(cur));
        if (grids[a].size() > 1 && (pos == 0 || pos + 1 == grids[a].size())) res.on_grid_boundary = true;
    }
    return res;
}

namespace detail {

inline std::vector<std::vector<double>> coordinate_grids(const std::vector<HyperCoordinate>& coords, const GridSet& gs) {
    std::vector<std::vector<double>> out;
    for (const auto& c : coords) out.push_back(c.lambda2_vars.empty() ? gs.lambda1 : gs.lambda2);
    return out;
}

}  // namespace detail

inline SelectionResult search_model1(int p_tilde, const SearchSpec& spec, const GridSet& grids, const EvaluateFn& evaluate,
                                     int sparsity_exempt_variable = -1, unsigned jobs = 1) {
    spec.validate();
    if (spec.model_class != 1) throw UsageError("search_model1 needs model_class 1");
    const auto coords = model_coordinates(1, p_tilde, spec.lambda1_enabled, sparsity_exempt_variable);
    const double l1 = spec.lambda1_enabled ? grids.lambda1.front() : 0.0;
    auto start = PenaltyWeights::tied(p_tilde, l1, grids.lambda2.front());
    const auto crit = spec.criterion == Criterion::piic2 ? Criterion::piic1 : spec.criterion;
    return coordinate_search(coords, detail::coordinate_grids(coords, grids), start, evaluate, crit, spec.max_cycles, jobs);
}

/// Model 2 starts from `start` (normally Model 1's optimum), which lies in the
/// product grid, so its optimum is never worse than the starting value.
inline SelectionResult search_model2(int p_tilde, const SearchSpec& spec, const GridSet& grids, const EvaluateFn& evaluate,
                                     std::optional<PenaltyWeights> start = std::nullopt,
                                     int sparsity_exempt_variable = -1, unsigned jobs = 1) {
    spec.validate();
    if (spec.model_class != 2) throw UsageError("search_model2 needs model_class 2");
    const auto coords = model_coordinates(2, p_tilde, spec.lambda1_enabled, sparsity_exempt_variable);
    PenaltyWeights s;
    if (start) {
        s = *start;
    } else {
        s = PenaltyWeights::tied(p_tilde, spec.lambda1_enabled ? grids.lambda1.front() : 0.0, grids.lambda2.front());
    }
    s.model_class = 2;
    const auto crit = spec.criterion == Criterion::piic2 ? Criterion::piic1 : spec.criterion;
    return coordinate_search(coords, detail::coordinate_grids(coords, grids), s, evaluate, crit, spec.max_cycles, jobs);
}

/// Computes the PIIC2 trace at a search optimum.
using CurvatureFn =
    std::function<HyperCurvature(const PenaltyWeights&, const std::vector<HyperCoordinate>&, bool on_grid_boundary)>;

inline CurvatureFn plugin_curvature(const RefitFn& refit, double h = 1e-3) {
    return [refit, h](const PenaltyWeights& w, const std::vector<HyperCoordinate>& coords, bool boundary) {
        return hyper_curvature(w, coords, refit, h, boundary);
    };
}

inline void attach_curvature(SelectionResult& r, const HyperCurvature& c) {
    r.curvature = c;
    attach_curvature(r.best_report, c);
    r.criterion = Criterion::piic2;
}

struct ModelChoice {
    int chosen = 1;
    SelectionResult result1;
    SelectionResult result2;

    const SelectionResult& chosen_result() const { return chosen == 1 ? result1 : result2; }
};

/// Runs both searches and keeps the smaller criterion value (ties to Model 1).
/// PIIC2: lambda is selected within each model by PIIC1, then the models are
/// compared by PIIC1 plus the trace term at their optima.
inline ModelChoice select_model(int p_tilde, const SearchSpec& spec1, const SearchSpec& spec2, const GridSet& grids,
                                const EvaluateFn& evaluate, Criterion criterion, const CurvatureFn& curvature = {},
                                int sparsity_exempt_variable = -1, unsigned jobs = 1) {
    if (criterion == Criterion::piic1) throw UsageError("model choice uses WAIC or PIIC2");
    if (criterion == Criterion::piic2 && !curvature) throw UsageError("PIIC2 model choice needs a curvature routine");
    SearchSpec s1 = spec1, s2 = spec2;
    s1.model_class = 1;
    s2.model_class = 2;
    s1.criterion = s2.criterion = criterion;
    ModelChoice mc;
    mc.result1 = search_model1(p_tilde, s1, grids, evaluate, sparsity_exempt_variable, jobs);
    mc.result2 = search_model2(p_tilde, s2, grids, evaluate, mc.result1.best_lambda, sparsity_exempt_variable, jobs);
    if (criterion == Criterion::piic2) {
        for (auto* r : {&mc.result1, &mc.result2})
            attach_curvature(*r, curvature(r->best_lambda, r->coordinates, r->on_grid_boundary));
    }
    mc.chosen = mc.result2.best_value() < mc.result1.best_value() ? 2 : 1;
    return mc;
}

}  // namespace svcgfl

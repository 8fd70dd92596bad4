#pragma once

// Monte-Carlo comparison of WAIC1, PIIC1, WAIC2 and PIIC2 on the simulation
// cases: per replicate, select lambda (and the model class) by each arm, then
// score the resulting predictive on an independent test sample.

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "svcgfl/criteria.hpp"
#include "svcgfl/errors.hpp"
#include "svcgfl/model.hpp"
#include "svcgfl/parallel.hpp"
#include "svcgfl/posterior.hpp"
#include "svcgfl/random.hpp"
#include "svcgfl/selection.hpp"
#include "svcgfl/solver.hpp"

namespace svcgfl {

enum class Arm { waic1 = 0, piic1 = 1, waic2 = 2, piic2 = 3 };
inline constexpr std::array<Arm, 4> kAllArms{Arm::waic1, Arm::piic1, Arm::waic2, Arm::piic2};

inline std::string to_string(Arm a) {
    switch (a) {
        case Arm::waic1: return "WAIC1";
        case Arm::piic1: return "PIIC1";
        case Arm::waic2: return "WAIC2";
        case Arm::piic2: return "PIIC2";
    }
    return "?";
}

inline Arm parse_arm(const std::string& s) {
    for (Arm a : kAllArms) {
        std::string lower = to_string(a);
        for (auto& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        if (s == to_string(a) || s == lower) return a;
    }
    throw UsageError("unknown arm '" + s + "' (expected waic1, piic1, waic2, piic2)");
}

struct ExperimentConfig {
    int case_id = 1;
    int setting = 1;
    double sigma2 = 1.0;
    int n_replicates = 100;
    int test_multiplier = 1;
    std::uint64_t seed = 1;
    std::vector<Arm> arms{kAllArms.begin(), kAllArms.end()};
    PosteriorControls posterior;
    SolverControls solver;
    SearchSpec search;
    bool intensified = true;
    bool plug_in = false;
    unsigned jobs = 1;

    bool has(Arm a) const { return std::find(arms.begin(), arms.end(), a) != arms.end(); }

    void validate() const {
        if (arms.empty()) throw UsageError("at least one arm is required");
        if (n_replicates < 1) throw UsageError("n_replicates must be at least 1");
        if (test_multiplier < 1) throw UsageError("test multiplier must be at least 1");
        if (!(sigma2 > 0.0)) throw UsageError("sigma2 must be positive");
        if (setting != 1 && setting != 2) throw UsageError("setting must be 1 or 2");
        standard_topology(case_id);
        search.validate();
    }
};

struct ArmOutcome {
    double risk = 0.0;
    PenaltyWeights lambda;
    int model = 1;
    double criterion = 0.0;
    std::size_t j3_count = 0;
    bool on_grid_boundary = false;
};

struct ReplicateResult {
    int replicate = 0;
    std::uint64_t seed = 0;
    std::string error;  ///< empty on success
    std::array<std::optional<ArmOutcome>, 4> arms;

    bool ok() const { return error.empty(); }
    const std::optional<ArmOutcome>& arm(Arm a) const { return arms[static_cast<int>(a)]; }
};

/// (smaller, equal, larger): how often the first arm's risk is below, equal
/// to, or above the second's.
struct RateTriple {
    int smaller = 0;
    int equal = 0;
    int larger = 0;

    int total() const { return smaller + equal + larger; }
    friend bool operator==(const RateTriple&, const RateTriple&) = default;
};

/// `same_selection[i]` marks replicates where both arms chose the same lambda
/// and model; those count as equal whatever the floating-point risks are.
inline RateTriple rate_triple(const std::vector<double>& first, const std::vector<double>& second,
                              const std::vector<bool>& same_selection = {}) {
    if (first.size() != second.size()) throw UsageError("rate lists differ in length");
    RateTriple t;
    for (std::size_t i = 0; i < first.size(); ++i) {
        const bool same = i < same_selection.size() && same_selection[i];
        if (same || first[i] == second[i]) ++t.equal;
        else if (first[i] < second[i]) ++t.smaller;
        else ++t.larger;
    }
    return t;
}

struct ExperimentResult {
    ExperimentConfig config;
    std::vector<ReplicateResult> replicates;
    std::array<std::optional<double>, 4> mean_risk;
    std::array<std::optional<double>, 4> se_risk;
    std::optional<RateTriple> rate1;  ///< WAIC1 vs PIIC1
    std::optional<RateTriple> rate2;  ///< WAIC2 vs PIIC2
    int failures = 0;
    double wall_seconds = 0.0;        ///< not part of any deterministic output

    std::optional<double> mean(Arm a) const { return mean_risk[static_cast<int>(a)]; }
    std::optional<double> se(Arm a) const { return se_risk[static_cast<int>(a)]; }

    /// Risks of successful replicates for one arm, in replicate order.
    std::vector<double> risks(Arm a) const {
        std::vector<double> out;
        for (const auto& r : replicates)
            if (r.ok() && r.arm(a)) out.push_back(r.arm(a)->risk);
        return out;
    }
};

inline bool same_selection(const ArmOutcome& a, const ArmOutcome& b) {
    return a.model == b.model && a.lambda.lambda1 == b.lambda.lambda1 && a.lambda.lambda2 == b.lambda.lambda2;
}

/// Runs every requested arm on one replicate.
inline ReplicateResult run_replicate(const ExperimentConfig& cfg, int r) {
    ReplicateResult out;
    out.replicate = r;
    out.seed = cfg.seed + static_cast<std::uint64_t>(r);
    try {
        auto [train, truth] = generate_case(cfg.case_id, cfg.setting, cfg.sigma2, out.seed);
        Rng test_rng(derive_seed(out.seed, {tag("test")}));
        const SvcDataset test = sample_dataset(truth, train.n() * static_cast<std::size_t>(cfg.test_multiplier), test_rng);

        EvaluatorOptions eo;
        eo.solver = cfg.solver;
        eo.posterior = cfg.posterior;
        eo.posterior.seed = derive_seed(out.seed, {tag("posterior")});
        eo.plug_in = cfg.plug_in;
        eo.intensified = cfg.intensified;
        CachedEvaluator ev(train, eo);
        const int pt = train.p_tilde();
        const GridSet grids = make_grids(*ev.fit_data(), cfg.search);
        EvaluateFn eval = [&ev](const PenaltyWeights& w) { return ev.report(w); };

        auto outcome = [&](const SelectionResult& s, int model) {
            ArmOutcome o;
            o.lambda = s.best_lambda;
            o.model = model;
            o.criterion = s.best_value();
            o.j3_count = s.best_report.j3_count;
            o.on_grid_boundary = s.on_grid_boundary;
            o.risk = empirical_risk(ev.evaluate(s.best_lambda)->draws, test);
            return o;
        };

        SearchSpec s1 = cfg.search, s2 = cfg.search;
        s1.model_class = 1;
        s2.model_class = 2;
        std::optional<SelectionResult> m1_waic, m1_piic;
        if (cfg.has(Arm::waic1) || cfg.has(Arm::waic2)) {
            s1.criterion = Criterion::waic;
            m1_waic = search_model1(pt, s1, grids, eval);
        }
        if (cfg.has(Arm::piic1) || cfg.has(Arm::piic2)) {
            s1.criterion = Criterion::piic1;
            m1_piic = search_model1(pt, s1, grids, eval);
        }
        if (cfg.has(Arm::waic1)) out.arms[0] = outcome(*m1_waic, 1);
        if (cfg.has(Arm::piic1)) out.arms[1] = outcome(*m1_piic, 1);
        if (cfg.has(Arm::waic2)) {
            s2.criterion = Criterion::waic;
            out.arms[2] = outcome(search_model2(pt, s2, grids, eval, m1_waic->best_lambda), 2);
        }
        if (cfg.has(Arm::piic2)) {
            s2.criterion = Criterion::piic1;
            SelectionResult a = *m1_piic;
            SelectionResult b = search_model2(pt, s2, grids, eval, a.best_lambda);
            const auto curv = plugin_curvature(ev.plugin_refit_fn());
            attach_curvature(a, curv(a.best_lambda, a.coordinates, a.on_grid_boundary));
            attach_curvature(b, curv(b.best_lambda, b.coordinates, b.on_grid_boundary));
            out.arms[3] = b.best_value() < a.best_value() ? outcome(b, 2) : outcome(a, 1);
        }
    } catch (const Error& e) {
        out.error = e.what();
        out.arms = {};
    }
    return out;
}

/// Fills the averages and rate triples from the replicate list.
inline void aggregate(ExperimentResult& res) {
    res.failures = 0;
    for (const auto& r : res.replicates) res.failures += !r.ok();
    for (Arm a : kAllArms) {
        const auto v = res.risks(a);
        const int k = static_cast<int>(a);
        res.mean_risk[k].reset();
        res.se_risk[k].reset();
        if (v.empty()) continue;
        double s = 0.0;
        for (double x : v) s += x;
        const double m = s / static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - m) * (x - m);
        res.mean_risk[k] = m;
        res.se_risk[k] = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size())) : 0.0;
    }
    auto rate = [&](Arm w, Arm p) -> std::optional<RateTriple> {
        std::vector<double> a, b;
        std::vector<bool> same;
        for (const auto& r : res.replicates) {
            if (!r.ok() || !r.arm(w) || !r.arm(p)) continue;
            a.push_back(r.arm(w)->risk);
            b.push_back(r.arm(p)->risk);
            same.push_back(same_selection(*r.arm(w), *r.arm(p)));
        }
        if (a.empty()) return std::nullopt;
        return rate_triple(a, b, same);
    };
    res.rate1 = rate(Arm::waic1, Arm::piic1);
    res.rate2 = rate(Arm::waic2, Arm::piic2);
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentResult res;
    res.config = cfg;
    res.replicates.resize(static_cast<std::size_t>(cfg.n_replicates));
    parallel_for(res.replicates.size(), cfg.jobs, [&](std::size_t r) {
        res.replicates[r] = run_replicate(cfg, static_cast<int>(r));
    });
    aggregate(res);
    res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

// ---------------------------------------------------------------------------
// Tables

struct SummaryRow {
    int case_id = 0;
    int setting = 0;
    double sigma2 = 0.0;
    std::array<std::optional<double>, 4> mean_risk;
    std::optional<RateTriple> rate1, rate2;
    int replicates = 0;
    int failures = 0;
    std::string best1;  ///< smaller of WAIC1 / PIIC1
    std::string best2;  ///< smaller of WAIC2 / PIIC2
};

inline std::vector<SummaryRow> summarize(const std::vector<ExperimentResult>& results) {
    std::vector<SummaryRow> rows;
    for (const auto& r : results) {
        SummaryRow s;
        s.case_id = r.config.case_id;
        s.setting = r.config.setting;
        s.sigma2 = r.config.sigma2;
        s.mean_risk = r.mean_risk;
        s.rate1 = r.rate1;
        s.rate2 = r.rate2;
        s.replicates = r.config.n_replicates;
        s.failures = r.failures;
        auto pick = [&](Arm w, Arm p) -> std::string {
            const auto a = r.mean(w), b = r.mean(p);
            if (!a || !b) return "";
            if (*a < *b) return to_string(w);
            if (*b < *a) return to_string(p);
            return "tie";
        };
        s.best1 = pick(Arm::waic1, Arm::piic1);
        s.best2 = pick(Arm::waic2, Arm::piic2);
        rows.push_back(std::move(s));
    }
    return rows;
}

namespace detail {

inline std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

inline std::string fmt(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + fmt(v[i]);
    return s;
}

inline std::string fmt(const std::optional<RateTriple>& t) {
    if (!t) return ",,";
    return std::to_string(t->smaller) + "," + std::to_string(t->equal) + "," + std::to_string(t->larger);
}

}  // namespace detail

/// One row per replicate; lambda vectors are ';'-separated.
inline void write_replicate_csv(std::ostream& os, const ExperimentResult& res) {
    os << "replicate,seed,status";
    for (Arm a : kAllArms) {
        const auto n = to_string(a);
        os << ',' << n << "_risk," << n << "_model," << n << "_lambda1," << n << "_lambda2," << n << "_criterion," << n
           << "_j3," << n << "_boundary";
    }
    os << ",error\n";
    for (const auto& r : res.replicates) {
        os << r.replicate << ',' << r.seed << ',' << (r.ok() ? "ok" : "failed");
        for (Arm a : kAllArms) {
            const auto& o = r.arm(a);
            if (!o) {
                os << ",,,,,,,";
                continue;
            }
            os << ',' << detail::fmt(o->risk) << ',' << o->model << ',' << detail::fmt(o->lambda.lambda1) << ','
               << detail::fmt(o->lambda.lambda2) << ',' << detail::fmt(o->criterion) << ',' << o->j3_count << ','
               << (o->on_grid_boundary ? 1 : 0);
        }
        std::string err = r.error;
        for (auto& ch : err)
            if (ch == ',' || ch == '\n') ch = ' ';
        os << ',' << err << '\n';
    }
}

inline void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
    os << "case,setting,sigma2,WAIC1,PIIC1,WAIC2,PIIC2,rate1_smaller,rate1_equal,rate1_larger,rate2_smaller,"
          "rate2_equal,rate2_larger,best1,best2,replicates,failures\n";
    for (const auto& s : rows) {
        os << s.case_id << ',' << s.setting << ',' << detail::fmt(s.sigma2);
        for (const auto& m : s.mean_risk) os << ',' << detail::fmt(m);
        os << ',' << detail::fmt(s.rate1) << ',' << detail::fmt(s.rate2) << ',' << s.best1 << ',' << s.best2 << ','
           << s.replicates << ',' << s.failures << '\n';
    }
}

}  // namespace svcgfl

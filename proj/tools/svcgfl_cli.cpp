// svcgfl command-line driver: simulate, fit, regions, replay.
//
// Every command writes a manifest holding its fully resolved options. A
// manifest (or any flat JSON object of option names) can be passed back with
// --config; explicit flags win over the file, which wins over defaults.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "svcgfl/svcgfl.hpp"

namespace fs = std::filesystem;
using namespace svcgfl;
using json = io::json;

namespace {

constexpr const char* kVersion = "0.1.0";

/// Options of one subcommand, remembered so they can be dumped after parsing.
struct Registry {
    CLI::App* app = nullptr;
    std::vector<std::pair<std::string, std::function<json()>>> dump;

    template <class T>
    CLI::Option* opt(const std::string& name, T& v, const std::string& desc) {
        auto* o = app->add_option("--" + name, v, desc)->capture_default_str();
        dump.emplace_back(name, [&v] { return json(v); });
        return o;
    }

    CLI::Option* flag(const std::string& name, bool& v, const std::string& desc) {
        auto* o = app->add_flag("--" + name, v, desc);
        dump.emplace_back(name, [&v] { return json(v); });
        return o;
    }

    bool knows(const std::string& name) const {
        for (const auto& [k, f] : dump)
            if (k == name) return true;
        return false;
    }

    json config() const {
        json j = json::object();
        for (const auto& [k, f] : dump) j[k] = f();
        return j;
    }
};

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void ensure_dir(const fs::path& dir) {
    if (dir.empty()) return;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
}

struct Manifest {
    std::string command;
    json config;
    json seeds = json::object();
    json details = json::object();
    std::vector<std::string> outputs;
    std::string started = utc_now();

    void write(const fs::path& path) {
        json versions = {{"svcgfl", kVersion},
                         {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                       std::to_string(EIGEN_MINOR_VERSION)},
                         {"cli11", CLI11_VERSION},
                         {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                               std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                               std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                         {"compiler", __VERSION__}};
        json outs = outputs;
        outs.push_back(path.string());
        json j = {{"command", command},       {"config", config},     {"seeds", seeds},
                  {"versions", versions},     {"started", started},   {"finished", utc_now()},
                  {"outputs", outs},          {"details", details}};
        io::write_file(path.string(), j.dump(2) + "\n");
    }
};

void write_output(Manifest& m, const fs::path& path, const std::string& text) {
    io::write_file(path.string(), text);
    m.outputs.push_back(path.string());
}

// ---------------------------------------------------------------------------
// Shared option groups

struct PosteriorFlags {
    int burn_in = 2000;
    int keep = 5000;
    int thin = 2;
    bool plug_in = false;
    bool intensified = true;

    void add(Registry& r) {
        r.opt("burn-in", burn_in, "Gibbs burn-in sweeps");
        r.opt("keep", keep, "retained posterior draws");
        r.opt("thin", thin, "sweeps per retained draw");
        r.flag("plug-in", plug_in, "point-mass predictive at the GFL estimate instead of MCMC");
        r.opt("intensified", intensified, "prior rate scales with n (true|false)");
    }

    PosteriorControls controls(std::uint64_t seed) const {
        PosteriorControls c;
        c.burn_in = burn_in;
        c.keep = keep;
        c.thin = thin;
        c.seed = seed;
        return c;
    }
};

struct SearchFlags {
    int grid_size = 20;
    double low_fraction = 1e-4;
    int max_cycles = 10;
    bool lambda1 = false;

    void add(Registry& r) {
        r.opt("grid-size", grid_size, "candidate values per hyperparameter");
        r.opt("low-fraction", low_fraction, "smallest grid value as a fraction of lambda_max");
        r.opt("max-cycles", max_cycles, "coordinate-search cycles");
        r.flag("lambda1", lambda1, "also search the sparsity weights");
    }

    SearchSpec spec() const {
        SearchSpec s;
        s.grid_size = grid_size;
        s.low_fraction = low_fraction;
        s.max_cycles = max_cycles;
        s.lambda1_enabled = lambda1;
        return s;
    }
};

// ---------------------------------------------------------------------------
// simulate

struct SimulateCmd {
    Registry reg;
    int case_id = 0;
    int setting = 1;
    double sigma2 = 1.0;
    int reps = 100;
    std::uint64_t seed = 1;
    std::string out = ".";
    std::vector<std::string> arms{"WAIC1", "PIIC1", "WAIC2", "PIIC2"};
    int test_multiplier = 1;
    unsigned jobs = default_jobs();
    std::string format = "csv";
    PosteriorFlags post;
    SearchFlags search;

    void add(CLI::App& app) {
        reg.app = app.add_subcommand("simulate", "Monte-Carlo comparison of the four criteria on a simulation case");
        reg.opt("case", case_id, "simulation case 1..8")->required();
        reg.opt("setting", setting, "coefficient setting 1|2");
        reg.opt("sigma2", sigma2, "noise variance");
        reg.opt("reps", reps, "replicates");
        reg.opt("seed", seed, "base seed; replicate r uses seed + r");
        reg.opt("out", out, "output directory");
        reg.opt("arms", arms, "criteria arms")->delimiter(',');
        reg.opt("test-multiplier", test_multiplier, "test sample size as a multiple of n");
        reg.opt("jobs", jobs, "worker threads");
        reg.opt("format", format, "summary format")->check(CLI::IsMember({"json", "csv"}));
        post.add(reg);
        search.add(reg);
    }

    int run() {
        Manifest m{"simulate", reg.config()};
        ExperimentConfig c;
        c.case_id = case_id;
        c.setting = setting;
        c.sigma2 = sigma2;
        c.n_replicates = reps;
        c.seed = seed;
        c.arms.clear();
        for (const auto& a : arms) c.arms.push_back(parse_arm(a));
        c.test_multiplier = test_multiplier;
        c.posterior = post.controls(seed);
        c.plug_in = post.plug_in;
        c.intensified = post.intensified;
        c.search = search.spec();
        c.jobs = std::max(1u, jobs);
        c.validate();

        const auto res = run_experiment(c);
        const fs::path dir(out);
        ensure_dir(dir);
        std::ostringstream reps_csv;
        write_replicate_csv(reps_csv, res);
        write_output(m, dir / "replicates.csv", reps_csv.str());

        const auto rows = summarize({res});
        std::string summary;
        if (format == "csv") {
            std::ostringstream os;
            write_summary_csv(os, rows);
            summary = os.str();
        } else {
            summary = summary_json(res).dump(2) + "\n";
        }
        write_output(m, dir / ("summary." + format), summary);

        json rs = json::array();
        for (const auto& r : res.replicates) rs.push_back(r.seed);
        m.seeds = {{"base", seed}, {"replicates", rs}};
        m.details = {{"failures", res.failures}, {"wall_seconds", res.wall_seconds}};
        m.write(dir / "manifest.json");
        std::cout << summary;
        return 0;
    }

    static json summary_json(const ExperimentResult& res) {
        json arms = json::object();
        for (Arm a : kAllArms) {
            if (!res.mean(a)) continue;
            arms[to_string(a)] = {{"mean_risk", *res.mean(a)}, {"se", *res.se(a)}};
        }
        auto triple = [](const std::optional<RateTriple>& t) -> json {
            if (!t) return nullptr;
            return json::array({t->smaller, t->equal, t->larger});
        };
        return {{"case", res.config.case_id},
                {"setting", res.config.setting},
                {"sigma2", res.config.sigma2},
                {"replicates", res.config.n_replicates},
                {"failures", res.failures},
                {"arms", arms},
                {"rate1", triple(res.rate1)},
                {"rate2", triple(res.rate2)}};
    }
};

// ---------------------------------------------------------------------------
// fit

struct FitCmd {
    Registry reg;
    std::string data, graph, out = ".";
    std::string model = "auto";
    std::string criterion = "piic2";
    std::string sigma2 = "estimate";
    bool intercept = false;
    std::uint64_t seed = 1;
    double fd_step = 1e-3;
    std::string regions;
    unsigned jobs = default_jobs();
    PosteriorFlags post;
    SearchFlags search;

    void add(CLI::App& app) {
        reg.app = app.add_subcommand("fit", "Select hyperparameters and fit one dataset");
        reg.opt("data", data, "data CSV: region,y,x1,...")->required();
        reg.opt("graph", graph, "region graph JSON")->required();
        reg.opt("model", model, "prior class")->check(CLI::IsMember({"1", "2", "auto"}));
        reg.opt("criterion", criterion, "selection criterion")->check(CLI::IsMember({"waic", "piic1", "piic2"}));
        reg.opt("sigma2", sigma2, "noise variance, or 'estimate'");
        reg.flag("intercept", intercept, "append a constant column (never shrunk to zero)");
        reg.opt("seed", seed, "posterior seed");
        reg.opt("fd-step", fd_step, "finite-difference step in log lambda for PIIC2");
        reg.opt("regions", regions, "region GeoJSON to annotate with the fused groups");
        reg.opt("out", out, "output directory");
        reg.opt("jobs", jobs, "worker threads for the grid evaluations");
        post.add(reg);
        search.add(reg);
    }

    int run() {
        Manifest m{"fit", reg.config()};
        const Criterion crit = parse_criterion(criterion);
        if (model == "auto" && crit == Criterion::piic1)
            throw UsageError("--model auto compares models and needs --criterion waic or piic2");
        const auto g = io::read_graph(graph);
        auto d = io::read_data(data, g, intercept);
        SearchSpec spec = search.spec();
        spec.validate();

        std::string sigma2_source = "given";
        if (sigma2 == "estimate") {
            d.sigma2 = pilot_sigma2(d, spec);
            sigma2_source = "estimated";
        } else {
            double v = 0.0;
            if (!detail::parse_double(sigma2, v) || !(v > 0.0)) throw UsageError("--sigma2 must be positive or 'estimate'");
            d.sigma2 = v;
        }

        EvaluatorOptions eo;
        eo.posterior = post.controls(seed);
        eo.plug_in = post.plug_in;
        eo.intensified = post.intensified;
        CachedEvaluator ev(d, eo);
        const auto grids = make_grids(*ev.fit_data(), spec);
        EvaluateFn eval = [&ev](const PenaltyWeights& w) { return ev.report(w); };
        const int pt = d.p_tilde();
        const int exempt = ev.fit_data()->sparsity_exempt_variable;
        const unsigned nj = std::max(1u, jobs);
        const auto curv = plugin_curvature(ev.plugin_refit_fn(), fd_step);

        SearchSpec s1 = spec, s2 = spec;
        s1.model_class = 1;
        s2.model_class = 2;
        s1.criterion = s2.criterion = crit;
        std::vector<std::pair<int, SelectionResult>> results;
        int chosen = 1;
        if (model == "auto") {
            auto mc = select_model(pt, s1, s2, grids, eval, crit, curv, exempt, nj);
            chosen = mc.chosen;
            results = {{1, std::move(mc.result1)}, {2, std::move(mc.result2)}};
        } else {
            auto r1 = search_model1(pt, s1, grids, eval, exempt, nj);
            if (model == "2") {
                auto r2 = search_model2(pt, s2, grids, eval, r1.best_lambda, exempt, nj);
                if (crit == Criterion::piic2) attach_curvature(r2, curv(r2.best_lambda, r2.coordinates, r2.on_grid_boundary));
                chosen = 2;
                results = {{2, std::move(r2)}};
            } else {
                if (crit == Criterion::piic2) attach_curvature(r1, curv(r1.best_lambda, r1.coordinates, r1.on_grid_boundary));
                results = {{1, std::move(r1)}};
            }
        }
        const SelectionResult* best = nullptr;
        for (const auto& [k, r] : results)
            if (k == chosen) best = &r;
        const auto evaluation = ev.evaluate(best->best_lambda);

        const fs::path dir(out);
        ensure_dir(dir);
        json sol = io::solution_to_json(evaluation->solution, ev.fit_data()->graph);
        sol["model"] = chosen;
        sol["sigma2"] = *d.sigma2;
        sol["sigma2_source"] = sigma2_source;
        write_output(m, dir / "solution.json", sol.dump(2) + "\n");

        json per_model = json::array();
        std::string traj;
        for (const auto& [k, r] : results) {
            json e = {{"model", k},
                      {"best_lambda", io::weights_to_json(r.best_lambda)},
                      {"value", r.best_value()},
                      {"report", io::report_to_json(r.best_report)},
                      {"cycles", r.cycles_used},
                      {"converged", r.converged},
                      {"on_grid_boundary", r.on_grid_boundary},
                      {"failures", r.failures}};
            if (r.curvature) e["curvature"] = io::curvature_to_json(*r.curvature);
            per_model.push_back(e);
            const auto t = io::trajectory_to_csv(r, k);
            traj += traj.empty() ? t : t.substr(t.find('\n') + 1);
        }
        json crit_json = {{"criterion", to_string(crit)},
                          {"chosen_model", chosen},
                          {"value", best->best_value()},
                          {"report", io::report_to_json(best->best_report)},
                          {"grids", {{"lambda1", grids.lambda1},
                                     {"lambda2", grids.lambda2},
                                     {"lambda1_max", grids.lambda1_max},
                                     {"lambda2_max", grids.lambda2_max}}},
                          {"models", per_model}};
        write_output(m, dir / "criterion.json", crit_json.dump(2) + "\n");
        write_output(m, dir / "trajectory.csv", traj);

        if (!regions.empty()) {
            json gj = io::parse_json(io::read_file(regions), regions);
            annotate_regions(gj, evaluation->solution, ev.fit_data()->graph);
            write_output(m, dir / "groups.geojson", gj.dump() + "\n");
        }

        m.seeds = {{"posterior", seed}};
        m.details = {{"n", d.n()}, {"p_tilde", pt}, {"m_regions", g.m_regions()}, {"sigma2", *d.sigma2}};
        m.write(dir / "manifest.json");
        std::cout << json({{"chosen_model", chosen},
                           {"criterion", to_string(crit)},
                           {"value", best->best_value()},
                           {"j3_count", evaluation->solution.j3_count},
                           {"lambda", io::weights_to_json(best->best_lambda)}})
                         .dump(2)
                  << "\n";
        return 0;
    }

    /// Residual variance of the least-penalized tied fit on the default grid.
    static double pilot_sigma2(SvcDataset d, const SearchSpec& spec) {
        d.sigma2 = 1.0;
        const auto fd = make_fit_data(d);
        const auto gs = make_grids(*fd, spec);
        const auto w = PenaltyWeights::tied(d.p_tilde(), spec.lambda1_enabled ? gs.lambda1.back() : 0.0, gs.lambda2.back());
        const auto sol = solve(GflProblem{fd, w, {}});
        return resolve_sigma2(d, sol.xi, sol.j3_count);
    }

    static void annotate_regions(json& gj, const GflSolution& sol, const CoefficientGraph& g) {
        if (!gj.contains("features") || !gj["features"].is_array()) throw DataError("--regions is not a FeatureCollection");
        const auto props = io::fused_group_properties(sol, g, {});
        for (auto& f : gj["features"]) {
            const auto& p = f.value("properties", json::object());
            if (!p.contains("region") || !p["region"].is_number_integer())
                throw DataError("region feature without an integer 'region' property");
            const int r = p["region"].get<int>();
            if (r < 1 || r > g.m_regions()) throw DataError("region " + std::to_string(r) + " is not in the graph");
            for (const auto& [k, v] : props[static_cast<std::size_t>(r - 1)].items()) f["properties"][k] = v;
        }
    }
};

// ---------------------------------------------------------------------------
// regions

struct RegionsCmd {
    Registry reg;
    std::string points, out;
    int k = 0;
    std::uint64_t seed = 1;
    bool standardize = false;
    double max_malformed = 0.01;
    unsigned jobs = default_jobs();

    void add(CLI::App& app) {
        reg.app = app.add_subcommand("regions", "Cluster points into regions and build the Voronoi adjacency graph");
        reg.opt("points", points, "point CSV: id,lon,lat,y,x1,...")->required();
        reg.opt("k", k, "number of regions")->required();
        reg.opt("seed", seed, "k-means seed");
        reg.opt("out", out, "graph JSON path; companion files share its stem")->required();
        reg.flag("standardize", standardize, "standardize covariates in the emitted data CSV");
        reg.opt("max-malformed", max_malformed, "largest tolerated fraction of malformed rows");
        reg.opt("jobs", jobs, "worker threads for the k-means restarts");
    }

    int run() {
        Manifest m{"regions", reg.config()};
        if (k < 1) throw UsageError("--k must be at least 1");
        IngestOptions io_opt;
        io_opt.standardize = standardize;
        io_opt.max_malformed_fraction = max_malformed;
        const auto table = ingest_csv(points, io_opt);
        if (static_cast<std::size_t>(k) > table.size())
            throw DataError("k = " + std::to_string(k) + " exceeds the " + std::to_string(table.size()) + " usable points");
        const auto reg_res = regionalize(table.points, k, seed, std::max(1u, jobs));
        const auto& graph = reg_res.adjacency.graph;

        const fs::path gpath(out);
        ensure_dir(gpath.parent_path());
        auto sibling = [&](const std::string& suffix) {
            return gpath.parent_path() / (gpath.stem().string() + suffix);
        };
        write_output(m, gpath, io::graph_to_json(graph).dump(2) + "\n");
        write_output(m, sibling("_assignment.csv"), io::assignment_to_csv(table.points, reg_res.clusters.assignment));

        Point2 lo = table.points.coordinates.front(), hi = lo;
        for (const auto& p : table.points.coordinates)
            for (int a = 0; a < 2; ++a) {
                lo[a] = std::min(lo[a], p[a]);
                hi[a] = std::max(hi[a], p[a]);
            }
        const double pad = 0.05 * std::max({hi[0] - lo[0], hi[1] - lo[1], 1e-9});
        lo = {lo[0] - pad, lo[1] - pad};
        hi = {hi[0] + pad, hi[1] + pad};
        const auto& cent = reg_res.clusters.centroids;
        std::vector<json> counts(cent.size());
        std::vector<int> size(cent.size(), 0);
        for (int a : reg_res.clusters.assignment) ++size[static_cast<std::size_t>(a)];
        for (std::size_t r = 0; r < cent.size(); ++r) counts[r] = {{"points", size[r]}};
        write_output(m, sibling("_regions.geojson"),
                     io::cells_to_geojson(voronoi_cells(cent, lo, hi), cent, counts).dump() + "\n");

        // Data CSV for `fit`; without covariates it holds region,y only (use --intercept).
        SvcDataset d;
        d.graph = graph;
        d.observations.resize(table.size());
        for (std::size_t i = 0; i < table.size(); ++i) {
            auto& o = d.observations[i];
            o.y = table.y[i];
            o.psi = reg_res.clusters.assignment[i];
            o.x_tilde = table.x.row(static_cast<Eigen::Index>(i)).transpose();
        }
        write_output(m, sibling("_data.csv"), io::data_to_csv(d));

        m.seeds = {{"kmeans", seed}};
        json info = {{"points", table.size()},
                     {"dropped_missing", table.dropped_missing},
                     {"dropped_malformed", table.dropped_malformed},
                     {"covariates", table.covariate_names},
                     {"standardized", table.standardized},
                     {"covariate_mean", table.covariate_mean},
                     {"covariate_sd", table.covariate_sd},
                     {"sse", reg_res.clusters.sse},
                     {"kmeans_iterations", reg_res.clusters.iterations},
                     {"sse_monotone", reg_res.clusters.sse_monotone},
                     {"edges", graph.edges().size()},
                     {"connected", is_connected(graph)},
                     {"adjacency_fallback", reg_res.adjacency.fallback},
                     {"warnings", reg_res.adjacency.warnings}};
        m.details = info;
        m.write(sibling("_manifest.json"));
        for (const auto& w : reg_res.adjacency.warnings) std::cerr << "warning: " << w << "\n";
        std::cout << info.dump(2) << "\n";
        return 0;
    }
};

// ---------------------------------------------------------------------------
// Argument preprocessing: --config expansion and replay

std::string option_name(const std::string& arg) {
    if (arg.rfind("--", 0) != 0) return "";
    return arg.substr(2, arg.find('=') == std::string::npos ? std::string::npos : arg.find('=') - 2);
}

/// Removes --config from args and returns its path ("" if absent).
std::string take_config(std::vector<std::string>& args) {
    std::string path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw UsageError("--config needs a file");
            path = args[i + 1];
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + 2));
            --i;
        } else if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
            --i;
        }
    }
    return path;
}

std::string token_of(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_array()) {
        std::string s;
        for (const auto& e : v) s += (s.empty() ? "" : ",") + token_of(e);
        return s;
    }
    return v.dump();
}

/// Inserts config-file values for options not given explicitly.
void expand_config(std::vector<std::string>& args, const std::string& command, const Registry& reg, const std::string& path) {
    json cfg = io::parse_json(io::read_file(path), path);
    if (cfg.contains("command") && cfg.contains("config")) {
        if (cfg["command"] != command)
            throw UsageError(path + " is a manifest for '" + cfg["command"].get<std::string>() + "', not '" + command + "'");
        cfg = cfg["config"];
    }
    if (!cfg.is_object()) throw UsageError(path + " must hold a JSON object of option values");
    std::set<std::string> given;
    for (const auto& a : args) given.insert(option_name(a));
    std::vector<std::string> extra;
    for (const auto& [key, value] : cfg.items()) {
        if (!reg.knows(key)) throw UsageError("unknown option '" + key + "' in " + path);
        if (given.count(key) || value.is_null()) continue;
        if (value.is_boolean()) {
            if (value.get<bool>() || key == "intensified") extra.push_back("--" + key + "=" + token_of(value));
            continue;
        }
        extra.push_back("--" + key);
        extra.push_back(token_of(value));
    }
    args.insert(args.begin() + 1, extra.begin(), extra.end());
}

int exit_with(const std::string& kind, const std::string& msg, int code) {
    std::cerr << io::error_to_json(kind, msg, code).dump() << "\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spatially varying coefficient regression with the generalized fused lasso"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    SimulateCmd simulate;
    FitCmd fit;
    RegionsCmd regions;
    simulate.add(app);
    fit.add(app);
    regions.add(app);
    std::string replay_manifest, replay_out;
    auto* replay = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
    replay->add_option("manifest", replay_manifest, "manifest JSON")->required();
    for (auto* sub : {simulate.reg.app, fit.reg.app, regions.reg.app})
        sub->add_option("--config", "JSON file of option values (flags take precedence)");

    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        if (!args.empty() && args[0] == "replay") {
            // replay <manifest> [overrides...]: the manifest becomes the config.
            if (args.size() < 2 || args[1].rfind("-", 0) == 0) {
                if (args.size() >= 2 && (args[1] == "-h" || args[1] == "--help")) {
                    std::cout << replay->help();
                    return 0;
                }
                throw UsageError("replay needs a manifest path");
            }
            const json man = io::parse_json(io::read_file(args[1]), args[1]);
            if (!man.contains("command") || !man["command"].is_string()) throw UsageError(args[1] + " is not a manifest");
            std::vector<std::string> next{man["command"].get<std::string>(), "--config", args[1]};
            next.insert(next.end(), args.begin() + 2, args.end());
            args = std::move(next);
        }
        const std::string cfg = take_config(args);
        if (!cfg.empty()) {
            if (args.empty()) throw UsageError("--config needs a subcommand");
            const Registry* reg = args[0] == "simulate" ? &simulate.reg
                                  : args[0] == "fit"    ? &fit.reg
                                  : args[0] == "regions" ? &regions.reg
                                                          : nullptr;
            if (!reg) throw UsageError("--config is not supported for '" + args[0] + "'");
            expand_config(args, args[0], *reg, cfg);
        }
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        return exit_with("usage", e.what(), 2);
    } catch (const Error& e) {
        return exit_with(e.category() == Error::Category::usage ? "usage" : "data", e.what(), static_cast<int>(e.category()));
    }

    try {
        if (simulate.reg.app->parsed()) return simulate.run();
        if (fit.reg.app->parsed()) return fit.run();
        if (regions.reg.app->parsed()) return regions.run();
        return exit_with("usage", "unknown command", 2);
    } catch (const Error& e) {
        static const char* kinds[] = {"", "", "usage", "data", "numerical"};
        const int code = static_cast<int>(e.category());
        return exit_with(kinds[code], e.what(), code);
    } catch (const std::exception& e) {
        return exit_with("numerical", e.what(), 4);
    }
}

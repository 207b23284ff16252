#include "cli_support.hpp"

#include "deepstiff/calculus_suite.hpp"
#include "deepstiff/game_synth.hpp"
#include "deepstiff/stats.hpp"
#include "deepstiff/value_synth.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <thread>

using namespace deepstiff;
using namespace deepstiff::cli;

namespace {

const std::vector<std::string> kStudies{"calculus-check", "convergence", "synth", "game", "scaling"};

/// Writes tables as soon as a study produces them so a failing run leaves partial artifacts.
class Sink {
public:
    explicit Sink(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }
    void put(const Table& t) {
        write_table(dir_, t);
        written_.push_back(t);
    }
    void put_network(const std::string& file, const Network& net) {
        std::ofstream out(dir_ / file);
        write_network(out, net);
        networks_.push_back(file);
    }
    const std::vector<Table>& tables() const { return written_; }
    const std::vector<std::string>& networks() const { return networks_; }
    const fs::path& dir() const { return dir_; }

private:
    fs::path dir_;
    std::vector<Table> written_;
    std::vector<std::string> networks_;
};

struct Outcome {
    std::vector<std::string> failures;
    json summary = json::object();
    bool pass() const { return failures.empty(); }
};

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

Fields optional_object(Fields& f, const std::string& key) {
    static const json empty = json::object();
    return f.has(key) ? f.object(key) : Fields(empty, key);
}

RecipeParams read_params(Fields& sys) {
    RecipeParams p;
    if (!sys.has("params")) return p;
    const json& obj = sys.raw("params");
    if (!obj.is_object()) throw ConfigError(sys.where("params") + "expected an object");
    for (const auto& [k, v] : obj.items()) {
        if (!v.is_number()) throw ConfigError(sys.where("params") + "parameter '" + k + "' must be a number");
        p[k] = v.get<double>();
    }
    return p;
}

SystemRecipe read_system(Fields& top, std::optional<Eigen::Index> d_override = std::nullopt) {
    Fields sys = top.object("system");
    const std::string id = sys.string("id", "");
    if (id.empty()) throw ConfigError(sys.where("id") + "required key is missing");
    const Eigen::Index d = d_override ? *d_override : static_cast<Eigen::Index>(sys.integer("d", 0, 1));
    if (!d_override && !sys.has("d")) throw ConfigError(sys.where("d") + "required key is missing");
    const RecipeParams p = read_params(sys);
    sys.finish();
    try {
        return make_recipe(id, d, p);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(sys.where("") + e.what());
    }
}

PlanConstants read_plan(Fields& top, const StiffSystem& sys) {
    PlanConstants k;
    k.eta = sys.eta;
    k.beta = sys.beta;
    k.tau = 2.0 + k.eta / 2.0;
    if (top.has("plan")) {
        Fields p = top.object("plan");
        k.kappa = p.number("kappa", k.kappa);
        k.tau = p.number("tau", k.tau);
        k.T = p.number("T", k.T);
        p.finish();
    }
    if (!(k.kappa > 0.0) || !(k.tau > 0.0) || !(k.T > 0.0)) throw ConfigError(top.where("plan") + "kappa, tau and T must be positive");
    return k;
}

Vec read_beta(Fields& top, Eigen::Index d) {
    if (!top.has("beta")) return Vec::Ones(d);
    const json& b = top.raw("beta");
    if (b.is_number()) return Vec::Constant(d, b.get<double>());
    const auto v = top.numbers("beta", {});
    if (static_cast<Eigen::Index>(v.size()) != d) throw ConfigError(top.where("beta") + "needs d entries");
    return Eigen::Map<const Vec>(v.data(), d);
}

Outcome run_calculus(Fields& f, std::uint64_t seed, Sink& sink) {
    SuiteConfig c;
    c.seed = seed;
    c.instances = static_cast<std::size_t>(f.integer("instances", 50, 1));
    c.points = static_cast<std::size_t>(f.integer("points", 1000, 1));
    c.tol = f.number("tol", 1e-12);
    f.finish();
    Outcome out;
    Table t{"calculus.csv", {"op", "instances", "points", "max_err", "size_checks", "size_failures", "pass"}, {}};
    auto rows = run_calculus_suite(c);
    rows.push_back(weighted_square_suite(seed));
    bool all = true;
    std::size_t n_inst = 0, n_pts = 0;
    for (const auto& r : rows) {
        n_inst += r.instances;
        n_pts += r.points;
        t.add(r.op, r.instances, r.points, r.max_err, r.size_checks, r.size_failures, r.pass);
        if (!r.pass) out.failures.push_back("calculus: " + r.op + " failed");
        all = all && r.pass;
    }
    Table sq{"square.csv", {"eps", "grid_sup_err", "outside_exact", "zero_exact", "pass"}, {}};
    for (double eps : {1e-1, 1e-2, 1e-3, 1e-4}) {
        const auto s = square_accuracy(eps);
        sq.add(eps, s.grid_sup_err, s.outside_exact, s.zero_exact, s.pass);
        if (!s.pass) out.failures.push_back("square accuracy failed at eps " + fmt(eps));
        all = all && s.pass;
    }
    t.add(std::string("all"), n_inst, n_pts, std::string(""), std::string(""), std::string(""), all);
    sink.put(t);
    sink.put(sq);
    out.summary["all_pass"] = all;
    return out;
}

Outcome run_convergence(Fields& f, std::uint64_t seed, Sink& sink) {
    const SystemRecipe r = read_system(f);
    const Eigen::Index d = r.sys.d;
    const double T = f.number("T", 1.0);
    std::vector<std::size_t> Ns;
    for (auto n : f.integers("N_list", {8, 16, 32, 64, 128})) Ns.push_back(static_cast<std::size_t>(n));
    const auto M = static_cast<std::size_t>(f.integer("M", 1024, 2));
    const auto ref = static_cast<std::size_t>(f.integer("ref_factor", 64, 1));
    Vec x0 = Vec::Zero(d);
    if (f.has("x0")) {
        const auto v = f.numbers("x0", {});
        if (static_cast<Eigen::Index>(v.size()) != d) throw ConfigError(f.where("x0") + "needs d entries");
        x0 = Eigen::Map<const Vec>(v.data(), d);
    }
    if (f.has("x0_first")) x0[0] = f.number("x0_first");
    std::optional<std::pair<double, double>> expect;
    if (f.has("expect_slope")) {
        const auto e = f.numbers("expect_slope", {});
        if (e.size() != 2 || e[0] > e[1]) throw ConfigError(f.where("expect_slope") + "expected [lo, hi]");
        expect = std::make_pair(e[0], e[1]);
    }
    const std::optional<double> p = f.has("p") ? std::optional<double>(f.number("p")) : std::nullopt;
    f.finish();
    const std::size_t Nmax = *std::max_element(Ns.begin(), Ns.end());
    for (auto n : Ns)
        if (Nmax % n != 0) throw ConfigError(f.where("N_list") + "every entry must divide the largest");

    Outcome out;
    const auto t0 = std::chrono::steady_clock::now();
    const RateStudy st = strong_rate_study(r.sys, network_coefficients(r.nets), x0, Ns, M, seed, T, ref);
    Table t{"convergence.csv", {"N", "h", "strong_err", "weak_err", "stderr"}, {}};
    for (const auto& row : st.rows) t.add(row.N, row.h, row.strong_err, row.weak_err, row.stderr_);
    sink.put(t);
    Table fit{"convergence_fit.csv", {"system", "d", "slope", "r2", "dropped_coarsest", "state_scale", "wall_ms"}, {}};
    fit.add(r.sys.id, static_cast<std::int64_t>(d), st.slope, st.r2, st.dropped_coarsest, st.state_scale, ms_since(t0));
    sink.put(fit);
    out.summary["slope"] = st.slope;
    out.summary["r2"] = st.r2;
    if (expect && !(st.slope >= expect->first && st.slope <= expect->second))
        out.failures.push_back("strong slope " + fmt(st.slope) + " outside [" + fmt(expect->first) + ", " +
                               fmt(expect->second) + "]");
    if (p) {
        const PathBundle pb(seed, M, Nmax, d, T);
        const MomentReport m = moment_check(r.sys, x0, {T, Nmax}, pb, *p);
        Table mt{"moments.csv",
                 {"p", "moment", "moment_stderr", "moment_bound", "discrete", "discrete_bound", "stability_lhs",
                  "stability_rhs", "pass"},
                 {}};
        mt.add(m.p, m.moment, m.moment_stderr, m.moment_bound, m.discrete, m.discrete_bound, m.stability_lhs,
               m.stability_rhs, m.pass);
        sink.put(mt);
        if (!m.pass) out.failures.push_back("moment check failed for p = " + fmt(*p));
    }
    return out;
}

/// Reference value: closed form for linear recipes, otherwise a fine exact-coefficient simulation.
std::function<double(const Vec&)> reference_value(const SystemRecipe& r, const Vec& beta, double T,
                                                  std::size_t paths, std::size_t steps, std::uint64_t seed) {
    if (r.sys.linear) return ou_value_function(r.sys, r.sys.sigma0 / std::sqrt(double(r.sys.d)), beta, T);
    const StiffSystem sys = r.sys;
    return [sys, beta, T, paths, steps, seed](const Vec& x) {
        const PathBundle pb(seed ^ 0x2545f4914f6cdd1dULL, paths, steps, sys.d, T);
        std::vector<double> v(paths);
        run_paths(sys, exact_coefficients(sys), x, {T, steps}, pb, [&](std::size_t m, std::size_t n, const Vec& y) {
            if (n == steps) v[m] = beta.dot(y.cwiseProduct(y));
        });
        return pairwise_sum(v) / static_cast<double>(paths);
    };
}

Outcome run_synth(Fields& f, std::uint64_t seed, Sink& sink) {
    const SystemRecipe r = read_system(f);
    const Eigen::Index d = r.sys.d;
    const double eps = f.number("eps", 0.25);
    if (!(eps > 0.0 && eps <= 1.0)) throw ConfigError(f.where("eps") + "must lie in (0, 1]");
    const Vec beta = read_beta(f, d);
    const PlanConstants k = read_plan(f, r.sys);
    const auto n_samples = static_cast<std::size_t>(f.integer("n_samples", 500, 2));
    const double max_size = f.number("max_size", 2e7);
    const bool save = f.boolean("save_network", false);
    std::size_t ref_paths = 4096, ref_steps = 256;
    if (f.has("reference")) {
        Fields rf = f.object("reference");
        ref_paths = static_cast<std::size_t>(rf.integer("paths", 4096, 1));
        ref_steps = static_cast<std::size_t>(rf.integer("steps", 256, 1));
        rf.finish();
    }
    if (f.has("Cplan") && f.has("calibrate")) throw ConfigError(f.where("Cplan") + "give either Cplan or calibrate");
    double Cplan = f.number("Cplan", 1.0);
    if (!(Cplan > 0.0)) throw ConfigError(f.where("Cplan") + "must be positive");
    Outcome out;
    const auto t0 = std::chrono::steady_clock::now();
    if (f.has("calibrate")) {
        Fields c = f.object("calibrate");
        const auto cd = static_cast<Eigen::Index>(c.integer("d", 2, 1));
        const int k_lo = static_cast<int>(c.integer("k_lo", 0, 0)), k_hi = static_cast<int>(c.integer("k_hi", 256, 0));
        c.finish();
        f.finish();
        if (k_hi < k_lo || k_hi > 1000) throw ConfigError(c.where("k_hi") + "need k_lo <= k_hi <= 1000");
        Fields again(f.raw("system"), "system");
        SystemRecipe rc;
        try {
            rc = make_recipe(again.string("id", ""), cd, [&] { return read_params(again); }());
        } catch (const std::invalid_argument& e) {
            throw ConfigError(c.where("d") + e.what());
        }
        const Vec bc = Vec::Constant(cd, beta.cwiseAbs().maxCoeff());
        const auto value = reference_value(rc, bc, k.T, ref_paths, ref_steps, seed);
        const Calibration cal = calibrate_cplan(rc, bc, eps, k, value, seed, n_samples, k_lo, k_hi);
        Table ct{"calibration.csv", {"d", "eps", "Cplan", "l2_error", "evaluated", "found", "wall_ms"}, {}};
        ct.add(static_cast<std::int64_t>(cd), eps, cal.Cplan, cal.l2, cal.evaluated, cal.found, ms_since(t0));
        sink.put(ct);
        if (!cal.found) out.failures.push_back("calibration found no passing Cplan");
        Cplan = cal.Cplan;
    } else {
        f.finish();
    }
    const auto t1 = std::chrono::steady_clock::now();
    const auto value = reference_value(r, beta, k.T, ref_paths, ref_steps, seed);
    const SynthesisResult s = synthesize(r, beta, eps, k, Cplan, value, seed, n_samples, max_size);
    Table t{"synth.csv",
            {"d", "eps", "N", "M", "D", "delta", "net_size", "net_depth", "l2_error", "l2_stderr", "wall_ms", "Cplan",
             "built", "measured"},
            {}};
    const long double size = s.built ? static_cast<long double>(s.report.size) : s.arch_size;
    const std::size_t depth = s.built ? s.report.depth : s.arch_depth;
    t.add(static_cast<std::int64_t>(d), eps, s.budget.N_real, s.budget.M_real, s.budget.D, s.budget.delta, size,
          depth, s.l2.mean, s.l2.stderr_, ms_since(t1), Cplan, s.built, s.measured);
    sink.put(t);
    if (save && s.built) {
        const CostPack cost = make_quadratic_cost(beta, s.budget.D, s.budget.eps_cost);
        sink.put_network("network.txt",
                         unroll_value_net(r.nets.mu_net, r.nets.sigma_cols, cost.net, r.sys, s.budget, seed).psi);
    }
    out.summary["l2_error"] = s.l2.mean;
    out.summary["Cplan"] = Cplan;
    if (!s.measured) out.failures.push_back("planned budget too large to measure");
    else if (s.l2.mean > eps) out.failures.push_back("L2 error " + fmt(s.l2.mean) + " exceeds eps " + fmt(eps));
    return out;
}

std::vector<Vec> read_actions(Fields& f, const std::string& key, const std::vector<Vec>& fallback) {
    if (!f.has(key)) return fallback;
    const json& a = f.raw(key);
    if (!a.is_array() || a.empty()) throw ConfigError(f.where(key) + "expected a non-empty array of action vectors");
    std::vector<Vec> out;
    for (const auto& u : a) {
        if (!u.is_array() || u.empty()) throw ConfigError(f.where(key) + "every action must be a non-empty array");
        Vec v(static_cast<Eigen::Index>(u.size()));
        for (std::size_t i = 0; i < u.size(); ++i) {
            if (!u[i].is_number()) throw ConfigError(f.where(key) + "action entries must be numbers");
            v[static_cast<Eigen::Index>(i)] = u[i].get<double>();
        }
        if (!out.empty() && v.size() != out.front().size())
            throw ConfigError(f.where(key) + "actions must share one dimension");
        out.push_back(v);
    }
    return out;
}

Outcome run_game(Fields& f, std::uint64_t seed, Sink& sink) {
    Fields sys = optional_object(f, "system");
    const std::string id = sys.string("id", "controlled_heat");
    if (id != "controlled_heat") throw ConfigError(sys.where("id") + "game studies use 'controlled_heat'");
    const auto d = static_cast<Eigen::Index>(sys.integer("d", 2, 1));
    RecipeParams p = read_params(sys);
    sys.finish();
    for (const auto& [key, v] : p)
        if (key != "a" && key != "c" && key != "s" && key != "eta")
            throw ConfigError(sys.where("params") + "controlled_heat has no parameter '" + key + "'");
    const double eps = f.number("eps", 0.1);
    const double T = f.number("T", 1.0);
    StrategyGrid grid;
    grid.times = f.numbers("times", {0.0, 0.5 * T});
    grid.U1 = read_actions(f, "U1", {Vec::Constant(1, -1.0), Vec::Constant(1, 1.0)});
    grid.U2 = read_actions(f, "U2", {Vec::Constant(1, -0.5), Vec::Constant(1, 0.5)});
    grid.kappa0 = f.number("kappa0", 1.0);
    double w1 = 0.0, w2 = 0.0;
    if (f.has("g")) {
        Fields g = f.object("g");
        w1 = g.number("u1_weight", 0.0);
        w2 = g.number("u2_weight", 0.0);
        g.finish();
    }
    std::size_t N = 4, M = 8;
    if (f.has("budget")) {
        Fields b = f.object("budget");
        N = static_cast<std::size_t>(b.integer("N", 4, 1));
        M = static_cast<std::size_t>(b.integer("M", 8, 1));
        b.finish();
    }
    const auto n_points = static_cast<std::size_t>(f.integer("points", 100, 1));
    const double tol = f.number("tol", 1e-8);
    f.finish();
    const auto U1 = grid.U1, U2 = grid.U2;
    grid.g = [U1, U2, w1, w2](const Strategy& a, const Strategy& b) {
        double s = 0.0;
        for (auto i : a) s += w1 * U1[i].squaredNorm();
        for (auto j : b) s -= w2 * U2[j].squaredNorm();
        return s;
    };
    ControlledRecipe cr;
    try {
        check_grid(grid);
        cr = make_controlled_heat(d, grid.U1.front().size(), grid.U2.front().size(), param(p, "a", 0.1),
                                  param(p, "c", 1.0), param(p, "s", 0.5), param(p, "eta", 0.5));
        interval_of_steps(grid, T, N);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(f.where("") + e.what());
    }
    SynthesisBudget b;
    b.N = N;
    b.M = M;
    b.N_real = static_cast<long double>(N);
    b.M_real = static_cast<long double>(M);
    b.T = T;
    b.D = truncation_radius(b.h(), cr.sys.eta);
    const double delta = game_delta(eps, d, grid.kappa0, grid.interventions());
    b.delta = delta;
    b.eps_cost = std::clamp(delta / (2.0 * static_cast<double>(d) * b.D * b.D), 1e-12, 0.25);
    const CostPack cost = make_quadratic_cost(Vec::Ones(d), b.D, b.eps_cost);

    Outcome out;
    const auto t0 = std::chrono::steady_clock::now();
    GameNetwork gn;
    try {
        gn = build_game_net(grid, cr.nets, cost.net, cr.sys, b, seed);
    } catch (const std::length_error& e) {
        throw ConfigError(f.where("U1") + e.what());
    }
    std::mt19937_64 g(seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Vec> xs(n_points, Vec(d));
    for (auto& x : xs)
        for (Eigen::Index i = 0; i < d; ++i) x[i] = u(g);
    double err = 0.0;
    for (const auto& x : xs) {
        const double want = brute_force_game_value(cr.sys, grid, cr.nets, cost.net, b, seed, x);
        err = std::max(err, std::abs(realize_scalar(gn.psi, x) - want) / (1.0 + std::abs(want)));
    }
    Table t{"game.csv",
            {"d", "eps", "M_interventions", "n_strategies", "net_size", "agreement_err", "delta", "wall_ms"},
            {}};
    t.add(static_cast<std::int64_t>(d), eps, grid.interventions(), gn.strategies.pairs(), gn.psi.size(), err, delta,
          ms_since(t0));
    sink.put(t);
    out.summary["agreement_err"] = err;
    if (!(err <= tol)) out.failures.push_back("game network disagrees with brute force: " + fmt(err));
    return out;
}

Outcome run_scaling(Fields& f, std::uint64_t, Sink& sink) {
    Fields sys = optional_object(f, "system");
    const std::string id = sys.string("id", "ou");
    if (sys.has("d")) throw ConfigError(sys.where("d") + "scaling studies take dimensions from 'dims'");
    const RecipeParams p = read_params(sys);
    sys.finish();
    std::vector<Eigen::Index> dims;
    for (auto v : f.integers("dims", {2, 4, 8, 16})) dims.push_back(static_cast<Eigen::Index>(v));
    const double eps = f.number("eps", 0.25);
    const auto eps_list = f.numbers("eps_list", {0.4, 0.2, 0.1});
    const auto d_eps = static_cast<Eigen::Index>(f.integer("d_eps", 4, 1));
    const double Cplan = f.number("Cplan", 1.0);
    const double min_r2 = f.number("min_r2", 0.95);
    const double beta_w = f.number("beta", 1.0);
    auto recipe = [&](Eigen::Index d) {
        try {
            return make_recipe(id, d, p);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(sys.where("") + e.what());
        }
    };
    const SystemRecipe probe = recipe(dims.front());
    const PlanConstants k = read_plan(f, probe.sys);
    f.finish();
    for (double e : eps_list)
        if (!(e > 0.0 && e <= 1.0)) throw ConfigError(f.where("eps_list") + "entries must lie in (0, 1]");

    Table t{"scaling.csv", {"sweep", "d", "eps", "N", "M", "D", "net_size", "net_depth"}, {}};
    auto row = [&](const std::string& sweep, Eigen::Index d, double e) {
        const SystemRecipe r = recipe(d);
        const SynthesisBudget b = plan_budget(e, d, k, Cplan, beta_w);
        const CostPack cost = make_quadratic_cost(Vec::Constant(d, beta_w), b.D, b.eps_cost);
        const long double size = unrolled_size(r.nets.mu_net, r.nets.sigma_cols, cost.net, d, b.N_real, b.M_real);
        const long double depth = b.N_real * (r.nets.mu_net.depth() - 1) + 1 + cost.net.depth();
        t.add(sweep, static_cast<std::int64_t>(d), e, b.N_real, b.M_real, b.D, size, depth);
        return size;
    };
    Outcome out;
    Table fit{"scaling_fit.csv", {"sweep", "slope", "r2", "pass"}, {}};
    std::vector<double> lx, ly;
    for (auto d : dims) {
        lx.push_back(std::log(double(d)));
        ly.push_back(std::log(static_cast<double>(row("dimension", d, eps))));
    }
    auto record = [&](const std::string& sweep) {
        const LinearFit lf = lx.size() >= 2 ? linear_fit(lx, ly) : LinearFit{};
        const bool ok = std::isfinite(lf.slope) && std::isfinite(lf.r2) && lf.r2 >= min_r2;
        fit.add(sweep, lf.slope, lf.r2, ok);
        out.summary[sweep + "_slope"] = lf.slope;
        out.summary[sweep + "_r2"] = lf.r2;
        if (!ok) out.failures.push_back(sweep + " sweep: slope " + fmt(lf.slope) + ", R^2 " + fmt(lf.r2));
    };
    record("dimension");
    lx.clear();
    ly.clear();
    for (double e : eps_list) {
        lx.push_back(std::log(1.0 / e));
        ly.push_back(std::log(static_cast<double>(row("accuracy", d_eps, e))));
    }
    record("accuracy");
    sink.put(t);
    sink.put(fit);
    return out;
}

struct RunRecord {
    Outcome outcome;
    std::string status;
    std::string error;
};

std::uint64_t effective_seed(const json& cfg, std::string& source) {
    if (cfg.contains("seed")) {
        if (!cfg["seed"].is_number_unsigned()) throw ConfigError("field 'seed': expected a non-negative integer");
        source = "config";
        return cfg["seed"].get<std::uint64_t>();
    }
    if (const char* env = std::getenv("DEEPSTIFF_SEED")) {
        char* end = nullptr;
        const auto v = std::strtoull(env, &end, 10);
        if (end == env || *end != '\0') throw ConfigError("DEEPSTIFF_SEED: expected a non-negative integer");
        source = "env";
        return v;
    }
    source = "default";
    return 1;
}

/// Runs one study into `dir`, writing the manifest last.  Config errors propagate before any artifact.
RunRecord execute(const std::string& study, const json& cfg, std::uint64_t seed, const std::string& seed_source,
                  const fs::path& dir) {
    if (std::find(kStudies.begin(), kStudies.end(), study) == kStudies.end())
        throw ConfigError("field 'study': unknown study '" + study + "'");
    Fields f(cfg, "");
    if (f.string("study", study) != study)
        throw ConfigError("field 'study': config declares '" + cfg["study"].get<std::string>() +
                          "' but the subcommand is '" + study + "'");
    f.has("seed");
    f.string("output", "");
    const auto t0 = std::chrono::steady_clock::now();
    RunRecord rec;
    Sink sink(dir);
    try {
        if (study == "calculus-check") rec.outcome = run_calculus(f, seed, sink);
        else if (study == "convergence") rec.outcome = run_convergence(f, seed, sink);
        else if (study == "synth") rec.outcome = run_synth(f, seed, sink);
        else if (study == "game") rec.outcome = run_game(f, seed, sink);
        else rec.outcome = run_scaling(f, seed, sink);
        rec.status = rec.outcome.pass() ? "pass" : "assertion_failed";
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        rec.status = "runtime_error";
        rec.error = e.what();
    }
    json m;
    m["tool"] = "deepstiff";
    m["version"] = DEEPSTIFF_VERSION;
    m["study"] = study;
    m["config"] = cfg;
    m["seed"] = seed;
    m["seed_source"] = seed_source;
    m["threads"] = threads();
    m["status"] = rec.status;
    m["partial"] = rec.status == "runtime_error";
    if (!rec.error.empty()) m["error"] = rec.error;
    m["failures"] = rec.outcome.failures;
    m["summary"] = rec.outcome.summary;
    json arts = json::array();
    for (const auto& t : sink.tables()) {
        json a;
        a["file"] = t.file;
        a["rows"] = t.rows.size();
        a["columns"] = t.header;
        json det = json::array();
        for (const auto& h : t.header)
            if (!is_timing_column(h)) det.push_back(h);
        a["deterministic_columns"] = det;
        arts.push_back(a);
    }
    m["artifacts"] = arts;
    m["networks"] = sink.networks();
    m["wall_ms"] = ms_since(t0);
    std::ofstream(dir / "manifest.json") << m.dump(2) << "\n";
    return rec;
}

int report(const RunRecord& rec, const fs::path& dir) {
    std::cout << "status: " << rec.status << " (artifacts in " << dir.string() << ")\n";
    for (const auto& f : rec.outcome.failures) std::cout << "  failure: " << f << "\n";
    if (!rec.error.empty()) std::cerr << "error: " << rec.error << "\n";
    return rec.status == "pass" ? kPass : kAssertion;
}

int verify(const std::string& config_path, const fs::path& dir) {
    const fs::path mpath = dir / "manifest.json";
    std::ifstream in(mpath);
    if (!in) throw ArtifactError("missing artifact " + mpath.string());
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ArtifactError(mpath.string() + ": unreadable manifest: " + e.what());
    }
    if (!manifest.contains("study") || !manifest.contains("config") || !manifest.contains("artifacts"))
        throw ArtifactError(mpath.string() + ": manifest lacks study, config or artifacts");
    const json cfg = config_path.empty() ? manifest["config"] : load_config(config_path);
    const std::string study = cfg.value("study", manifest["study"].get<std::string>());
    std::string source;
    std::uint64_t seed = 0;
    if (cfg.contains("seed")) seed = effective_seed(cfg, source);
    else seed = manifest.value("seed", std::uint64_t{1});
    for (const auto& a : manifest["artifacts"])
        if (!fs::exists(dir / a["file"].get<std::string>()))
            throw ArtifactError("missing artifact " + (dir / a["file"].get<std::string>()).string());
    const fs::path tmp = dir / ".verify";
    fs::remove_all(tmp);
    execute(study, cfg, seed, "verify", tmp);
    std::vector<std::string> diffs;
    std::size_t n = 0;
    for (const auto& a : manifest["artifacts"]) {
        const std::string file = a["file"].get<std::string>();
        const Table want = read_table(dir / file);
        if (!fs::exists(tmp / file)) {
            diffs.push_back(file + ": not reproduced");
            continue;
        }
        const auto d = compare_tables(want, read_table(tmp / file));
        diffs.insert(diffs.end(), d.begin(), d.end());
        ++n;
    }
    fs::remove_all(tmp);
    if (diffs.empty()) {
        std::cout << "verify: " << n << " artifacts reproduced identically (seed " << seed << ", threads "
                  << threads() << ")\n";
        return kPass;
    }
    std::cout << "verify: mismatch\n";
    for (const auto& d : diffs) std::cout << "  " << d << "\n";
    return kAssertion;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Network synthesis and stiff SDE experiments"};
    app.set_version_flag("--version", std::string(DEEPSTIFF_VERSION));
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_path, out_dir;
    unsigned n_threads = std::max(1u, std::thread::hardware_concurrency());
    app.add_option("--config", config_path, "Experiment configuration (JSON)");
    app.add_option("--out", out_dir, "Artifact directory");
    app.add_option("--threads", n_threads, "Worker threads")->check(CLI::Range(1u, 1024u));
    for (const auto& s : kStudies) app.add_subcommand(s, "Run the " + s + " study");
    app.add_subcommand("verify", "Re-run recorded artifacts and compare deterministic columns");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kPass : kConfig;
    }
    set_threads(n_threads);
    const std::string sub = app.get_subcommands().front()->get_name();
    try {
        if (sub == "verify") {
            if (out_dir.empty()) throw ConfigError("verify needs --out <dir> with recorded artifacts");
            return verify(config_path, out_dir);
        }
        json cfg = config_path.empty() ? json::object({{"study", sub}}) : load_config(config_path);
        if (!cfg.is_object()) throw ConfigError(config_path + ": top level must be an object");
        std::string source;
        const std::uint64_t seed = effective_seed(cfg, source);
        fs::path dir = out_dir;
        if (dir.empty()) dir = cfg.contains("output") && cfg["output"].is_string() ? cfg["output"].get<std::string>() : "deepstiff-out";
        return report(execute(sub, cfg, seed, source, dir), dir);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const ArtifactError& e) {
        std::cerr << "artifact error: " << e.what() << "\n";
        return kArtifact;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kAssertion;
    }
}

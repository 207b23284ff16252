// Acceptance run: one PASS/FAIL line per criterion, nonzero exit when any fails.
#include "deepstiff/calculus_suite.hpp"
#include "deepstiff/game_synth.hpp"
#include "deepstiff/value_synth.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>

#ifndef DEEPSTIFF_CLI_PATH
#error "DEEPSTIFF_CLI_PATH must name the CLI executable"
#endif

using namespace deepstiff;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = true;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.4g", v);
    return b;
}

std::vector<Vec> unit_points(Eigen::Index d, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 g(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Vec> xs(n, Vec(d));
    for (auto& x : xs)
        for (Eigen::Index i = 0; i < d; ++i) x[i] = u(g);
    return xs;
}

SynthesisBudget fixed_budget(std::uint64_t N, std::uint64_t M, double eta, double T = 1.0) {
    SynthesisBudget b;
    b.N = N;
    b.M = M;
    b.N_real = static_cast<long double>(N);
    b.M_real = static_cast<long double>(M);
    b.T = T;
    b.D = truncation_radius(b.h(), eta);
    b.eps_cost = 1e-3;
    return b;
}

Verdict calculus_exactness() {
    const auto t0 = Clock::now();
    const auto rows = run_calculus_suite({50, 10000, 1e-12, 1});
    Verdict v;
    double worst = 0.0;
    for (const auto& r : rows) {
        worst = std::max(worst, r.max_err);
        if (r.max_err > 1e-12 || r.instances < 50) {
            v.pass = false;
            v.detail += r.op + " failed; ";
        }
    }
    const double s = seconds_since(t0);
    v.pass = v.pass && rows.size() == 10 && s < 60.0;
    v.detail += std::to_string(rows.size()) + " ops, worst rel err " + num(worst) + ", " + num(s) + " s";
    return v;
}

Verdict complexity_bounds() {
    auto rows = run_calculus_suite({50, 16, 1e-12, 2});
    rows.push_back(weighted_square_suite(3));
    Verdict v;
    std::size_t checks = 0, failures = 0;
    for (const auto& r : rows) {
        checks += r.size_checks;
        failures += r.size_failures;
        if (r.size_failures) v.detail += r.op + " over bound; ";
    }
    v.pass = failures == 0 && checks > 0;
    v.detail += std::to_string(checks) + " size checks, " + std::to_string(failures) + " over bound";
    return v;
}

Verdict square_net() {
    const auto t0 = Clock::now();
    Verdict v;
    for (double eps : {1e-1, 1e-2, 1e-3, 1e-4}) {
        const auto a = square_accuracy(eps);
        v.pass = v.pass && a.pass && a.grid_sup_err <= eps && a.outside_exact && a.zero_exact;
        v.detail += "eps " + num(eps) + ": " + num(a.grid_sup_err) + "; ";
    }
    const double s = seconds_since(t0);
    v.pass = v.pass && s < 10.0;
    v.detail += num(s) + " s";
    return v;
}

Verdict implicit_stability() {
    const Eigen::Index d = 32;
    const double a = 3.2e4 / (std::numbers::pi * std::numbers::pi * double(d * d));
    const auto r = make_galerkin_heat(d, a, 1.0, 0.5);
    Verdict v;
    double worst_r = 0.0, worst_c = 0.0;
    std::uint64_t seed = 1;
    for (double h : {1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0}) {
        const auto rep = ImplicitFactor(r.sys.A, h).check_contraction(1000, seed++);
        v.pass = v.pass && rep.ok;
        worst_r = std::max(worst_r, rep.worst_resolvent);
        worst_c = std::max(worst_c, rep.worst_complement);
    }
    v.detail = "|A| = " + num(op_norm(r.sys.A)) + ", worst resolvent " + num(worst_r) + ", worst complement " +
               num(worst_c);
    return v;
}

Verdict strong_rate() {
    const auto t0 = Clock::now();
    const std::vector<std::size_t> Ns{8, 16, 32, 64, 128};
    Verdict v;
    const auto heat = make_galerkin_heat(8, 0.1, 1.0, 0.75);
    Vec e1 = Vec::Zero(8);
    e1[0] = 1.0;
    const auto sh = strong_rate_study(heat.sys, network_coefficients(heat.nets), e1, Ns, 4096, 11, 1.0);
    const auto ou = make_ou(8, 1.0, 4096.0, 1.0);
    const auto so = strong_rate_study(ou.sys, network_coefficients(ou.nets), Vec::Zero(8), Ns, 4096, 12, 1.0);
    const double s = seconds_since(t0);
    v.pass = sh.slope >= 0.4 && sh.slope <= 0.6 && so.slope >= 0.4 && so.slope <= 0.6 && s < 300.0;
    v.detail = "galerkin_heat slope " + num(sh.slope) + ", ou slope " + num(so.slope) + ", " + num(s) + " s";
    return v;
}

Verdict gap_bound() {
    const auto t0 = Clock::now();
    const auto r = make_galerkin_heat(4, 0.1, 1.0, 0.75);
    const Vec x0 = Vec::Constant(4, 0.5);
    const EulerConfig cfg{1.0, 64};
    const PathBundle pb(21, 1024, 64, 4, 1.0);
    Verdict v;
    for (double g : {0.0, 0.01, 0.02}) {
        const auto rep = coupled_gap_check(r.sys, shifted_coefficients(r.sys, g), x0, cfg, pb);
        v.pass = v.pass && rep.pass && (g != 0.0 || rep.gap == 0.0);
        v.detail += "gamma " + num(g) + ": " + num(rep.gap) + " <= " + num(rep.bound) + "; ";
    }
    const double s = seconds_since(t0);
    v.pass = v.pass && s < 120.0;
    v.detail += num(s) + " s";
    return v;
}

Verdict moment_bounds() {
    const auto t0 = Clock::now();
    Verdict v;
    for (const auto& r : {make_ou(4, 1.0, 64.0, 1.0, 0.5), make_galerkin_heat(4, 0.1, 1.0, 0.75)}) {
        const Vec x0 = Vec::Constant(4, 0.5);
        for (double p : {2.0, 2.4}) {
            const auto rep = moment_check(r.sys, x0, {1.0, 32}, PathBundle(31, 2048, 32, 4, 1.0), p);
            v.pass = v.pass && rep.pass;
            v.detail += r.sys.id + " p=" + num(p) + (rep.pass ? " ok; " : " FAILED; ");
        }
    }
    const double s = seconds_since(t0);
    v.pass = v.pass && s < 120.0;
    v.detail += num(s) + " s";
    return v;
}

Verdict oracle_equivalence() {
    const auto t0 = Clock::now();
    Verdict v;
    double worst = 0.0;
    for (Eigen::Index d : {2, 8})
        for (const auto& id : {std::string("galerkin_heat"), std::string("ou")})
            for (std::uint64_t N : {4, 16})
                for (std::uint64_t M : {8, 64}) {
                    const auto r = make_recipe(id, d);
                    const SynthesisBudget b = fixed_budget(N, M, r.sys.eta);
                    const CostPack cost = make_quadratic_cost(Vec::Ones(d), b.D, b.eps_cost);
                    const auto u = unroll_value_net(r.nets.mu_net, r.nets.sigma_cols, cost.net, r.sys, b, 41);
                    const auto xs = unit_points(d, 100, 42);
                    const auto want = mc_reference_batch(r.sys, network_coefficients(r.nets), cost.net, b, 41, xs);
                    for (std::size_t i = 0; i < xs.size(); ++i) {
                        const double e = std::abs(realize_scalar(u.psi, xs[i]) - want[i]) / (1.0 + std::abs(want[i]));
                        worst = std::max(worst, e);
                    }
                }
    const double s = seconds_since(t0);
    v.pass = worst <= 1e-8 && s < 180.0;
    v.detail = "16 configurations, worst rel diff " + num(worst) + ", " + num(s) + " s";
    return v;
}

Verdict end_to_end() {
    const auto t0 = Clock::now();
    RecipeParams p{{"lo", 1.0}, {"hi", 64.0}, {"s", 0.3}};
    const PlanConstants k{};
    const auto r2 = make_recipe("ou", 2, p);
    const Vec b2 = Vec::Ones(2);
    const auto cal = calibrate_cplan(r2, b2, 0.25, k, ou_value_function(r2.sys, 0.3, b2, k.T), 7, 500);
    const auto r4 = make_recipe("ou", 4, p);
    const Vec b4 = Vec::Ones(4);
    const auto s4 = synthesize(r4, b4, 0.25, k, cal.Cplan, ou_value_function(r4.sys, 0.3, b4, k.T), 7, 500);
    const double s = seconds_since(t0);
    Verdict v;
    v.pass = cal.found && s4.measured && s4.l2.mean <= 0.25 && s < 300.0;
    v.detail = "Cplan 2^" + num(std::log2(cal.Cplan)) + ", N " + std::to_string(s4.budget.N) + ", M " +
               std::to_string(s4.budget.M) + ", L2 " + num(s4.l2.mean) + " +- " + num(s4.l2.stderr_) +
               (s4.built ? " (network)" : " (direct simulation)") + ", " + num(s) + " s";
    return v;
}

Verdict polynomial_scaling() {
    const auto t0 = Clock::now();
    const PlanConstants k{};
    auto size_at = [&](Eigen::Index d, double eps) {
        const auto r = make_recipe("ou", d);
        const auto b = plan_budget(eps, d, k, 1.0, 1.0);
        const CostPack cost = make_quadratic_cost(Vec::Ones(d), b.D, b.eps_cost);
        return static_cast<double>(unrolled_size(r.nets.mu_net, r.nets.sigma_cols, cost.net, d, b.N_real, b.M_real));
    };
    std::vector<double> lx, ly;
    for (Eigen::Index d : {2, 4, 8, 16}) {
        lx.push_back(std::log(double(d)));
        ly.push_back(std::log(size_at(d, 0.25)));
    }
    const auto fd = linear_fit(lx, ly);
    lx.clear();
    ly.clear();
    for (double e : {0.4, 0.2, 0.1}) {
        lx.push_back(std::log(1.0 / e));
        ly.push_back(std::log(size_at(4, e)));
    }
    const auto fe = linear_fit(lx, ly);
    const double s = seconds_since(t0);
    Verdict v;
    v.pass = std::isfinite(fd.slope) && std::isfinite(fe.slope) && fd.r2 >= 0.95 && fe.r2 >= 0.95 && s < 600.0;
    v.detail = "dimension slope " + num(fd.slope) + " (R^2 " + num(fd.r2) + "), accuracy slope " + num(fe.slope) +
               " (R^2 " + num(fe.r2) + ")";
    return v;
}

Network constant_net(Eigen::Index d, double c) {
    return Network({Layer(Mat::Zero(2, d), Vec::Zero(2)), Layer(Mat::Zero(1, 2), Vec::Constant(1, c))});
}

Verdict game_equivalence() {
    const auto t0 = Clock::now();
    const auto cr = make_controlled_heat(2, 1, 1, 0.1, 1.0, 0.5);
    StrategyGrid grid;
    grid.times = {0.0, 0.5};
    grid.U1 = {Vec::Constant(1, -1.0), Vec::Constant(1, 1.0)};
    grid.U2 = {Vec::Constant(1, -0.5), Vec::Constant(1, 0.5)};
    SynthesisBudget b = fixed_budget(4, 8, cr.sys.eta);
    const CostPack cost = make_quadratic_cost(Vec::Ones(2), b.D, b.eps_cost);
    const GameNetwork gn = build_game_net(grid, cr.nets, cost.net, cr.sys, b, 51);
    double worst = 0.0;
    for (const auto& x : unit_points(2, 100, 52)) {
        const double want = brute_force_game_value(cr.sys, grid, cr.nets, cost.net, b, 51, x);
        worst = std::max(worst, std::abs(realize_scalar(gn.psi, x) - want) / (1.0 + std::abs(want)));
    }
    const Network mat = infsup_net({{constant_net(2, 1), constant_net(2, 4)}, {constant_net(2, 3), constant_net(2, 2)}});
    const double mv = realize_scalar(mat, Vec::Constant(2, 0.3));
    const double s = seconds_since(t0);
    Verdict v;
    v.pass = gn.strategies.pairs() == 16 && worst <= 1e-8 && mv == 3.0 && s < 120.0;
    v.detail = std::to_string(gn.strategies.pairs()) + " pairs, worst rel diff " + num(worst) + ", matrix game " +
               num(mv) + ", " + num(s) + " s";
    return v;
}

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string("\"") + DEEPSTIFF_CLI_PATH + "\" " + args + " >> \"" + log.string() + "\" 2>&1";
    const int rc = std::system(cmd.c_str());
    return rc == -1 ? -1 : WEXITSTATUS(rc);
}

Verdict reproducibility() {
    const fs::path root = fs::temp_directory_path() / ("deepstiff-acceptance-" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    const fs::path log = root / "cli.log";
    const std::vector<std::pair<std::string, std::string>> studies{
        {"calculus-check", R"({"study":"calculus-check","seed":3,"instances":5,"points":200})"},
        {"convergence", R"({"study":"convergence","seed":7,"system":{"id":"ou","d":2},"N_list":[4,8,16],"M":256,"p":2})"},
        {"synth", R"({"study":"synth","seed":6,"system":{"id":"ou","d":2,"params":{"lo":1,"hi":64,"s":0.3}},"eps":0.25,"n_samples":200,"calibrate":{"d":2}})"},
        {"game", R"({"study":"game","seed":4,"points":20})"},
        {"scaling", R"({"study":"scaling","seed":5})"}};
    Verdict v;
    for (const auto& [name, text] : studies) {
        const fs::path cfg = root / (name + ".json");
        std::ofstream(cfg) << text << "\n";
        const fs::path out = root / name;
        const int rc = run_cli(name + " --config \"" + cfg.string() + "\" --out \"" + out.string() + "\" --threads 1", log);
        const int v1 = run_cli("verify --out \"" + out.string() + "\" --threads 1", log);
        const int v4 = run_cli("verify --out \"" + out.string() + "\" --threads 4", log);
        const bool ok = rc == 0 && v1 == 0 && v4 == 0;
        v.pass = v.pass && ok;
        v.detail += name + (ok ? " ok; " : " rc " + std::to_string(rc) + "/" + std::to_string(v1) + "/" +
                                               std::to_string(v4) + "; ");
    }
    if (v.pass) fs::remove_all(root);
    else v.detail += "log in " + log.string();
    return v;
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
        {"calculus exactness", calculus_exactness},
        {"complexity bounds", complexity_bounds},
        {"square-net accuracy", square_net},
        {"implicit-scheme stability", implicit_stability},
        {"strong rate", strong_rate},
        {"ES-PES gap bound", gap_bound},
        {"moment bounds", moment_bounds},
        {"synthesis oracle equivalence", oracle_equivalence},
        {"end-to-end accuracy", end_to_end},
        {"polynomial scaling", polynomial_scaling},
        {"game equivalence", game_equivalence},
        {"reproducibility", reproducibility}};
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        failed += !v.pass;
        std::cout << (v.pass ? "PASS " : "FAIL ") << (i + 1 < 10 ? " " : "") << i + 1 << " " << criteria[i].first
                  << ": " << v.detail << std::endl;
    }
    std::cout << criteria.size() - failed << "/" << criteria.size() << " criteria passed" << std::endl;
    return failed ? 1 : 0;
}

#pragma once

#include "deepstiff/nn_calculus.hpp"
#include "deepstiff/sde_engine.hpp"
#include "deepstiff/systems.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <tuple>
#include <optional>

namespace deepstiff {

/// Constants entering the planning inequalities.
struct PlanConstants {
    double eta = 0.5;
    double kappa = 1.0;
    double tau = 2.25;
    double T = 1.0;
    double beta = 0.0;
};

/// (eps, delta, D, N, M) with the planner constant that produced them.
struct SynthesisBudget {
    double eps = 0.0;
    double delta = 0.0;
    double D = 1.0;
    std::uint64_t N = 1;
    std::uint64_t M = 1;
    double Cplan = 1.0;
    double T = 1.0;
    double eps_cost = 0.25;  ///< accuracy handed to the cost network
    long double N_real = 1;  ///< unrounded planner values; N and M saturate at 2^62
    long double M_real = 1;
    bool n_at_floor = false;
    bool m_at_floor = false;
    bool saturated = false;

    double h() const { return T / static_cast<double>(N); }
};

inline constexpr std::uint64_t kMaxCount = std::uint64_t{1} << 62;

/// D = ceil(h^{-(eta+4)/(6 eta+8)}).
inline double truncation_radius(double h, double eta) {
    return std::ceil(std::pow(h, -(eta + 4.0) / (6.0 * eta + 8.0)) - 1e-12);
}

namespace detail {

inline long double pow_ld(long double b, long double e) { return std::exp(e * std::log(b)); }

inline std::uint64_t saturate(long double v, bool& sat) {
    if (!(v < static_cast<long double>(kMaxCount))) {
        sat = true;
        return kMaxCount;
    }
    return static_cast<std::uint64_t>(std::ceil(v - 1e-9L));
}

}  // namespace detail

/// Smallest power-of-two N meeting the first inequality and the step floor; D from h; delta and M
/// from the second and third inequalities.  The cost accuracy fills theta <= delta kappa d^kappa D^kappa,
/// capped at theta <= eps / 2.
inline SynthesisBudget plan_budget(double eps, Eigen::Index d, const PlanConstants& k, double Cplan,
                                   double beta_inf = 1.0) {
    if (!(eps > 0.0 && eps <= 1.0)) throw std::invalid_argument("plan_budget: eps must lie in (0, 1]");
    if (!(Cplan > 0.0)) throw std::invalid_argument("plan_budget: Cplan must be positive");
    if (!(k.eta > 0.0 && k.eta < 1.0)) throw std::invalid_argument("plan_budget: eta must lie in (0, 1)");
    SynthesisBudget b;
    b.eps = eps;
    b.Cplan = Cplan;
    b.T = k.T;
    const long double dd = static_cast<long double>(d);
    const long double e2 = static_cast<long double>(Cplan) * eps * eps;
    const long double eta = k.eta, kap = k.kappa, tau = k.tau;

    // d^{6 kappa + max(tau, 2 kappa)} h^{2 eta/(3 eta+4)} <= C eps^2
    const long double a1 = 6 * kap + std::max(tau, 2 * kap);
    const long double h_max = detail::pow_ld(e2 / detail::pow_ld(dd, a1), (3 * eta + 4) / (2 * eta));
    const long double n_need = k.T / h_max;
    const long double floor_n = step_floor(k.beta, k.eta, k.T);
    const long double n_min = std::max(n_need, floor_n);
    b.n_at_floor = floor_n >= n_need;
    const long double log2n = std::ceil(std::log2(std::max(n_min, 1.0L)) - 1e-12L);
    b.N_real = std::exp2(log2n);
    b.N = detail::saturate(b.N_real, b.saturated);
    const long double h = k.T / b.N_real;
    b.D = truncation_radius(static_cast<double>(h), k.eta);

    // delta^2 d^{4 kappa} h^{-(eta+4) kappa/(3 eta+4)} <= C eps^2
    const long double d2 = e2 / detail::pow_ld(dd, 4 * kap) * detail::pow_ld(h, (eta + 4) * kap / (3 * eta + 4));
    b.delta = static_cast<double>(std::min(std::sqrt(d2), 0.5L));

    // d^{2 kappa + max(tau/2, 2 kappa)} h^{-(eta+4)/(3 eta+4)} / M <= C eps^2
    const long double a3 = 2 * kap + std::max(tau / 2, 2 * kap);
    const long double m_need = detail::pow_ld(dd, a3) * detail::pow_ld(h, -(eta + 4) / (3 * eta + 4)) / e2;
    b.m_at_floor = m_need <= 1.0L;
    b.M_real = std::max(1.0L, std::ceil(m_need - 1e-9L));
    b.M = detail::saturate(b.M_real, b.saturated);

    const long double slot = static_cast<long double>(b.delta) * kap * detail::pow_ld(dd, kap) *
                             detail::pow_ld(b.D, kap) / (static_cast<long double>(beta_inf) * dd * b.D * b.D);
    const long double cap = static_cast<long double>(eps) / (2 * static_cast<long double>(beta_inf) * dd * b.D * b.D);
    b.eps_cost = static_cast<double>(std::clamp(std::min(slot, cap), 1e-12L, 0.25L));
    return b;
}

/// Probability measure with a declared moment certificate int |x|^{4+eta} <= tau d^tau.
struct Measure {
    std::string name;
    StateSampler sample;
    double tau = 2.25;
};

/// Uniform measure on [0, 1]^d; its (4+eta)-moment is at most d^{2+eta/2}.
inline Measure uniform_unit_cube(Eigen::Index d, double eta) {
    return {"uniform_unit_cube",
            [d](std::mt19937_64& g) {
                std::uniform_real_distribution<double> u(0.0, 1.0);
                Vec x(d);
                for (Eigen::Index i = 0; i < d; ++i) x[i] = u(g);
                return x;
            },
            2.0 + eta / 2.0};
}

/// (t, x) -> sigma(t, x) b for column networks of one architecture.
inline Network diffusion_contract_net(const std::vector<Network>& cols, const Vec& b) {
    if (cols.empty()) throw std::invalid_argument("diffusion_contract_net: no column networks");
    if (static_cast<Eigen::Index>(cols.size()) != b.size())
        throw std::invalid_argument("diffusion_contract_net: " + std::to_string(cols.size()) + " columns but b has " +
                                    std::to_string(b.size()) + " entries");
    return combine(std::vector<double>(b.data(), b.data() + b.size()), cols);
}

/// Pre-fold mapping a branch input (x, t, u) onto a coefficient input (t, x, u).
inline Mat time_last_permutation(Eigen::Index d, Eigen::Index extra = 0) {
    Mat P = Mat::Zero(d + 1 + extra, d + 1 + extra);
    P(0, d) = 1.0;
    for (Eigen::Index i = 0; i < d; ++i) P(1 + i, i) = 1.0;
    for (Eigen::Index j = 0; j < extra; ++j) P(d + 1 + j, d + 1 + j) = 1.0;
    return P;
}

struct UnrollReport {
    std::uint64_t size = 0;
    std::size_t depth = 0;
    std::vector<std::int64_t> dims;
    long double bound = 0;         ///< 2 M^2 (C(cost) + C(Id_{d,1}) + 4 (d sum C(sigma_i) + C(Id_{d,2}))^3 (N + 1))
    std::uint64_t path_size = 0;   ///< C of one per-path network
    bool width_ok = true;          ///< last hidden width 2d + sum of branch widths after each step
    double wall_ms = 0.0;
};

/// Closed-form bound on the unrolled network size.
inline long double unroll_bound(const Network& cost, const std::vector<Network>& sigma_cols, Eigen::Index d,
                                std::uint64_t N, std::uint64_t M) {
    const long double dd = static_cast<long double>(d);
    long double sc = 0;
    for (const auto& c : sigma_cols) sc += static_cast<long double>(c.size());
    const long double inner = dd * sc + 4 * dd * dd + 3 * dd;
    const long double Ml = static_cast<long double>(M);
    return 2 * Ml * Ml *
           (static_cast<long double>(cost.size()) + dd * dd + dd +
            4 * inner * inner * inner * (static_cast<long double>(N) + 1));
}

/// Coefficient nets with inputs (t, x[, u]); u_steps[n] is the action vector held on [t_n, t_{n+1}).
struct CoefficientNets {
    Network mu;
    std::vector<Network> sigma_cols;
    Eigen::Index action_dim = 0;
};

namespace detail {

/// One path: x -> cost(Y_N) for the fixed increments of path m.
inline Network unroll_path(const CoefficientNets& nets, const Network& cost_net, const Mat& inv, double h,
                           std::size_t N, const std::function<Vec(std::size_t)>& increment,
                           const std::function<Vec(std::size_t)>& action, bool& width_ok) {
    const Eigen::Index d = inv.rows();
    const Eigen::Index du = nets.action_dim;
    const Mat P = time_last_permutation(d, du);
    const Network mu_branch = fold_affine(fold_affine(nets.mu, Side::Pre, P, Vec::Zero(d + 1 + du)), Side::Post,
                                          h * Mat::Identity(d, d), Vec::Zero(d));
    Network psi = fold_affine(identity_net(d, 1), Side::Pre, inv, Vec::Zero(d));
    for (std::size_t n = 0; n < N; ++n) {
        const Network contract = diffusion_contract_net(nets.sigma_cols, increment(n));
        const Network sigma_branch = fold_affine(contract, Side::Pre, P, Vec::Zero(d + 1 + du));
        Vec u(1 + du);
        u[0] = h * static_cast<double>(n);
        if (du > 0) u.tail(du) = action(n);
        Network stepped = add_compose(psi, {mu_branch, sigma_branch}, u);
        const std::size_t Lp = mu_branch.depth();
        if (Lp >= 2) {
            const auto dims = stepped.dims();
            const std::int64_t want = 2 * d + mu_branch.layers()[Lp - 1].cols() + sigma_branch.layers()[Lp - 1].cols();
            if (dims[dims.size() - 2] != want) width_ok = false;
        }
        psi = fold_affine(stepped, Side::Post, inv, Vec::Zero(d));
    }
    return compose(cost_net, psi);
}

inline void check_coefficient_nets(const CoefficientNets& nets, Eigen::Index d) {
    if (nets.sigma_cols.size() != static_cast<std::size_t>(d))
        throw std::invalid_argument("unroll: need d = " + std::to_string(d) + " sigma column networks, got " +
                                    std::to_string(nets.sigma_cols.size()));
    require_same_arch(nets.sigma_cols, "unroll (sigma columns)");
    const Eigen::Index in = d + 1 + nets.action_dim;
    if (nets.mu.dim_in() != in || nets.mu.dim_out() != d)
        throw std::invalid_argument("unroll: drift network must map R^" + std::to_string(in) + " to R^" +
                                    std::to_string(d));
    if (nets.sigma_cols.front().dim_in() != in || nets.sigma_cols.front().dim_out() != d)
        throw std::invalid_argument("unroll: sigma column networks must map R^" + std::to_string(in) + " to R^" +
                                    std::to_string(d));
    if (nets.mu.depth() != nets.sigma_cols.front().depth())
        throw std::invalid_argument("unroll: drift and sigma column networks must have equal depth (" +
                                    std::to_string(nets.mu.depth()) + " vs " +
                                    std::to_string(nets.sigma_cols.front().depth()) + ")");
}

}  // namespace detail

struct UnrolledValue {
    Network psi;
    UnrollReport report;
};

/// Unrolls the perturbed scheme for M fixed Brownian paths into one network realizing
/// x -> (1/M) sum_m cost(Y^{x,m}_N).
inline UnrolledValue unroll_value_net(const Network& mu_net, const std::vector<Network>& sigma_cols,
                                      const Network& cost_net, const StiffSystem& sys, const SynthesisBudget& budget,
                                      std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    const Eigen::Index d = sys.d;
    const CoefficientNets nets{mu_net, sigma_cols, 0};
    detail::check_coefficient_nets(nets, d);
    if (cost_net.dim_in() != d || cost_net.dim_out() != 1)
        throw std::invalid_argument("unroll_value_net: cost network must map R^d to R");
    if (budget.saturated) throw std::invalid_argument("unroll_value_net: budget too large to construct");
    const std::size_t N = budget.N, M = budget.M;
    const PathBundle paths(seed, M, N, d, budget.T);
    const Mat inv = ImplicitFactor(sys.A, budget.h()).inverse();
    std::vector<Network> per_path(M);
    std::vector<char> ok(M, 1);
    parallel_for(M, [&](std::size_t m) {
        bool w = true;
        per_path[m] = detail::unroll_path(
            nets, cost_net, inv, budget.h(), N, [&](std::size_t n) { return paths.increment(m, n); },
            [](std::size_t) { return Vec(); }, w);
        ok[m] = w;
    });
    UnrolledValue out;
    out.psi = combine(std::vector<double>(M, 1.0 / static_cast<double>(M)), per_path);
    auto& rep = out.report;
    rep.size = out.psi.size();
    rep.depth = out.psi.depth();
    rep.dims = out.psi.dims();
    rep.path_size = per_path.front().size();
    rep.width_ok = std::all_of(ok.begin(), ok.end(), [](char c) { return c != 0; });
    rep.bound = unroll_bound(cost_net, sigma_cols, d, N, M);
    rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (!rep.width_ok) throw std::logic_error("unroll_value_net: last hidden width condition violated");
    if (static_cast<long double>(rep.size) > rep.bound)
        throw std::logic_error("unroll_value_net: size " + std::to_string(rep.size) + " exceeds its size bound");
    return out;
}

/// C(psi) from the architecture alone; exact for N, M below 2^62 and a long double estimate beyond.
inline long double unrolled_size(const Network& mu_net, const std::vector<Network>& sigma_cols,
                                 const Network& cost_net, Eigen::Index d, long double N, long double M) {
    const std::size_t Lp = mu_net.depth();
    const long double dd = static_cast<long double>(d);
    if (Lp < 2) {
        // Every step collapses into a single d x d affine layer.
        long double s = M * (2 * dd) * (dd + 1);
        long double prev = 2 * dd * M;
        for (std::size_t l = 0; l < cost_net.depth(); ++l) {
            const long double r = l + 1 == cost_net.depth() ? 1.0L : cost_net.layers()[l].rows() * M;
            s += r * (prev + 1);
            prev = r;
        }
        return s;
    }
    std::vector<long double> w;
    for (std::size_t i = 0; i + 1 < Lp; ++i)
        w.push_back(2 * dd + mu_net.layers()[i].rows() + dd * sigma_cols.front().layers()[i].rows());
    // Per path: x (d) -> [w_1..w_{L'-1}] repeated N times -> 2d -> cost hidden... -> 1.
    long double s = 0;
    // First step block: input d.
    s += M * w[0] * (dd + 1);
    for (std::size_t i = 1; i < w.size(); ++i) s += M * w[i] * (M * w[i - 1] + 1);
    // Steps 2..N: the first layer of a block reads the previous block's last width.
    long double block = M * w[0] * (M * w.back() + 1);
    for (std::size_t i = 1; i < w.size(); ++i) block += M * w[i] * (M * w[i - 1] + 1);
    s += (N - 1) * block;
    // psi_N output doubled for composition, then cost layers.
    s += M * 2 * dd * (M * w.back() + 1);
    long double prev = M * 2 * dd;
    for (std::size_t l = 0; l < cost_net.depth(); ++l) {
        const long double r = l + 1 == cost_net.depth() ? 1.0L : M * cost_net.layers()[l].rows();
        s += r * (prev + 1);
        prev = r;
    }
    return s;
}

/// (1/M) sum_m cost(Y^{x,m}_N) by direct simulation with the coefficients realized by the networks.
inline double mc_reference(const StiffSystem& sys, const Coefficients& coeffs, const Network& cost_net,
                           const SynthesisBudget& budget, std::uint64_t seed, const Vec& x) {
    const PathBundle paths(seed, budget.M, budget.N, sys.d, budget.T);
    std::vector<double> vals(budget.M);
    run_paths(sys, coeffs, x, {budget.T, budget.N}, paths, [&](std::size_t m, std::size_t n, const Vec& y) {
        if (n == budget.N) vals[m] = realize_scalar(cost_net, y);
    });
    return pairwise_sum(vals) / static_cast<double>(budget.M);
}

/// Batch version: one factorization and one increment draw per path shared across all points.
inline std::vector<double> mc_reference_batch(const StiffSystem& sys, const Coefficients& coeffs,
                                              const Network& cost_net, const SynthesisBudget& budget,
                                              std::uint64_t seed, const std::vector<Vec>& xs) {
    const PathBundle paths(seed, budget.M, budget.N, sys.d, budget.T);
    const ImplicitFactor f(sys.A, budget.h());
    const EulerConfig cfg{budget.T, budget.N};
    std::vector<double> out(xs.size());
    parallel_for(xs.size(), [&](std::size_t i) {
        std::vector<double> vals(budget.M);
        for (std::size_t m = 0; m < budget.M; ++m) {
            Vec y = f.solve(xs[i]);
            for (std::size_t n = 0; n < budget.N; ++n) y = step_pes(f, coeffs, y, cfg.t(n), paths.increment(m, n));
            vals[m] = realize_scalar(cost_net, y);
        }
        out[i] = pairwise_sum(vals) / static_cast<double>(budget.M);
    });
    return out;
}

/// RMS of (approx - reference) over draws from nu; stderr by the delta method.
inline MeanEstimate l2_error(const std::function<double(const Vec&)>& approx,
                             const std::function<double(const Vec&)>& reference, const Measure& nu,
                             std::size_t n_samples, std::uint64_t seed) {
    if (n_samples < 2) throw std::invalid_argument("l2_error: need at least 2 samples");
    std::mt19937_64 g(seed);
    std::vector<Vec> xs(n_samples);
    for (auto& x : xs) x = nu.sample(g);
    std::vector<double> sq(n_samples);
    parallel_for(n_samples, [&](std::size_t i) {
        const double e = approx(xs[i]) - reference(xs[i]);
        sq[i] = e * e;
    });
    const auto m = mean_stderr(sq);
    const double rms = std::sqrt(m.mean);
    return {rms, rms > 0.0 ? m.stderr_ / (2.0 * rms) : 0.0};
}

inline MeanEstimate l2_error(const Network& psi, const std::function<double(const Vec&)>& reference,
                             const Measure& nu, std::size_t n_samples, std::uint64_t seed) {
    return l2_error([&psi](const Vec& x) { return realize_scalar(psi, x); }, reference, nu, n_samples, seed);
}

/// Exact value E f(Y_T^x) for OU recipes with f = sum beta_m x_m^2.
inline std::function<double(const Vec&)> ou_value_function(const StiffSystem& sys, double s, const Vec& beta,
                                                           double T) {
    if (!sys.linear) throw std::invalid_argument("ou_value_function: system is not linear");
    const Mat A = sys.A;
    const Mat sig = s * Mat::Identity(sys.d, sys.d);
    return [A, sig, beta, T](const Vec& x) { return ou_exact_value(A, sig, beta, x, T); };
}

struct SynthesisResult {
    SynthesisBudget budget;
    UnrollReport report;
    MeanEstimate l2;
    bool built = false;     ///< network constructed and realized
    bool measured = false;  ///< l2 holds a measurement (network or identical direct simulation)
    long double arch_size = 0;
    std::size_t arch_depth = 0;
};

/// Plans a budget, builds the network when it fits, and measures the L2(nu) error against `value`.
/// When the budget exceeds `max_size` parameters, the error is measured on the identical estimator by
/// direct simulation instead of through the network realization, provided N M n_samples < 2e8.
inline SynthesisResult synthesize(const SystemRecipe& r, const Vec& beta_w, double eps, const PlanConstants& k,
                                  double Cplan, const std::function<double(const Vec&)>& value, std::uint64_t seed,
                                  std::size_t n_samples, long double max_size = 2e7L) {
    SynthesisResult out;
    out.budget = plan_budget(eps, r.sys.d, k, Cplan, beta_w.cwiseAbs().maxCoeff());
    const CostPack cost = make_quadratic_cost(beta_w, out.budget.D, out.budget.eps_cost);
    out.arch_size = unrolled_size(r.nets.mu_net, r.nets.sigma_cols, cost.net, r.sys.d, out.budget.N_real,
                                  out.budget.M_real);
    out.arch_depth = static_cast<std::size_t>(
        std::min<long double>(out.budget.N_real * (r.nets.mu_net.depth() - 1) + 1 + cost.net.depth(), 1e18L));
    const Measure nu = uniform_unit_cube(r.sys.d, k.eta);
    if (out.budget.saturated) return out;
    if (out.arch_size <= max_size) {
        auto u = unroll_value_net(r.nets.mu_net, r.nets.sigma_cols, cost.net, r.sys, out.budget, seed);
        out.report = u.report;
        out.built = true;
        out.l2 = l2_error(u.psi, value, nu, n_samples, seed ^ 0x5bd1e995ULL);
        out.measured = true;
    } else if (static_cast<long double>(out.budget.N) * out.budget.M * n_samples < 2e8L) {
        const Coefficients c = network_coefficients(r.nets);
        std::mt19937_64 g(seed ^ 0x5bd1e995ULL);
        std::vector<Vec> xs(n_samples);
        for (auto& x : xs) x = nu.sample(g);
        const auto approx = mc_reference_batch(r.sys, c, cost.net, out.budget, seed, xs);
        std::vector<double> sq(n_samples);
        for (std::size_t i = 0; i < n_samples; ++i) sq[i] = std::pow(approx[i] - value(xs[i]), 2);
        const auto m = mean_stderr(sq);
        out.l2 = {std::sqrt(m.mean), m.mean > 0 ? m.stderr_ / (2 * std::sqrt(m.mean)) : 0.0};
        out.measured = true;
    }
    return out;
}

struct Calibration {
    double Cplan = 1.0;
    double l2 = 0.0;
    std::size_t evaluated = 0;  ///< distinct budgets measured
    bool found = false;
};

/// Largest Cplan on the grid 2^k, k = k_hi down to k_lo, whose planned budget is measurable and meets eps.
/// The scan stops at the first budget too large to measure; identical budgets are measured once.
inline Calibration calibrate_cplan(const SystemRecipe& r, const Vec& beta_w, double eps, const PlanConstants& k,
                                   const std::function<double(const Vec&)>& value, std::uint64_t seed,
                                   std::size_t n_samples, int k_lo = 0, int k_hi = 256) {
    Calibration cal;
    std::map<std::tuple<std::uint64_t, std::uint64_t, double, double>, SynthesisResult> seen;
    for (int e = k_hi; e >= k_lo; --e) {
        const double C = std::ldexp(1.0, e);
        const SynthesisBudget b = plan_budget(eps, r.sys.d, k, C, beta_w.cwiseAbs().maxCoeff());
        const auto key = std::make_tuple(b.N, b.M, b.D, b.eps_cost);
        auto it = seen.find(key);
        if (it == seen.end()) {
            it = seen.emplace(key, synthesize(r, beta_w, eps, k, C, value, seed, n_samples, 0.0L)).first;
            ++cal.evaluated;
        }
        const SynthesisResult& s = it->second;
        if (!s.measured) break;
        if (s.l2.mean <= eps) {
            cal.Cplan = C;
            cal.l2 = s.l2.mean;
            cal.found = true;
            break;
        }
    }
    return cal;
}

}  // namespace deepstiff

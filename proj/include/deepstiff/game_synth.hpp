#pragma once

#include "deepstiff/value_synth.hpp"

namespace deepstiff {

/// Player strategy: one action index per intervention interval.
using Strategy = std::vector<std::size_t>;

/// Intervention times, finite action sets and the additive control cost g(u1, u2).
/// Interval k covers [times[k], times[k+1]) with times[M] := T; times before times[0] use interval 0.
struct StrategyGrid {
    std::vector<double> times;
    std::vector<Vec> U1, U2;
    std::function<double(const Strategy&, const Strategy&)> g;
    double kappa0 = 1.0;  ///< declared bound |U1||U2| <= kappa0 d^kappa0

    std::size_t interventions() const { return times.size(); }
    Eigen::Index action_dim() const { return U1.front().size() + U2.front().size(); }
};

inline constexpr std::size_t kStrategyPairCap = 4096;

inline void check_grid(const StrategyGrid& grid) {
    if (grid.U1.empty() || grid.U2.empty()) throw std::invalid_argument("strategy grid: empty action set");
    for (const auto* U : {&grid.U1, &grid.U2})
        for (const auto& u : *U)
            if (u.size() != U->front().size())
                throw std::invalid_argument("strategy grid: actions of one player differ in dimension");
    if (!std::is_sorted(grid.times.begin(), grid.times.end()))
        throw std::invalid_argument("strategy grid: intervention times must be non-decreasing");
}

/// All |U|^M sequences in lexicographic order (first interval most significant).
inline std::vector<Strategy> enumerate_player(std::size_t n_actions, std::size_t M) {
    std::vector<Strategy> out;
    Strategy s(M, 0);
    while (true) {
        out.push_back(s);
        std::size_t k = M;
        while (k > 0 && ++s[k - 1] == n_actions) s[--k] = 0;
        if (k == 0) break;
    }
    return out;
}

struct StrategySets {
    std::vector<Strategy> player1, player2;
    std::size_t pairs() const { return player1.size() * player2.size(); }
};

inline StrategySets enumerate_strategies(const StrategyGrid& grid, std::size_t cap = kStrategyPairCap) {
    check_grid(grid);
    const long double M = static_cast<long double>(grid.interventions());
    const long double count = std::pow(static_cast<long double>(grid.U1.size()), M) *
                              std::pow(static_cast<long double>(grid.U2.size()), M);
    if (count > static_cast<long double>(cap)) {
        std::ostringstream os;
        os << "enumerate_strategies: " << count << " strategy pairs exceed the cap of " << cap;
        throw std::length_error(os.str());
    }
    return {enumerate_player(grid.U1.size(), grid.interventions()),
            enumerate_player(grid.U2.size(), grid.interventions())};
}

/// Interval index of every Euler step; requires the intervention times to lie on the grid.
inline std::vector<std::size_t> interval_of_steps(const StrategyGrid& grid, double T, std::size_t N) {
    const double h = T / static_cast<double>(N);
    std::vector<std::size_t> node;
    for (double t : grid.times) {
        if (t < 0.0 || t > T) throw std::invalid_argument("strategy grid: intervention time outside [0, T]");
        const double k = std::round(t / h);
        if (std::abs(k * h - t) > 1e-9 * (1.0 + T))
            throw std::invalid_argument("strategy grid: intervention time " + std::to_string(t) +
                                        " is not on the Euler grid with h = " + std::to_string(h));
        node.push_back(static_cast<std::size_t>(k));
    }
    std::vector<std::size_t> out(N, 0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < node.size(); ++k)
            if (node[k] <= n) out[n] = k;
    return out;
}

/// Action vector (u1, u2) held on each Euler step.
inline std::vector<Vec> step_actions(const StrategyGrid& grid, const Strategy& s1, const Strategy& s2, double T,
                                     std::size_t N) {
    const std::size_t M = grid.interventions();
    if (s1.size() != M || s2.size() != M)
        throw std::invalid_argument("step_actions: strategies must have one action per intervention");
    const Eigen::Index m1 = grid.U1.front().size(), m2 = grid.U2.front().size();
    std::vector<Vec> out(N, Vec::Zero(m1 + m2));
    if (M == 0) return out;
    const auto iv = interval_of_steps(grid, T, N);
    for (std::size_t n = 0; n < N; ++n) {
        out[n].head(m1) = grid.U1.at(s1[iv[n]]);
        out[n].tail(m2) = grid.U2.at(s2[iv[n]]);
    }
    return out;
}

/// Network for x -> (1/M) sum_m cost(Y^{x,m,u1,u2}_N) + g(u1, u2); architecture independent of (u1, u2).
inline UnrolledValue controlled_value_net(const StrategyGrid& grid, const Strategy& s1, const Strategy& s2,
                                         const CoefficientNets& nets, const Network& cost_net,
                                         const StiffSystem& sys, const SynthesisBudget& budget, std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    const Eigen::Index d = sys.d;
    detail::check_coefficient_nets(nets, d);
    if (nets.action_dim != grid.action_dim())
        throw std::invalid_argument("controlled_value_net: coefficient nets expect " +
                                    std::to_string(nets.action_dim) + " control inputs, grid provides " +
                                    std::to_string(grid.action_dim()));
    if (cost_net.dim_in() != d || cost_net.dim_out() != 1)
        throw std::invalid_argument("controlled_value_net: cost network must map R^d to R");
    if (budget.saturated) throw std::invalid_argument("controlled_value_net: budget too large to construct");
    const std::size_t N = budget.N, M = budget.M;
    const auto actions = step_actions(grid, s1, s2, budget.T, N);
    const PathBundle paths(seed, M, N, d, budget.T);
    const Mat inv = ImplicitFactor(sys.A, budget.h()).inverse();
    std::vector<Network> per_path(M);
    std::vector<char> ok(M, 1);
    for (std::size_t m = 0; m < M; ++m) {
        bool w = true;
        per_path[m] = detail::unroll_path(
            nets, cost_net, inv, budget.h(), N, [&](std::size_t n) { return paths.increment(m, n); },
            [&](std::size_t n) { return actions[n]; }, w);
        ok[m] = w;
    }
    UnrolledValue out;
    const double g = grid.g ? grid.g(s1, s2) : 0.0;
    out.psi = fold_affine(combine(std::vector<double>(M, 1.0 / static_cast<double>(M)), per_path), Side::Post,
                          Mat::Identity(1, 1), Vec::Constant(1, g));
    auto& rep = out.report;
    rep.size = out.psi.size();
    rep.depth = out.psi.depth();
    rep.dims = out.psi.dims();
    rep.path_size = per_path.front().size();
    rep.width_ok = std::all_of(ok.begin(), ok.end(), [](char c) { return c != 0; });
    rep.bound = unroll_bound(cost_net, nets.sigma_cols, d, N, M);
    rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (!rep.width_ok) throw std::logic_error("controlled_value_net: last hidden width condition violated");
    return out;
}

/// max_tree bound applied to the inner and then the outer level.
inline long double infsup_bound(std::uint64_t c, std::size_t n1, std::size_t n2) {
    auto lg = [](std::size_t n) {
        std::size_t k = 0;
        while ((std::size_t{1} << k) < n) ++k;
        return k;
    };
    const long double inner = max_tree_bound(c, lg(n2));
    return std::pow(8.0L, static_cast<long double>(lg(n1))) * (inner + 34.0L / 7.0L) - 34.0L / 7.0L;
}

/// x -> min_i max_j w[i][j](x); groups padded to powers of two by repetition.
inline Network infsup_net(const std::vector<std::vector<Network>>& w) {
    if (w.empty()) throw std::invalid_argument("infsup_net: no strategy groups");
    std::vector<Network> all;
    for (const auto& row : w) {
        if (row.size() != w.front().size())
            throw std::invalid_argument("infsup_net: every group needs the same number of networks");
        all.insert(all.end(), row.begin(), row.end());
    }
    detail::require_same_arch(all, "infsup_net");
    std::vector<Network> inner;
    inner.reserve(w.size());
    for (const auto& row : w) inner.push_back(max_tree(pad_pow2(row)));
    return min_tree(pad_pow2(std::move(inner)));
}

/// Controlled coefficients (t, x) -> nets(t, x, a(t)) for a fixed step-wise action sequence.
inline Coefficients controlled_coefficients(const CoefficientNets& nets, const std::vector<Vec>& actions, double h) {
    Coefficients c;
    const Network mu = nets.mu;
    const std::vector<Network> cols = nets.sigma_cols;
    auto input = [actions, h](double t, const Vec& x) {
        const auto n = std::min<std::size_t>(static_cast<std::size_t>(std::llround(t / h)), actions.size() - 1);
        const Vec& a = actions[n];
        Vec z(1 + x.size() + a.size());
        z[0] = t;
        z.segment(1, x.size()) = x;
        z.tail(a.size()) = a;
        return z;
    };
    c.mu = [mu, input](double t, const Vec& x) { return realize(mu, input(t, x)); };
    c.sigma = [cols, input](double t, const Vec& x) {
        const Vec z = input(t, x);
        Mat s(x.size(), static_cast<Eigen::Index>(cols.size()));
        for (std::size_t i = 0; i < cols.size(); ++i) s.col(static_cast<Eigen::Index>(i)) = realize(cols[i], z);
        return s;
    };
    return c;
}

/// min over player-1 strategies of max over player-2 strategies of the simulated value plus g, shared noise.
inline double brute_force_game_value(const StiffSystem& sys, const StrategyGrid& grid, const CoefficientNets& nets,
                                     const Network& cost_net, const SynthesisBudget& budget, std::uint64_t seed,
                                     const Vec& x, std::size_t cap = kStrategyPairCap) {
    const StrategySets S = enumerate_strategies(grid, cap);
    std::vector<double> vals(S.pairs());
    const std::size_t n2 = S.player2.size();
    parallel_for(S.pairs(), [&](std::size_t k) {
        const Strategy& a = S.player1[k / n2];
        const Strategy& b = S.player2[k % n2];
        const auto act = step_actions(grid, a, b, budget.T, budget.N);
        const double g = grid.g ? grid.g(a, b) : 0.0;
        vals[k] = mc_reference(sys, controlled_coefficients(nets, act, budget.h()), cost_net, budget, seed, x) + g;
    });
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < S.player1.size(); ++i)
        best = std::min(best, *std::max_element(vals.begin() + i * n2, vals.begin() + (i + 1) * n2));
    return best;
}

/// Per-strategy accuracy eps (kappa0 d^kappa0)^{-M/2}.
inline double game_delta(double eps, Eigen::Index d, double kappa0, std::size_t M) {
    if (!(eps > 0.0 && eps <= 1.0)) throw std::invalid_argument("game_delta: eps must lie in (0, 1]");
    const double card = kappa0 * std::pow(static_cast<double>(d), kappa0);
    return eps * std::pow(card, -0.5 * static_cast<double>(M));
}

struct GameNetwork {
    Network psi;
    StrategySets strategies;
    std::uint64_t w_size = 0;
    long double bound = 0;
    double wall_ms = 0.0;
};

/// Builds every per-pair network (shared seed) and the inf-sup network over them.
inline GameNetwork build_game_net(const StrategyGrid& grid, const CoefficientNets& nets, const Network& cost_net,
                                  const StiffSystem& sys, const SynthesisBudget& budget, std::uint64_t seed,
                                  std::size_t cap = kStrategyPairCap) {
    const auto t0 = std::chrono::steady_clock::now();
    GameNetwork out;
    out.strategies = enumerate_strategies(grid, cap);
    const auto& S = out.strategies;
    const std::size_t n1 = S.player1.size(), n2 = S.player2.size();
    std::vector<Network> flat(n1 * n2);
    parallel_for(flat.size(), [&](std::size_t k) {
        flat[k] = controlled_value_net(grid, S.player1[k / n2], S.player2[k % n2], nets, cost_net, sys, budget, seed).psi;
    });
    std::vector<std::vector<Network>> w(n1);
    for (std::size_t i = 0; i < n1; ++i) w[i].assign(flat.begin() + i * n2, flat.begin() + (i + 1) * n2);
    out.w_size = flat.front().size();
    out.psi = infsup_net(w);
    out.bound = infsup_bound(out.w_size, n1, n2);
    out.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (static_cast<long double>(out.psi.size()) > out.bound)
        throw std::logic_error("build_game_net: inf-sup network exceeds its size bound");
    return out;
}

/// Controlled heat system: drift c clamp(x) + B u with u = (u1, u2), B u placing u1 on mode 1 and u2 on mode 2
/// (both on mode 1 when d = 1); diagonal noise s diag(x).
struct ControlledRecipe {
    StiffSystem sys;
    CoefficientNets nets;
    std::function<Vec(double, const Vec&, const Vec&)> mu;
};

inline ControlledRecipe make_controlled_heat(Eigen::Index d, Eigen::Index m1, Eigen::Index m2, double a, double c,
                                             double s, double eta = 0.5) {
    const SystemRecipe base = make_galerkin_heat(d, a, c, s, NoiseKind::Diagonal, eta);
    const Eigen::Index du = m1 + m2;
    Mat B = Mat::Zero(d, du);
    for (Eigen::Index j = 0; j < m1; ++j) B(0, j) = 1.0;
    for (Eigen::Index j = 0; j < m2; ++j) B(std::min<Eigen::Index>(1, d - 1), m1 + j) = 1.0;

    ControlledRecipe r;
    r.sys = base.sys;
    r.sys.id = "controlled_heat";
    const DriftFn mu0 = base.sys.mu;
    r.mu = [mu0, B](double t, const Vec& x, const Vec& u) { return Vec(mu0(t, x) + B * u); };
    r.nets.action_dim = du;

    // Append the control inputs and carry u through relu(u) - relu(-u).
    auto widen = [&](const Network& net, bool with_control) {
        const Layer& l1 = net.layers()[0];
        const Layer& l2 = net.layers()[1];
        const Eigen::Index h = l1.rows();
        Mat W1 = Mat::Zero(h + 2 * du, d + 1 + du);
        W1.topLeftCorner(h, d + 1) = l1.dense();
        Vec b1 = Vec::Zero(h + 2 * du);
        b1.head(h) = l1.bias;
        Mat W2 = Mat::Zero(d, h + 2 * du);
        W2.leftCols(h) = l2.dense();
        for (Eigen::Index j = 0; j < du; ++j) {
            W1(h + 2 * j, d + 1 + j) = 1.0;
            W1(h + 2 * j + 1, d + 1 + j) = -1.0;
            if (with_control) {
                W2.col(h + 2 * j) = B.col(j);
                W2.col(h + 2 * j + 1) = -B.col(j);
            }
        }
        return Network({Layer(W1, b1), Layer(W2, l2.bias)});
    };
    r.nets.mu = widen(base.nets.mu_net, true);
    for (const auto& col : base.nets.sigma_cols) r.nets.sigma_cols.push_back(widen(col, false));
    return r;
}

}  // namespace deepstiff

#pragma once

#include "deepstiff/nn_calculus.hpp"
#include "deepstiff/sde_engine.hpp"

#include <map>
#include <numbers>
#include <string>

namespace deepstiff {

/// A validated system together with exact coefficient networks (gamma = 0).
struct SystemRecipe {
    StiffSystem sys;
    PerturbedCoefficients nets;
    ValidationReport validation;
};

enum class NoiseKind { Additive, Diagonal };

namespace detail {

/// (t, x) -> W x + b as a depth-2 net of shape (d+1, 2d, d); hidden rows carry relu(x_i + off) pairs.
struct PairNet {
    Mat hidden;  // 2d x (d+1)
    Vec hidden_bias;
    Mat out;     // d x 2d
    Vec out_bias;

    explicit PairNet(Eigen::Index d)
        : hidden(Mat::Zero(2 * d, d + 1)), hidden_bias(Vec::Zero(2 * d)), out(Mat::Zero(d, 2 * d)),
          out_bias(Vec::Zero(d)) {}

    Network build() const { return Network({Layer(hidden, hidden_bias), Layer(out, out_bias)}); }
};

inline double clamp_unit(double v) { return std::clamp(v, -1.0, 1.0); }

inline SystemRecipe finish(SystemRecipe r, std::uint64_t seed = 7) {
    r.validation = validate_system(r.sys, 1000, gaussian_sampler(r.sys.d, 2.0), seed);
    if (!r.validation.ok) {
        std::ostringstream os;
        os << r.sys.id << ": hypothesis check failed (" << r.validation.failure
           << "), monotonicity margin " << r.validation.monotonicity_margin;
        throw std::invalid_argument(os.str());
    }
    return r;
}

/// Zero network of the standard coefficient architecture.
inline Network zero_coefficient_net(Eigen::Index d) { return PairNet(d).build(); }

/// Column i of s I: constant s e_i.
inline Network constant_column_net(Eigen::Index d, Eigen::Index i, double s) {
    PairNet p(d);
    p.out_bias[i] = s;
    return p.build();
}

/// Column i of s diag(x): s (relu(x_i) - relu(-x_i)) e_i.
inline Network diagonal_column_net(Eigen::Index d, Eigen::Index i, double s) {
    PairNet p(d);
    p.hidden(2 * i, 1 + i) = 1.0;
    p.hidden(2 * i + 1, 1 + i) = -1.0;
    p.out(i, 2 * i) = s;
    p.out(i, 2 * i + 1) = -s;
    return p.build();
}

inline std::vector<Network> sigma_columns(Eigen::Index d, NoiseKind kind, double s) {
    std::vector<Network> cols;
    for (Eigen::Index i = 0; i < d; ++i)
        cols.push_back(kind == NoiseKind::Additive ? constant_column_net(d, i, s) : diagonal_column_net(d, i, s));
    return cols;
}

inline DiffusionFn sigma_fn(NoiseKind kind, double s) {
    if (kind == NoiseKind::Additive)
        return [s](double, const Vec& x) { return Mat(s * Mat::Identity(x.size(), x.size())); };
    return [s](double, const Vec& x) { return Mat((s * x).asDiagonal()); };
}

}  // namespace detail

/// Spectral Laplacian A = a pi^2 diag(k^2), drift c clamp(x, -1, 1), noise s I or s diag(x).
inline SystemRecipe make_galerkin_heat(Eigen::Index d, double a, double c, double s,
                                       NoiseKind noise = NoiseKind::Diagonal, double eta = 0.5) {
    if (d < 1) throw std::invalid_argument("make_galerkin_heat: d must be >= 1");
    if (a < 0.0 || s < 0.0) throw std::invalid_argument("make_galerkin_heat: a and s must be >= 0");
    if (!(eta > 0.0 && eta < 1.0)) throw std::invalid_argument("make_galerkin_heat: eta must lie in (0, 1)");
    SystemRecipe r;
    StiffSystem& S = r.sys;
    S.id = "galerkin_heat";
    S.d = d;
    Vec lam(d);
    for (Eigen::Index k = 0; k < d; ++k) lam[k] = a * std::numbers::pi * std::numbers::pi * double((k + 1) * (k + 1));
    S.A = lam.asDiagonal();
    S.mu = [c](double, const Vec& x) { return Vec(c * x.unaryExpr(&detail::clamp_unit)); };
    S.sigma = detail::sigma_fn(noise, s);
    S.eta = eta;
    S.beta = std::max(c, 0.0) + eta * c * c + 0.5 * (1.0 + eta) * (noise == NoiseKind::Diagonal ? s * s : 0.0);
    S.kappa0 = std::max(2.0, a * std::numbers::pi * std::numbers::pi);
    S.mu0 = 0.0;
    S.mu1 = std::abs(c);
    S.sigma0 = noise == NoiseKind::Additive ? s * std::sqrt(static_cast<double>(d)) : 0.0;
    S.sigma1 = noise == NoiseKind::Diagonal ? s : 0.0;
    S.linear = c == 0.0 && noise == NoiseKind::Additive;

    // clamp(x) = relu(x + 1) - relu(x - 1) - 1
    detail::PairNet mu(d);
    for (Eigen::Index i = 0; i < d; ++i) {
        mu.hidden(2 * i, 1 + i) = 1.0;
        mu.hidden_bias[2 * i] = 1.0;
        mu.hidden(2 * i + 1, 1 + i) = 1.0;
        mu.hidden_bias[2 * i + 1] = -1.0;
        mu.out(i, 2 * i) = c;
        mu.out(i, 2 * i + 1) = -c;
        mu.out_bias[i] = -c;
    }
    r.nets.mu_net = mu.build();
    r.nets.sigma_cols = detail::sigma_columns(d, noise, s);
    return detail::finish(std::move(r));
}

/// mu = L_mu relu(x) elementwise, sigma = I, A = pi^2 diag(k^2); beta = L_mu + eta L_mu^2.
inline SystemRecipe make_relu_drift_system(Eigen::Index d, double L_mu, double eta) {
    if (d < 1) throw std::invalid_argument("make_relu_drift_system: d must be >= 1");
    if (L_mu < 0.0) throw std::invalid_argument("make_relu_drift_system: L_mu must be >= 0");
    if (!(eta > 0.0 && eta < 1.0)) throw std::invalid_argument("make_relu_drift_system: eta must lie in (0, 1)");
    SystemRecipe r;
    StiffSystem& S = r.sys;
    S.id = "relu_drift";
    S.d = d;
    Vec lam(d);
    for (Eigen::Index k = 0; k < d; ++k) lam[k] = std::numbers::pi * std::numbers::pi * double((k + 1) * (k + 1));
    S.A = lam.asDiagonal();
    S.mu = [L_mu](double, const Vec& x) { return Vec(L_mu * x.cwiseMax(0.0)); };
    S.sigma = detail::sigma_fn(NoiseKind::Additive, 1.0);
    S.eta = eta;
    S.beta = L_mu + eta * L_mu * L_mu;
    S.kappa0 = std::max(2.0, std::numbers::pi * std::numbers::pi);
    S.mu1 = L_mu;
    S.sigma0 = std::sqrt(static_cast<double>(d));
    detail::PairNet mu(d);
    for (Eigen::Index i = 0; i < d; ++i) {
        mu.hidden(2 * i, 1 + i) = 1.0;
        mu.out(i, 2 * i) = L_mu;
    }
    r.nets.mu_net = mu.build();
    r.nets.sigma_cols = detail::sigma_columns(d, NoiseKind::Additive, 1.0);
    return detail::finish(std::move(r));
}

/// Ornstein-Uhlenbeck: mu = 0, sigma = s I, A diagonal with geometric spectrum from lo to hi.
inline SystemRecipe make_ou(Eigen::Index d, double lo, double hi, double s, double eta = 0.5) {
    if (d < 1) throw std::invalid_argument("make_ou: d must be >= 1");
    if (lo < 0.0 || hi < lo || s < 0.0) throw std::invalid_argument("make_ou: need 0 <= lo <= hi and s >= 0");
    SystemRecipe r;
    StiffSystem& S = r.sys;
    S.id = "ou";
    S.d = d;
    Vec lam(d);
    for (Eigen::Index k = 0; k < d; ++k) {
        const double f = d == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(d - 1);
        lam[k] = lo > 0.0 ? lo * std::pow(hi / lo, f) : hi * f;
    }
    S.A = lam.asDiagonal();
    S.mu = [](double, const Vec& x) { return Vec(Vec::Zero(x.size())); };
    S.sigma = detail::sigma_fn(NoiseKind::Additive, s);
    S.eta = eta;
    S.beta = 0.0;
    S.kappa0 = std::max(1.0, hi);
    S.sigma0 = s * std::sqrt(static_cast<double>(d));
    S.linear = true;
    r.nets.mu_net = detail::zero_coefficient_net(d);
    r.nets.sigma_cols = detail::sigma_columns(d, NoiseKind::Additive, s);
    return detail::finish(std::move(r));
}

/// f(x) = sum beta_m x_m^2 with its truncation and network.
inline CostPack make_quadratic_cost(const Vec& beta, double D, double eps_cost) {
    const WeightedSquare ws = weighted_square_net(beta, D, eps_cost);
    CostPack c;
    const Vec b = beta;
    c.f = [b](const Vec& x) { return b.dot(x.cwiseProduct(x)); };
    c.f_trunc = ws.target;
    c.net = ws.net;
    c.theta = ws.theta;
    c.D = D;
    return c;
}

using RecipeParams = std::map<std::string, double>;

inline double param(const RecipeParams& p, const std::string& key, double fallback) {
    const auto it = p.find(key);
    return it == p.end() ? fallback : it->second;
}

inline const std::vector<std::string>& recipe_ids() {
    static const std::vector<std::string> ids{"galerkin_heat", "galerkin_heat_additive", "relu_drift", "ou"};
    return ids;
}

inline const std::vector<std::string>& recipe_param_keys(const std::string& id) {
    static const std::map<std::string, std::vector<std::string>> keys{
        {"galerkin_heat", {"a", "c", "s", "eta"}},
        {"galerkin_heat_additive", {"a", "c", "s", "eta"}},
        {"relu_drift", {"L_mu", "eta"}},
        {"ou", {"lo", "hi", "s", "eta"}},
    };
    const auto it = keys.find(id);
    if (it == keys.end()) throw std::invalid_argument("unknown system id '" + id + "'");
    return it->second;
}

/// Registry entry point addressed by string id.
inline SystemRecipe make_recipe(const std::string& id, Eigen::Index d, const RecipeParams& p = {}) {
    for (const auto& [k, v] : p) {
        const auto& allowed = recipe_param_keys(id);
        if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
            throw std::invalid_argument("system '" + id + "' has no parameter '" + k + "'");
    }
    if (id == "galerkin_heat")
        return make_galerkin_heat(d, param(p, "a", 0.1), param(p, "c", 1.0), param(p, "s", 0.75), NoiseKind::Diagonal,
                                  param(p, "eta", 0.5));
    if (id == "galerkin_heat_additive")
        return make_galerkin_heat(d, param(p, "a", 0.1), param(p, "c", 1.0), param(p, "s", 0.5), NoiseKind::Additive,
                                  param(p, "eta", 0.5));
    if (id == "relu_drift") return make_relu_drift_system(d, param(p, "L_mu", 1.0), param(p, "eta", 0.5));
    if (id == "ou") return make_ou(d, param(p, "lo", 1.0), param(p, "hi", 4096.0), param(p, "s", 1.0), param(p, "eta", 0.5));
    throw std::invalid_argument("unknown system id '" + id + "'");
}

}  // namespace deepstiff

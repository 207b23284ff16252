#pragma once

#include "deepstiff/nn_core.hpp"
#include "deepstiff/parallel.hpp"
#include "deepstiff/rng.hpp"
#include "deepstiff/stats.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepstiff {

using DriftFn = std::function<Vec(double, const Vec&)>;
using DiffusionFn = std::function<Mat(double, const Vec&)>;

/// dY = (-A Y + mu(t, Y)) dt + sigma(t, Y) dB with the declared hypothesis constants.
struct StiffSystem {
    std::string id;
    Eigen::Index d = 0;
    Mat A;
    DriftFn mu;
    DiffusionFn sigma;
    double beta = 0.0;
    double eta = 0.5;
    double kappa0 = 1.0;
    double mu0 = 0.0;     ///< sup_t |mu(t, 0)|
    double sigma0 = 0.0;  ///< sup_t |sigma(t, 0)|_F
    double mu1 = 0.0;     ///< Lipschitz constant of mu
    double sigma1 = 0.0;  ///< Lipschitz constant of sigma (Frobenius)
    bool linear = false;  ///< mu == 0 and sigma constant
};

/// Coefficients driving a scheme: exact ones (gamma = 0) or perturbed ones.
struct Coefficients {
    DriftFn mu;
    DiffusionFn sigma;
    double gamma = 0.0;
};

inline Coefficients exact_coefficients(const StiffSystem& sys) { return {sys.mu, sys.sigma, 0.0}; }

/// Network coefficients: mu_net(t, x) and column nets sigma_i(t, x), all with input (t, x).
struct PerturbedCoefficients {
    Network mu_net;
    std::vector<Network> sigma_cols;
    double gamma = 0.0;
};

inline Vec time_state(double t, const Vec& x) {
    Vec z(x.size() + 1);
    z[0] = t;
    z.tail(x.size()) = x;
    return z;
}

inline Coefficients network_coefficients(const PerturbedCoefficients& pc) {
    Coefficients c;
    const Network mu = pc.mu_net;
    const std::vector<Network> cols = pc.sigma_cols;
    c.mu = [mu](double t, const Vec& x) { return realize(mu, time_state(t, x)); };
    c.sigma = [cols](double t, const Vec& x) {
        const Vec z = time_state(t, x);
        Mat s(x.size(), static_cast<Eigen::Index>(cols.size()));
        for (std::size_t i = 0; i < cols.size(); ++i) s.col(static_cast<Eigen::Index>(i)) = realize(cols[i], z);
        return s;
    };
    c.gamma = pc.gamma;
    return c;
}

/// Synthetic perturbation of the drift by gamma v(t, x) with |v| <= 1.
inline Coefficients shifted_coefficients(const StiffSystem& sys, double gamma) {
    Coefficients c = exact_coefficients(sys);
    const auto mu = sys.mu;
    const double scale = 1.0 / std::sqrt(static_cast<double>(sys.d));
    c.mu = [mu, gamma, scale](double t, const Vec& x) {
        Vec v = mu(t, x);
        for (Eigen::Index i = 0; i < x.size(); ++i) v[i] += gamma * scale * std::cos(x[i] + t);
        return v;
    };
    c.gamma = gamma;
    return c;
}

/// Sup of |mu - mu~| + |sigma - sigma~|_F over a sample cloud.
inline double measured_gamma(const StiffSystem& sys, const Coefficients& c, const std::vector<Vec>& cloud,
                             double T) {
    double g = 0.0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const double t = T * static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(1, cloud.size() - 1));
        const double e = (sys.mu(t, cloud[i]) - c.mu(t, cloud[i])).norm() +
                         (sys.sigma(t, cloud[i]) - c.sigma(t, cloud[i])).norm();
        g = std::max(g, e);
    }
    return g;
}

// ---- hypothesis validation ---------------------------------------------------

using StateSampler = std::function<Vec(std::mt19937_64&)>;

inline StateSampler gaussian_sampler(Eigen::Index d, double scale = 1.0) {
    return [d, scale](std::mt19937_64& g) {
        std::normal_distribution<double> n(0.0, scale);
        Vec x(d);
        for (Eigen::Index i = 0; i < d; ++i) x[i] = n(g);
        return x;
    };
}

struct ValidationReport {
    bool ok = true;
    double monotonicity_margin = std::numeric_limits<double>::infinity();  ///< min of rhs - lhs
    double psd_margin = std::numeric_limits<double>::infinity();           ///< min <x, Ax> / |x|^2
    double mu_lipschitz = 0.0;                                            ///< max observed ratio
    double sigma_lipschitz = 0.0;
    double op_norm = 0.0;
    std::string failure;
    double witness_t = 0.0;
    Vec witness_x, witness_y;
};

inline double op_norm(const Mat& A) {
    Eigen::JacobiSVD<Mat> svd(A);
    return svd.singularValues().size() ? svd.singularValues()[0] : 0.0;
}

/// Random checks of the monotonicity inequality, PSD part of A, Lipschitz and growth constants.
inline ValidationReport validate_system(const StiffSystem& sys, std::size_t trials, const StateSampler& sampler,
                                        std::uint64_t seed = 1, double T = 1.0) {
    if (trials < 1) throw std::invalid_argument("validate_system: trials must be >= 1");
    ValidationReport rep;
    std::mt19937_64 g(seed);
    std::uniform_real_distribution<double> ut(0.0, T);
    constexpr double tol = 1e-10;
    auto fail = [&](const std::string& what, double t, const Vec& x, const Vec& y) {
        if (!rep.ok) return;
        rep.ok = false;
        rep.failure = what;
        rep.witness_t = t;
        rep.witness_x = x;
        rep.witness_y = y;
    };
    rep.op_norm = op_norm(sys.A);
    const double dd = static_cast<double>(sys.d);
    if (rep.op_norm > sys.kappa0 * std::pow(dd, sys.kappa0) * (1 + tol))
        fail("operator norm of A exceeds kappa0 d^kappa0", 0.0, Vec(), Vec());
    for (std::size_t k = 0; k < trials; ++k) {
        const double t = ut(g);
        const Vec x = sampler(g);
        Vec y = sampler(g);
        if (k % 4 == 0) y = x + 1e-3 * (y - x);
        const Vec dx = x - y;
        const double n2 = dx.squaredNorm();
        if (n2 == 0.0) continue;
        const Vec dmu = sys.mu(t, x) - sys.mu(t, y);
        const double dsig2 = (sys.sigma(t, x) - sys.sigma(t, y)).squaredNorm();
        const double axx = dx.dot(sys.A * dx);
        const double lhs = dx.dot(dmu) + sys.eta * dmu.squaredNorm() + 0.5 * (1.0 + sys.eta) * dsig2;
        const double rhs = sys.beta * n2 + axx;
        rep.monotonicity_margin = std::min(rep.monotonicity_margin, (rhs - lhs) / n2);
        if (lhs > rhs + tol * (1.0 + std::abs(rhs))) fail("monotonicity violated", t, x, y);
        rep.psd_margin = std::min(rep.psd_margin, axx / n2);
        if (axx < -tol * n2) fail("<x, A x> < 0", t, dx, Vec());
        const double lm = dmu.norm() / std::sqrt(n2), ls = std::sqrt(dsig2 / n2);
        rep.mu_lipschitz = std::max(rep.mu_lipschitz, lm);
        rep.sigma_lipschitz = std::max(rep.sigma_lipschitz, ls);
        if (lm > sys.mu1 * (1 + tol) + tol) fail("drift Lipschitz constant exceeded", t, x, y);
        if (ls > sys.sigma1 * (1 + tol) + tol) fail("diffusion Lipschitz constant exceeded", t, x, y);
        const Vec zero = Vec::Zero(sys.d);
        if (sys.mu(t, zero).norm() > sys.mu0 * (1 + tol) + tol) fail("[mu]_0 exceeded", t, zero, Vec());
        if (sys.sigma(t, zero).norm() > sys.sigma0 * (1 + tol) + tol) fail("[sigma]_0 exceeded", t, zero, Vec());
    }
    return rep;
}

// ---- linear-implicit Euler -----------------------------------------------------

struct EulerConfig {
    double T = 1.0;
    std::size_t N = 1;
    double h() const { return T / static_cast<double>(N); }
    double t(std::size_t n) const { return T * static_cast<double>(n) / static_cast<double>(N); }
};

/// Minimal N for the strong-rate estimate: T max((2 beta + 2^{1/T}) / (2^{1/T} - 1), 1/eta, 2 eta).
inline double step_floor(double beta, double eta, double T) {
    if (T <= 0.0) return 1.0;
    const double q = std::pow(2.0, 1.0 / T);
    return T * std::max({(2.0 * beta + q) / (q - 1.0), 1.0 / eta, 2.0 * eta});
}

/// One factorization of I + hA reused for all solves.
class ImplicitFactor {
public:
    ImplicitFactor(const Mat& A, double h) : A_(A), h_(h) {
        const Eigen::Index d = A.rows();
        if (A.cols() != d) throw std::invalid_argument("implicit_factor: A must be square");
        lu_.compute(Mat::Identity(d, d) + h * A);
        const double det = lu_.determinant();
        if (!std::isfinite(det) || det == 0.0)
            throw std::runtime_error("implicit_factor: I + hA is singular; <x, Ax> >= 0 is violated");
    }

    Vec solve(const Vec& r) const { return lu_.solve(r); }
    Mat inverse() const { return lu_.inverse(); }
    double h() const { return h_; }
    const Mat& A() const { return A_; }

    struct ContractionReport {
        double worst_resolvent = 0.0;  ///< max |z| / |r|
        double worst_complement = 0.0; ///< max |hAz| / |r|
        bool ok = true;
    };

    /// Checks |(I+hA)^{-1} r| <= |r| and |hA (I+hA)^{-1} r| <= |r| on Gaussian probes.
    ContractionReport check_contraction(std::size_t probes, std::uint64_t seed) const {
        ContractionReport rep;
        std::mt19937_64 g(seed);
        std::normal_distribution<double> n(0.0, 1.0);
        for (std::size_t k = 0; k < probes; ++k) {
            Vec r(A_.rows());
            for (Eigen::Index i = 0; i < r.size(); ++i) r[i] = n(g);
            const Vec z = solve(r);
            const double nr = r.norm();
            const double a = z.norm(), b = (h_ * (A_ * z)).norm();
            rep.worst_resolvent = std::max(rep.worst_resolvent, a / nr);
            rep.worst_complement = std::max(rep.worst_complement, b / nr);
            if (a > nr || b > nr) rep.ok = false;
        }
        return rep;
    }

private:
    Mat A_;
    double h_;
    Eigen::PartialPivLU<Mat> lu_;
};

inline ImplicitFactor implicit_factor(const Mat& A, double h) { return ImplicitFactor(A, h); }

/// (I + hA)^{-1} (y + h mu(t, y) + sigma(t, y) db).
inline Vec step_pes(const ImplicitFactor& f, const Coefficients& c, const Vec& y, double t, const Vec& db) {
    Vec r = y + f.h() * c.mu(t, y) + c.sigma(t, y) * db;
    Vec out = f.solve(r);
    if (!out.allFinite()) {
        std::ostringstream os;
        os << "step_pes: non-finite state at t=" << t << " (|y|=" << y.norm() << ")";
        throw std::runtime_error(os.str());
    }
    return out;
}

/// Visitor receives (path m, step index n, state Y_n) for n = 0..N.
using PathVisitor = std::function<void(std::size_t, std::size_t, const Vec&)>;

/// Runs every path; the bundle may be finer than cfg (increments are summed).
inline void run_paths(const StiffSystem& sys, const Coefficients& c, const Vec& x0, const EulerConfig& cfg,
                      const PathBundle& paths, const PathVisitor& visit) {
    if (x0.size() != sys.d || paths.dim() != sys.d)
        throw std::invalid_argument("simulate: dimension mismatch between system, x0 and path bundle");
    if (paths.steps() % cfg.N != 0)
        throw std::invalid_argument("simulate: bundle steps must be a multiple of the scheme steps");
    if (std::abs(paths.horizon() - cfg.T) > 1e-12 * (1.0 + cfg.T))
        throw std::invalid_argument("simulate: bundle horizon differs from scheme horizon");
    const std::size_t factor = paths.steps() / cfg.N;
    const ImplicitFactor f(sys.A, cfg.h());
    parallel_for(paths.paths(), [&](std::size_t m) {
        Vec y = f.solve(x0);
        visit(m, 0, y);
        for (std::size_t n = 0; n < cfg.N; ++n) {
            const Vec db = factor == 1 ? paths.increment(m, n) : paths.coarse_increment(m, n, factor);
            y = step_pes(f, c, y, cfg.t(n), db);
            visit(m, n + 1, y);
        }
    });
}

/// Endpoints Y_N of all paths as an M x d matrix.
inline Mat simulate(const StiffSystem& sys, const Coefficients& c, const Vec& x0, const EulerConfig& cfg,
                    const PathBundle& paths) {
    Mat out(static_cast<Eigen::Index>(paths.paths()), sys.d);
    run_paths(sys, c, x0, cfg, paths, [&](std::size_t m, std::size_t n, const Vec& y) {
        if (n == cfg.N) out.row(static_cast<Eigen::Index>(m)) = y.transpose();
    });
    return out;
}

/// E sum_m beta_m (Y_T)_m^2 for dY = -A Y dt + sigma0 dB, via Van Loan's block exponential.
inline double ou_exact_value(const Mat& A, const Mat& sigma0, const Vec& betaw, const Vec& x0, double T) {
    const Eigen::Index d = A.rows();
    if (T == 0.0) return betaw.dot(x0.cwiseProduct(x0));
    Mat blk = Mat::Zero(2 * d, 2 * d);
    blk.topLeftCorner(d, d) = A * T;
    blk.topRightCorner(d, d) = sigma0 * sigma0.transpose() * T;
    blk.bottomRightCorner(d, d) = -A.transpose() * T;
    const Mat e = blk.exp();
    const Mat phi = (-A * T).exp();
    const Mat cov = phi * e.topRightCorner(d, d);
    const Vec mean = phi * x0;
    double v = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) v += betaw[i] * (mean[i] * mean[i] + cov(i, i));
    return v;
}

// ---- studies --------------------------------------------------------------------

struct RateRow {
    std::size_t N = 0;
    double h = 0.0;
    double strong_err = 0.0;
    double weak_err = 0.0;
    double stderr_ = 0.0;
};

struct RateStudy {
    std::vector<RateRow> rows;
    double slope = 0.0;
    double r2 = 0.0;
    bool dropped_coarsest = false;
    double state_scale = 0.0;
};

/// log-log least squares of err vs h; drops the coarsest point when its error exceeds half the state scale.
inline void fit_rate(RateStudy& st, bool strong) {
    std::vector<double> lx, ly;
    std::size_t coarsest = 0;
    for (std::size_t i = 0; i < st.rows.size(); ++i)
        if (st.rows[i].h > st.rows[coarsest].h) coarsest = i;
    const double e0 = strong ? st.rows[coarsest].strong_err : st.rows[coarsest].weak_err;
    st.dropped_coarsest = st.rows.size() > 2 && e0 > 0.5 * st.state_scale;
    for (std::size_t i = 0; i < st.rows.size(); ++i) {
        if (st.dropped_coarsest && i == coarsest) continue;
        const double e = strong ? st.rows[i].strong_err : st.rows[i].weak_err;
        if (e <= 0.0) continue;
        lx.push_back(std::log(st.rows[i].h));
        ly.push_back(std::log(e));
    }
    if (lx.size() >= 2) {
        const auto f = linear_fit(lx, ly);
        st.slope = f.slope;
        st.r2 = f.r2;
    }
}

/// Strong error max_n (E|Y~_n - Y(t_n)|^2)^{1/2}; Y is the exact-coefficient scheme on the same paths with
/// ref_factor * max(N_list) steps started at Y(0) = x0; weak_err reports |E|Y~_N|^2 - E|Y_ref(T)|^2|.
inline RateStudy strong_rate_study(const StiffSystem& sys, const Coefficients& c, const Vec& x0,
                                   std::vector<std::size_t> N_list, std::size_t M, std::uint64_t seed, double T,
                                   std::size_t ref_factor = 64) {
    if (N_list.empty()) throw std::invalid_argument("strong_rate_study: empty N list");
    std::sort(N_list.begin(), N_list.end());
    const std::size_t Nmax = N_list.back();
    for (auto n : N_list)
        if (Nmax % n != 0) throw std::invalid_argument("strong_rate_study: N list must divide its maximum");
    const std::size_t Nref = ref_factor * Nmax;
    const PathBundle fine(seed, M, Nref, sys.d, T);
    const std::size_t K = N_list.size();
    // sq[k][m * (N_k + 1) + n]
    std::vector<std::vector<double>> sq(K);
    for (std::size_t k = 0; k < K; ++k) sq[k].assign(M * (N_list[k] + 1), 0.0);
    std::vector<double> ref_norm2(M * (Nmax + 1)), weak_diff(K * M);
    const ImplicitFactor fref(sys.A, T / static_cast<double>(Nref));
    const Coefficients exact = exact_coefficients(sys);
    std::vector<ImplicitFactor> fk;
    for (auto n : N_list) fk.emplace_back(sys.A, T / static_cast<double>(n));
    parallel_for(M, [&](std::size_t m) {
        std::vector<Vec> inc(Nref);
        for (std::size_t j = 0; j < Nref; ++j) inc[j] = fine.increment(m, j);
        std::vector<Vec> ref(Nmax + 1);
        Vec y = x0;
        ref[0] = y;
        const std::size_t stride = Nref / Nmax;
        for (std::size_t j = 0; j < Nref; ++j) {
            y = step_pes(fref, exact, y, T * static_cast<double>(j) / static_cast<double>(Nref), inc[j]);
            if ((j + 1) % stride == 0) ref[(j + 1) / stride] = y;
        }
        for (std::size_t n = 0; n <= Nmax; ++n) ref_norm2[m * (Nmax + 1) + n] = ref[n].squaredNorm();
        for (std::size_t k = 0; k < K; ++k) {
            const std::size_t N = N_list[k], r = Nref / N, q = Nmax / N;
            Vec z = fk[k].solve(x0);
            sq[k][m * (N + 1)] = (z - ref[0]).squaredNorm();
            for (std::size_t n = 0; n < N; ++n) {
                Vec db = Vec::Zero(sys.d);
                for (std::size_t j = 0; j < r; ++j) db += inc[n * r + j];
                z = step_pes(fk[k], c, z, T * static_cast<double>(n) / static_cast<double>(N), db);
                sq[k][m * (N + 1) + n + 1] = (z - ref[(n + 1) * q]).squaredNorm();
            }
            weak_diff[k * M + m] = z.squaredNorm() - ref[Nmax].squaredNorm();
        }
    });
    RateStudy st;
    for (std::size_t n = 0; n <= Nmax; ++n) {
        std::vector<double> v(M);
        for (std::size_t m = 0; m < M; ++m) v[m] = ref_norm2[m * (Nmax + 1) + n];
        st.state_scale = std::max(st.state_scale, std::sqrt(mean_stderr(v).mean));
    }
    for (std::size_t k = 0; k < K; ++k) {
        const std::size_t N = N_list[k];
        RateRow row;
        row.N = N;
        row.h = T / static_cast<double>(N);
        double best = -1.0, best_se = 0.0;
        for (std::size_t n = 0; n <= N; ++n) {
            std::vector<double> v(M);
            for (std::size_t m = 0; m < M; ++m) v[m] = sq[k][m * (N + 1) + n];
            const auto e = mean_stderr(v);
            if (e.mean > best) best = e.mean, best_se = e.stderr_;
        }
        row.strong_err = std::sqrt(best);
        row.stderr_ = best > 0.0 ? best_se / (2.0 * std::sqrt(best)) : 0.0;
        std::vector<double> w(weak_diff.begin() + static_cast<std::ptrdiff_t>(k * M),
                              weak_diff.begin() + static_cast<std::ptrdiff_t>((k + 1) * M));
        row.weak_err = std::abs(mean_stderr(w).mean);
        st.rows.push_back(row);
    }
    fit_rate(st, true);
    return st;
}

struct CostPack {
    std::function<double(const Vec&)> f;         ///< untruncated cost
    std::function<double(const Vec&)> f_trunc;   ///< f_{d,D}
    Network net;                                 ///< realizes f~_D
    double theta = 0.0;                          ///< sup |f_D - f~_D|
    double D = 0.0;
};

struct WeakStudy {
    RateStudy study;
    std::vector<double> structure;  ///< D h^{1/2} + D^{-2 eta/(eta+4)} + theta per row
    bool consistent = true;
};

/// |E f(Y_T) - E f~_D(Y~_N)| against a supplied oracle value E f(Y_T).
inline WeakStudy weak_rate_study(const StiffSystem& sys, const Coefficients& c, const CostPack& cost, const Vec& x0,
                                 std::vector<std::size_t> N_list, std::size_t M, std::uint64_t seed, double T,
                                 double oracle) {
    std::sort(N_list.begin(), N_list.end());
    WeakStudy ws;
    ws.study.state_scale = std::abs(oracle);
    for (auto N : N_list) {
        const PathBundle pb(seed, M, N, sys.d, T);
        const EulerConfig cfg{T, N};
        std::vector<double> vals(M);
        run_paths(sys, c, x0, cfg, pb, [&](std::size_t m, std::size_t n, const Vec& y) {
            if (n == N) vals[m] = realize_scalar(cost.net, y);
        });
        const auto e = mean_stderr(vals);
        RateRow row;
        row.N = N;
        row.h = T / static_cast<double>(N);
        row.weak_err = std::abs(oracle - e.mean);
        row.stderr_ = e.stderr_;
        ws.study.rows.push_back(row);
        ws.structure.push_back(cost.D * std::sqrt(row.h) +
                               std::pow(cost.D, -2.0 * sys.eta / (sys.eta + 4.0)) + cost.theta);
    }
    fit_rate(ws.study, false);
    // The error-to-structure ratio must not grow beyond its coarsest value (up to 3 stderr).
    const double k0 = (ws.study.rows.front().weak_err + 3.0 * ws.study.rows.front().stderr_) / ws.structure.front();
    for (std::size_t i = 0; i < ws.study.rows.size(); ++i)
        if (ws.study.rows[i].weak_err > k0 * ws.structure[i] + 3.0 * ws.study.rows[i].stderr_) ws.consistent = false;
    return ws;
}

struct GapReport {
    double gap = 0.0;      ///< max_n E(|dY_n|^2 + 2h <dY_n, A dY_n>)
    double stderr_ = 0.0;
    double bound = 0.0;
    bool pass = true;
};

/// ES with exact coefficients against PES with perturbed ones on shared increments.
inline GapReport coupled_gap_check(const StiffSystem& sys, const Coefficients& perturbed, const Vec& x0,
                                   const EulerConfig& cfg, const PathBundle& paths) {
    const double need = cfg.T * std::max(2.0 * sys.eta, 1.0 / sys.eta);
    if (static_cast<double>(cfg.N) < need)
        throw std::invalid_argument("coupled_gap_check: N must be at least T max(2 eta, 1/eta)");
    const Coefficients ex = exact_coefficients(sys);
    const std::size_t M = paths.paths(), N = cfg.N;
    std::vector<double> gap(M * (N + 1));
    const ImplicitFactor f(sys.A, cfg.h());
    const std::size_t factor = paths.steps() / N;
    parallel_for(M, [&](std::size_t m) {
        Vec y = f.solve(x0), z = y;
        gap[m * (N + 1)] = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
            const Vec db = factor == 1 ? paths.increment(m, n) : paths.coarse_increment(m, n, factor);
            y = step_pes(f, ex, y, cfg.t(n), db);
            z = step_pes(f, perturbed, z, cfg.t(n), db);
            const Vec dy = y - z;
            gap[m * (N + 1) + n + 1] = dy.squaredNorm() + 2.0 * cfg.h() * dy.dot(sys.A * dy);
        }
    });
    GapReport rep;
    for (std::size_t n = 0; n <= N; ++n) {
        std::vector<double> v(M);
        for (std::size_t m = 0; m < M; ++m) v[m] = gap[m * (N + 1) + n];
        const auto e = mean_stderr(v);
        if (e.mean > rep.gap) rep.gap = e.mean, rep.stderr_ = e.stderr_;
    }
    const double g = perturbed.gamma;
    rep.bound = std::exp((2.0 * sys.beta + 1.0) * cfg.T) * cfg.T * (1.0 + sys.eta) * g * g / sys.eta;
    rep.pass = rep.gap <= rep.bound + 3.0 * rep.stderr_;
    return rep;
}

/// Moment constant alpha_p, p in [2, 2 + eta).
inline double alpha_p(double p, double eta, double mu0, double sigma0) {
    if (!(p >= 2.0 && p < 2.0 + eta)) throw std::invalid_argument("alpha_p: p must lie in [2, 2 + eta)");
    return (0.5 + eta * (p - 2.0) / (eta + 2.0 - p)) * mu0 * mu0 +
           (1.0 + eta) * (p - 1.0) / (2.0 * (eta + 2.0 - p)) * sigma0 * sigma0;
}

inline double moment_bound(double p, const StiffSystem& sys, double x0_norm, double T) {
    return std::pow(2.0, (p - 2.0) / 2.0) * (alpha_p(p, sys.eta, sys.mu0, sys.sigma0) + std::pow(x0_norm, p)) *
           std::exp(p * (sys.beta + 0.5) * T);
}

inline double discrete_l2_bound(const StiffSystem& sys, double x0_norm, double T) {
    const double a1 = (1.0 + sys.eta) * (1.0 + sys.eta) * (sys.mu0 * sys.mu0 + sys.sigma0 * sys.sigma0) / sys.eta;
    return 3.0 * std::exp((2.0 * sys.beta + 1.0) * T) * (x0_norm * x0_norm + a1 * T);
}

struct MomentReport {
    double p = 2.0;
    double moment = 0.0;  ///< max_n E|Y_n|^p
    double moment_stderr = 0.0;
    double moment_bound = 0.0;
    double discrete = 0.0;  ///< max_n E(|Y_n|^2 + 2h <Y_{n+1}, A Y_{n+1}>)
    double discrete_stderr = 0.0;
    double discrete_bound = 0.0;
    bool discrete_applicable = true;
    double stability_lhs = 0.0;
    double stability_rhs = 0.0;
    double stability_stderr = 0.0;
    bool pass = true;
};

/// p-th moment bound, discrete L2 bound and one-step stability, all as one-sided MC checks.
inline MomentReport moment_check(const StiffSystem& sys, const Vec& x0, const EulerConfig& cfg,
                                 const PathBundle& paths, double p) {
    const Coefficients c = exact_coefficients(sys);
    const std::size_t M = paths.paths(), N = cfg.N;
    std::vector<double> np(M * (N + 1)), n2(M * (N + 1)), ay(M * (N + 1));
    run_paths(sys, c, x0, cfg, paths, [&](std::size_t m, std::size_t n, const Vec& y) {
        const double r = y.norm();
        np[m * (N + 1) + n] = std::pow(r, p);
        n2[m * (N + 1) + n] = r * r;
        ay[m * (N + 1) + n] = y.dot(sys.A * y);
    });
    MomentReport rep;
    rep.p = p;
    for (std::size_t n = 0; n <= N; ++n) {
        std::vector<double> a(M), b(M);
        for (std::size_t m = 0; m < M; ++m) {
            a[m] = np[m * (N + 1) + n];
            b[m] = n2[m * (N + 1) + n] + (n < N ? 2.0 * cfg.h() * ay[m * (N + 1) + n + 1] : 0.0);
        }
        const auto ea = mean_stderr(a), eb = mean_stderr(b);
        if (ea.mean > rep.moment) rep.moment = ea.mean, rep.moment_stderr = ea.stderr_;
        if (eb.mean > rep.discrete) rep.discrete = eb.mean, rep.discrete_stderr = eb.stderr_;
    }
    rep.moment_bound = moment_bound(p, sys, x0.norm(), cfg.T);
    rep.discrete_bound = discrete_l2_bound(sys, x0.norm(), cfg.T);
    rep.discrete_applicable = static_cast<double>(N) >= 2.0 * cfg.T / sys.eta;

    // One-step stability from two independent starting clouds driven by a shared increment.
    std::vector<double> lhs(M), rhs(M);
    const ImplicitFactor f(sys.A, cfg.h());
    const double h = cfg.h();
    parallel_for(M, [&](std::size_t m) {
        Vec z(sys.d), y1(sys.d), y2(sys.d);
        const CounterNormal g(paths.seed() ^ 0x9e3779b97f4a7c15ULL);
        g.fill(m, 0, y1.data(), static_cast<std::size_t>(sys.d));
        g.fill(m, 1, y2.data(), static_cast<std::size_t>(sys.d));
        g.fill(m, 2, z.data(), static_cast<std::size_t>(sys.d));
        y1 += x0;
        z *= std::sqrt(h);
        const double t = 0.0;
        const Vec x1 = step_pes(f, c, y1, t, z), x2 = step_pes(f, c, y2, t, z);
        const Vec dx = x1 - x2, dy = y1 - y2;
        const Vec dmu = c.mu(t, y1) - c.mu(t, y2);
        const double ds = (c.sigma(t, y1) - c.sigma(t, y2)).squaredNorm();
        lhs[m] = 0.5 * dx.squaredNorm() + h * dx.dot(sys.A * dx);
        rhs[m] = 0.5 * dy.squaredNorm() + h * (dy.dot(dmu) + 0.5 * h * dmu.squaredNorm() + 0.5 * ds);
    });
    std::vector<double> diff(M);
    for (std::size_t m = 0; m < M; ++m) diff[m] = lhs[m] - rhs[m];
    const auto ed = mean_stderr(diff);
    rep.stability_lhs = mean_stderr(lhs).mean;
    rep.stability_rhs = mean_stderr(rhs).mean;
    rep.stability_stderr = ed.stderr_;

    rep.pass = rep.moment <= rep.moment_bound + 3.0 * rep.moment_stderr &&
               (!rep.discrete_applicable || rep.discrete <= rep.discrete_bound + 3.0 * rep.discrete_stderr) &&
               ed.mean <= 3.0 * ed.stderr_;
    return rep;
}

}  // namespace deepstiff

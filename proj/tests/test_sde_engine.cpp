#include "deepstiff/systems.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace deepstiff;

namespace {

StiffSystem plain(Eigen::Index d, const Mat& A, DriftFn mu, DiffusionFn sigma, double beta, double eta) {
    StiffSystem s;
    s.id = "plain";
    s.d = d;
    s.A = A;
    s.mu = std::move(mu);
    s.sigma = std::move(sigma);
    s.beta = beta;
    s.eta = eta;
    s.kappa0 = 1e6;
    s.mu0 = s.sigma0 = 1e6;
    s.mu1 = s.sigma1 = 1e6;
    return s;
}

DriftFn zero_mu() {
    return [](double, const Vec& x) { return Vec(Vec::Zero(x.size())); };
}
DiffusionFn const_sigma(double s) {
    return [s](double, const Vec& x) { return Mat(s * Mat::Identity(x.size(), x.size())); };
}

Mat random_psd(std::mt19937_64& g, Eigen::Index d) {
    std::normal_distribution<double> n(0.0, 1.0);
    Mat B(d, d), S(d, d);
    for (Eigen::Index i = 0; i < B.size(); ++i) B.data()[i] = n(g), S.data()[i] = n(g);
    // PSD symmetric part plus a skew part.
    return B * B.transpose() + (S - S.transpose());
}

}  // namespace

TEST(Validate, PassesAndFailsAsExpected) {
    const auto psd = [] {
        Mat A(2, 2);
        A << 2, 1, 1, 3;
        return A;
    }();
    auto s0 = plain(2, psd, zero_mu(), const_sigma(0.0), 0.0, 0.5);
    const auto r0 = validate_system(s0, 500, gaussian_sampler(2), 1);
    EXPECT_TRUE(r0.ok);
    EXPECT_GE(r0.monotonicity_margin, 0.0);

    auto s1 = plain(3, Mat::Zero(3, 3), [](double, const Vec& x) { return Vec(x.cwiseMax(0.0)); }, const_sigma(0.0),
                    2.0, 1.0);
    EXPECT_TRUE(validate_system(s1, 1000, gaussian_sampler(3), 2).ok);

    auto s2 = plain(1, Mat::Zero(1, 1), [](double, const Vec& x) { return Vec(3.0 * x); }, const_sigma(0.0), 0.0, 1.0);
    const auto r2 = validate_system(s2, 10, gaussian_sampler(1), 3);
    EXPECT_FALSE(r2.ok);
    EXPECT_EQ(r2.failure, "monotonicity violated");
    EXPECT_EQ(r2.witness_x.size(), 1);
    EXPECT_THROW(validate_system(s2, 0, gaussian_sampler(1)), std::invalid_argument);
}

TEST(ImplicitFactor, Examples) {
    Vec r(3);
    r << 1, -2, 4;
    const ImplicitFactor f(100.0 * Mat::Identity(3, 3), 0.01);
    EXPECT_EQ(f.solve(r), r / 2);
    const ImplicitFactor z(Mat::Zero(3, 3), 0.3);
    EXPECT_EQ(z.solve(r), r);
    EXPECT_THROW(ImplicitFactor(-1.0 * Mat::Identity(2, 2), 1.0), std::runtime_error);
}

TEST(ImplicitFactor, ContractionOnRandomPsd) {
    std::mt19937_64 g(5);
    for (int k = 0; k < 10; ++k) {
        const Mat A = random_psd(g, 6);
        for (double h : {1e-3, 0.1, 10.0}) {
            const ImplicitFactor f(A, h);
            const auto rep = f.check_contraction(100, 9 + k);
            EXPECT_TRUE(rep.ok) << rep.worst_resolvent << " " << rep.worst_complement;
            const Mat inv = f.inverse();
            Vec r = Vec::Ones(6);
            EXPECT_LE((inv * r - f.solve(r)).norm(), 1e-12 * (1 + r.norm()));
        }
    }
}

TEST(StepPes, Examples) {
    Vec y = Vec::Constant(1, 1.0);
    // mu = 1, sigma = 0, A = 100, h = 0.01
    auto s = plain(1, Mat::Constant(1, 1, 100.0), [](double, const Vec&) { return Vec(Vec::Ones(1)); },
                   const_sigma(0.0), 0.0, 0.5);
    const ImplicitFactor f(s.A, 0.01);
    EXPECT_DOUBLE_EQ(step_pes(f, exact_coefficients(s), y, 0.0, Vec::Zero(1))[0], 0.505);

    Vec y3(3), db(3);
    y3 << 1, 2, 3;
    db << 0.5, -0.5, 0.25;
    auto s0 = plain(3, Mat::Zero(3, 3), zero_mu(), const_sigma(1.0), 0.0, 0.5);
    const ImplicitFactor f0(s0.A, 0.1);
    EXPECT_EQ(step_pes(f0, exact_coefficients(s0), y3, 0.0, db), y3 + db);

    auto blow = plain(1, Mat::Zero(1, 1), [](double, const Vec&) { return Vec(Vec::Constant(1, NAN)); },
                      const_sigma(0.0), 0.0, 0.5);
    EXPECT_THROW(step_pes(ImplicitFactor(blow.A, 0.1), exact_coefficients(blow), y, 0.0, Vec::Zero(1)),
                 std::runtime_error);
}

TEST(Simulate, SingleStepBrownian) {
    auto s = plain(2, Mat::Zero(2, 2), zero_mu(), const_sigma(1.0), 0.0, 0.5);
    Vec x0(2);
    x0 << 0.5, -1.0;
    const PathBundle pb(3, 16, 1, 2, 1.0);
    const Mat end = simulate(s, exact_coefficients(s), x0, {1.0, 1}, pb);
    for (std::size_t m = 0; m < 16; ++m)
        EXPECT_EQ(Vec(end.row(static_cast<Eigen::Index>(m)).transpose()), x0 + pb.increment(m, 0));
}

TEST(Simulate, ZeroNoiseRecursion) {
    Vec lam(3);
    lam << 1, 10, 100;
    auto s = plain(3, lam.asDiagonal(), zero_mu(), const_sigma(0.0), 0.0, 0.5);
    Vec x0 = Vec::Ones(3);
    const std::size_t N = 8;
    const PathBundle pb(1, 2, N, 3, 1.0);
    const Mat end = simulate(s, exact_coefficients(s), x0, {1.0, N}, pb);
    const double h = 1.0 / N;
    for (Eigen::Index i = 0; i < 3; ++i) {
        double v = 1.0;
        for (std::size_t k = 0; k <= N; ++k) v /= (1.0 + h * lam[i]);
        EXPECT_NEAR(end(0, i), v, 1e-15);
    }
}

TEST(Simulate, DeterministicAcrossThreads) {
    const auto r = make_galerkin_heat(4, 0.1, 1.0, 0.5);
    Vec x0 = Vec::Constant(4, 0.3);
    const PathBundle pb(77, 64, 16, 4, 1.0);
    set_threads(1);
    const Mat a = simulate(r.sys, exact_coefficients(r.sys), x0, {1.0, 16}, pb);
    set_threads(4);
    const Mat b = simulate(r.sys, exact_coefficients(r.sys), x0, {1.0, 16}, pb);
    const Mat c = simulate(r.sys, exact_coefficients(r.sys), x0, {1.0, 16}, pb);
    set_threads(1);
    EXPECT_EQ(a, b);
    EXPECT_EQ(b, c);
    EXPECT_THROW(simulate(r.sys, exact_coefficients(r.sys), x0, {1.0, 3}, pb), std::invalid_argument);
}

TEST(OuExact, ClosedForms) {
    const Eigen::Index d = 3;
    Vec x0(d);
    x0 << 0.5, -1, 2;
    const Vec ones = Vec::Ones(d);
    EXPECT_NEAR(ou_exact_value(Mat::Zero(d, d), Mat::Identity(d, d), ones, x0, 2.0), x0.squaredNorm() + d * 2.0,
                1e-12);
    const double a = 3.0, T = 0.7;
    const double want = std::exp(-2 * a * T) * x0.squaredNorm() + d * (1 - std::exp(-2 * a * T)) / (2 * a);
    EXPECT_NEAR(ou_exact_value(a * Mat::Identity(d, d), Mat::Identity(d, d), ones, x0, T), want, 1e-12);
    Vec b(d);
    b << 1, 2, 3;
    EXPECT_EQ(ou_exact_value(a * Mat::Identity(d, d), Mat::Identity(d, d), b, x0, 0.0), b.dot(x0.cwiseProduct(x0)));
}

TEST(StrongRate, ZeroSystemHasZeroError) {
    auto s = plain(2, Mat::Zero(2, 2), zero_mu(), const_sigma(0.0), 0.0, 0.5);
    const auto st = strong_rate_study(s, exact_coefficients(s), Vec::Ones(2), {2, 4, 8}, 32, 1, 1.0, 4);
    for (const auto& row : st.rows) EXPECT_EQ(row.strong_err, 0.0);
    EXPECT_THROW(strong_rate_study(s, exact_coefficients(s), Vec::Ones(2), {3, 4}, 8, 1, 1.0), std::invalid_argument);
}

TEST(StrongRate, PerturbationFloor) {
    const auto r = make_ou(2, 1.0, 4.0, 1.0);
    const auto exact = strong_rate_study(r.sys, exact_coefficients(r.sys), Vec::Zero(2), {4, 8, 16, 32}, 256, 4,
                                         1.0, 8);
    const auto pert = strong_rate_study(r.sys, shifted_coefficients(r.sys, 0.5), Vec::Zero(2), {4, 8, 16, 32}, 256,
                                        4, 1.0, 8);
    // The perturbed error stops shrinking at fine h; the exact one keeps decaying.
    EXPECT_LT(exact.rows.back().strong_err, 0.6 * exact.rows.front().strong_err);
    EXPECT_GT(pert.rows.back().strong_err, 0.1);
    EXPECT_LT(pert.slope, exact.slope);
}

TEST(WeakRate, OuQuadraticCost) {
    const auto r = make_ou(2, 1.0, 8.0, 0.5);
    Vec x0(2);
    x0 << 0.4, 0.2;
    const Vec beta = Vec::Ones(2);
    const CostPack cost = make_quadratic_cost(beta, 4.0, 1e-5);
    const double oracle = ou_exact_value(r.sys.A, 0.5 * Mat::Identity(2, 2), beta, x0, 1.0);
    const auto ws = weak_rate_study(r.sys, exact_coefficients(r.sys), cost, x0, {8, 32, 128}, 4096, 5, 1.0, oracle);
    for (const auto& row : ws.study.rows) EXPECT_LE(row.weak_err, 0.1 * oracle + 3 * row.stderr_);
    EXPECT_TRUE(ws.consistent);

    // Inflating theta by a constant offset moves the error by at most that offset.
    CostPack shifted = cost;
    shifted.net = fold_affine(cost.net, Side::Post, Mat::Identity(1, 1), Vec::Constant(1, 0.1));
    shifted.theta += 0.1;
    const auto w2 = weak_rate_study(r.sys, exact_coefficients(r.sys), shifted, x0, {8, 32, 128}, 4096, 5, 1.0, oracle);
    for (std::size_t i = 0; i < w2.study.rows.size(); ++i)
        EXPECT_LE(w2.study.rows[i].weak_err, ws.study.rows[i].weak_err + 0.1 + 1e-12);

    CostPack zero = cost;
    zero.net = fold_affine(cost.net, Side::Post, Mat::Zero(1, 1), Vec::Zero(1));
    const auto w0 = weak_rate_study(r.sys, exact_coefficients(r.sys), zero, x0, {8, 16}, 64, 5, 1.0, 0.0);
    for (const auto& row : w0.study.rows) EXPECT_EQ(row.weak_err, 0.0);
}

TEST(CoupledGap, ZeroAndScaling) {
    auto s = plain(2, Vec(Vec::LinSpaced(2, 1.0, 5.0)).asDiagonal(), zero_mu(), const_sigma(0.5), 0.0, 0.999);
    s.eta = 0.999;
    const EulerConfig cfg{1.0, 32};
    const PathBundle pb(8, 512, 32, 2, 1.0);
    const auto g0 = coupled_gap_check(s, shifted_coefficients(s, 0.0), Vec::Ones(2), cfg, pb);
    EXPECT_EQ(g0.gap, 0.0);
    EXPECT_TRUE(g0.pass);
    const auto g1 = coupled_gap_check(s, shifted_coefficients(s, 0.01), Vec::Ones(2), cfg, pb);
    const auto g2 = coupled_gap_check(s, shifted_coefficients(s, 0.02), Vec::Ones(2), cfg, pb);
    EXPECT_TRUE(g1.pass);
    EXPECT_TRUE(g2.pass);
    EXPECT_NEAR(g2.bound / g1.bound, 4.0, 1e-12);
    EXPECT_LE(g2.gap / g1.gap, 4.0 * (1 + 1e-6));
    EXPECT_THROW(coupled_gap_check(s, shifted_coefficients(s, 0.0), Vec::Ones(2), {1.0, 1}, PathBundle(8, 4, 1, 2, 1.0)),
                 std::invalid_argument);
}

TEST(CoupledGap, BoundArithmetic) {
    // gamma = 0.01, T = 1, beta = 0, eta = 1: e * 2 * 1e-4.
    auto s = plain(1, Mat::Zero(1, 1), zero_mu(), const_sigma(0.0), 0.0, 1.0);
    const auto g = coupled_gap_check(s, shifted_coefficients(s, 0.01), Vec::Zero(1), {1.0, 4}, PathBundle(1, 8, 4, 1, 1.0));
    EXPECT_NEAR(g.bound, std::exp(1.0) * 2e-4, 1e-15);
    EXPECT_TRUE(g.pass);
}

TEST(Moments, ContractionAndClosedForm) {
    Vec lam(2);
    lam << 1, 20;
    auto s = plain(2, lam.asDiagonal(), zero_mu(), const_sigma(0.0), 0.0, 0.5);
    s.mu0 = s.sigma0 = 0.0;
    Vec x0(2);
    x0 << 1, -1;
    const auto r = moment_check(s, x0, {1.0, 16}, PathBundle(2, 64, 16, 2, 1.0), 2.2);
    EXPECT_LE(r.moment, std::pow(x0.norm(), 2.2) + 1e-12);
    EXPECT_TRUE(r.pass);

    // Brownian motion: E|Y_T|^2 = |x0|^2 + d T against (alpha_2 + |x0|^2) e^T.
    auto bm = plain(2, Mat::Zero(2, 2), zero_mu(), const_sigma(1.0), 0.0, 0.5);
    bm.mu0 = 0.0;
    bm.sigma0 = std::sqrt(2.0);
    EXPECT_DOUBLE_EQ(alpha_p(2.0, 0.5, 0.0, std::sqrt(2.0)), 1.5 * 2.0 / (2.0 * 0.5));
    EXPECT_LE(x0.squaredNorm() + 2.0, moment_bound(2.0, bm, x0.norm(), 1.0));
    const auto rb = moment_check(bm, x0, {1.0, 16}, PathBundle(3, 4096, 16, 2, 1.0), 2.0);
    EXPECT_NEAR(rb.moment, x0.squaredNorm() + 2.0, 4 * rb.moment_stderr + 0.02);
    EXPECT_TRUE(rb.pass);
    EXPECT_TRUE(rb.discrete_applicable);
    EXPECT_THROW(alpha_p(2.5, 0.5, 1.0, 1.0), std::invalid_argument);
}

TEST(Moments, GalerkinAndOu) {
    for (const auto& r : {make_galerkin_heat(4, 0.1, 1.0, 0.75), make_ou(4, 1.0, 64.0, 1.0)}) {
        const Vec x0 = Vec::Constant(4, 0.5);
        for (double p : {2.0, 2.4}) {
            const auto rep = moment_check(r.sys, x0, {1.0, 32}, PathBundle(4, 1024, 32, 4, 1.0), p);
            EXPECT_TRUE(rep.pass) << r.sys.id << " p=" << p << " moment " << rep.moment << " <= " << rep.moment_bound
                                  << ", discrete " << rep.discrete << " <= " << rep.discrete_bound;
        }
    }
}

TEST(StepFloor, Formula) {
    EXPECT_DOUBLE_EQ(step_floor(0.0, 0.5, 1.0), std::max(2.0 / 1.0, 2.0));
    EXPECT_GE(step_floor(1.0, 0.5, 2.0), 2.0 * 2.0);
}

#pragma once

#include "deepstiff/nn_calculus.hpp"
#include "deepstiff/parallel.hpp"

#include <random>

namespace deepstiff {

/// Outcome of one randomized operation family.
struct SuiteRow {
    std::string op;
    std::size_t instances = 0;
    std::size_t points = 0;
    double max_err = 0.0;        ///< max |net - definition| / (1 + |definition|)
    std::size_t size_checks = 0;
    std::size_t size_failures = 0;
    bool pass = true;
};

struct SuiteConfig {
    std::size_t instances = 50;
    std::size_t points = 10000;
    double tol = 1e-12;
    std::uint64_t seed = 1;
};

namespace detail {

class SuiteRng {
public:
    explicit SuiteRng(std::uint64_t seed) : g_(seed) {}
    std::size_t pick(std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(g_); }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(g_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(g_); }
    Mat mat(Eigen::Index r, Eigen::Index c) {
        Mat m(r, c);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal();
        return m;
    }
    Vec vec(Eigen::Index n) { return mat(n, 1); }
    Vec point(Eigen::Index n) {
        Vec v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = uniform(-3.0, 3.0);
        return v;
    }
    /// Random network with given in/out dims and hidden widths drawn from [1, 5].
    Network net(Eigen::Index in, Eigen::Index out, std::size_t depth) {
        std::vector<Eigen::Index> dims{in};
        for (std::size_t l = 1; l < depth; ++l) dims.push_back(static_cast<Eigen::Index>(pick(1, 5)));
        dims.push_back(out);
        return net(dims);
    }
    Network net(const std::vector<Eigen::Index>& dims) {
        std::vector<Layer> ls;
        for (std::size_t l = 1; l < dims.size(); ++l) ls.emplace_back(mat(dims[l], dims[l - 1]), vec(dims[l]));
        return Network(std::move(ls));
    }
    Network like(const Network& n) {
        std::vector<Eigen::Index> dims;
        for (auto v : n.dims()) dims.push_back(static_cast<Eigen::Index>(v));
        return net(dims);
    }

private:
    std::mt19937_64 g_;
};

inline double rel_err(const Vec& got, const Vec& want) {
    return (got - want).cwiseAbs().maxCoeff() / (1.0 + want.cwiseAbs().maxCoeff());
}

}  // namespace detail

/// Randomized exactness and size-bound checks for every calculus operation.
inline std::vector<SuiteRow> run_calculus_suite(const SuiteConfig& cfg) {
    using Check = std::function<void(detail::SuiteRng&, SuiteRow&)>;
    auto sample = [&](detail::SuiteRng& r, SuiteRow& row, Eigen::Index in, const std::function<Vec(const Vec&)>& got,
                      const std::function<Vec(const Vec&)>& want) {
        for (std::size_t p = 0; p < cfg.points; ++p) {
            const Vec x = r.point(in);
            row.max_err = std::max(row.max_err, detail::rel_err(got(x), want(x)));
        }
        row.points += cfg.points;
    };
    auto size_check = [](SuiteRow& row, bool ok) {
        ++row.size_checks;
        if (!ok) ++row.size_failures;
    };
    const std::vector<std::pair<std::string, Check>> ops{
        {"identity",
         [&](detail::SuiteRng& r, SuiteRow& row) {
             const auto d = static_cast<Eigen::Index>(r.pick(1, 6));
             const std::size_t L = r.pick(1, 5);
             const Network id = identity_net(d, L);
             sample(r, row, d, [&](const Vec& x) { return realize(id, x); }, [](const Vec& x) { return x; });
             const std::uint64_t dd = static_cast<std::uint64_t>(d);
             const std::uint64_t want = L == 1 ? dd * (dd + 1) : 2 * dd * (dd + 1) + (L - 2) * 2 * dd * (2 * dd + 1) + dd * (2 * dd + 1);
             size_check(row, id.size() == want && id.depth() == L);
         }},
        {"compose",
         [&](detail::SuiteRng& r, SuiteRow& row) {
             const auto a = static_cast<Eigen::Index>(r.pick(1, 4)), k = static_cast<Eigen::Index>(r.pick(1, 4)),
                        b = static_cast<Eigen::Index>(r.pick(1, 4));
             const Network inner = r.net(a, k, r.pick(1, 4)), outer = r.net(k, b, r.pick(1, 4));
             const Network c = compose(outer, inner);
             sample(r, row, a, [&](const Vec& x) { return realize(c, x); },
                    [&](const Vec& x) { return realize(outer, realize(inner, x)); });
             size_check(row, c.size() <= 2 * (inner.size() + outer.size()) && c.depth() == inner.depth() + outer.depth());
         }},
        {"combine",
         [&](detail::SuiteRng& r, SuiteRow& row) {
             const auto in = static_cast<Eigen::Index>(r.pick(1, 4)), out = static_cast<Eigen::Index>(r.pick(1, 3));
             const Network proto = r.net(in, out, r.pick(1, 4));
             const std::size_t M = r.pick(1, 5);
             std::vector<Network> nets{proto};
             std::vector<double> co{r.normal()};
             for (std::size_t m = 1; m < M; ++m) nets.push_back(r.like(proto)), co.push_back(r.normal());
             const Network c = combine(co, nets);
             sample(r, row, in, [&](const Vec& x) { return realize(c, x); },
                    [&](const Vec& x) {
                        Vec s = Vec::Zero(out);
                        for (std::size_t m = 0; m < M; ++m) s += co[m] * realize(nets[m], x);
                        return s;
                    });
             size_check(row, c.size() <= M * M * proto.size());
         }},
        {"parallel_shared",
         [&](detail::SuiteRng& r, SuiteRow& row) {
             const auto in = static_cast<Eigen::Index>(r.pick(1, 4)), out = static_cast<Eigen::Index>(r.pick(1, 3));
             const Network a = r.net(in, out, r.pick(1, 4)), b = r.like(a);
             const Network p = parallel_shared(a, b);
             sample(r, row, in, [&](const Vec& x) { return realize(p, x); },
                    [&](const Vec& x) {
                        Vec v(2 * out);
                        v << realize(a, x), realize(b, x);
                        return v;
                    });
             size_check(row, p.size() <= 4 * a.size());
         }},
        {"add_compose",
         [&](detail::SuiteRng& r, SuiteRow& row) {
             const auto d = static_cast<Eigen::Index>(r.pick(1, 4)), du = static_cast<Eigen::Index>(r.pick(0, 2));
             const Network base = r.net(d, d, r.pick(1, 4));
             const std::size_t Lp = r.pick(1, 3), B = r.pick(1, 3);
             std::vector<Network> br{r.net(d + du, d, Lp)};
             for (std::size_t m = 1; m < B; ++m) br.push_back(r.like(br.front()));
             const Vec u = r.vec(du);
             const Network n = add_compose(base, br, u);
             sample(r, row, d, [&](const Vec& x) { return realize(n, x); },
                    [&](const Vec& x) {
                        const Vec y = realize(base, x);
                        Vec z(d + du);
                        z << y, u;
                        Vec s = y;
                        for (const auto& b : br) s += realize(b, z);
                        return s;
                    });
             size_check(row, static_cast<long double>(n.size()) <= add_compose_bound(base, br) &&
                                 n.depth() == base.depth() + Lp - 1);
         }},
        {"max_tree",
         [&](detail::SuiteRng& r, SuiteRow& row) {
             const auto in = static_cast<Eigen::Index>(r.pick(1, 4));
             const std::size_t lg = r.pick(0, 3);
             const Network proto = r.net(in, 1, r.pick(1, 3));
             std::vector<Network> nets{proto};
             while (nets.size() < (std::size_t{1} << lg)) nets.push_back(r.like(proto));
             const Network t = max_tree(nets);
             sample(r, row, in, [&](const Vec& x) { return realize(t, x); },
                    [&](const Vec& x) {
                        double m = -std::numeric_limits<double>::infinity();
                        for (const auto& n : nets) m = std::max(m, realize_scalar(n, x));
                        return Vec::Constant(1, m);
                    });
             // 7 C(tree) <= 8^n (7 C + 34) - 34
             const std::uint64_t lhs = 7 * t.size(), rhs = (std::uint64_t{1} << (3 * lg)) * (7 * proto.size() + 34) - 34;
             size_check(row, lhs <= rhs);
         }},
        {"min_tree",
         [&](detail::SuiteRng& r, SuiteRow& row) {
             const auto in = static_cast<Eigen::Index>(r.pick(1, 4));
             const std::size_t lg = r.pick(0, 3);
             const Network proto = r.net(in, 1, r.pick(1, 3));
             std::vector<Network> nets{proto};
             while (nets.size() < (std::size_t{1} << lg)) nets.push_back(r.like(proto));
             const Network t = min_tree(nets);
             sample(r, row, in, [&](const Vec& x) { return realize(t, x); },
                    [&](const Vec& x) {
                        double m = std::numeric_limits<double>::infinity();
                        for (const auto& n : nets) m = std::min(m, realize_scalar(n, x));
                        return Vec::Constant(1, m);
                    });
             const std::uint64_t lhs = 7 * t.size(), rhs = (std::uint64_t{1} << (3 * lg)) * (7 * proto.size() + 34) - 34;
             size_check(row, lhs <= rhs);
         }},
        {"fold_affine",
         [&](detail::SuiteRng& r, SuiteRow& row) {
             const auto in = static_cast<Eigen::Index>(r.pick(1, 4)), out = static_cast<Eigen::Index>(r.pick(1, 4));
             const auto a = static_cast<Eigen::Index>(r.pick(1, 4)), b = static_cast<Eigen::Index>(r.pick(1, 4));
             const Network n = r.net(in, out, r.pick(1, 4));
             const Mat P = r.mat(in, a), Q = r.mat(b, out);
             const Vec p = r.vec(in), q = r.vec(b);
             const Network f = fold_affine(fold_affine(n, Side::Pre, P, p), Side::Post, Q, q);
             sample(r, row, a, [&](const Vec& x) { return realize(f, x); },
                    [&](const Vec& x) { return Vec(Q * realize(n, P * x + p) + q); });
             size_check(row, f.depth() == n.depth());
         }},
        {"extend",
         [&](detail::SuiteRng& r, SuiteRow& row) {
             const auto in = static_cast<Eigen::Index>(r.pick(1, 4)), out = static_cast<Eigen::Index>(r.pick(1, 4));
             const Network n = r.net(in, out, r.pick(1, 3));
             const std::size_t L = n.depth() + r.pick(1, 3);
             const Network e = extend_depth(n, L);
             sample(r, row, in, [&](const Vec& x) { return realize(e, x); }, [&](const Vec& x) { return realize(n, x); });
             size_check(row, e.depth() == L && e.size() <= 2 * (n.size() + identity_net(out, L - n.depth()).size()));
         }},
        {"widen",
         [&](detail::SuiteRng& r, SuiteRow& row) {
             const auto in = static_cast<Eigen::Index>(r.pick(1, 4)), out = static_cast<Eigen::Index>(r.pick(1, 4));
             const Network n = r.net(in, out, r.pick(2, 4));
             const std::size_t l = r.pick(1, n.depth() - 1);
             const Network w = widen_layer(n, l);
             sample(r, row, in, [&](const Vec& x) { return realize(w, x); }, [&](const Vec& x) { return realize(n, x); });
             const auto dims = n.dims();
             size_check(row, w.size() == n.size() + static_cast<std::uint64_t>(dims[l - 1] + 1 + dims[l + 1]));
         }},
    };
    std::vector<SuiteRow> rows(ops.size());
    parallel_for(ops.size(), [&](std::size_t k) {
        detail::SuiteRng r(cfg.seed * 1000003 + k);
        SuiteRow& row = rows[k];
        row.op = ops[k].first;
        for (std::size_t i = 0; i < cfg.instances; ++i) ops[k].second(r, row);
        row.instances = cfg.instances;
        row.pass = row.max_err <= cfg.tol && row.size_failures == 0;
    });
    return rows;
}

/// Weighted square nets against C d^2 log2(1/eps) + d + 1 over a grid of (d, eps).
inline SuiteRow weighted_square_suite(std::uint64_t seed) {
    detail::SuiteRng r(seed);
    SuiteRow row;
    row.op = "weighted_square";
    for (Eigen::Index d : {1, 2, 4, 8, 16})
        for (double eps : {1e-1, 1e-2, 1e-3, 1e-4}) {
            Vec beta(d);
            for (Eigen::Index i = 0; i < d; ++i) beta[i] = r.uniform(0.1, 2.0);
            const double D = r.uniform(1.0, 8.0);
            const WeightedSquare ws = weighted_square_net(beta, D, eps);
            ++row.instances;
            ++row.size_checks;
            if (static_cast<long double>(ws.net.size()) > weighted_square_bound(d, eps)) ++row.size_failures;
            for (int p = 0; p < 200; ++p) {
                Vec x(d);
                for (Eigen::Index i = 0; i < d; ++i) x[i] = r.uniform(-2 * D, 2 * D);
                const double want = ws.target(x);
                row.max_err = std::max(row.max_err, std::abs(realize_scalar(ws.net, x) - want) / (ws.theta + 1e-300));
                ++row.points;
            }
        }
    // max_err here is the worst error in units of the declared theta.
    row.pass = row.size_failures == 0 && row.max_err <= 1.0;
    return row;
}

struct SquareAccuracy {
    double eps = 0.0;
    double grid_sup_err = 0.0;
    bool outside_exact = true;
    bool zero_exact = true;
    bool pass = true;
};

/// Grid sup error of square_unit_net on [0, 1], identity outside [0, 1] and exact zero at 0.
inline SquareAccuracy square_accuracy(double eps, std::size_t grid = 100001, std::uint64_t seed = 5) {
    SquareAccuracy out;
    out.eps = eps;
    const Network sq = square_unit_net(eps);
    for (std::size_t i = 0; i < grid; ++i) {
        const double x = static_cast<double>(i) / static_cast<double>(grid - 1);
        out.grid_sup_err = std::max(out.grid_sup_err, std::abs(realize_scalar(sq, Vec::Constant(1, x)) - x * x));
    }
    detail::SuiteRng r(seed);
    for (int i = 0; i < 100; ++i) {
        const double x = i % 2 == 0 ? r.uniform(-50.0, 0.0) - 1e-3 : 1.0 + 1e-3 + r.uniform(0.0, 50.0);
        if (realize_scalar(sq, Vec::Constant(1, x)) != x) out.outside_exact = false;
    }
    out.zero_exact = realize_scalar(sq, Vec::Zero(1)) == 0.0;
    out.pass = out.grid_sup_err <= eps && out.outside_exact && out.zero_exact;
    return out;
}

}  // namespace deepstiff

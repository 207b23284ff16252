#pragma once

#include "deepstiff/nn_core.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepstiff {

/// Two networks share an architecture iff their dims agree.
using ArchSignature = std::vector<std::int64_t>;

inline ArchSignature signature(const Network& net) { return net.dims(); }

namespace detail {

struct BlockBuilder {
    Eigen::Index rows, cols;
    std::vector<Triplet> trips;

    BlockBuilder(Eigen::Index r, Eigen::Index c) : rows(r), cols(c) {}

    void add(Eigen::Index r0, Eigen::Index c0, const SpMat& m, double scale = 1.0) {
        for (Eigen::Index r = 0; r < m.outerSize(); ++r)
            for (SpMat::InnerIterator it(m, r); it; ++it)
                trips.emplace_back(r0 + r, c0 + it.index(), scale * it.value());
    }
    void add_identity(Eigen::Index r0, Eigen::Index c0, Eigen::Index n, double v = 1.0) {
        for (Eigen::Index i = 0; i < n; ++i) trips.emplace_back(r0 + i, c0 + i, v);
    }
    SpMat build() const {
        SpMat m(rows, cols);
        m.setFromTriplets(trips.begin(), trips.end());
        m.prune(0.0, 0.0);
        m.makeCompressed();
        return m;
    }
};

inline void require_same_arch(const std::vector<Network>& nets, const char* who) {
    if (nets.empty()) throw std::invalid_argument(std::string(who) + ": empty network list");
    const auto sig = signature(nets.front());
    for (std::size_t i = 1; i < nets.size(); ++i)
        if (signature(nets[i]) != sig)
            throw std::invalid_argument(std::string(who) + ": network " + std::to_string(i) +
                                        " does not share the architecture of network 0");
}

}  // namespace detail

/// Identity on R^d with depth L via x = relu(x) - relu(-x).
inline Network identity_net(Eigen::Index d, std::size_t L) {
    if (d < 1 || L < 1) throw std::invalid_argument("identity_net: need d >= 1 and L >= 1");
    if (L == 1) return Network({Layer(Mat(Mat::Identity(d, d)), Vec::Zero(d))});
    std::vector<Layer> ls;
    detail::BlockBuilder first(2 * d, d);
    first.add_identity(0, 0, d, 1.0);
    first.add_identity(d, 0, d, -1.0);
    ls.emplace_back(first.build(), Vec::Zero(2 * d));
    for (std::size_t l = 2; l < L; ++l) {
        detail::BlockBuilder mid(2 * d, 2 * d);
        mid.add_identity(0, 0, 2 * d);
        ls.emplace_back(mid.build(), Vec::Zero(2 * d));
    }
    detail::BlockBuilder last(d, 2 * d);
    last.add_identity(0, 0, d, 1.0);
    last.add_identity(0, d, d, -1.0);
    ls.emplace_back(last.build(), Vec::Zero(d));
    return Network(std::move(ls));
}

/// outer o inner with depth L1 + L2 and size <= 2(C1 + C2).
inline Network compose(const Network& outer, const Network& inner) {
    if (outer.dim_in() != inner.dim_out())
        throw std::invalid_argument("compose: outer expects input " + std::to_string(outer.dim_in()) +
                                    ", inner outputs " + std::to_string(inner.dim_out()));
    const Eigen::Index k = inner.dim_out();
    std::vector<Layer> ls(inner.layers().begin(), inner.layers().end() - 1);
    const Layer& il = inner.layers().back();
    detail::BlockBuilder w(2 * k, il.cols());
    w.add(0, 0, il.weight);
    w.add(k, 0, il.weight, -1.0);
    Vec b(2 * k);
    b << il.bias, -il.bias;
    ls.emplace_back(w.build(), std::move(b));

    const Layer& ol = outer.layers().front();
    detail::BlockBuilder w2(ol.rows(), 2 * k);
    w2.add(0, 0, ol.weight);
    w2.add(0, k, ol.weight, -1.0);
    ls.emplace_back(w2.build(), ol.bias);
    ls.insert(ls.end(), outer.layers().begin() + 1, outer.layers().end());
    return Network(std::move(ls));
}

inline Network extend_depth(const Network& net, std::size_t L) {
    if (L <= net.depth())
        throw std::invalid_argument("extend_depth: target depth " + std::to_string(L) +
                                    " must exceed current depth " + std::to_string(net.depth()));
    return compose(identity_net(net.dim_out(), L - net.depth()), net);
}

/// Adds one zero unit to hidden layer l (1-based, 1 <= l <= depth-1).
inline Network widen_layer(const Network& net, std::size_t l) {
    if (l < 1 || l + 1 > net.depth())
        throw std::invalid_argument("widen_layer: layer index " + std::to_string(l) + " outside [1, " +
                                    std::to_string(net.depth() - 1) + "]");
    std::vector<Layer> ls = net.layers();
    Layer& a = ls[l - 1];
    detail::BlockBuilder wa(a.rows() + 1, a.cols());
    wa.add(0, 0, a.weight);
    Vec ba = Vec::Zero(a.rows() + 1);
    ba.head(a.rows()) = a.bias;
    a = Layer(wa.build(), std::move(ba));
    Layer& b = ls[l];
    detail::BlockBuilder wb(b.rows(), b.cols() + 1);
    wb.add(0, 0, b.weight);
    b = Layer(wb.build(), b.bias);
    return Network(std::move(ls));
}

/// sum_m coeffs[m] * realize(nets[m]); dims (N0, M N1, ..., M N_{L-1}, N_L).
inline Network combine(const std::vector<double>& coeffs, const std::vector<Network>& nets) {
    if (coeffs.size() != nets.size())
        throw std::invalid_argument("combine: " + std::to_string(coeffs.size()) + " coefficients for " +
                                    std::to_string(nets.size()) + " networks");
    detail::require_same_arch(nets, "combine");
    const std::size_t M = nets.size();
    const std::size_t L = nets.front().depth();
    const Eigen::Index m = static_cast<Eigen::Index>(M);
    if (L == 1) {
        const Layer& f = nets.front().layers()[0];
        detail::BlockBuilder w(f.rows(), f.cols());
        Vec b = Vec::Zero(f.rows());
        for (std::size_t i = 0; i < M; ++i) {
            w.add(0, 0, nets[i].layers()[0].weight, coeffs[i]);
            b += coeffs[i] * nets[i].layers()[0].bias;
        }
        return Network({Layer(w.build(), std::move(b))});
    }
    std::vector<Layer> ls;
    for (std::size_t l = 0; l < L; ++l) {
        const Layer& f = nets.front().layers()[l];
        const Eigen::Index r = f.rows(), c = f.cols();
        if (l == 0) {
            detail::BlockBuilder w(m * r, c);
            Vec b(m * r);
            for (std::size_t i = 0; i < M; ++i) {
                w.add(static_cast<Eigen::Index>(i) * r, 0, nets[i].layers()[l].weight);
                b.segment(static_cast<Eigen::Index>(i) * r, r) = nets[i].layers()[l].bias;
            }
            ls.emplace_back(w.build(), std::move(b));
        } else if (l + 1 < L) {
            detail::BlockBuilder w(m * r, m * c);
            Vec b(m * r);
            for (std::size_t i = 0; i < M; ++i) {
                const Eigen::Index o = static_cast<Eigen::Index>(i);
                w.add(o * r, o * c, nets[i].layers()[l].weight);
                b.segment(o * r, r) = nets[i].layers()[l].bias;
            }
            ls.emplace_back(w.build(), std::move(b));
        } else {
            detail::BlockBuilder w(r, m * c);
            Vec b = Vec::Zero(r);
            for (std::size_t i = 0; i < M; ++i) {
                w.add(0, static_cast<Eigen::Index>(i) * c, nets[i].layers()[l].weight, coeffs[i]);
                b += coeffs[i] * nets[i].layers()[l].bias;
            }
            ls.emplace_back(w.build(), std::move(b));
        }
    }
    return Network(std::move(ls));
}

/// x -> (A(x), B(x)) for two networks of the same architecture.
inline Network parallel_shared(const Network& a, const Network& b) {
    detail::require_same_arch({a, b}, "parallel_shared");
    std::vector<Layer> ls;
    for (std::size_t l = 0; l < a.depth(); ++l) {
        const Layer& la = a.layers()[l];
        const Layer& lb = b.layers()[l];
        const Eigen::Index r = la.rows(), c = la.cols();
        detail::BlockBuilder w(2 * r, l == 0 ? c : 2 * c);
        w.add(0, 0, la.weight);
        w.add(r, l == 0 ? 0 : c, lb.weight);
        Vec bias(2 * r);
        bias << la.bias, lb.bias;
        ls.emplace_back(w.build(), std::move(bias));
    }
    return Network(std::move(ls));
}

/// Size bound of add_compose: C(base) + B^2 (sup C(branch) + C(Id_{d,2}))^3 with B branches.
inline long double add_compose_bound(const Network& base, const std::vector<Network>& branches) {
    const long double d = static_cast<long double>(base.dim_out());
    std::uint64_t sup = 0;
    for (const auto& br : branches) sup = std::max(sup, br.size());
    const long double inner = static_cast<long double>(sup) + 4.0L * d * d + 3.0L * d;
    const long double B = static_cast<long double>(branches.size());
    return static_cast<long double>(base.size()) + B * B * inner * inner * inner;
}

/// x -> base(x) + sum_m branch_m(base(x), u).  Depth L + L' - 1.
inline Network add_compose(const Network& base, const std::vector<Network>& branches, const Vec& u) {
    const Eigen::Index d = base.dim_out();
    if (base.dim_in() != d) throw std::invalid_argument("add_compose: base must map R^d to R^d");
    if (branches.empty()) throw std::invalid_argument("add_compose: no branches");
    const Eigen::Index dp = u.size();
    const std::size_t Lp = branches.front().depth();
    for (std::size_t m = 0; m < branches.size(); ++m) {
        const auto& br = branches[m];
        if (br.depth() != Lp)
            throw std::invalid_argument("add_compose: branch " + std::to_string(m) + " has depth " +
                                        std::to_string(br.depth()) + ", expected " + std::to_string(Lp));
        if (br.dim_in() != d + dp)
            throw std::invalid_argument("add_compose: branch " + std::to_string(m) + " expects input " +
                                        std::to_string(br.dim_in()) + ", got d+d' = " + std::to_string(d + dp));
        if (br.dim_out() != d)
            throw std::invalid_argument("add_compose: branch " + std::to_string(m) + " must output R^d");
    }
    const Layer& top = base.layers().back();
    std::vector<Layer> ls(base.layers().begin(), base.layers().end() - 1);

    // Branch first layers acting on (base(x), u): Wx * top and Wx * b_top + Wu * u + b.
    std::vector<SpMat> wx_top;
    std::vector<Vec> b_first;
    for (const auto& br : branches) {
        const Layer& f = br.layers().front();
        SpMat wx = f.weight.leftCols(d);
        wx_top.push_back(SpMat(wx * top.weight));
        Vec bb = wx * top.bias + f.bias;
        if (dp > 0) {
            SpMat wu = f.weight.rightCols(dp);
            bb += wu * u;
        }
        b_first.push_back(std::move(bb));
    }

    if (Lp == 1) {
        detail::BlockBuilder w(d, top.cols());
        w.add(0, 0, top.weight);
        Vec b = top.bias;
        for (std::size_t m = 0; m < branches.size(); ++m) {
            w.add(0, 0, wx_top[m]);
            b += b_first[m];
        }
        ls.emplace_back(w.build(), std::move(b));
        return Network(std::move(ls));
    }

    Eigen::Index width = 2 * d;
    for (const auto& br : branches) width += br.layers().front().rows();
    {
        detail::BlockBuilder w(width, top.cols());
        Vec b(width);
        w.add(0, 0, top.weight);
        w.add(d, 0, top.weight, -1.0);
        b.head(d) = top.bias;
        b.segment(d, d) = -top.bias;
        Eigen::Index off = 2 * d;
        for (std::size_t m = 0; m < branches.size(); ++m) {
            const Eigen::Index r = wx_top[m].rows();
            w.add(off, 0, wx_top[m]);
            b.segment(off, r) = b_first[m];
            off += r;
        }
        ls.emplace_back(w.build(), std::move(b));
    }
    for (std::size_t i = 1; i + 1 < Lp; ++i) {
        Eigen::Index rows = 2 * d, cols = 2 * d;
        for (const auto& br : branches) {
            rows += br.layers()[i].rows();
            cols += br.layers()[i].cols();
        }
        detail::BlockBuilder w(rows, cols);
        w.add_identity(0, 0, d, 1.0);
        w.add_identity(0, d, d, -1.0);
        w.add_identity(d, 0, d, -1.0);
        w.add_identity(d, d, d, 1.0);
        Vec b = Vec::Zero(rows);
        Eigen::Index ro = 2 * d, co = 2 * d;
        for (const auto& br : branches) {
            const Layer& l = br.layers()[i];
            w.add(ro, co, l.weight);
            b.segment(ro, l.rows()) = l.bias;
            ro += l.rows();
            co += l.cols();
        }
        ls.emplace_back(w.build(), std::move(b));
    }
    {
        Eigen::Index cols = 2 * d;
        for (const auto& br : branches) cols += br.layers().back().cols();
        detail::BlockBuilder w(d, cols);
        w.add_identity(0, 0, d, 1.0);
        w.add_identity(0, d, d, -1.0);
        Vec b = Vec::Zero(d);
        Eigen::Index co = 2 * d;
        for (const auto& br : branches) {
            const Layer& l = br.layers().back();
            w.add(0, co, l.weight);
            b += l.bias;
            co += l.cols();
        }
        ls.emplace_back(w.build(), std::move(b));
    }
    return Network(std::move(ls));
}

/// max(a, b) = (relu(a-b) + relu(b-a) + relu(a+b) - relu(-a-b)) / 2.
inline Network psi_max() {
    Mat w1(4, 2);
    w1 << 1, -1, -1, 1, 1, 1, -1, -1;
    Mat w2(1, 4);
    w2 << 0.5, 0.5, 0.5, -0.5;
    return Network({Layer(w1, Vec::Zero(4)), Layer(w2, Vec::Zero(1))});
}

inline Network negate(const Network& net) {
    const Eigen::Index k = net.dim_out();
    return fold_affine(net, Side::Post, -Mat::Identity(k, k), Vec::Zero(k));
}

inline bool is_power_of_two(std::size_t n) { return n > 0 && (n & (n - 1)) == 0; }

inline long double max_tree_bound(std::uint64_t c, std::size_t n) {
    return std::pow(8.0L, static_cast<long double>(n)) * (static_cast<long double>(c) + 34.0L / 7.0L) -
           34.0L / 7.0L;
}

inline Network max_tree(std::vector<Network> nets) {
    if (!is_power_of_two(nets.size()))
        throw std::invalid_argument("max_tree: list length " + std::to_string(nets.size()) +
                                    " is not a power of two");
    detail::require_same_arch(nets, "max_tree");
    if (nets.front().dim_out() != 1) throw std::invalid_argument("max_tree: networks must have scalar output");
    const Network pm = psi_max();
    while (nets.size() > 1) {
        std::vector<Network> next;
        next.reserve(nets.size() / 2);
        for (std::size_t i = 0; i < nets.size(); i += 2) next.push_back(compose(pm, parallel_shared(nets[i], nets[i + 1])));
        nets = std::move(next);
    }
    return std::move(nets.front());
}

inline Network min_tree(std::vector<Network> nets) {
    for (auto& n : nets) n = negate(n);
    return negate(max_tree(std::move(nets)));
}

/// Pads to the next power of two by repeating the last network.
inline std::vector<Network> pad_pow2(std::vector<Network> nets) {
    if (nets.empty()) throw std::invalid_argument("pad_pow2: empty list");
    std::size_t n = 1;
    while (n < nets.size()) n <<= 1;
    const Network last = nets.back();
    while (nets.size() < n) nets.push_back(last);
    return nets;
}

// ---- squares ------------------------------------------------------------

inline int square_terms(double eps) {
    if (!(eps > 0.0 && eps < 0.5)) throw std::invalid_argument("square_unit_net: eps must lie in (0, 1/2)");
    const int s = static_cast<int>(std::ceil(0.5 * std::log2(1.0 / eps))) - 1;
    return std::max(1, s);
}

/// x - sum_{s<=S} g_s(x)/4^s: x^2 on [0,1] up to 4^{-(S+1)}, x outside [0,1].
/// Hidden units per layer: three tooth units, then accumulator (from layer 2), then relu(x), relu(-x).
inline Network square_unit_net(double eps) {
    const int S = square_terms(eps);
    std::vector<Layer> ls;
    {
        Mat w(5, 1);
        w << 1, 1, 1, 1, -1;
        Vec b(5);
        b << 0, -0.5, -1, 0, 0;
        ls.emplace_back(w, std::move(b));
    }
    // Index of carried channels in the previous hidden layer.
    auto carry_cols = [](int layer) { return layer == 1 ? std::pair<int, int>{3, 4} : std::pair<int, int>{4, 5}; };
    for (int s = 1; s < S; ++s) {
        const int prev_cols = s == 1 ? 5 : 6;
        const double c = std::ldexp(1.0, -2 * s);
        Mat w = Mat::Zero(6, prev_cols);
        Vec b = Vec::Zero(6);
        const double tooth[3] = {2.0, -4.0, 2.0};
        for (int j = 0; j < 3; ++j) {
            w(0, j) = tooth[j];
            w(1, j) = tooth[j];
            w(2, j) = tooth[j];
            w(3, j) = c * tooth[j];
        }
        b(1) = -0.5;
        b(2) = -1.0;
        if (s > 1) w(3, 3) = 1.0;
        auto [p, n] = carry_cols(s);
        w(4, p) = 1.0;
        w(5, n) = 1.0;
        ls.emplace_back(w, std::move(b));
    }
    {
        const int prev_cols = S == 1 ? 5 : 6;
        const double c = std::ldexp(1.0, -2 * S);
        Mat w = Mat::Zero(1, prev_cols);
        w(0, 0) = -2.0 * c;
        w(0, 1) = 4.0 * c;
        w(0, 2) = -2.0 * c;
        if (S > 1) w(0, 3) = -1.0;
        auto [p, n] = carry_cols(S);
        w(0, p) = 1.0;
        w(0, n) = -1.0;
        ls.emplace_back(w, Vec::Zero(1));
    }
    return Network(std::move(ls));
}

/// f_{1,D}(x) = x^2 for |x| <= D, D|x| otherwise.
inline double truncated_square(double x, double D) {
    const double a = std::abs(x);
    return a <= D ? x * x : D * a;
}

struct WeightedSquare {
    std::function<double(const Vec&)> target;
    Network net;
    double theta = 0.0;
};

/// Calibrated constant of the size bound C d^2 log2(1/eps) + d + 1.
inline constexpr std::uint64_t kSquareSizeConstant = 24;

inline long double weighted_square_bound(Eigen::Index d, double eps) {
    return static_cast<long double>(kSquareSizeConstant) * d * d * std::log2(1.0L / eps) + d + 1;
}

/// Network for sum_m beta_m f_{1,D}(x_m) with sup error <= |beta|_inf d D^2 eps.
inline WeightedSquare weighted_square_net(const Vec& beta, double D, double eps) {
    if (!(D > 0.0)) throw std::invalid_argument("weighted_square_net: D must be positive");
    if (beta.size() < 1) throw std::invalid_argument("weighted_square_net: empty weight vector");
    const Eigen::Index d = beta.size();
    const Network sq = square_unit_net(eps);
    Mat to_unit(1, 2);
    to_unit << 1.0 / D, 1.0 / D;
    const Network sq_abs = fold_affine(sq, Side::Pre, to_unit, Vec::Zero(1));
    std::vector<Network> coords;
    std::vector<double> coeffs;
    for (Eigen::Index m = 0; m < d; ++m) {
        Mat pick = Mat::Zero(2, d);
        pick(0, m) = 1.0;
        pick(1, m) = -1.0;
        std::vector<Layer> ls{Layer(pick, Vec::Zero(2))};
        ls.insert(ls.end(), sq_abs.layers().begin(), sq_abs.layers().end());
        coords.emplace_back(std::move(ls));
        coeffs.push_back(D * D * beta[m]);
    }
    WeightedSquare out;
    out.net = combine(coeffs, coords);
    Vec b = beta;
    out.target = [b, D](const Vec& x) {
        double s = 0.0;
        for (Eigen::Index m = 0; m < b.size(); ++m) s += b[m] * truncated_square(x[m], D);
        return s;
    };
    out.theta = beta.cwiseAbs().maxCoeff() * static_cast<double>(d) * D * D * eps;
    return out;
}

}  // namespace deepstiff

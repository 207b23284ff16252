#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepstiff {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Triplet = Eigen::Triplet<double>;

inline SpMat to_sparse(const Mat& m) {
    SpMat s = m.sparseView(0.0, 0.0);
    s.makeCompressed();
    return s;
}

/// Affine layer x -> W x + b.  Storage is sparse; shapes carry the size metric.
struct Layer {
    SpMat weight;
    Vec bias;

    Layer() = default;
    Layer(SpMat w, Vec b) : weight(std::move(w)), bias(std::move(b)) {
        if (weight.rows() != bias.size())
            throw std::invalid_argument("Layer: weight has " + std::to_string(weight.rows()) +
                                        " rows but bias has length " + std::to_string(bias.size()));
        weight.makeCompressed();
    }
    Layer(const Mat& w, Vec b) : Layer(to_sparse(w), std::move(b)) {}

    Eigen::Index rows() const { return weight.rows(); }
    Eigen::Index cols() const { return weight.cols(); }
    Mat dense() const { return Mat(weight); }
};

struct Activation {
    enum class Kind { ReLU, Custom };
    Kind kind = Kind::ReLU;
    std::function<double(double)> fn;

    static Activation relu() { return {}; }
    static Activation custom(std::function<double(double)> f) { return {Kind::Custom, std::move(f)}; }

    double operator()(double v) const { return kind == Kind::ReLU ? (v > 0.0 ? v : 0.0) : fn(v); }
};

struct Metrics {
    std::size_t depth = 0;
    std::vector<std::int64_t> dims;
    std::uint64_t size = 0;
};

class Network {
public:
    Network() = default;
    explicit Network(std::vector<Layer> layers) : layers_(std::move(layers)) {
        if (layers_.empty()) throw std::invalid_argument("Network: needs at least one layer");
        for (std::size_t l = 1; l < layers_.size(); ++l)
            if (layers_[l].cols() != layers_[l - 1].rows())
                throw std::invalid_argument("Network: layer " + std::to_string(l + 1) + " expects input " +
                                            std::to_string(layers_[l].cols()) + " but layer " +
                                            std::to_string(l) + " outputs " +
                                            std::to_string(layers_[l - 1].rows()));
    }

    const std::vector<Layer>& layers() const { return layers_; }
    const Layer& layer(std::size_t l) const { return layers_.at(l); }
    std::size_t depth() const { return layers_.size(); }
    Eigen::Index dim_in() const { return layers_.front().cols(); }
    Eigen::Index dim_out() const { return layers_.back().rows(); }

    std::vector<std::int64_t> dims() const {
        std::vector<std::int64_t> d{static_cast<std::int64_t>(dim_in())};
        for (const auto& l : layers_) d.push_back(l.rows());
        return d;
    }

    /// C(phi) = sum_l N_l (N_{l-1} + 1), zeros included.
    std::uint64_t size() const {
        std::uint64_t s = 0;
        for (const auto& l : layers_)
            s += static_cast<std::uint64_t>(l.rows()) * static_cast<std::uint64_t>(l.cols() + 1);
        return s;
    }

    std::size_t nonzeros() const {
        std::size_t n = 0;
        for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.nonZeros());
        return n;
    }

private:
    std::vector<Layer> layers_;
};

inline Metrics metrics(const Network& net) { return {net.depth(), net.dims(), net.size()}; }

inline std::uint64_t size_of_dims(const std::vector<std::int64_t>& dims) {
    std::uint64_t s = 0;
    for (std::size_t l = 1; l < dims.size(); ++l)
        s += static_cast<std::uint64_t>(dims[l]) * static_cast<std::uint64_t>(dims[l - 1] + 1);
    return s;
}

namespace detail {

// Row-by-row product with a fixed summation order, bias added last.
inline void affine(const Layer& layer, const Vec& x, Vec& y) {
    y.resize(layer.rows());
    const SpMat& w = layer.weight;
    for (Eigen::Index r = 0; r < w.outerSize(); ++r) {
        double s = 0.0;
        for (SpMat::InnerIterator it(w, r); it; ++it) s += it.value() * x[it.index()];
        y[r] = s + layer.bias[r];
    }
}

}  // namespace detail

inline Vec realize(const Network& net, const Vec& x, const Activation& act = Activation::relu()) {
    if (x.size() != net.dim_in())
        throw std::invalid_argument("realize: input has length " + std::to_string(x.size()) +
                                    ", network expects " + std::to_string(net.dim_in()));
    Vec cur = x, next;
    const auto& ls = net.layers();
    for (std::size_t l = 0; l < ls.size(); ++l) {
        detail::affine(ls[l], cur, next);
        if (l + 1 < ls.size()) {
            if (act.kind == Activation::Kind::ReLU)
                next = next.cwiseMax(0.0);
            else
                next = next.unaryExpr(act.fn);
        }
        std::swap(cur, next);
    }
    return cur;
}

inline double realize_scalar(const Network& net, const Vec& x) {
    if (net.dim_out() != 1) throw std::invalid_argument("realize_scalar: network output is not scalar");
    return realize(net, x)[0];
}

enum class Side { Pre, Post };

/// Pre: x -> net(Mx + c).  Post: x -> M net(x) + c.
inline Network fold_affine(const Network& net, Side side, const Mat& M, const Vec& c) {
    if (M.rows() != c.size()) throw std::invalid_argument("fold_affine: M rows != c length");
    std::vector<Layer> ls = net.layers();
    if (side == Side::Pre) {
        Layer& first = ls.front();
        if (M.rows() != first.cols())
            throw std::invalid_argument("fold_affine(pre): M has " + std::to_string(M.rows()) +
                                        " rows, network input is " + std::to_string(first.cols()));
        Vec b = first.weight * c + first.bias;
        SpMat w = (first.weight * M).sparseView(0.0, 0.0);
        first = Layer(std::move(w), std::move(b));
    } else {
        Layer& last = ls.back();
        if (M.cols() != last.rows())
            throw std::invalid_argument("fold_affine(post): M has " + std::to_string(M.cols()) +
                                        " columns, network output is " + std::to_string(last.rows()));
        Vec b = M * last.bias + c;
        SpMat w = (M * last.weight).sparseView(0.0, 0.0);
        last = Layer(std::move(w), std::move(b));
    }
    return Network(std::move(ls));
}

// ---- serialization ------------------------------------------------------

inline constexpr const char* kNetworkFormat = "deepstiff-network v1";

inline std::string hexfloat(double v) {
    std::ostringstream os;
    os << std::hexfloat << v;
    return os.str();
}

inline double parse_hexfloat(const std::string& s) {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::runtime_error("read_network: bad number '" + s + "'");
    return v;
}

/// Text format: header, then per layer "layer rows cols", row-major weights, bias.
inline void write_network(std::ostream& os, const Network& net) {
    os << kNetworkFormat << "\n" << "layers " << net.depth() << "\n";
    for (const auto& l : net.layers()) {
        os << "layer " << l.rows() << " " << l.cols() << "\n";
        Mat w = l.dense();
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) os << (c ? " " : "") << hexfloat(w(r, c));
            os << "\n";
        }
        for (Eigen::Index r = 0; r < l.bias.size(); ++r) os << (r ? " " : "") << hexfloat(l.bias[r]);
        os << "\n";
    }
}

inline Network read_network(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != kNetworkFormat)
        throw std::runtime_error("read_network: missing or unsupported version tag");
    std::string tok;
    std::size_t nl = 0;
    if (!(is >> tok >> nl) || tok != "layers" || nl == 0) throw std::runtime_error("read_network: bad layer count");
    std::vector<Layer> ls;
    for (std::size_t l = 0; l < nl; ++l) {
        Eigen::Index r = 0, c = 0;
        if (!(is >> tok >> r >> c) || tok != "layer" || r <= 0 || c <= 0)
            throw std::runtime_error("read_network: bad header for layer " + std::to_string(l + 1));
        Mat w(r, c);
        Vec b(r);
        for (Eigen::Index i = 0; i < r; ++i)
            for (Eigen::Index j = 0; j < c; ++j) {
                if (!(is >> tok)) throw std::runtime_error("read_network: truncated weights");
                w(i, j) = parse_hexfloat(tok);
            }
        for (Eigen::Index i = 0; i < r; ++i) {
            if (!(is >> tok)) throw std::runtime_error("read_network: truncated bias");
            b[i] = parse_hexfloat(tok);
        }
        ls.emplace_back(w, std::move(b));
    }
    return Network(std::move(ls));
}

}  // namespace deepstiff

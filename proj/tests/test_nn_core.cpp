#include "deepstiff/nn_calculus.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace deepstiff;

namespace {

Network random_net(std::mt19937_64& g, std::vector<Eigen::Index> dims) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<Layer> ls;
    for (std::size_t l = 1; l < dims.size(); ++l) {
        Mat w(dims[l], dims[l - 1]);
        Vec b(dims[l]);
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = n(g);
        for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = n(g);
        ls.emplace_back(w, b);
    }
    return Network(std::move(ls));
}

}  // namespace

TEST(Layer, RejectsBiasMismatch) {
    EXPECT_THROW(Layer(Mat::Zero(2, 3), Vec::Zero(3)), std::invalid_argument);
}

TEST(Network, RejectsBrokenChain) {
    EXPECT_THROW(Network({Layer(Mat::Zero(2, 3), Vec::Zero(2)), Layer(Mat::Zero(1, 3), Vec::Zero(1))}),
                 std::invalid_argument);
    EXPECT_THROW(Network(std::vector<Layer>{}), std::invalid_argument);
}

TEST(Realize, SingleLayerIsAffine) {
    Mat w(2, 2);
    w << 1, 2, -3, 4;
    Vec b(2);
    b << 0.5, -1;
    Network net({Layer(w, b)});
    Vec x(2);
    x << -1, 2;
    EXPECT_EQ(realize(net, x), w * x + b);
}

TEST(Realize, IdentityNet) {
    Vec x(3);
    x << 1, -2, 0;
    EXPECT_EQ(realize(identity_net(3, 2), x), x);
}

TEST(Realize, PsiMax) {
    Vec x(2);
    x << 3, 1;
    EXPECT_EQ(realize(psi_max(), x)[0], 3.0);
}

TEST(Realize, ShapeMismatch) {
    EXPECT_THROW(realize(psi_max(), Vec::Zero(3)), std::invalid_argument);
}

TEST(Realize, CustomActivation) {
    Network net({Layer(Mat::Identity(1, 1), Vec::Zero(1)), Layer(Mat::Identity(1, 1), Vec::Zero(1))});
    Vec x(1);
    x << -2.0;
    EXPECT_EQ(realize(net, x, Activation::custom([](double v) { return v * v; }))[0], 4.0);
    EXPECT_EQ(realize(net, x)[0], 0.0);
}

TEST(Metrics, WorkedSizes) {
    EXPECT_EQ(metrics(identity_net(3, 1)).size, 12u);
    EXPECT_EQ(metrics(identity_net(3, 2)).size, 45u);
    EXPECT_EQ(metrics(psi_max()).size, 17u);
    EXPECT_EQ(metrics(psi_max()).depth, 2u);
    EXPECT_EQ(metrics(psi_max()).dims, (std::vector<std::int64_t>{2, 4, 1}));
}

TEST(Metrics, SizeMatchesShapes) {
    std::mt19937_64 g(3);
    for (int k = 0; k < 20; ++k) {
        std::vector<Eigen::Index> dims;
        std::uniform_int_distribution<int> u(1, 7);
        const int L = u(g);
        for (int l = 0; l <= L; ++l) dims.push_back(u(g));
        const Network net = random_net(g, dims);
        std::uint64_t s = 0;
        for (std::size_t l = 1; l < dims.size(); ++l) s += dims[l] * (dims[l - 1] + 1);
        EXPECT_EQ(net.size(), s);
        EXPECT_EQ(size_of_dims(net.dims()), s);
    }
}

TEST(FoldAffine, PostScaling) {
    Mat two = 2.0 * Mat::Identity(2, 2);
    const Network net = fold_affine(identity_net(2, 2), Side::Post, two, Vec::Zero(2));
    Vec x(2);
    x << 1.5, -4;
    EXPECT_EQ(realize(net, x), 2.0 * x);
    EXPECT_EQ(net.size(), identity_net(2, 2).size());
}

TEST(FoldAffine, PreImplicitFactor) {
    Mat inv(1, 1);
    inv << 1.0 / (1.0 + 0.01 * 100.0);
    const Network net = fold_affine(identity_net(1, 1), Side::Pre, inv, Vec::Zero(1));
    Vec x(1);
    x << 3.0;
    EXPECT_EQ(realize(net, x)[0], 1.5);
}

TEST(FoldAffine, CommutesWithRealization) {
    std::mt19937_64 g(11);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int k = 0; k < 20; ++k) {
        const Network net = random_net(g, {3, 5, 4, 2});
        Mat Mp(3, 4), Mq(3, 2);
        Vec cp(3), cq(3), x(4);
        for (Eigen::Index i = 0; i < Mp.size(); ++i) Mp.data()[i] = n(g);
        for (Eigen::Index i = 0; i < Mq.size(); ++i) Mq.data()[i] = n(g);
        for (Eigen::Index i = 0; i < 3; ++i) cp[i] = n(g), cq[i] = n(g);
        for (Eigen::Index i = 0; i < 4; ++i) x[i] = n(g);
        const Vec pre = realize(fold_affine(net, Side::Pre, Mp, cp), x);
        const Vec ref_pre = realize(net, Mp * x + cp);
        EXPECT_LE((pre - ref_pre).norm(), 1e-12 * (1 + ref_pre.norm()));
        const Vec y = x.head(3);
        const Vec post = realize(fold_affine(net, Side::Post, Mq, cq), y);
        const Vec ref_post = Mq * realize(net, y) + cq;
        EXPECT_LE((post - ref_post).norm(), 1e-12 * (1 + ref_post.norm()));
        EXPECT_THROW(fold_affine(net, Side::Pre, Mat::Zero(2, 2), Vec::Zero(2)), std::invalid_argument);
    }
}

TEST(Serialization, RoundTripIsBitExact) {
    std::mt19937_64 g(5);
    const Network net = random_net(g, {4, 6, 3, 1});
    std::stringstream ss;
    write_network(ss, net);
    const Network back = read_network(ss);
    ASSERT_EQ(back.dims(), net.dims());
    for (std::size_t l = 0; l < net.depth(); ++l) {
        EXPECT_EQ(back.layer(l).dense(), net.layer(l).dense());
        EXPECT_EQ(back.layer(l).bias, net.layer(l).bias);
    }
}

TEST(Serialization, RejectsBadInput) {
    std::stringstream bad("deepstiff-network v0\nlayers 1\n");
    EXPECT_THROW(read_network(bad), std::runtime_error);
    std::stringstream truncated(std::string(kNetworkFormat) + "\nlayers 1\nlayer 1 2\n0x1p+0\n");
    EXPECT_THROW(read_network(truncated), std::runtime_error);
}

TEST(Realize, PiecewiseAffineDirectionalDerivative) {
    std::mt19937_64 g(17);
    std::normal_distribution<double> n(0.0, 1.0);
    const Network net = random_net(g, {3, 8, 8, 1});
    for (int k = 0; k < 50; ++k) {
        Vec x(3), v(3);
        for (int i = 0; i < 3; ++i) x[i] = n(g), v[i] = n(g);
        const double e = 1e-6;
        const double f0 = realize_scalar(net, x);
        const double fp = realize_scalar(net, x + e * v), fm = realize_scalar(net, x - e * v);
        const double fp2 = realize_scalar(net, x + 2 * e * v);
        // Away from kinks the forward differences at two scales agree.
        if (std::abs((fp - f0) - (f0 - fm)) < 1e-9) EXPECT_NEAR((fp2 - f0) / 2, fp - f0, 1e-9);
    }
}

#include <gtest/gtest.h>

#include <cmath>

#include "sia/segnet/segnet.hpp"
#include "support/gradcheck.hpp"

using namespace sia;

TEST(SegNet, PyramidShapes) {
    const SegNet net(SegNetConfig{});
    const auto p = net.init_random(1);
    const auto pyr = net.encode(p, Tensor<float>({2, 3, 64, 64}, 0.5f));
    ASSERT_EQ(pyr.size(), 3u);
    const std::size_t extents[] = {32, 16, 8};
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(pyr[i].dim(2), extents[i]);
        EXPECT_EQ(pyr[i].dim(3), extents[i]);
        EXPECT_EQ(pyr[i].dim(1), net.config().channels[i]);
    }
    EXPECT_EQ(net.forward(p, Tensor<float>({2, 3, 64, 32})).shape(), (Shape{2, 5, 64, 32}));
}

TEST(SegNet, RejectsIndivisibleInput) {
    const SegNet net(SegNetConfig{});
    const auto p = net.init_random(1);
    EXPECT_THROW(net.forward(p, Tensor<float>({1, 3, 60, 64})), ShapeError);
    EXPECT_THROW(net.forward(p, Tensor<float>({1, 1, 64, 64})), ShapeError);
}

TEST(SegNet, InvalidConfig) {
    SegNetConfig c;
    c.channels = {16, 8};
    EXPECT_FALSE(c.violations().empty());
    EXPECT_THROW(SegNet{c}, Error);
}

TEST(SegNet, InitDeterminism) {
    const SegNet net(SegNetConfig{});
    EXPECT_EQ(net.init_random(4), net.init_random(4));
    EXPECT_NE(net.init_random(4), net.init_random(5));
}

TEST(SegNet, HeInitStatistics) {
    const SegNet net(SegNetConfig{});
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto p = net.init_random(seed);
        for (const auto& [name, t] : p) {
            if (name.back() != 'w') continue;
            const double fan_in = static_cast<double>(t.dim(1) * t.dim(2) * t.dim(3));
            const bool relu_follows = name.rfind("enc.", 0) == 0 || name == "dec.fuse.w";
            const double expect = std::sqrt((relu_follows ? 2.0 : 1.0) / fan_in);
            double sq = 0;
            for (float v : t.values()) sq += static_cast<double>(v) * v;
            const double sd = std::sqrt(sq / static_cast<double>(t.numel()));
            EXPECT_NEAR(sd / expect, 1.0, 0.2) << name << " seed " << seed;
        }
    }
}

TEST(SegNet, ZeroInputZeroBiasGivesZeroFeatures) {
    const SegNet net(SegNetConfig{});
    const auto pyr = net.encode(net.init_random(2), Tensor<float>({1, 3, 32, 32}));
    for (const auto& f : pyr)
        for (float v : f.values()) EXPECT_EQ(v, 0.0f);
}

TEST(SegNet, WeightPerturbationChangesOutput) {
    const SegNet net(SegNetConfig{});
    auto p = net.init_random(3);
    Rng rng(3);
    Tensor<float> x({1, 3, 32, 32});
    for (auto& v : x.values()) v = static_cast<float>(rng.uniform());
    const auto before = net.forward(p, x);
    for (auto& v : p.at("enc.s1.conv1.w").values()) v *= 2.0f;
    EXPECT_NE(net.forward(p, x), before);
}

TEST(SegNet, ForwardIsPure) {
    const SegNet net(SegNetConfig{});
    const auto p = net.init_random(6);
    Rng rng(6);
    Tensor<float> x({2, 3, 32, 32});
    for (auto& v : x.values()) v = static_cast<float>(rng.uniform());
    EXPECT_EQ(net.forward(p, x), net.forward(p, x));
}

TEST(SegNet, ConstantInputGivesConstantInterior) {
    // Zero padding perturbs the border, so only the interior is compared.
    const SegNet net(SegNetConfig{});
    auto p = net.init_random(7);
    const auto y = net.forward(p, Tensor<float>({1, 3, 64, 64}, 0.3f));
    for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(y.at(0, k, 30, 30), y.at(0, k, 33, 34), 1e-5);
}

TEST(SegNet, ParamCountGrowsWithCapacity) {
    SegNetConfig a, b, c;
    a.channels = {4, 8};
    b.channels = {8, 16};
    c.channels = {8, 16, 32};
    const auto na = param_count(SegNet(a).init_random(0));
    const auto nb = param_count(SegNet(b).init_random(0));
    const auto nc = param_count(SegNet(c).init_random(0));
    EXPECT_LT(na, nb);
    EXPECT_LT(nb, nc);
}

TEST(SegNet, EndToEndGradientMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) EXPECT_LE(check::check_segnet_once(seed), 1e-3) << seed;
}

TEST(SegNet, PrecisionsAgree) {
    const SegNet net(SegNetConfig{});
    const auto p = net.init_random(8);
    Rng rng(8);
    Tensor<float> x({1, 3, 32, 32});
    for (auto& v : x.values()) v = static_cast<float>(rng.uniform());
    const auto yf = net.forward(p, x);
    const auto yd = net.forward(cast_params<double>(p), x.cast<double>());
    for (std::size_t i = 0; i < yf.numel(); ++i) ASSERT_NEAR(yf[i], yd[i], 1e-4);
}

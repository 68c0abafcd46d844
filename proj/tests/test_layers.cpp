#include <gtest/gtest.h>

#include <cmath>

#include "sia/numerics/layers.hpp"
#include "support/gradcheck.hpp"

using namespace sia;
using sia::check::random_tensor;

namespace {

// Direct six-loop cross-correlation.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, std::size_t stride,
                          std::size_t pad) {
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), O = w.dim(0), K = w.dim(2);
    const std::size_t OH = (H + 2 * pad - K) / stride + 1, OW = (W + 2 * pad - K) / stride + 1;
    Tensor<double> y({N, O, OH, OW});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t oy = 0; oy < OH; ++oy)
                for (std::size_t ox = 0; ox < OW; ++ox) {
                    double s = b[o];
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t ky = 0; ky < K; ++ky)
                            for (std::size_t kx = 0; kx < K; ++kx) {
                                const auto iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                                const auto ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
                                s += x.at(n, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) *
                                     w.at(o, c, ky, kx);
                            }
                    y.at(n, o, oy, ox) = s;
                }
    return y;
}

}  // namespace

TEST(Conv2d, SumOfNineOnes) {
    const Tensor<float> x({1, 1, 3, 3}, 1.0f), w({1, 1, 3, 3}, 1.0f), b({1});
    const auto y = conv2d(x, w, b, 1, 0);
    ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
    EXPECT_FLOAT_EQ(y[0], 9.0f);
}

TEST(Conv2d, IdentityKernel) {
    Rng rng(3);
    const auto x = random_tensor({2, 1, 5, 4}, rng);
    const auto y = conv2d(x, Tensor<double>({1, 1, 1, 1}, 1.0), Tensor<double>({1}), 1, 0);
    EXPECT_EQ(y, x);
}

TEST(Conv2d, MatchesNaiveOracle) {
    Rng rng(11);
    const auto x = random_tensor({1, 2, 5, 5}, rng), w = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
    const auto y = conv2d(x, w, b, 2, 1), ref = naive_conv(x, w, b, 2, 1);
    ASSERT_EQ(y.shape(), (Shape{1, 3, 3, 3}));
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_LE(check::rel_error(y[i], ref[i], 1e-12), 1e-6);
}

TEST(Conv2d, MatchesNaiveOracleAcrossShapes) {
    Rng rng(12);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t K = 1 + 2 * rng.below(3), stride = 1 + rng.below(3), pad = rng.below(K / 2 + 2);
        const std::size_t H = K + rng.below(6), W = K + rng.below(6);
        const auto x = random_tensor({1 + rng.below(2), 1 + rng.below(3), H, W}, rng);
        const auto w = random_tensor({1 + rng.below(4), x.dim(1), K, K}, rng);
        const auto b = random_tensor({w.dim(0)}, rng);
        const auto y = conv2d(x, w, b, stride, pad), ref = naive_conv(x, w, b, stride, pad);
        ASSERT_EQ(y.shape(), ref.shape());
        for (std::size_t i = 0; i < y.numel(); ++i) ASSERT_NEAR(y[i], ref[i], 1e-12 * (1 + std::abs(ref[i])));
    }
}

TEST(Conv2d, ShapeErrorsNameBothShapes) {
    const Tensor<float> x({1, 2, 4, 4}), w({1, 3, 3, 3}), b({1});
    try {
        conv2d(x, w, b, 1, 1);
        FAIL();
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[1x2x4x4]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[1x3x3x3]"), std::string::npos) << msg;
    }
    EXPECT_THROW(conv2d(Tensor<float>({1, 1, 2, 2}), Tensor<float>({1, 1, 3, 3}), b, 1, 0), ShapeError);
    EXPECT_THROW(conv2d(Tensor<float>({1, 1, 4, 4}), Tensor<float>({1, 1, 3, 2}), b, 1, 0), ShapeError);
}

TEST(Conv2dBackward, ZeroGradOut) {
    Rng rng(5);
    const auto x = random_tensor({1, 2, 4, 4}, rng), w = random_tensor({2, 2, 3, 3}, rng);
    const auto g = conv2d_backward(Tensor<double>({1, 2, 4, 4}), x, w, 1, 1);
    for (const auto* t : {&g.input, &g.weight, &g.bias})
        for (double v : t->values()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2dBackward, ScalarCase) {
    const Tensor<double> x({1, 1, 1, 1}, 1.5), w({1, 1, 1, 1}, -2.0), go({1, 1, 1, 1}, 0.75);
    const auto g = conv2d_backward(go, x, w, 1, 0);
    EXPECT_DOUBLE_EQ(g.weight[0], 0.75 * 1.5);
    EXPECT_DOUBLE_EQ(g.input[0], 0.75 * -2.0);
    EXPECT_DOUBLE_EQ(g.bias[0], 0.75);
}

TEST(Relu, Values) {
    const Tensor<float> x({2}, std::vector<float>{-1.0f, 2.0f});
    const auto y = relu(x);
    EXPECT_EQ(y[0], 0.0f);
    EXPECT_EQ(y[1], 2.0f);
}

TEST(Softmax, EqualLogitsGiveUniform) {
    const auto p = softmax_channels(Tensor<double>({1, 5, 2, 2}, 3.0));
    for (double v : p.values()) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(Softmax, SumsToOne) {
    Rng rng(8);
    const auto p = softmax_channels(random_tensor({3, 5, 4, 4}, rng, 10.0).cast<float>());
    const std::size_t P = 16;
    for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t q = 0; q < P; ++q) {
            float s = 0;
            for (std::size_t k = 0; k < 5; ++k) {
                const float v = p.at(n, k, q / 4, q % 4);
                ASSERT_GE(v, 0.0f);
                ASSERT_LE(v, 1.0f);
                s += v;
            }
            ASSERT_NEAR(s, 1.0f, 1e-5f);
        }
}

TEST(Upsample, FactorOneIsIdentity) {
    Rng rng(1);
    const auto x = random_tensor({1, 2, 3, 3}, rng);
    EXPECT_EQ(bilinear_upsample(x, 1), x);
    EXPECT_THROW(bilinear_upsample(Tensor<double>({1, 1, 0, 0}), 2), ShapeError);
}

TEST(Upsample, CheckerboardTable) {
    // Half-pixel sampling: output d reads max(0, (d + 0.5)/2 - 0.5), giving
    // interpolation positions 0, .25, .75, 1 on each axis; v(a, b) = a + b - 2ab.
    const Tensor<double> x({1, 1, 2, 2}, std::vector<double>{0, 1, 1, 0});
    const double expect[4][4] = {{0, .25, .75, 1}, {.25, .375, .625, .75}, {.75, .625, .375, .25}, {1, .75, .25, 0}};
    const auto y = bilinear_upsample(x, 2);
    ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(y.at(0, 0, r, c), expect[r][c]) << r << "," << c;
}

TEST(CrossEntropy, ClosedForms) {
    const Tensor<double> x({1, 2, 1, 1});
    const LabelMap l({1, 1, 1}, 0);
    EXPECT_NEAR(cross_entropy_ignore(x, l).loss, std::log(2.0), 1e-12);

    Tensor<double> peaked({1, 3, 2, 2});
    LabelMap lab({1, 2, 2});
    for (std::size_t p = 0; p < 4; ++p) {
        lab[p] = static_cast<std::uint8_t>(p % 3);
        peaked.at(0, p % 3, p / 2, p % 2) = 20.0;
    }
    EXPECT_LT(cross_entropy_ignore(peaked, lab).loss, 0.01);
}

TEST(CrossEntropy, AllIgnored) {
    Rng rng(2);
    const auto x = random_tensor({2, 5, 3, 3}, rng);
    const auto r = cross_entropy_ignore(x, LabelMap({2, 3, 3}, kIgnoreLabel));
    EXPECT_EQ(r.loss, 0.0);
    EXPECT_EQ(r.counted, 0u);
    for (double v : r.grad.values()) EXPECT_EQ(v, 0.0);
}

TEST(CrossEntropy, RejectsOutOfRangeLabel) {
    EXPECT_THROW(cross_entropy_ignore(Tensor<double>({1, 5, 1, 1}), LabelMap({1, 1, 1}, 5)), Error);
}

TEST(CrossEntropy, NormalizerSplitsBatches) {
    Rng rng(4);
    const auto x = random_tensor({2, 3, 2, 2}, rng);
    LabelMap lab({2, 2, 2}, 1);
    lab[3] = kIgnoreLabel;
    const auto whole = cross_entropy_ignore(x, lab);
    double sum = 0;
    for (std::size_t n = 0; n < 2; ++n) {
        Tensor<double> xn({1, 3, 2, 2});
        LabelMap ln({1, 2, 2});
        for (std::size_t i = 0; i < 12; ++i) xn[i] = x[n * 12 + i];
        for (std::size_t i = 0; i < 4; ++i) ln[i] = lab[n * 4 + i];
        sum += cross_entropy_ignore(xn, ln, whole.counted).loss;
    }
    EXPECT_NEAR(sum, whole.loss, 1e-12);
}

TEST(ConcatSplit, RoundTrip) {
    Rng rng(6);
    const auto a = random_tensor({2, 2, 3, 3}, rng), b = random_tensor({2, 3, 3, 3}, rng);
    const auto parts = split_channels(concat_channels<double>({a, b}), {2, 3});
    EXPECT_EQ(parts[0], a);
    EXPECT_EQ(parts[1], b);
}

TEST(GradCheck, EveryLayerOverRandomCases) {
    for (std::uint64_t seed = 0; seed < 25; ++seed)
        for (const auto& c : check::check_layers_once(seed)) EXPECT_LE(c.error, 1e-4) << c.layer << " seed " << seed;
}

TEST(Determinism, SameInputsSameBits) {
    Rng a(77), b(77);
    const auto x1 = random_tensor({1, 3, 8, 8}, a), x2 = random_tensor({1, 3, 8, 8}, b);
    const auto w = random_tensor({4, 3, 3, 3}, a);
    const Tensor<double> bias({4});
    EXPECT_EQ(conv2d(x1, w, bias, 2, 1), conv2d(x2, w, bias, 2, 1));
}

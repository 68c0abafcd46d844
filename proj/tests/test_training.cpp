#include <gtest/gtest.h>

#include <cmath>

#include "sia/synthdata/dataset.hpp"
#include "sia/training/pretrain.hpp"
#include "sia/training/uda.hpp"

using namespace sia;

namespace {

SegNetConfig tiny_net() {
    SegNetConfig c;
    c.channels = {4, 8};
    c.decoder_width = 8;
    return c;
}

DomainSpec small_domain() {
    DomainSpec s;
    s.height = s.width = 32;
    return s;
}

}  // namespace

TEST(LrSchedule, Examples) {
    UdaConfig c;
    c.iterations = 1000;
    c.lr = 6e-5;
    c.warmup = 100;
    EXPECT_NEAR(lr_at(49, c), 3e-5, 1e-18);
    EXPECT_DOUBLE_EQ(lr_at(100, c), 6e-5);
    c.warmup = 0;
    for (std::size_t t : {0u, 1u, 500u, 1000u}) EXPECT_DOUBLE_EQ(lr_at(t, c), 6e-5);
    EXPECT_THROW(lr_at(1001, c), Error);
}

TEST(LrSchedule, MonotoneWarmupThenConstant) {
    UdaConfig c;
    c.iterations = 300;
    c.warmup = 120;
    for (std::size_t t = 1; t <= c.warmup; ++t) EXPECT_GE(lr_at(t, c), lr_at(t - 1, c));
    for (std::size_t t = c.warmup; t <= c.iterations; ++t) EXPECT_EQ(lr_at(t, c), c.lr);
}

TEST(Rcs, Examples) {
    for (double v : rcs_probability({0.2, 0.2, 0.2, 0.2, 0.2}, 0.5)) EXPECT_NEAR(v, 0.2, 1e-15);
    for (double v : rcs_probability({0.7, 0.1, 0.1, 0.05, 0.05}, 1e6)) EXPECT_NEAR(v, 0.2, 1e-4);
    const std::vector<double> f{0.7, 0.1, 0.1, 0.05, 0.05};
    const auto p = rcs_probability(f, 0.1);
    double z = 0;
    for (double v : f) z += std::exp((1 - v) / 0.1);
    double sum = 0;
    for (std::size_t c = 0; c < 5; ++c) {
        EXPECT_NEAR(p[c], std::exp((1 - f[c]) / 0.1) / z, 1e-12);
        sum += p[c];
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
    EXPECT_THROW(rcs_probability(f, 0.0), Error);
}

TEST(Rcs, StrictlyDecreasingInFrequency) {
    const std::vector<double> f{0.5, 0.25, 0.15, 0.07, 0.03};
    for (double T : {0.01, 0.1, 1.0}) {
        const auto p = rcs_probability(f, T);
        for (std::size_t c = 1; c < 5; ++c) EXPECT_GT(p[c], p[c - 1]) << T;
    }
}

TEST(SourceSampler, UniformWithoutRcs) {
    // Pearson chi-square, 9 degrees of freedom; 27.877 is the p = 0.001 quantile.
    const auto d = gen_dataset(small_domain(), 10, 1);
    const SourceSampler s(d.samples, false, 0.01);
    Rng rng(5);
    std::vector<double> hits(10, 0.0);
    for (int i = 0; i < 10000; ++i) hits[s.draw(rng)] += 1;
    double chi2 = 0;
    for (double h : hits) chi2 += (h - 1000.0) * (h - 1000.0) / 1000.0;
    EXPECT_LT(chi2, 27.877);
}

TEST(SourceSampler, RcsFavorsRareClassImages) {
    auto d = gen_dataset(small_domain(), 40, 2);
    const SourceSampler s(d.samples, true, 0.01);
    Rng rng(6);
    std::size_t metal_uniform = 0, metal_rcs = 0;
    for (const auto& x : d.samples) {
        bool m = false;
        for (auto l : x.labels.values()) m = m || l == kMetal;
        metal_uniform += m;
    }
    for (int i = 0; i < 2000; ++i) {
        const auto& x = d.samples[s.draw(rng)];
        bool m = false;
        for (auto l : x.labels.values()) m = m || l == kMetal;
        metal_rcs += m;
    }
    EXPECT_GT(static_cast<double>(metal_rcs) / 2000.0, static_cast<double>(metal_uniform) / 40.0);
}

TEST(Ema, Examples) {
    ParamSet<double> t, s;
    t.emplace("w", Tensor<double>({2}, 0.0));
    s.emplace("w", Tensor<double>({2}, 1.0));
    auto t0 = t;
    ema_update(t0, s, 0.0);
    EXPECT_EQ(t0, s);
    ema_update(t, s, 0.999);
    EXPECT_NEAR(t.at("w")[0], 0.001, 1e-15);
    UdaConfig c;
    c.ema_alpha = 1.0;
    EXPECT_FALSE(c.violations().empty());
    ParamSet<double> bad;
    bad.emplace("w", Tensor<double>({3}));
    EXPECT_THROW(ema_update(t, bad, 0.5), ShapeError);
}

TEST(Ema, ExactContraction) {
    Rng rng(9);
    ParamSet<double> t, s;
    Tensor<double> a({50}), b({50});
    for (auto& v : a.values()) v = rng.normal();
    for (auto& v : b.values()) v = rng.normal();
    t.emplace("w", a);
    s.emplace("w", b);
    auto dist = [&] {
        double d = 0;
        for (std::size_t i = 0; i < 50; ++i) d += (t.at("w")[i] - s.at("w")[i]) * (t.at("w")[i] - s.at("w")[i]);
        return std::sqrt(d);
    };
    const double alpha = 0.9;
    double prev = dist();
    for (int k = 0; k < 30; ++k) {
        ema_update(t, s, alpha);
        const double now = dist();
        EXPECT_NEAR(now, alpha * prev, 1e-12 * prev);
        prev = now;
    }
}

TEST(DownsampleLabels, MajorityVote) {
    Tensor<std::uint8_t> l({2, 4}, std::vector<std::uint8_t>{1, 1, 2, 255, 1, 3, 255, 255});
    const auto d = downsample_labels(l, 2);
    ASSERT_EQ(d.shape(), (Shape{1, 2}));
    EXPECT_EQ(d[0], 1);
    EXPECT_EQ(d[1], 2);
    EXPECT_EQ(downsample_labels(Tensor<std::uint8_t>({2, 2}, kIgnoreLabel), 2)[0], kIgnoreLabel);
    EXPECT_EQ(downsample_labels(Tensor<std::uint8_t>({1, 2}, std::vector<std::uint8_t>{4, 2}), 1)[1], 2);
    EXPECT_THROW(downsample_labels(l, 3), ShapeError);
}

TEST(FeatureDistance, Examples) {
    Rng rng(3);
    Tensor<double> a({1, 2, 3, 3});
    for (auto& v : a.values()) v = rng.normal();
    LabelMap lab({1, 3, 3}, 1);
    const auto same = feature_distance_loss(a, a, lab, {1, 2});
    EXPECT_EQ(same.loss, 0.0);

    Tensor<double> b = a;
    b[0] += 1.0;
    const auto empty = feature_distance_loss(a, b, lab, {});
    EXPECT_EQ(empty.loss, 0.0);
    for (double v : empty.grad.values()) EXPECT_EQ(v, 0.0);

    const Tensor<double> s({1, 1, 1, 1}, 0.75), f({1, 1, 1, 1}, -0.5);
    const auto one = feature_distance_loss(s, f, LabelMap({1, 1, 1}, 3), {3});
    EXPECT_NEAR(one.loss, 1.25 * 1.25, 1e-15);
    EXPECT_NEAR(one.grad[0], 2 * 1.25, 1e-15);

    EXPECT_THROW(feature_distance_loss(a, Tensor<double>({1, 2, 3, 2}), lab, {1}), ShapeError);
}

TEST(FeatureDistance, GradientMatchesFiniteDifferences) {
    Rng rng(4);
    Tensor<double> s({2, 3, 2, 2}), f({2, 3, 2, 2});
    for (auto& v : s.values()) v = rng.normal();
    for (auto& v : f.values()) v = rng.normal();
    LabelMap lab({2, 2, 2});
    for (auto& l : lab.values()) l = static_cast<std::uint8_t>(rng.below(5));
    const std::vector<std::size_t> classes{1, 2, 3, 4};
    const auto r = feature_distance_loss(s, f, lab, classes);
    for (std::size_t i = 0; i < s.numel(); ++i) {
        const double keep = s[i];
        s[i] = keep + 1e-5;
        const double up = feature_distance_loss(s, f, lab, classes).loss;
        s[i] = keep - 1e-5;
        const double down = feature_distance_loss(s, f, lab, classes).loss;
        s[i] = keep;
        EXPECT_NEAR(r.grad[i], (up - down) / 2e-5, 1e-6);
    }
}

TEST(ClassMix, PastesChosenClasses) {
    Tensor<float> src({2, 2, 3}, 1.0f), img({2, 2, 3}, 0.0f);
    const Tensor<std::uint8_t> src_lab({2, 2}, std::vector<std::uint8_t>{0, 3, 3, 0});
    Tensor<std::uint8_t> lab({2, 2}, kIgnoreLabel);
    Rng rng(1);
    class_mix(src, src_lab, img, lab, rng);
    // A single foreground class is always chosen.
    EXPECT_EQ(lab[0], kIgnoreLabel);
    EXPECT_EQ(lab[1], 3);
    EXPECT_EQ(lab[2], 3);
    EXPECT_EQ(img[0], 0.0f);
    EXPECT_EQ(img[3], 1.0f);
}

TEST(Pretrain, ZeroIterationsIsRandomInit) {
    const SegNet net(tiny_net());
    PriorSpec p = PriorSpec::small();
    p.iterations = 0;
    const auto ck = pretrain_encoder(net, p, 17);
    EXPECT_EQ(ck.params, SegNet::encoder_params(net.init_random(17)));
}

TEST(Pretrain, BeatsChance) {
    const SegNet net(tiny_net());
    PriorSpec p = PriorSpec::small();
    p.iterations = 300;
    const auto ck = pretrain_encoder(net, p, 3);
    EXPECT_GT(std::stod(ck.meta("metric.prior_accuracy")), 1.0 / static_cast<double>(p.classes) + 0.1);
}

TEST(Pretrain, RescaleOnlyScalesFeatures) {
    const SegNet net(tiny_net());
    auto p = SegNet::encoder_params(net.init_random(5));
    Rng rng(6);
    for (auto& [name, t] : p) {
        const double f = rng.uniform(0.3, 3.0);
        for (auto& v : t.values()) v = static_cast<float>(v * f + (name.ends_with(".b") ? rng.normal(0.0, 0.1) : 0.0));
    }
    auto q = p;
    rescale_encoder_to_init_norms(net, q);
    for (const auto& [name, t] : q) {
        if (!name.ends_with(".w")) continue;
        double sq = 0;
        for (float v : t.values()) sq += static_cast<double>(v) * v;
        EXPECT_NEAR(std::sqrt(sq), std::sqrt(2.0 * static_cast<double>(t.dim(0))), 1e-3) << name;
    }
    const auto image = gen_scene(DomainSpec{}, 8).image;
    const auto a = net.encode(p, to_batch(image)), b = net.encode(q, to_batch(image));
    for (std::size_t s = 0; s < a.size(); ++s) {
        double ratio = 0;
        for (std::size_t i = 0; i < a[s].numel(); ++i)
            if (a[s][i] > 1e-3f) {
                ratio = b[s][i] / a[s][i];
                break;
            }
        ASSERT_GT(ratio, 0.0);
        for (std::size_t i = 0; i < a[s].numel(); ++i)
            ASSERT_NEAR(b[s][i], ratio * a[s][i], 1e-4 * (1.0 + std::abs(b[s][i]))) << s << ":" << i;
    }
}

TEST(Uda, ZeroIterationsReturnsInitializedModel) {
    const SegNet net(tiny_net());
    const auto src = gen_dataset(small_domain(), 4, 1), tgt = gen_dataset(small_domain(), 4, 2);
    Checkpoint enc;
    enc.params = SegNet::encoder_params(net.init_random(9));
    UdaConfig c;
    c.iterations = 0;
    c.warmup = 0;
    c.seed = 5;
    const auto g = run_uda(net, src.samples, tgt.samples, enc, c);
    EXPECT_EQ(g.params, init_with_encoder(net, enc, derive_seed(5, 0)));
}

TEST(Uda, BitReproducibleAndThreadIndependent) {
    const SegNet net(tiny_net());
    const auto src = gen_dataset(small_domain(), 8, 1), tgt = gen_dataset([] {
        auto t = default_target_spec();
        t.height = t.width = 32;
        return t;
    }(), 8, 2);
    Checkpoint enc;
    enc.params = SegNet::encoder_params(net.init_random(9));
    UdaConfig c;
    c.iterations = 12;
    c.warmup = 4;
    c.tau_online = 0.5;
    c.seed = 3;
    const auto a = run_uda(net, src.samples, tgt.samples, enc, c, 1);
    const auto b = run_uda(net, src.samples, tgt.samples, enc, c, 1);
    const auto p = run_uda(net, src.samples, tgt.samples, enc, c, 3);
    EXPECT_EQ(a.params, b.params);
    EXPECT_EQ(a.params, p.params);
    EXPECT_EQ(a.metadata, b.metadata);
    c.seed = 4;
    EXPECT_NE(run_uda(net, src.samples, tgt.samples, enc, c, 1).params, a.params);
}

TEST(Uda, RejectsInvalidInputs) {
    const SegNet net(tiny_net());
    const auto src = gen_dataset(small_domain(), 2, 1);
    Checkpoint enc;
    enc.params = SegNet::encoder_params(net.init_random(1));
    UdaConfig c;
    c.tau_online = 0.0;
    EXPECT_THROW(run_uda(net, src.samples, src.samples, enc, c), Error);
    c = UdaConfig{};
    EXPECT_THROW(run_uda(net, {}, src.samples, enc, c), Error);
    Checkpoint wrong;
    wrong.params = SegNet::encoder_params(SegNet(SegNetConfig{}).init_random(1));
    EXPECT_THROW(run_uda(net, src.samples, src.samples, wrong, c), ShapeError);
}

TEST(Uda, NoShiftSanityRun) {
    const SegNet net(tiny_net());
    const auto spec = small_domain();
    const auto src = gen_dataset(spec, 60, 1), tgt = gen_dataset(spec, 60, 2);
    const auto src_test = gen_dataset(spec, 150, 3), tgt_test = gen_dataset(spec, 150, 4);
    Checkpoint enc;
    enc.params = SegNet::encoder_params(net.init_random(2));
    UdaConfig c;
    c.iterations = 300;
    c.warmup = 30;
    c.fd_weight = 0.0;
    c.tau_online = 1.0;
    c.seed = 2;
    const auto g = run_uda(net, src.samples, tgt.samples, enc, c);
    const double on_src = evaluate(net, g.params, src_test.samples).miou;
    const double on_tgt = evaluate(net, g.params, tgt_test.samples).miou;
    EXPECT_NEAR(on_src, on_tgt, 2.0);
}

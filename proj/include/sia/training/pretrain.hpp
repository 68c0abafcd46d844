#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "sia/numerics/layers.hpp"
#include "sia/numerics/optimizer.hpp"
#include "sia/segnet/segnet.hpp"
#include "sia/soup/checkpoint.hpp"
#include "sia/synthdata/scene.hpp"
#include "sia/training/model_ops.hpp"

namespace sia {

/// Synthetic patch-classification prior task. Each prior class is a
/// prototype (color, texture, shape); samples render one prototype object
/// over a random background under random hue/illumination/noise jitter.
/// The large prior (many classes, more data) stands in for a larger
/// pretraining corpus.
struct PriorSpec {
    std::size_t classes = 100;
    std::size_t dataset_size = 4000;
    std::size_t iterations = 8000;
    std::size_t batch_size = 16;
    std::size_t patch_size = 32;
    double lr = 2e-3;
    double hue_jitter = 40;  // degrees, uniform in [-hue_jitter, hue_jitter]

    static PriorSpec small() {
        PriorSpec p;
        p.classes = 10;
        p.dataset_size = 2000;
        p.iterations = 3000;
        return p;
    }
    static PriorSpec large() { return PriorSpec{}; }

    std::vector<std::string> violations() const {
        std::vector<std::string> out;
        if (classes < 2) out.push_back("prior class count must be >= 2");
        if (dataset_size < classes) out.push_back("prior dataset size must be >= class count");
        if (batch_size == 0) out.push_back("prior batch size must be >= 1");
        if (patch_size < 16) out.push_back("prior patch size must be >= 16");
        if (!(hue_jitter >= 0 && hue_jitter <= 180)) out.push_back("prior hue jitter must be in [0,180]");
        return out;
    }

    bool operator==(const PriorSpec&) const = default;
};

struct PriorSample {
    Tensor<float> image;  // patch x patch x 3
    std::size_t label = 0;
};

namespace prior_detail {

struct Prototype {
    Rgb color;
    double freq, amp, dir;
    int shape;
};

inline Prototype prototype(std::size_t cls) {
    Rng rng(derive_seed(0x5052494F52ULL, cls));  // fixed world: class k is the same object in every prior
    Prototype p{};
    for (auto& c : p.color) c = rng.uniform(0.1, 0.9);
    p.freq = rng.uniform(1.0, 16.0);
    p.amp = rng.uniform(0.0, 0.25);
    p.dir = rng.uniform(0.0, 3.141592653589793);
    p.shape = static_cast<int>(rng.below(3));
    return p;
}

}  // namespace prior_detail

inline PriorSample gen_prior_sample(const PriorSpec& prior, std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t patch = prior.patch_size;
    const std::size_t cls = static_cast<std::size_t>(rng.below(prior.classes));
    const auto proto = prior_detail::prototype(cls);
    const double S = static_cast<double>(patch);
    Rgb bg{};
    for (auto& c : bg) c = rng.uniform(0.2, 0.5);
    const double cx = rng.uniform(0.3 * S, 0.7 * S), cy = rng.uniform(0.3 * S, 0.7 * S);
    const double a = rng.uniform(0.25 * S, 0.45 * S), b = a * rng.uniform(0.6, 1.0);
    const double th = rng.uniform(0.0, 3.141592653589793), ct = std::cos(th), st = std::sin(th);
    const double phase = rng.uniform(0.0, 6.283185307179586);
    const auto hue = hue_rotation_matrix(rng.uniform(-prior.hue_jitter, prior.hue_jitter));
    const double illum = rng.uniform(-0.15, 0.15);
    const double sigma = rng.uniform(0.0, 0.08);
    PriorSample s{Tensor<float>({patch, patch, 3}), cls};
    for (std::size_t y = 0; y < patch; ++y)
        for (std::size_t x = 0; x < patch; ++x) {
            const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
            const double u = dx * ct + dy * st, w = -dx * st + dy * ct;
            bool inside = false;
            if (proto.shape == 0) inside = std::abs(u) <= a && std::abs(w) <= b;
            else if (proto.shape == 1) inside = (u / a) * (u / a) + (w / b) * (w / b) <= 1.0;
            else {
                const double phi = std::atan2(w, u);
                const double r = a * (1.0 + 0.25 * std::sin(3.0 * phi + phase));
                inside = dx * dx + dy * dy <= r * r;
            }
            double rgb[3];
            const double m = 1.0 + proto.amp * std::sin(6.283185307179586 * proto.freq *
                                                             (static_cast<double>(x) * std::cos(proto.dir) +
                                                              static_cast<double>(y) * std::sin(proto.dir)) / 64.0 +
                                                         phase);
            for (int k = 0; k < 3; ++k) rgb[k] = inside ? proto.color[static_cast<std::size_t>(k)] * m : bg[static_cast<std::size_t>(k)];
            rotate_hue(hue, rgb[0], rgb[1], rgb[2]);
            for (std::size_t k = 0; k < 3; ++k)
                s.image[(y * patch + x) * 3 + k] =
                    static_cast<float>(std::clamp(rgb[k] + illum + rng.normal(0.0, sigma), 0.0, 1.0));
        }
    return s;
}

/// Training and held-out prior splits; sample i of a split uses seed
/// derive_seed(seed, i) (held-out indices continue after the training ones).
inline std::vector<PriorSample> gen_prior_split(const PriorSpec& prior, std::uint64_t seed, std::size_t first,
                                                std::size_t count, unsigned threads = 1) {
    std::vector<PriorSample> out(count);
    parallel_for(count, threads, [&](std::size_t i) {
        out[i] = gen_prior_sample(prior, derive_seed(seed, first + i));
    });
    return out;
}

/// Classification head on globally pooled deepest-stage features.
inline ParamSet<float> init_prior_head(std::size_t in_channels, std::size_t classes, std::uint64_t seed) {
    Rng rng(seed);
    ParamSet<float> h;
    Tensor<float> w({classes, in_channels, 1, 1});
    const double sd = std::sqrt(1.0 / static_cast<double>(in_channels));
    for (auto& v : w.values()) v = static_cast<float>(rng.normal(0.0, sd));
    h.emplace("head.w", std::move(w));
    h.emplace("head.b", Tensor<float>({classes}));
    return h;
}

inline double prior_accuracy(const SegNet& net, const ParamSet<float>& params, const std::vector<PriorSample>& data,
                             unsigned threads = 1) {
    if (data.empty()) throw Error("prior_accuracy: empty split");
    std::vector<int> correct(data.size());
    parallel_for(data.size(), threads, [&](std::size_t i) {
        const auto pyr = net.encode(params, to_batch(data[i].image));
        const auto logits = conv2d(global_avg_pool(pyr.back()), params.at("head.w"), params.at("head.b"), 1, 0);
        correct[i] = argmax_channels(logits)[0] == data[i].label;
    });
    std::size_t n = 0;
    for (int c : correct) n += static_cast<std::size_t>(c);
    return static_cast<double>(n) / static_cast<double>(data.size());
}

/// Rescales each encoder conv, input to output, so its weight norm equals
/// the expected He-init norm sqrt(2 * out_channels); each bias takes the
/// running product of factors. ReLU is positively homogeneous, so every
/// feature map only changes by a positive constant.
inline void rescale_encoder_to_init_norms(const SegNet& net, ParamSet<float>& p) {
    double cumulative = 1.0;
    for (std::size_t s = 0; s < net.config().stages(); ++s)
        for (std::size_t conv = 0; conv < 2; ++conv) {
            auto& w = p.at(segnet_detail::enc_name(s, conv, "w"));
            auto& b = p.at(segnet_detail::enc_name(s, conv, "b"));
            double sq = 0;
            for (float v : w.values()) sq += static_cast<double>(v) * v;
            if (sq == 0) continue;
            const double factor = std::sqrt(2.0 * static_cast<double>(w.dim(0)) / sq);
            cumulative *= factor;
            for (auto& v : w.values()) v = static_cast<float>(v * factor);
            for (auto& v : b.values()) v = static_cast<float>(v * cumulative);
        }
}

/// Trains the encoder (initialized as SegNet::init_random(seed)) plus a
/// temporary head on the prior task and returns the encoder weights only,
/// rescaled to init norms. Metadata records the held-out prior accuracy.
inline Checkpoint pretrain_encoder(const SegNet& net, const PriorSpec& prior, std::uint64_t seed,
                                   unsigned threads = 1) {
    const auto v = prior.violations();
    if (!v.empty()) throw Error("invalid PriorSpec: " + v.front());
    ParamSet<float> params = SegNet::encoder_params(net.init_random(seed));
    Checkpoint out;
    out.metadata["stage"] = "pretrain";
    out.metadata["prior.classes"] = std::to_string(prior.classes);
    out.metadata["prior.dataset_size"] = std::to_string(prior.dataset_size);
    out.metadata["iterations"] = std::to_string(prior.iterations);
    out.metadata["seed"] = std::to_string(seed);
    if (prior.iterations == 0) {
        out.params = std::move(params);
        return out;
    }
    const std::uint64_t data_seed = derive_seed(seed, 0x70726961ULL);
    const auto train = gen_prior_split(prior, data_seed, 0, prior.dataset_size, threads);
    const auto held = gen_prior_split(prior, data_seed, prior.dataset_size, std::max<std::size_t>(200, prior.dataset_size / 5),
                                      threads);
    for (auto& [k, t] : init_prior_head(net.config().channels.back(), prior.classes, derive_seed(seed, 1)))
        params.emplace(k, std::move(t));

    OptimizerState<float> state;
    OptimizerConfig opt;
    opt.lr = prior.lr;
    Rng rng(derive_seed(seed, 2));
    for (std::size_t it = 0; it < prior.iterations; ++it) {
        std::vector<std::size_t> batch(prior.batch_size);
        for (auto& b : batch) b = static_cast<std::size_t>(rng.below(train.size()));
        std::vector<ParamSet<float>> parts(batch.size());
        std::vector<double> losses(batch.size());
        parallel_for(batch.size(), threads, [&](std::size_t i) {
            const auto& s = train[batch[i]];
            const auto cache = net.encode_cached(params, to_batch(s.image));
            const auto pooled = global_avg_pool(cache.pyramid.back());
            const auto logits = conv2d(pooled, params.at("head.w"), params.at("head.b"), 1, 0);
            LabelMap lab({1, 1, 1}, static_cast<std::uint8_t>(s.label));
            const auto ce = cross_entropy_ignore(logits, lab, batch.size());
            losses[i] = ce.loss;
            auto head = conv2d_backward(ce.grad, pooled, params.at("head.w"), 1, 0);
            std::vector<std::optional<Tensor<float>>> extra(net.config().stages());
            extra.back() = global_avg_pool_backward(head.input, cache.pyramid.back().shape());
            auto g = net.backward(params, cache, Tensor<float>(), extra);
            g.emplace("head.w", std::move(head.weight));
            g.emplace("head.b", std::move(head.bias));
            parts[i] = std::move(g);
        });
        double loss = 0;
        for (double l : losses) loss += l;
        if (!std::isfinite(loss)) throw NumericError("pretrain_encoder: non-finite loss at iteration " + std::to_string(it));
        optimizer_step(params, reduce_grads(params, parts), state, opt);
    }
    out.metadata["metric.prior_accuracy"] = format_double(prior_accuracy(net, params, held, threads));
    params.erase("head.w");
    params.erase("head.b");
    rescale_encoder_to_init_norms(net, params);
    out.params = std::move(params);
    return out;
}

}  // namespace sia

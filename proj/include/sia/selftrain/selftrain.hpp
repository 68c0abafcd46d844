#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "sia/numerics/optimizer.hpp"
#include "sia/pseudolabel/pseudolabel.hpp"
#include "sia/selftrain/augment.hpp"
#include "sia/soup/checkpoint.hpp"
#include "sia/training/model_ops.hpp"

namespace sia {

/// Checkpoint tag per augmentation: aug_a, aug_b, aug_c.
inline std::string aug_tag(AugmentKind k) {
    switch (k) {
        case AugmentKind::photometric: return "aug_a";
        case AugmentKind::gauss_noise: return "aug_b";
        case AugmentKind::grid_shuffle: return "aug_c";
    }
    return "?";
}

/// Row label used in reports.
inline std::string aug_display_name(AugmentKind k) {
    switch (k) {
        case AugmentKind::photometric: return "PhotoMetricDistortion";
        case AugmentKind::gauss_noise: return "GaussNoise";
        case AugmentKind::grid_shuffle: return "RandomGridShuffle";
    }
    return "?";
}

inline constexpr AugmentKind kAllAugments[] = {AugmentKind::photometric, AugmentKind::gauss_noise,
                                              AugmentKind::grid_shuffle};

struct SelfTrainConfig {
    std::size_t iterations = 500;
    double lr = 1e-4;  // 0.1 x the UDA base lr
    double weight_decay = 0.01;
    std::size_t batch_size = 4;
    std::uint64_t seed = 0;
    AugmentSpec aug;

    std::vector<std::string> violations() const {
        std::vector<std::string> out;
        if (!(lr >= 0)) out.push_back("selftrain.lr must be >= 0");
        if (!(weight_decay >= 0)) out.push_back("selftrain.weight_decay must be >= 0");
        if (batch_size == 0) out.push_back("selftrain.batch_size must be >= 1");
        for (auto& v : aug.violations()) out.push_back("selftrain." + v);
        return out;
    }

    bool operator==(const SelfTrainConfig&) const = default;
};

inline std::string selftrain_config_text(const SelfTrainConfig& c) {
    const auto& p = c.aug.photometric;
    std::ostringstream o;
    o << "iterations=" << c.iterations << ";lr=" << format_double(c.lr) << ";wd=" << format_double(c.weight_decay)
      << ";batch=" << c.batch_size << ";seed=" << c.seed << ";aug=" << to_string(c.aug.kind)
      << ";brightness=" << format_double(p.brightness_delta) << ";contrast=" << format_double(p.contrast_lo) << ","
      << format_double(p.contrast_hi) << ";saturation=" << format_double(p.saturation_lo) << ","
      << format_double(p.saturation_hi) << ";hue=" << format_double(p.hue_delta) << ";prob=" << format_double(p.prob)
      << ";noise=" << format_double(c.aug.noise_sigma_lo) << "," << format_double(c.aug.noise_sigma_hi)
      << ";grid=" << c.aug.grid;
    return o.str();
}

/// Fine-tunes `init` with cross-entropy on augmented target images against
/// frozen pseudo-labels (255 ignored). No EMA teacher. Batches without any
/// retained pixel skip the optimizer step. Sample b of iteration t is
/// augmented with its own stream derive_seed(derive_seed(seed, 1), t*B + b).
inline Checkpoint self_train(const SegNet& net, const Checkpoint& init, const Dataset& target,
                             const PseudoLabelSet& pseudo, const SelfTrainConfig& cfg, unsigned threads = 1) {
    const auto bad = cfg.violations();
    if (!bad.empty()) throw Error("invalid SelfTrainConfig: " + bad.front());
    if (pseudo.size() == 0) throw Error("self_train: empty pseudo-label set");

    std::map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < target.size(); ++i) by_id[target.ids[i]] = i;
    std::vector<const Tensor<float>*> images;
    std::vector<const Tensor<std::uint8_t>*> labels;
    std::size_t retained = 0;
    for (std::size_t i = 0; i < pseudo.size(); ++i) {
        auto it = by_id.find(pseudo.ids[i]);
        if (it == by_id.end()) throw Error("self_train: pseudo-label '" + pseudo.ids[i] + "' has no target image");
        const auto& img = target.samples[it->second].image;
        const auto& lab = pseudo.maps[i].labels;
        if (lab.rank() != 2 || lab.dim(0) != img.dim(0) || lab.dim(1) != img.dim(1))
            throw ShapeError("self_train: pseudo-label '" + pseudo.ids[i] + "' extents differ from its image");
        for (auto l : lab.values()) retained += l != kIgnoreLabel;
        images.push_back(&img);
        labels.push_back(&lab);
    }
    if (cfg.iterations > 0 && retained == 0)
        throw Error("self_train: no retained pseudo-label pixels (tau " + format_double(pseudo.tau) +
                    " filters everything); lower tau");

    ParamSet<float> params = init.params;
    OptimizerState<float> state;
    OptimizerConfig opt;
    opt.lr = cfg.lr;
    opt.weight_decay = cfg.weight_decay;
    Rng rng(derive_seed(cfg.seed, 0));
    const std::uint64_t aug_seed = derive_seed(cfg.seed, 1);
    const std::size_t B = cfg.batch_size;
    double last_loss = 0;
    std::size_t steps = 0;
    for (std::size_t t = 0; t < cfg.iterations; ++t) {
        std::vector<std::size_t> idx(B);
        for (auto& i : idx) i = static_cast<std::size_t>(rng.below(images.size()));
        std::vector<Tensor<float>> aug_images(B);
        std::vector<Tensor<std::uint8_t>> aug_labels(B);
        parallel_for(B, threads, [&](std::size_t b) {
            Rng r(derive_seed(aug_seed, t * B + b));
            auto [img, lab] = augment(cfg.aug, *images[idx[b]], *labels[idx[b]], r);
            aug_images[b] = std::move(img);
            aug_labels[b] = std::move(lab);
        });
        std::vector<const Tensor<float>*> ip;
        std::vector<const Tensor<std::uint8_t>*> lp;
        for (std::size_t b = 0; b < B; ++b) {
            ip.push_back(&aug_images[b]);
            lp.push_back(&aug_labels[b]);
        }
        const auto step = segmentation_loss(net, params, ip, lp, 1.0f, 0, threads);
        if (step.counted == 0) continue;
        if (!std::isfinite(step.loss)) throw NumericError("self_train: non-finite loss at iteration " + std::to_string(t));
        last_loss = step.loss;
        optimizer_step(params, step.grads, state, opt);
        ++steps;
    }

    Checkpoint out;
    out.params = std::move(params);
    out.metadata["stage"] = "selftrain";
    out.metadata["aug"] = aug_tag(cfg.aug.kind);
    out.metadata["augmentation"] = to_string(cfg.aug.kind);
    out.metadata["iterations"] = std::to_string(cfg.iterations);
    out.metadata["optimizer_steps"] = std::to_string(steps);
    out.metadata["seed"] = std::to_string(cfg.seed);
    out.metadata["config_hash"] = hex64(hash_string(selftrain_config_text(cfg)));
    out.metadata["init_hash"] = hex64(params_hash(init.params));
    out.metadata["pseudo.tau"] = format_double(pseudo.tau);
    out.metadata["loss.final"] = format_double(last_loss);
    return out;
}

}  // namespace sia

#pragma once

#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sia/numerics/optimizer.hpp"
#include "sia/pseudolabel/confidence.hpp"
#include "sia/selftrain/augment.hpp"
#include "sia/segnet/segnet.hpp"
#include "sia/soup/checkpoint.hpp"
#include "sia/training/model_ops.hpp"
#include "sia/training/strategies.hpp"

namespace sia {

inline std::string uda_config_text(const UdaConfig& c) {
    std::ostringstream o;
    o << "iterations=" << c.iterations << ";lr=" << format_double(c.lr)
      << ";encoder_lr_scale=" << format_double(c.encoder_lr_scale) << ";warmup=" << c.warmup
      << ";poly=" << c.poly_decay << ";poly_power=" << format_double(c.poly_power)
      << ";wd=" << format_double(c.weight_decay) << ";fd=" << format_double(c.fd_weight) << ";fd_classes=";
    for (auto k : c.fd_classes) o << k << ",";
    o << ";rcs=" << c.rcs_enabled << ";rcs_t=" << format_double(c.rcs_temperature)
      << ";ema=" << format_double(c.ema_alpha) << ";tau=" << format_double(c.tau_online)
      << ";self_training=" << c.self_training << ";student_augment=" << c.student_augment << ";class_mix=" << c.class_mix << ";batch=" << c.batch_size << ";seed=" << c.seed;
    return o.str();
}

/// Full model for UDA: random decoder (seeded), encoder taken from the
/// encoder checkpoint.
inline ParamSet<float> init_with_encoder(const SegNet& net, const Checkpoint& encoder, std::uint64_t seed) {
    ParamSet<float> params = net.init_random(seed);
    require_compatible(SegNet::encoder_params(params), encoder.params, "encoder initialization");
    for (const auto& [k, v] : encoder.params) params.at(k) = v;
    return params;
}

/// Initial UDA stage. Per iteration:
///  1. supervised cross-entropy on a source batch (uniform or rare-class sampled),
///     plus fd_weight x feature distance between the student's and the frozen
///     encoder's deepest features on fd_classes pixels;
///  2. (unless source-only) teacher pseudo-labels on a target batch,
///     thresholded at tau_online; cross-entropy over retained pixels times the
///     retained fraction. With class_mix the student sees the target image
///     with the objects of half the foreground classes of a source image
///     pasted in, labeled by the source ground truth;
///  3. one AdamW step on the summed gradients;
///  4. EMA teacher update with alpha_t = min(1 - 1/(t+1), ema_alpha).
/// Returns the student as the initial adaptive model.
inline Checkpoint run_uda(const SegNet& net, const std::vector<SceneSample>& source,
                          const std::vector<SceneSample>& target, const Checkpoint& encoder_init, const UdaConfig& cfg,
                          unsigned threads = 1) {
    const auto bad = cfg.violations();
    if (!bad.empty()) throw Error("invalid UdaConfig: " + bad.front());
    if (source.empty()) throw Error("run_uda: empty source dataset");
    if (cfg.self_training && target.empty()) throw Error("run_uda: empty target dataset");

    ParamSet<float> params = init_with_encoder(net, encoder_init, derive_seed(cfg.seed, 0));
    const ParamSet<float>& frozen = encoder_init.params;
    ParamSet<float> teacher = params;
    OptimizerState<float> state;
    OptimizerConfig opt;
    opt.weight_decay = cfg.weight_decay;
    opt.scaled_prefix = "enc.";
    opt.prefix_lr_scale = cfg.encoder_lr_scale;
    const SourceSampler sampler(source, cfg.rcs_enabled, cfg.rcs_temperature);
    Rng rng(derive_seed(cfg.seed, 1));
    const std::size_t S = net.config().stages();
    const std::size_t fd_factor = std::size_t{1} << S;

    double last_src = 0, last_tgt = 0, last_fd = 0;
    for (std::size_t t = 0; t < cfg.iterations; ++t) {
        const std::size_t B = cfg.batch_size;
        std::vector<std::size_t> src_idx(B), tgt_idx(B);
        for (auto& i : src_idx) i = sampler.draw(rng);
        for (auto& i : tgt_idx) i = static_cast<std::size_t>(rng.below(target.empty() ? 1 : target.size()));

        // Source: supervised loss + feature distance.
        std::size_t src_pixels = 0, fd_pixels = 0;
        std::vector<Tensor<std::uint8_t>> fd_labels(B);
        for (std::size_t b = 0; b < B; ++b) {
            const auto& s = source[src_idx[b]];
            for (auto l : s.labels.values()) src_pixels += l != kIgnoreLabel;
            if (cfg.fd_weight > 0) {
                fd_labels[b] = downsample_labels(s.labels, fd_factor);
                for (auto l : fd_labels[b].values())
                    for (auto c : cfg.fd_classes) fd_pixels += l == c;
            }
        }
        std::vector<ParamSet<float>> parts(2 * B);
        std::vector<double> src_loss(B, 0.0), fd_loss(B, 0.0), tgt_loss(B, 0.0);
        parallel_for(B, threads, [&](std::size_t b) {
            const auto& s = source[src_idx[b]];
            const auto input = to_batch(s.image);
            const auto cache = net.forward_cached(params, input);
            const auto lab = s.labels.reshaped({1, s.labels.dim(0), s.labels.dim(1)});
            const auto ce = cross_entropy_ignore(cache.logits, lab, src_pixels);
            src_loss[b] = ce.loss;
            std::vector<std::optional<Tensor<float>>> extra(S);
            if (cfg.fd_weight > 0 && fd_pixels > 0) {
                const auto frozen_feats = net.encode(frozen, input);
                const auto& fl = fd_labels[b];
                const auto fd = feature_distance_loss(cache.pyramid.back(), frozen_feats.back(),
                                                      fl.reshaped({1, fl.dim(0), fl.dim(1)}), cfg.fd_classes, fd_pixels);
                fd_loss[b] = cfg.fd_weight * fd.loss;
                Tensor<float> g = fd.grad;
                for (auto& v : g.values()) v *= static_cast<float>(cfg.fd_weight);
                extra.back() = std::move(g);
            }
            parts[b] = net.backward(params, cache, ce.grad, extra);
        });

        // Target: online pseudo-labels from the EMA teacher.
        if (cfg.self_training) {
            std::size_t tgt_pixels = 0;
            for (auto i : tgt_idx) tgt_pixels += target[i].labels.numel();
            parallel_for(B, threads, [&](std::size_t b) {
                const auto& image = target[tgt_idx[b]].image;
                auto pseudo = threshold_labels(pixel_confidence(net.forward(teacher, to_batch(image))), cfg.tau_online);
                Tensor<float> student_image = image;
                if (cfg.class_mix) {
                    Rng mix_rng(derive_seed(derive_seed(cfg.seed, 3), t * B + b));
                    const auto& s = source[src_idx[b]];
                    auto flat = pseudo.reshaped(s.labels.shape());
                    class_mix(s.image, s.labels, student_image, flat, mix_rng);
                    pseudo = flat.reshaped(pseudo.shape());
                }
                if (cfg.student_augment) {
                    Rng aug_rng(derive_seed(derive_seed(cfg.seed, 2), t * B + b));
                    student_image = photometric_distortion(image, aug_rng);
                }
                const auto cache = net.forward_cached(params, to_batch(student_image));
                const auto ce = cross_entropy_ignore(cache.logits, pseudo, tgt_pixels);
                tgt_loss[b] = ce.loss;
                parts[B + b] = ce.counted ? net.backward(params, cache, ce.grad) : zeros_like(params);
            });
        } else {
            for (std::size_t b = 0; b < B; ++b) parts[B + b] = zeros_like(params);
        }

        last_src = last_tgt = last_fd = 0;
        for (std::size_t b = 0; b < B; ++b) {
            last_src += src_loss[b];
            last_tgt += tgt_loss[b];
            last_fd += fd_loss[b];
        }
        if (!std::isfinite(last_src + last_tgt + last_fd))
            throw NumericError("run_uda: non-finite loss at iteration " + std::to_string(t));
        opt.lr = lr_at(t, cfg);
        optimizer_step(params, reduce_grads(params, parts), state, opt);
        ema_update(teacher, params, std::min(1.0 - 1.0 / static_cast<double>(t + 1), cfg.ema_alpha));
    }

    Checkpoint out;
    out.params = std::move(params);
    out.metadata["stage"] = cfg.self_training ? "uda" : "source_only";
    out.metadata["iterations"] = std::to_string(cfg.iterations);
    out.metadata["seed"] = std::to_string(cfg.seed);
    out.metadata["config_hash"] = hex64(hash_string(uda_config_text(cfg)));
    out.metadata["encoder_hash"] = hex64(params_hash(encoder_init.params));
    out.metadata["loss.source_final"] = format_double(last_src);
    out.metadata["loss.target_final"] = format_double(last_tgt);
    out.metadata["loss.fd_final"] = format_double(last_fd);
    return out;
}

}  // namespace sia

#pragma once

#include <optional>
#include <vector>

#include "sia/metrics/metrics.hpp"
#include "sia/numerics/layers.hpp"
#include "sia/segnet/segnet.hpp"
#include "sia/synthdata/dataset.hpp"

namespace sia {

/// Per-pixel argmax over classes for an N x K x H x W tensor; ties go to the
/// lowest class index.
template <typename T>
LabelMap argmax_channels(const Tensor<T>& logits) {
    require_rank(logits, 4, "argmax_channels");
    const std::size_t N = logits.dim(0), K = logits.dim(1), P = logits.dim(2) * logits.dim(3);
    LabelMap out({N, logits.dim(2), logits.dim(3)});
    for (std::size_t n = 0; n < N; ++n) {
        const T* x = &logits.at(n, 0, 0, 0);
        for (std::size_t p = 0; p < P; ++p) {
            std::size_t best = 0;
            for (std::size_t k = 1; k < K; ++k)
                if (x[k * P + p] > x[best * P + p]) best = k;
            out[n * P + p] = static_cast<std::uint8_t>(best);
        }
    }
    return out;
}

/// Predicted label map (H x W) for one H x W x 3 image.
inline Tensor<std::uint8_t> predict(const SegNet& net, const ParamSet<float>& params, const Tensor<float>& image) {
    const auto labels = argmax_channels(net.forward(params, to_batch(image)));
    return labels.reshaped({image.dim(0), image.dim(1)});
}

/// Confusion matrix of the model's predictions against `targets` (one label
/// map per image; 255 pixels are not scored). Per-image matrices are merged
/// in image order.
inline ConfusionMatrix confusion(const SegNet& net, const ParamSet<float>& params,
                                 const std::vector<const Tensor<float>*>& images,
                                 const std::vector<const Tensor<std::uint8_t>*>& targets, unsigned threads = 1) {
    if (images.size() != targets.size()) throw Error("confusion: image and label counts differ");
    std::vector<ConfusionMatrix> parts(images.size(), ConfusionMatrix(net.config().num_classes));
    parallel_for(images.size(), threads, [&](std::size_t i) {
        cm_update(parts[i], predict(net, params, *images[i]), *targets[i]);
    });
    ConfusionMatrix cm(net.config().num_classes);
    for (const auto& p : parts) cm.merge(p);
    return cm;
}

inline ConfusionMatrix confusion(const SegNet& net, const ParamSet<float>& params, const std::vector<SceneSample>& data,
                                 unsigned threads = 1) {
    std::vector<const Tensor<float>*> images;
    std::vector<const Tensor<std::uint8_t>*> labels;
    for (const auto& s : data) {
        images.push_back(&s.image);
        labels.push_back(&s.labels);
    }
    return confusion(net, params, images, labels, threads);
}

inline EvalReport evaluate(const SegNet& net, const ParamSet<float>& params, const std::vector<SceneSample>& data,
                           unsigned threads = 1) {
    return make_report(confusion(net, params, data, threads));
}

/// Sums per-sample gradient sets in index order.
inline ParamSet<float> reduce_grads(const ParamSet<float>& params, std::vector<ParamSet<float>>& parts) {
    ParamSet<float> total = zeros_like(params);
    for (auto& part : parts)
        for (auto& [k, v] : part) {
            auto& dst = total.at(k);
            for (std::size_t i = 0; i < v.numel(); ++i) dst[i] += v[i];
        }
    return total;
}

/// Cross-entropy over a batch of (image, label map) pairs, normalized by
/// `normalizer` (0: the number of non-ignored pixels in the batch) and scaled
/// by `weight`. Each sample runs forward/backward independently; gradients
/// are reduced in sample order, so the result does not depend on `threads`.
struct BatchLoss {
    double loss = 0;
    std::size_t counted = 0;
    ParamSet<float> grads;
};

inline BatchLoss segmentation_loss(const SegNet& net, const ParamSet<float>& params,
                                   const std::vector<const Tensor<float>*>& images,
                                   const std::vector<const Tensor<std::uint8_t>*>& labels, float weight = 1.0f,
                                   std::size_t normalizer = 0, unsigned threads = 1) {
    std::size_t counted = 0;
    for (const auto* l : labels)
        for (auto v : l->values()) counted += v != kIgnoreLabel;
    BatchLoss out;
    out.counted = counted;
    if (normalizer == 0) normalizer = counted;
    if (counted == 0) {
        out.grads = zeros_like(params);
        return out;
    }
    std::vector<ParamSet<float>> parts(images.size());
    std::vector<double> losses(images.size());
    parallel_for(images.size(), threads, [&](std::size_t i) {
        const auto cache = net.forward_cached(params, to_batch(*images[i]));
        const auto lab = labels[i]->reshaped({1, labels[i]->dim(0), labels[i]->dim(1)});
        auto ce = cross_entropy_ignore(cache.logits, lab, normalizer);
        losses[i] = ce.loss;
        if (weight != 1.0f)
            for (auto& v : ce.grad.values()) v *= weight;
        parts[i] = net.backward(params, cache, ce.grad);
    });
    for (double l : losses) out.loss += l;
    out.loss *= weight;
    out.grads = reduce_grads(params, parts);
    return out;
}

}  // namespace sia

#pragma once

#include <cstdint>

#include "sia/numerics/layers.hpp"

namespace sia {

template <typename T>
struct PixelConfidence {
    Tensor<T> confidence;  // N x H x W, max softmax probability
    LabelMap labels;       // N x H x W, argmax (ties: lowest class)
};

template <typename T>
PixelConfidence<T> pixel_confidence(const Tensor<T>& logits) {
    require_rank(logits, 4, "pixel_confidence");
    if (!logits.all_finite()) throw NumericError("pixel_confidence: non-finite logits");
    const auto probs = softmax_channels(logits);
    const std::size_t N = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3), P = H * W;
    PixelConfidence<T> r{Tensor<T>({N, H, W}), LabelMap({N, H, W})};
    for (std::size_t n = 0; n < N; ++n) {
        const T* pr = &probs.at(n, 0, 0, 0);
        for (std::size_t p = 0; p < P; ++p) {
            std::size_t best = 0;
            for (std::size_t k = 1; k < K; ++k)
                if (pr[k * P + p] > pr[best * P + p]) best = k;
            r.confidence[n * P + p] = pr[best * P + p];
            r.labels[n * P + p] = static_cast<std::uint8_t>(best);
        }
    }
    return r;
}

/// Labels with every pixel whose confidence is below tau replaced by 255.
template <typename T>
LabelMap threshold_labels(const PixelConfidence<T>& pc, double tau) {
    LabelMap out = pc.labels;
    for (std::size_t i = 0; i < out.numel(); ++i)
        if (static_cast<double>(pc.confidence[i]) < tau) out[i] = kIgnoreLabel;
    return out;
}

}  // namespace sia

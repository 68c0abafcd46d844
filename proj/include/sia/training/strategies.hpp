#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "sia/numerics/layers.hpp"
#include "sia/numerics/tensor.hpp"
#include "sia/segnet/segnet.hpp"
#include "sia/synthdata/scene.hpp"

namespace sia {

struct UdaConfig {
    std::size_t iterations = 2000;
    double lr = 1e-3;
    double encoder_lr_scale = 0.1;  // encoder lr = lr * encoder_lr_scale
    std::size_t warmup = 75;
    bool poly_decay = false;
    double poly_power = 1.0;
    double weight_decay = 0.01;
    double fd_weight = 0.005;
    std::vector<std::size_t> fd_classes{1, 2, 3, 4};
    bool rcs_enabled = false;
    double rcs_temperature = 0.01;
    double ema_alpha = 0.99;
    double tau_online = 0.968;
    bool self_training = true;  // false: source-only training
    bool student_augment = false;  // photometric jitter on the student's target input
    bool class_mix = true;        // paste source objects into the student's target input
    std::size_t batch_size = 4;
    std::uint64_t seed = 0;

    std::vector<std::string> violations() const {
        std::vector<std::string> out;
        if (warmup > iterations) out.push_back("uda.warmup must be <= uda.iterations");
        if (!(lr >= 0)) out.push_back("uda.lr must be >= 0");
        if (!(encoder_lr_scale >= 0)) out.push_back("uda.encoder_lr_scale must be >= 0");
        if (!(ema_alpha >= 0 && ema_alpha < 1)) out.push_back("uda.ema_alpha must be in [0,1)");
        if (!(tau_online > 0 && tau_online <= 1)) out.push_back("uda.tau_online must be in (0,1]");
        if (!(fd_weight >= 0)) out.push_back("uda.fd_weight must be >= 0");
        if (!(rcs_temperature > 0)) out.push_back("uda.rcs_temperature must be > 0");
        if (batch_size == 0) out.push_back("uda.batch_size must be >= 1");
        for (auto c : fd_classes)
            if (c >= kNumClasses) out.push_back("uda.fd_classes entries must be < " + std::to_string(kNumClasses));
        return out;
    }

    bool operator==(const UdaConfig&) const = default;
};

/// Cross-domain class mixing: a random half (rounded up) of the foreground
/// classes present in the source labels is pasted into the target image, and
/// those pixels take the source label. `labels` holds the target
/// pseudo-labels and is updated in place. H x W x 3 images, H x W labels.
inline void class_mix(const Tensor<float>& src_image, const Tensor<std::uint8_t>& src_labels, Tensor<float>& image,
                      Tensor<std::uint8_t>& labels, Rng& rng) {
    require_shape(image, src_image.shape(), "class_mix image");
    const Shape lab_shape{src_labels.dim(0), src_labels.dim(1)};
    require_shape(labels, lab_shape, "class_mix labels");
    std::array<bool, 256> present{};
    for (auto l : src_labels.values()) present[l] = true;
    std::vector<std::uint8_t> classes;
    for (std::size_t c = 1; c < kNumClasses; ++c)
        if (present[c]) classes.push_back(static_cast<std::uint8_t>(c));
    for (std::size_t i = classes.size(); i > 1; --i) std::swap(classes[i - 1], classes[rng.below(i)]);
    classes.resize((classes.size() + 1) / 2);
    std::array<bool, 256> chosen{};
    for (auto c : classes) chosen[c] = true;
    const std::size_t C = image.dim(2);
    for (std::size_t p = 0; p < labels.numel(); ++p) {
        if (!chosen[src_labels[p]]) continue;
        labels[p] = src_labels[p];
        for (std::size_t k = 0; k < C; ++k) image[p * C + k] = src_image[p * C + k];
    }
}

/// Linear warmup lr(t) = base (t+1) / t_warm for t < t_warm, base afterwards
/// (or base (1 - (t - t_warm)/(T - t_warm))^power with poly_decay).
inline double lr_at(std::size_t t, const UdaConfig& cfg) {
    if (t > cfg.iterations) throw Error("lr_at: t exceeds the iteration budget");
    if (t < cfg.warmup) return cfg.lr * static_cast<double>(t + 1) / static_cast<double>(cfg.warmup);
    if (!cfg.poly_decay || cfg.iterations == cfg.warmup) return cfg.lr;
    const double frac = static_cast<double>(t - cfg.warmup) / static_cast<double>(cfg.iterations - cfg.warmup);
    return cfg.lr * std::pow(1.0 - frac, cfg.poly_power);
}

/// Rare-class sampling distribution P(c) proportional to exp((1 - f_c) / T).
inline std::vector<double> rcs_probability(const std::vector<double>& freq, double temperature) {
    if (!(temperature > 0)) throw Error("rcs_probability: temperature must be > 0");
    if (freq.empty()) throw Error("rcs_probability: no classes");
    std::vector<double> logits(freq.size());
    for (std::size_t c = 0; c < freq.size(); ++c) logits[c] = (1.0 - freq[c]) / temperature;
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0;
    for (auto& v : logits) sum += (v = std::exp(v - m));
    for (auto& v : logits) v /= sum;
    return logits;
}

/// Draws source image indices: uniform, or with rare-class sampling (draw a
/// class from rcs_probability, then a uniform image containing it).
class SourceSampler {
public:
    SourceSampler(const std::vector<SceneSample>& data, bool rcs, double temperature) : n_(data.size()), rcs_(rcs) {
        if (n_ == 0) throw Error("SourceSampler: empty dataset");
        if (!rcs_) return;
        std::vector<std::uint64_t> counts(kNumClasses, 0);
        std::uint64_t total = 0;
        by_class_.resize(kNumClasses);
        for (std::size_t i = 0; i < n_; ++i) {
            std::array<bool, kNumClasses> seen{};
            for (auto l : data[i].labels.values()) {
                if (l >= kNumClasses) continue;
                ++counts[l];
                ++total;
                seen[l] = true;
            }
            for (std::size_t c = 0; c < kNumClasses; ++c)
                if (seen[c]) by_class_[c].push_back(i);
        }
        std::vector<double> f(kNumClasses);
        for (std::size_t c = 0; c < kNumClasses; ++c)
            f[c] = total ? static_cast<double>(counts[c]) / static_cast<double>(total) : 0.0;
        class_p_ = rcs_probability(f, temperature);
        double kept = 0;
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            if (by_class_[c].empty()) class_p_[c] = 0;
            kept += class_p_[c];
        }
        for (auto& p : class_p_) p /= kept;
    }

    std::size_t draw(Rng& rng) const {
        if (!rcs_) return static_cast<std::size_t>(rng.below(n_));
        double u = rng.uniform();
        std::size_t c = 0;
        for (; c + 1 < class_p_.size(); ++c) {
            if (u < class_p_[c]) break;
            u -= class_p_[c];
        }
        while (by_class_[c].empty()) c = (c + kNumClasses - 1) % kNumClasses;
        return by_class_[c][static_cast<std::size_t>(rng.below(by_class_[c].size()))];
    }

    const std::vector<double>& class_probabilities() const { return class_p_; }

private:
    std::size_t n_;
    bool rcs_;
    std::vector<double> class_p_;
    std::vector<std::vector<std::size_t>> by_class_;
};

/// teacher <- alpha teacher + (1 - alpha) student.
template <typename T>
void ema_update(ParamSet<T>& teacher, const ParamSet<T>& student, double alpha) {
    if (!(alpha >= 0 && alpha <= 1)) throw Error("ema_update: alpha must be in [0,1]");
    require_compatible(teacher, student, "ema_update");
    const T a = static_cast<T>(alpha), b = static_cast<T>(1.0 - alpha);
    for (auto& [k, t] : teacher) {
        const auto& s = student.at(k);
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] = a * t[i] + b * s[i];
    }
}

/// Downsamples an H x W label map by an integer factor; each output pixel is
/// the most frequent non-ignore label of its block (ties: lowest class), or
/// 255 when the whole block is ignored.
inline Tensor<std::uint8_t> downsample_labels(const Tensor<std::uint8_t>& labels, std::size_t factor) {
    require_rank(labels, 2, "downsample_labels");
    const std::size_t H = labels.dim(0), W = labels.dim(1);
    if (factor == 0 || H % factor || W % factor)
        throw ShapeError("downsample_labels: " + shape_str(labels.shape()) + " not divisible by " +
                         std::to_string(factor));
    Tensor<std::uint8_t> out({H / factor, W / factor}, kIgnoreLabel);
    for (std::size_t y = 0; y < H / factor; ++y)
        for (std::size_t x = 0; x < W / factor; ++x) {
            std::array<std::size_t, 256> count{};
            for (std::size_t dy = 0; dy < factor; ++dy)
                for (std::size_t dx = 0; dx < factor; ++dx) ++count[labels[(y * factor + dy) * W + x * factor + dx]];
            std::size_t best = kIgnoreLabel, best_n = 0;
            for (std::size_t c = 0; c < kIgnoreLabel; ++c)
                if (count[c] > best_n) {
                    best = c;
                    best_n = count[c];
                }
            out[y * (W / factor) + x] = static_cast<std::uint8_t>(best);
        }
    return out;
}

template <typename T>
struct FeatureDistance {
    T loss = 0;
    Tensor<T> grad;  // d loss / d student
    std::size_t counted = 0;
};

/// Mean over masked pixels of the squared Euclidean distance between student
/// and frozen feature vectors. `labels` is N x h x w at feature resolution;
/// a pixel is masked in when its label is in `classes`. `normalizer`
/// overrides the masked-pixel count as divisor (for batch assembly).
template <typename T>
FeatureDistance<T> feature_distance_loss(const Tensor<T>& student, const Tensor<T>& frozen, const LabelMap& labels,
                                         const std::vector<std::size_t>& classes, std::size_t normalizer = 0) {
    require_rank(student, 4, "feature_distance_loss student");
    require_shape(frozen, student.shape(), "feature_distance_loss frozen");
    const std::size_t N = student.dim(0), C = student.dim(1), P = student.dim(2) * student.dim(3);
    require_shape(labels, {N, student.dim(2), student.dim(3)}, "feature_distance_loss labels");
    std::array<bool, 256> in_mask{};
    for (auto c : classes)
        if (c < 255) in_mask[c] = true;
    FeatureDistance<T> r{T{0}, Tensor<T>(student.shape()), 0};
    for (auto l : labels.values()) r.counted += in_mask[l];
    if (r.counted == 0) return r;
    const T denom = static_cast<T>(normalizer ? normalizer : r.counted);
    double total = 0;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t p = 0; p < P; ++p) {
            if (!in_mask[labels[n * P + p]]) continue;
            for (std::size_t c = 0; c < C; ++c) {
                const std::size_t i = (n * C + c) * P + p;
                const T d = student[i] - frozen[i];
                total += static_cast<double>(d * d);
                r.grad[i] = 2 * d / denom;
            }
        }
    r.loss = static_cast<T>(total / static_cast<double>(denom));
    return r;
}

}  // namespace sia

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "sia/numerics/tensor.hpp"

namespace sia {

enum class AugmentKind { photometric, gauss_noise, grid_shuffle };

inline std::string to_string(AugmentKind k) {
    switch (k) {
        case AugmentKind::photometric: return "photometric";
        case AugmentKind::gauss_noise: return "gauss_noise";
        case AugmentKind::grid_shuffle: return "grid_shuffle";
    }
    return "?";
}

inline AugmentKind parse_augment_kind(const std::string& s) {
    if (s == "photometric") return AugmentKind::photometric;
    if (s == "gauss_noise") return AugmentKind::gauss_noise;
    if (s == "grid_shuffle") return AugmentKind::grid_shuffle;
    throw Error("unknown augmentation '" + s + "' (expected photometric, gauss_noise or grid_shuffle)");
}

/// Brightness/contrast/saturation/hue jitter on [0,1] images. The defaults are
/// the usual 8-bit ranges rescaled: brightness +-32/255, contrast and
/// saturation in [0.5, 1.5], hue +-18 degrees.
struct PhotometricParams {
    double brightness_delta = 32.0 / 255.0;
    double contrast_lo = 0.5, contrast_hi = 1.5;
    double saturation_lo = 0.5, saturation_hi = 1.5;
    double hue_delta = 18.0;  // degrees
    double prob = 0.5;        // per-operation application probability

    bool operator==(const PhotometricParams&) const = default;
};

struct AugmentSpec {
    AugmentKind kind = AugmentKind::photometric;
    PhotometricParams photometric;
    double noise_sigma_lo = 0.02, noise_sigma_hi = 0.08;
    std::size_t grid = 4;

    std::vector<std::string> violations() const {
        std::vector<std::string> out;
        const auto& p = photometric;
        if (!(p.brightness_delta >= 0 && p.brightness_delta <= 1)) out.push_back("brightness delta must be in [0,1]");
        if (!(p.contrast_lo > 0 && p.contrast_lo <= p.contrast_hi)) out.push_back("contrast range must satisfy 0 < lo <= hi");
        if (!(p.saturation_lo >= 0 && p.saturation_lo <= p.saturation_hi))
            out.push_back("saturation range must satisfy 0 <= lo <= hi");
        if (!(p.hue_delta >= 0 && p.hue_delta <= 180)) out.push_back("hue delta must be in [0,180] degrees");
        if (!(p.prob >= 0 && p.prob <= 1)) out.push_back("photometric probability must be in [0,1]");
        if (!(noise_sigma_lo >= 0 && noise_sigma_lo <= noise_sigma_hi)) out.push_back("noise sigma range must satisfy 0 <= lo <= hi");
        if (grid == 0) out.push_back("grid must be >= 1");
        return out;
    }

    bool operator==(const AugmentSpec&) const = default;
};

namespace augment_detail {

inline void require_image(const Tensor<float>& image, const char* what) {
    if (image.rank() != 3 || image.dim(2) != 3)
        throw ShapeError(std::string(what) + ": expected H x W x 3 image, got " + shape_str(image.shape()));
}

inline void clip01(Tensor<float>& img) {
    for (auto& v : img.values()) v = std::clamp(v, 0.0f, 1.0f);
}

inline void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
    const float mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
    v = mx;
    s = mx > 0 ? d / mx : 0.0f;
    if (d <= 0) {
        h = 0;
    } else if (mx == r) {
        h = 60.0f * std::fmod((g - b) / d, 6.0f);
    } else if (mx == g) {
        h = 60.0f * ((b - r) / d + 2.0f);
    } else {
        h = 60.0f * ((r - g) / d + 4.0f);
    }
    if (h < 0) h += 360.0f;
}

inline void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
    const float c = v * s;
    const float hp = h / 60.0f;
    const float x = c * (1.0f - std::abs(std::fmod(hp, 2.0f) - 1.0f));
    float r1 = 0, g1 = 0, b1 = 0;
    switch (static_cast<int>(hp) % 6) {
        case 0: r1 = c, g1 = x; break;
        case 1: r1 = x, g1 = c; break;
        case 2: g1 = c, b1 = x; break;
        case 3: g1 = x, b1 = c; break;
        case 4: r1 = x, b1 = c; break;
        default: r1 = c, b1 = x; break;
    }
    const float m = v - c;
    r = r1 + m;
    g = g1 + m;
    b = b1 + m;
}

// Scales saturation by `sat` and rotates hue by `hue_deg` in HSV space.
inline void adjust_hsv(Tensor<float>& img, float sat, float hue_deg) {
    const std::size_t P = img.numel() / 3;
    for (std::size_t p = 0; p < P; ++p) {
        float* px = img.data() + 3 * p;
        float h, s, v;
        rgb_to_hsv(px[0], px[1], px[2], h, s, v);
        s = std::clamp(s * sat, 0.0f, 1.0f);
        h = std::fmod(h + hue_deg + 360.0f, 360.0f);
        hsv_to_rgb(h, s, v, px[0], px[1], px[2]);
    }
}

}  // namespace augment_detail

/// Random brightness shift, contrast scale, saturation scale and hue
/// rotation, each applied with probability `prob`; contrast goes either
/// before or after the HSV adjustments (chosen at random). Output clipped to
/// [0,1] after every operation. A drawn identity value is a no-op.
inline Tensor<float> photometric_distortion(const Tensor<float>& image, Rng& rng,
                                            const PhotometricParams& p = {}) {
    augment_detail::require_image(image, "photometric_distortion");
    Tensor<float> img = image;
    auto contrast = [&] {
        if (!rng.bernoulli(p.prob)) return;
        const auto a = static_cast<float>(rng.uniform(p.contrast_lo, p.contrast_hi));
        if (a == 1.0f) return;
        for (auto& v : img.values()) v *= a;
        augment_detail::clip01(img);
    };
    if (rng.bernoulli(p.prob)) {
        const auto d = static_cast<float>(rng.uniform(-p.brightness_delta, p.brightness_delta));
        if (d != 0.0f) {
            for (auto& v : img.values()) v += d;
            augment_detail::clip01(img);
        }
    }
    const bool contrast_first = rng.bernoulli(0.5);
    if (contrast_first) contrast();
    float sat = 1.0f, hue = 0.0f;
    if (rng.bernoulli(p.prob)) sat = static_cast<float>(rng.uniform(p.saturation_lo, p.saturation_hi));
    if (rng.bernoulli(p.prob)) hue = static_cast<float>(rng.uniform(-p.hue_delta, p.hue_delta));
    if (sat != 1.0f || hue != 0.0f) {
        augment_detail::adjust_hsv(img, sat, hue);
        augment_detail::clip01(img);
    }
    if (!contrast_first) contrast();
    return img;
}

/// Adds i.i.d. N(0, sigma^2) noise with sigma ~ U[sigma_lo, sigma_hi], then clips.
inline Tensor<float> gauss_noise(const Tensor<float>& image, Rng& rng, double sigma_lo = 0.02,
                                 double sigma_hi = 0.08) {
    augment_detail::require_image(image, "gauss_noise");
    Tensor<float> img = image;
    const double sigma = rng.uniform(sigma_lo, sigma_hi);
    if (sigma == 0.0) return img;
    for (auto& v : img.values()) v = std::clamp(static_cast<float>(v + rng.normal(0.0, sigma)), 0.0f, 1.0f);
    return img;
}

/// Uniform random permutation of g*g grid cells (Fisher-Yates).
inline std::vector<std::size_t> draw_grid_permutation(std::size_t g, Rng& rng) {
    std::vector<std::size_t> perm(g * g);
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    return perm;
}

/// Output cell i receives input cell perm[i], for image and labels alike.
inline std::pair<Tensor<float>, Tensor<std::uint8_t>> apply_grid_permutation(const Tensor<float>& image,
                                                                               const Tensor<std::uint8_t>& labels,
                                                                               std::size_t g,
                                                                               const std::vector<std::size_t>& perm) {
    augment_detail::require_image(image, "grid_shuffle");
    const std::size_t H = image.dim(0), W = image.dim(1);
    require_shape(labels, {H, W}, "grid_shuffle labels");
    if (g == 0 || H % g || W % g)
        throw ShapeError("grid_shuffle: extents " + std::to_string(H) + "x" + std::to_string(W) +
                         " not divisible by grid " + std::to_string(g));
    if (perm.size() != g * g) throw Error("grid_shuffle: permutation size mismatch");
    const std::size_t ch = H / g, cw = W / g;
    std::pair<Tensor<float>, Tensor<std::uint8_t>> out{Tensor<float>(image.shape()), Tensor<std::uint8_t>(labels.shape())};
    for (std::size_t cell = 0; cell < g * g; ++cell) {
        const std::size_t src = perm[cell];
        const std::size_t sy = (src / g) * ch, sx = (src % g) * cw;
        const std::size_t dy = (cell / g) * ch, dx = (cell % g) * cw;
        for (std::size_t y = 0; y < ch; ++y)
            for (std::size_t x = 0; x < cw; ++x) {
                const std::size_t si = (sy + y) * W + sx + x, di = (dy + y) * W + dx + x;
                out.second[di] = labels[si];
                for (std::size_t k = 0; k < 3; ++k) out.first[di * 3 + k] = image[si * 3 + k];
            }
    }
    return out;
}

inline std::pair<Tensor<float>, Tensor<std::uint8_t>> random_grid_shuffle(const Tensor<float>& image,
                                                                            const Tensor<std::uint8_t>& labels,
                                                                            std::size_t g, Rng& rng) {
    augment_detail::require_image(image, "grid_shuffle");
    if (g == 0 || image.dim(0) % g || image.dim(1) % g)
        throw ShapeError("grid_shuffle: extents " + shape_str(image.shape()) + " not divisible by grid " +
                         std::to_string(g));
    return apply_grid_permutation(image, labels, g, draw_grid_permutation(g, rng));
}

/// Applies the one augmentation selected by `spec.kind`.
inline std::pair<Tensor<float>, Tensor<std::uint8_t>> augment(const AugmentSpec& spec, const Tensor<float>& image,
                                                              const Tensor<std::uint8_t>& labels, Rng& rng) {
    switch (spec.kind) {
        case AugmentKind::photometric: return {photometric_distortion(image, rng, spec.photometric), labels};
        case AugmentKind::gauss_noise: return {gauss_noise(image, rng, spec.noise_sigma_lo, spec.noise_sigma_hi), labels};
        case AugmentKind::grid_shuffle: return random_grid_shuffle(image, labels, spec.grid, rng);
    }
    throw Error("augment: unknown kind");
}

}  // namespace sia

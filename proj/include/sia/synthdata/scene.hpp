#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "sia/numerics/layers.hpp"
#include "sia/numerics/tensor.hpp"
#include "sia/synthdata/domain.hpp"

namespace sia {

/// image: H x W x 3 in [0,1]; labels: H x W class ids.
struct SceneSample {
    Tensor<float> image;
    Tensor<std::uint8_t> labels;

    std::size_t height() const { return labels.dim(0); }
    std::size_t width() const { return labels.dim(1); }
    bool operator==(const SceneSample&) const = default;
};

/// 3x3 matrix rotating RGB vectors about the (1,1,1) gray axis.
inline std::array<double, 9> hue_rotation_matrix(double degrees) {
    const double a = degrees * 3.14159265358979323846 / 180.0;
    const double c = std::cos(a), s = std::sin(a);
    const double t = (1.0 - c) / 3.0, r = std::sqrt(1.0 / 3.0) * s;
    return {c + t, t - r, t + r, t + r, c + t, t - r, t - r, t + r, c + t};
}

inline void rotate_hue(std::array<double, 9> const& m, double& r, double& g, double& b) {
    const double nr = m[0] * r + m[1] * g + m[2] * b;
    const double ng = m[3] * r + m[4] * g + m[5] * b;
    const double nb = m[6] * r + m[7] * g + m[8] * b;
    r = nr;
    g = ng;
    b = nb;
}

namespace scene_detail {

enum class ShapeKind { rectangle, ellipse, blob };

// Texture amplitude and base frequency (cycles per 64 px) per class.
inline constexpr std::array<double, 5> kTextureAmp{0.06, 0.05, 0.15, 0.20, 0.10};
inline constexpr std::array<double, 5> kTextureFreq{3.0, 2.0, 10.0, 16.0, 5.0};
// Probabilities of rectangle / ellipse (blob takes the rest) per class.
inline constexpr std::array<std::array<double, 2>, 5> kShapeOdds{
    {{0.3, 0.4}, {0.3, 0.4}, {0.7, 0.1}, {0.2, 0.7}, {0.1, 0.2}}};

struct Texture {
    double amp, freq, cosd, sind, phase;

    double at(double x, double y, double extent) const {
        const double t = (x * cosd + y * sind) / extent;
        return 1.0 + amp * std::sin(6.283185307179586 * freq * t + phase);
    }
};

inline Texture draw_texture(std::size_t cls, double freq_scale, Rng& rng) {
    const double dir = rng.uniform(0.0, 3.141592653589793);
    return {kTextureAmp[cls], kTextureFreq[cls] * freq_scale, std::cos(dir), std::sin(dir),
            rng.uniform(0.0, 6.283185307179586)};
}

inline Rgb draw_color(const DomainSpec& spec, std::size_t cls, Rng& rng) {
    Rgb c{};
    for (std::size_t k = 0; k < 3; ++k) c[k] = std::clamp(rng.normal(spec.color[cls][k], spec.spread[cls]), 0.0, 1.0);
    return c;
}

inline bool is_minor(std::size_t c) { return c == kRigidPlastic || c == kMetal; }
inline bool is_major(std::size_t c) { return c == kCardboard || c == kSoftPlastic; }

}  // namespace scene_detail

/// Renders one scene. Background is class 0; each instance is a rectangle,
/// ellipse or irregular blob with class-specific color and texture, painted in
/// random order so later instances occlude earlier ones. The domain transform
/// (hue rotation, illumination offset, Gaussian noise, clipping) is applied
/// last.
inline SceneSample gen_scene(const DomainSpec& spec, std::uint64_t seed) {
    using namespace scene_detail;
    const auto v = spec.violations();
    if (!v.empty()) throw Error("invalid DomainSpec: " + v.front());
    const std::size_t H = spec.height, W = spec.width;
    const double extent = 64.0;
    Rng rng(seed);

    std::vector<double> rgb(H * W * 3);
    SceneSample s{Tensor<float>({H, W, 3}), Tensor<std::uint8_t>({H, W}, 0)};

    const Rgb bg = draw_color(spec, kBackground, rng);
    const Texture bgt = draw_texture(kBackground, spec.texture_frequency, rng);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const double m = bgt.at(static_cast<double>(x), static_cast<double>(y), extent);
            for (std::size_t k = 0; k < 3; ++k) rgb[(y * W + x) * 3 + k] = bg[k] * m;
        }

    std::vector<std::size_t> instances;
    auto add_class = [&](std::size_t c) {
        const auto lo = static_cast<std::int64_t>(std::max<std::size_t>(spec.objects_min, 1));
        const auto n = rng.between(lo, static_cast<std::int64_t>(spec.objects_max));
        for (std::int64_t i = 0; i < n; ++i) instances.push_back(c);
    };
    if (spec.objects_max > 0) {
        bool minor = false, major = false;
        for (std::size_t c = 1; c < 5; ++c)
            if (rng.bernoulli(spec.presence[c])) {
                add_class(c);
                minor = minor || is_minor(c);
                major = major || is_major(c);
            }
        if (minor && !major && rng.bernoulli(spec.co_occurrence))
            add_class(rng.bernoulli(0.5) ? kCardboard : kSoftPlastic);
    }
    for (std::size_t i = instances.size(); i > 1; --i) std::swap(instances[i - 1], instances[rng.below(i)]);

    for (const std::size_t cls : instances) {
        const double r_odds = rng.uniform();
        const ShapeKind kind = r_odds < kShapeOdds[cls][0]                       ? ShapeKind::rectangle
                               : r_odds < kShapeOdds[cls][0] + kShapeOdds[cls][1] ? ShapeKind::ellipse
                                                                                  : ShapeKind::blob;
        const double cx = rng.uniform(0.0, static_cast<double>(W));
        const double cy = rng.uniform(0.0, static_cast<double>(H));
        const double scale = static_cast<double>(std::min(H, W)) / extent;
        const double a = rng.uniform(spec.radius_min, spec.radius_max) * spec.size_scale[cls] * scale;
        const double b = a * rng.uniform(0.5, 1.0);
        const double theta = rng.uniform(0.0, 3.141592653589793);
        const double ct = std::cos(theta), st = std::sin(theta);
        const double w1 = rng.uniform(0.0, 6.283185307179586), w2 = rng.uniform(0.0, 6.283185307179586);
        const Rgb col = draw_color(spec, cls, rng);
        const Texture tex = draw_texture(cls, spec.texture_frequency, rng);

        const double reach = a * 1.45;
        const auto y0 = static_cast<std::size_t>(std::max(0.0, std::floor(cy - reach)));
        const auto y1 = static_cast<std::size_t>(std::clamp(std::ceil(cy + reach), 0.0, static_cast<double>(H)));
        const auto x0 = static_cast<std::size_t>(std::max(0.0, std::floor(cx - reach)));
        const auto x1 = static_cast<std::size_t>(std::clamp(std::ceil(cx + reach), 0.0, static_cast<double>(W)));
        for (std::size_t y = y0; y < y1; ++y)
            for (std::size_t x = x0; x < x1; ++x) {
                const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
                const double u = dx * ct + dy * st, w = -dx * st + dy * ct;
                bool inside = false;
                switch (kind) {
                    case ShapeKind::rectangle: inside = std::abs(u) <= a && std::abs(w) <= b; break;
                    case ShapeKind::ellipse: inside = (u / a) * (u / a) + (w / b) * (w / b) <= 1.0; break;
                    case ShapeKind::blob: {
                        const double phi = std::atan2(w, u);
                        const double rad = a * (1.0 + 0.25 * std::sin(3.0 * phi + w1) + 0.15 * std::sin(5.0 * phi + w2));
                        inside = dx * dx + dy * dy <= rad * rad;
                        break;
                    }
                }
                if (!inside) continue;
                s.labels[y * W + x] = static_cast<std::uint8_t>(cls);
                const double m = tex.at(static_cast<double>(x), static_cast<double>(y), extent);
                for (std::size_t k = 0; k < 3; ++k) rgb[(y * W + x) * 3 + k] = col[k] * m;
            }
    }

    const auto hue = hue_rotation_matrix(spec.hue_rotation);
    const bool rotate = spec.hue_rotation != 0.0;
    for (std::size_t p = 0; p < H * W; ++p) {
        double r = rgb[p * 3], g = rgb[p * 3 + 1], b = rgb[p * 3 + 2];
        if (rotate) rotate_hue(hue, r, g, b);
        const double out[3] = {r, g, b};
        for (std::size_t k = 0; k < 3; ++k) {
            double val = out[k] + spec.illumination;
            if (spec.noise_sigma > 0) val += rng.normal(0.0, spec.noise_sigma);
            s.image[p * 3 + k] = static_cast<float>(std::clamp(val, 0.0, 1.0));
        }
    }
    return s;
}

}  // namespace sia

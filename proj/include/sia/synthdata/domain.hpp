#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "sia/util/text.hpp"

namespace sia {

inline constexpr std::array<const char*, 5> kClassNames{"Background", "Rigid Plastic", "Cardboard", "Metal",
                                                         "Soft Plastic"};

enum ClassId : std::uint8_t { kBackground = 0, kRigidPlastic = 1, kCardboard = 2, kMetal = 3, kSoftPlastic = 4 };

using Rgb = std::array<double, 3>;

/// Appearance and layout statistics of one synthetic domain.
///
/// Each foreground class is included in a scene independently with
/// probability `presence[c]`; an included class receives between
/// `objects_min` and `objects_max` instances (at least one). `co_occurrence`
/// is the probability that a scene holding only minor classes (rigid plastic,
/// metal) also receives a major class (cardboard, soft plastic).
struct DomainSpec {
    std::size_t height = 64;
    std::size_t width = 64;
    std::array<Rgb, 5> color{{{0.36, 0.34, 0.31},
                              {0.28, 0.52, 0.74},
                              {0.70, 0.54, 0.33},
                              {0.58, 0.60, 0.62},
                              {0.76, 0.34, 0.52}}};
    std::array<double, 5> spread{0.03, 0.06, 0.05, 0.05, 0.06};
    std::array<double, 5> presence{1.0, 0.5, 0.6, 0.3, 0.5};
    std::array<double, 5> size_scale{1.0, 0.9, 1.25, 0.7, 1.0};
    double illumination = 0.0;  // additive brightness offset
    double hue_rotation = 0.0;  // degrees, rotation about the gray axis
    double noise_sigma = 0.01;
    double texture_frequency = 1.0;
    std::size_t objects_min = 1;
    std::size_t objects_max = 2;
    double radius_min = 5.0;
    double radius_max = 11.0;
    double co_occurrence = 0.0;

    std::vector<std::string> violations() const {
        std::vector<std::string> out;
        if (height < 16 || width < 16) out.push_back("image extents must be >= 16");
        for (std::size_t c = 0; c < 5; ++c) {
            for (double v : color[c])
                if (!(v >= 0.0 && v <= 1.0)) out.push_back("color mean of class " + std::to_string(c) + " outside [0,1]");
            if (!(spread[c] >= 0.0)) out.push_back("spread must be >= 0");
            if (!(presence[c] >= 0.0 && presence[c] <= 1.0)) out.push_back("presence must be in [0,1]");
            if (!(size_scale[c] > 0.0)) out.push_back("size_scale must be > 0");
        }
        if (!(noise_sigma >= 0.0)) out.push_back("noise_sigma must be >= 0");
        if (!(texture_frequency >= 0.0)) out.push_back("texture_frequency must be >= 0");
        if (objects_min > objects_max) out.push_back("objects_min must be <= objects_max");
        if (!(radius_min > 0.0 && radius_min <= radius_max)) out.push_back("radius range must satisfy 0 < min <= max");
        if (!(co_occurrence >= 0.0 && co_occurrence <= 1.0)) out.push_back("co_occurrence must be in [0,1]");
        return out;
    }

    bool operator==(const DomainSpec&) const = default;
};

/// The default target domain: a hue, illumination, noise and texture shift of
/// the default source domain.
inline DomainSpec default_target_spec() {
    DomainSpec t;
    t.hue_rotation = 35.0;
    t.illumination = -0.06;
    t.noise_sigma = 0.04;
    t.texture_frequency = 1.6;
    return t;
}

namespace domain_detail {

inline std::string fmt_rgb(const Rgb& c) { return format_double_list({c[0], c[1], c[2]}); }

inline std::string fmt_array(const std::array<double, 5>& a) { return format_double_list({a.begin(), a.end()}); }

inline std::array<double, 5> parse_array5(const std::string& v, const std::string& key) {
    const auto xs = parse_double_list(v);
    if (xs.size() != 5) throw Error(key + ": expected 5 comma-separated values");
    return {xs[0], xs[1], xs[2], xs[3], xs[4]};
}

}  // namespace domain_detail

/// Flat key/value form, in a fixed key order.
inline std::vector<std::pair<std::string, std::string>> to_kv(const DomainSpec& s) {
    using namespace domain_detail;
    std::vector<std::pair<std::string, std::string>> kv{
        {"height", std::to_string(s.height)},
        {"width", std::to_string(s.width)},
    };
    for (std::size_t c = 0; c < 5; ++c) kv.emplace_back("color" + std::to_string(c), fmt_rgb(s.color[c]));
    kv.emplace_back("spread", fmt_array(s.spread));
    kv.emplace_back("presence", fmt_array(s.presence));
    kv.emplace_back("size_scale", fmt_array(s.size_scale));
    kv.emplace_back("illumination", format_double(s.illumination));
    kv.emplace_back("hue_rotation", format_double(s.hue_rotation));
    kv.emplace_back("noise_sigma", format_double(s.noise_sigma));
    kv.emplace_back("texture_frequency", format_double(s.texture_frequency));
    kv.emplace_back("objects_min", std::to_string(s.objects_min));
    kv.emplace_back("objects_max", std::to_string(s.objects_max));
    kv.emplace_back("radius_min", format_double(s.radius_min));
    kv.emplace_back("radius_max", format_double(s.radius_max));
    kv.emplace_back("co_occurrence", format_double(s.co_occurrence));
    return kv;
}

/// Applies one key to the spec; returns false for an unknown key.
inline bool set_domain_key(DomainSpec& s, const std::string& key, const std::string& value) {
    using namespace domain_detail;
    if (key == "height") s.height = parse_u64(value);
    else if (key == "width") s.width = parse_u64(value);
    else if (key.size() == 6 && key.rfind("color", 0) == 0 && key[5] >= '0' && key[5] <= '4') {
        const auto xs = parse_double_list(value);
        if (xs.size() != 3) throw Error(key + ": expected r, g, b");
        s.color[static_cast<std::size_t>(key[5] - '0')] = {xs[0], xs[1], xs[2]};
    } else if (key == "spread") s.spread = parse_array5(value, key);
    else if (key == "presence") s.presence = parse_array5(value, key);
    else if (key == "size_scale") s.size_scale = parse_array5(value, key);
    else if (key == "illumination") s.illumination = parse_double(value);
    else if (key == "hue_rotation") s.hue_rotation = parse_double(value);
    else if (key == "noise_sigma") s.noise_sigma = parse_double(value);
    else if (key == "texture_frequency") s.texture_frequency = parse_double(value);
    else if (key == "objects_min") s.objects_min = parse_u64(value);
    else if (key == "objects_max") s.objects_max = parse_u64(value);
    else if (key == "radius_min") s.radius_min = parse_double(value);
    else if (key == "radius_max") s.radius_max = parse_double(value);
    else if (key == "co_occurrence") s.co_occurrence = parse_double(value);
    else return false;
    return true;
}

}  // namespace sia

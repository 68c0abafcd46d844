#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "sia/numerics/layers.hpp"
#include "sia/numerics/tensor.hpp"

namespace sia {

struct SegNetConfig {
    std::vector<std::size_t> channels{8, 16, 32};  // one entry per encoder stage
    std::size_t decoder_width = 16;
    std::size_t num_classes = kNumClasses;
    std::size_t in_channels = 3;

    std::size_t stages() const { return channels.size(); }

    /// Empty when valid; otherwise one message per violated constraint.
    std::vector<std::string> violations() const {
        std::vector<std::string> out;
        if (channels.size() < 2 || channels.size() > 4)
            out.push_back("encoder stage count must be in [2,4], got " + std::to_string(channels.size()));
        for (std::size_t i = 0; i < channels.size(); ++i) {
            if (channels[i] == 0) out.push_back("stage " + std::to_string(i) + " has zero channels");
            if (i > 0 && channels[i] < channels[i - 1])
                out.push_back("channels must be non-decreasing across stages");
        }
        if (decoder_width == 0) out.push_back("decoder width must be positive");
        if (num_classes < 2) out.push_back("num_classes must be >= 2");
        if (in_channels == 0) out.push_back("in_channels must be positive");
        return out;
    }

    bool operator==(const SegNetConfig&) const = default;
};

/// One feature map per encoder stage; stage i has extent H/2^(i+1) x W/2^(i+1).
template <typename T>
using FeaturePyramid = std::vector<Tensor<T>>;

namespace segnet_detail {

inline std::string enc_name(std::size_t stage, std::size_t conv, const char* field) {
    return "enc.s" + std::to_string(stage) + ".conv" + std::to_string(conv) + "." + field;
}
inline std::string proj_name(std::size_t level, const char* field) {
    return "dec.proj" + std::to_string(level) + "." + field;
}

template <typename T>
void add_conv(ParamSet<T>& p, const std::string& prefix, std::size_t out, std::size_t in, std::size_t k, Rng& rng,
              double gain) {
    Tensor<T> w({out, in, k, k});
    const double stddev = std::sqrt(gain / static_cast<double>(in * k * k));
    for (auto& v : w.values()) v = static_cast<T>(rng.normal(0.0, stddev));
    p.emplace(prefix + ".w", std::move(w));
    p.emplace(prefix + ".b", Tensor<T>({out}));
}

}  // namespace segnet_detail

/// Encoder: per stage, a stride-2 3x3 conv and a stride-1 3x3 conv, each
/// followed by ReLU. Decoder: 1x1 projection of every level, bilinear
/// upsampling to the stage-0 resolution, concatenation, 1x1 fuse + ReLU,
/// 1x1 classifier, and a final x2 upsample to the input resolution.
class SegNet {
public:
    explicit SegNet(SegNetConfig cfg) : cfg_(std::move(cfg)) {
        const auto v = cfg_.violations();
        if (!v.empty()) throw Error("invalid SegNetConfig: " + v.front());
    }

    const SegNetConfig& config() const { return cfg_; }

    /// He-normal weights (std = sqrt(2 / fan_in)) and zero biases.
    ParamSet<float> init_random(std::uint64_t seed) const {
        Rng rng(seed);
        ParamSet<float> p;
        std::size_t in = cfg_.in_channels;
        for (std::size_t s = 0; s < cfg_.stages(); ++s) {
            const std::size_t c = cfg_.channels[s];
            segnet_detail::add_conv(p, "enc.s" + std::to_string(s) + ".conv0", c, in, 3, rng, 2.0);
            segnet_detail::add_conv(p, "enc.s" + std::to_string(s) + ".conv1", c, c, 3, rng, 2.0);
            in = c;
        }
        for (std::size_t s = 0; s < cfg_.stages(); ++s)
            segnet_detail::add_conv(p, "dec.proj" + std::to_string(s), cfg_.decoder_width, cfg_.channels[s], 1,
                                    rng, 1.0);
        segnet_detail::add_conv(p, "dec.fuse", cfg_.decoder_width, cfg_.decoder_width * cfg_.stages(), 1, rng, 2.0);
        segnet_detail::add_conv(p, "dec.cls", cfg_.num_classes, cfg_.decoder_width, 1, rng, 1.0);
        return p;
    }

    static bool is_encoder_param(const std::string& name) { return name.rfind("enc.", 0) == 0; }

    static ParamSet<float> encoder_params(const ParamSet<float>& p) {
        ParamSet<float> out;
        for (const auto& [k, v] : p)
            if (is_encoder_param(k)) out.emplace(k, v);
        return out;
    }

    void check_input(const Shape& s) const {
        if (s.size() != 4 || s[1] != cfg_.in_channels)
            throw ShapeError("segnet: expected N x " + std::to_string(cfg_.in_channels) + " x H x W input, got " +
                             shape_str(s));
        const std::size_t div = std::size_t{1} << cfg_.stages();
        if (s[2] % div != 0 || s[3] % div != 0 || s[2] == 0 || s[3] == 0)
            throw ShapeError("segnet: input extents " + shape_str(s) + " not divisible by " + std::to_string(div));
    }

    template <typename T>
    struct Cache {
        Tensor<T> input;
        // per stage: conv0 input, conv0 pre-activation, conv1 input (= relu(conv0)), conv1 pre-activation
        std::vector<Tensor<T>> conv_in0, pre0, conv_in1, pre1;
        FeaturePyramid<T> pyramid;
        std::vector<Tensor<T>> projected;  // per level, before upsampling
        Tensor<T> concat, fuse_pre, fuse_act, cls_out, logits;
    };

    template <typename T>
    FeaturePyramid<T> encode(const ParamSet<T>& p, const Tensor<T>& images) const {
        Cache<T> c;
        run_encoder(p, images, c);
        return std::move(c.pyramid);
    }

    /// Encoder-only pass whose cache feeds backward() with empty grad_logits.
    template <typename T>
    Cache<T> encode_cached(const ParamSet<T>& p, const Tensor<T>& images) const {
        Cache<T> c;
        run_encoder(p, images, c);
        return c;
    }

    template <typename T>
    Tensor<T> forward(const ParamSet<T>& p, const Tensor<T>& images) const {
        return forward_cached(p, images).logits;
    }

    template <typename T>
    Cache<T> forward_cached(const ParamSet<T>& p, const Tensor<T>& images) const {
        Cache<T> c;
        run_encoder(p, images, c);
        const std::size_t S = cfg_.stages();
        std::vector<Tensor<T>> up;
        for (std::size_t s = 0; s < S; ++s) {
            c.projected.push_back(conv2d(c.pyramid[s], p.at(segnet_detail::proj_name(s, "w")),
                                         p.at(segnet_detail::proj_name(s, "b")), 1, 0));
            up.push_back(bilinear_upsample(c.projected[s], std::size_t{1} << s));
        }
        c.concat = concat_channels(up);
        c.fuse_pre = conv2d(c.concat, p.at("dec.fuse.w"), p.at("dec.fuse.b"), 1, 0);
        c.fuse_act = relu(c.fuse_pre);
        c.cls_out = conv2d(c.fuse_act, p.at("dec.cls.w"), p.at("dec.cls.b"), 1, 0);
        c.logits = bilinear_upsample(c.cls_out, 2);
        return c;
    }

    /// Parameter gradients given dL/dlogits (may be empty to skip the decoder)
    /// and optional extra dL/dfeature terms per pyramid level. Decoder
    /// gradients are present only when grad_logits is non-empty.
    template <typename T>
    ParamSet<T> backward(const ParamSet<T>& p, const Cache<T>& c, const Tensor<T>& grad_logits,
                         const std::vector<std::optional<Tensor<T>>>& extra_pyramid_grads = {}) const {
        const std::size_t S = cfg_.stages();
        ParamSet<T> g;
        std::vector<Tensor<T>> gpyr(S);
        for (std::size_t s = 0; s < S; ++s) gpyr[s] = Tensor<T>(c.pyramid[s].shape());

        if (!grad_logits.empty()) {
            auto gcls = bilinear_upsample_backward(grad_logits, c.cls_out.shape(), 2);
            auto cls = conv2d_backward(gcls, c.fuse_act, p.at("dec.cls.w"), 1, 0);
            g.emplace("dec.cls.w", std::move(cls.weight));
            g.emplace("dec.cls.b", std::move(cls.bias));
            auto gfuse = relu_backward(cls.input, c.fuse_pre);
            auto fuse = conv2d_backward(gfuse, c.concat, p.at("dec.fuse.w"), 1, 0);
            g.emplace("dec.fuse.w", std::move(fuse.weight));
            g.emplace("dec.fuse.b", std::move(fuse.bias));
            std::vector<std::size_t> parts(S, cfg_.decoder_width);
            auto gup = split_channels(fuse.input, parts);
            for (std::size_t s = 0; s < S; ++s) {
                auto gproj = bilinear_upsample_backward(gup[s], c.projected[s].shape(), std::size_t{1} << s);
                auto pr = conv2d_backward(gproj, c.pyramid[s], p.at(segnet_detail::proj_name(s, "w")), 1, 0);
                g.emplace(segnet_detail::proj_name(s, "w"), std::move(pr.weight));
                g.emplace(segnet_detail::proj_name(s, "b"), std::move(pr.bias));
                gpyr[s] = std::move(pr.input);
            }
        }
        for (std::size_t s = 0; s < extra_pyramid_grads.size() && s < S; ++s)
            if (extra_pyramid_grads[s]) {
                require_shape(*extra_pyramid_grads[s], gpyr[s].shape(), "segnet backward pyramid grad");
                for (std::size_t i = 0; i < gpyr[s].numel(); ++i) gpyr[s][i] += (*extra_pyramid_grads[s])[i];
            }

        Tensor<T> carry;  // gradient w.r.t. the output of stage s, from stage s+1
        for (std::size_t si = S; si-- > 0;) {
            Tensor<T> gout = gpyr[si];
            if (!carry.empty())
                for (std::size_t i = 0; i < gout.numel(); ++i) gout[i] += carry[i];
            auto g1 = relu_backward(gout, c.pre1[si]);
            auto conv1 = conv2d_backward(g1, c.conv_in1[si], p.at(segnet_detail::enc_name(si, 1, "w")), 1, 1);
            g.emplace(segnet_detail::enc_name(si, 1, "w"), std::move(conv1.weight));
            g.emplace(segnet_detail::enc_name(si, 1, "b"), std::move(conv1.bias));
            auto g0 = relu_backward(conv1.input, c.pre0[si]);
            auto conv0 = conv2d_backward(g0, c.conv_in0[si], p.at(segnet_detail::enc_name(si, 0, "w")), 2, 1);
            g.emplace(segnet_detail::enc_name(si, 0, "w"), std::move(conv0.weight));
            g.emplace(segnet_detail::enc_name(si, 0, "b"), std::move(conv0.bias));
            carry = std::move(conv0.input);
        }
        return g;
    }

private:
    template <typename T>
    void run_encoder(const ParamSet<T>& p, const Tensor<T>& images, Cache<T>& c) const {
        check_input(images.shape());
        c.input = images;
        const Tensor<T>* x = &c.input;
        for (std::size_t s = 0; s < cfg_.stages(); ++s) {
            c.conv_in0.push_back(*x);
            c.pre0.push_back(conv2d(*x, p.at(segnet_detail::enc_name(s, 0, "w")),
                                    p.at(segnet_detail::enc_name(s, 0, "b")), 2, 1));
            c.conv_in1.push_back(relu(c.pre0.back()));
            c.pre1.push_back(conv2d(c.conv_in1.back(), p.at(segnet_detail::enc_name(s, 1, "w")),
                                    p.at(segnet_detail::enc_name(s, 1, "b")), 1, 1));
            c.pyramid.push_back(relu(c.pre1.back()));
            x = &c.pyramid.back();
        }
    }

    SegNetConfig cfg_;
};

}  // namespace sia

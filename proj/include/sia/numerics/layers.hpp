#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <tuple>
#include <vector>

#include <Eigen/Core>

#include "sia/numerics/tensor.hpp"

namespace sia {

inline constexpr std::uint8_t kIgnoreLabel = 255;
inline constexpr std::size_t kNumClasses = 5;

/// Per-pixel class ids, shape N x H x W.
using LabelMap = Tensor<std::uint8_t>;

namespace detail {

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// Range of output columns [lo, hi) whose input column ox*stride - pad + kx lies in [0, in).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in, std::size_t stride,
                                                       std::size_t pad, std::size_t k) {
    const long s = static_cast<long>(stride);
    const long p = static_cast<long>(pad);
    const long kk = static_cast<long>(k);
    long lo = p - kk > 0 ? (p - kk + s - 1) / s : 0;
    const long last = static_cast<long>(in) - 1 + p - kk;
    long hi = last < 0 ? 0 : last / s + 1;
    hi = std::min(hi, static_cast<long>(out));
    lo = std::min(lo, hi);
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace detail

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
    std::size_t C, H, W, K, stride, pad, OH, OW;
};

// Unfolds one image (C x H x W) into a (C*K*K) x (OH*OW) matrix; padding reads as zero.
template <typename T>
void im2col(const T* src, const ConvGeometry& g, RowMatrix<T>& col) {
    col.setZero(static_cast<Eigen::Index>(g.C * g.K * g.K), static_cast<Eigen::Index>(g.OH * g.OW));
    for (std::size_t c = 0; c < g.C; ++c)
        for (std::size_t ky = 0; ky < g.K; ++ky) {
            const auto [oy0, oy1] = valid_range(g.OH, g.H, g.stride, g.pad, ky);
            for (std::size_t kx = 0; kx < g.K; ++kx) {
                const auto [ox0, ox1] = valid_range(g.OW, g.W, g.stride, g.pad, kx);
                T* dst = col.row(static_cast<Eigen::Index>((c * g.K + ky) * g.K + kx)).data();
                for (std::size_t oy = oy0; oy < oy1; ++oy) {
                    const T* row = src + (c * g.H + oy * g.stride + ky - g.pad) * g.W;
                    for (std::size_t ox = ox0; ox < ox1; ++ox)
                        dst[oy * g.OW + ox] = row[ox * g.stride + kx - g.pad];
                }
            }
        }
}

// Adjoint of im2col: scatters the column matrix back onto the image.
template <typename T>
void col2im(const RowMatrix<T>& col, const ConvGeometry& g, T* dst) {
    for (std::size_t c = 0; c < g.C; ++c)
        for (std::size_t ky = 0; ky < g.K; ++ky) {
            const auto [oy0, oy1] = valid_range(g.OH, g.H, g.stride, g.pad, ky);
            for (std::size_t kx = 0; kx < g.K; ++kx) {
                const auto [ox0, ox1] = valid_range(g.OW, g.W, g.stride, g.pad, kx);
                const T* src = col.row(static_cast<Eigen::Index>((c * g.K + ky) * g.K + kx)).data();
                for (std::size_t oy = oy0; oy < oy1; ++oy) {
                    T* row = dst + (c * g.H + oy * g.stride + ky - g.pad) * g.W;
                    for (std::size_t ox = ox0; ox < ox1; ++ox) row[ox * g.stride + kx - g.pad] += src[oy * g.OW + ox];
                }
            }
        }
}

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& weight, std::size_t stride, std::size_t pad,
                           const char* what) {
    require_rank(input, 4, std::string(what) + " input");
    require_rank(weight, 4, std::string(what) + " weight");
    if (weight.dim(2) != weight.dim(3))
        throw ShapeError(std::string(what) + ": kernel must be square, got weight " + shape_str(weight.shape()));
    if (weight.dim(1) != input.dim(1))
        throw ShapeError(std::string(what) + ": input " + shape_str(input.shape()) + " and weight " +
                         shape_str(weight.shape()) + " disagree on input channels");
    if (stride == 0) throw ShapeError(std::string(what) + ": stride must be positive");
    const std::size_t H = input.dim(2), W = input.dim(3), K = weight.dim(2);
    if (H + 2 * pad < K || W + 2 * pad < K)
        throw ShapeError(std::string(what) + ": input " + shape_str(input.shape()) + " too small for weight " +
                         shape_str(weight.shape()) + " with pad " + std::to_string(pad));
    return {input.dim(1), H, W, K, stride, pad, conv_out_extent(H, K, stride, pad), conv_out_extent(W, K, stride, pad)};
}

}  // namespace detail

/// Cross-correlation. input N x C x H x W, weight O x C x K x K, bias O.
/// Output extent is floor((H + 2 pad - K) / stride) + 1 per spatial axis.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad) {
    const auto g = detail::conv_geometry(input, weight, stride, pad, "conv2d");
    const std::size_t N = input.dim(0), O = weight.dim(0);
    if (bias.rank() != 1 || bias.dim(0) != O)
        throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
    Tensor<T> out({N, O, g.OH, g.OW});
    const Eigen::Map<const detail::RowMatrix<T>> wmat(weight.data(), static_cast<Eigen::Index>(O),
                                                      static_cast<Eigen::Index>(g.C * g.K * g.K));
    detail::RowMatrix<T> col;
    const auto P = static_cast<Eigen::Index>(g.OH * g.OW);
    for (std::size_t n = 0; n < N; ++n) {
        detail::im2col(&input.at(n, 0, 0, 0), g, col);
        Eigen::Map<detail::RowMatrix<T>> omat(&out.at(n, 0, 0, 0), static_cast<Eigen::Index>(O), P);
        omat.noalias() = wmat * col;
        for (std::size_t o = 0; o < O; ++o) omat.row(static_cast<Eigen::Index>(o)).array() += bias[o];
    }
    require_finite(out, "conv2d");
    return out;
}

template <typename T>
struct ConvGrads {
    Tensor<T> input;
    Tensor<T> weight;
    Tensor<T> bias;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& input, const Tensor<T>& weight,
                             std::size_t stride, std::size_t pad) {
    const auto g = detail::conv_geometry(input, weight, stride, pad, "conv2d_backward");
    const std::size_t N = input.dim(0), O = weight.dim(0);
    require_shape(grad_out, {N, O, g.OH, g.OW}, "conv2d_backward grad_out");

    ConvGrads<T> r{Tensor<T>(input.shape()), Tensor<T>(weight.shape()), Tensor<T>({O})};
    const auto CKK = static_cast<Eigen::Index>(g.C * g.K * g.K);
    const auto P = static_cast<Eigen::Index>(g.OH * g.OW);
    const Eigen::Map<const detail::RowMatrix<T>> wmat(weight.data(), static_cast<Eigen::Index>(O), CKK);
    Eigen::Map<detail::RowMatrix<T>> gw(r.weight.data(), static_cast<Eigen::Index>(O), CKK);
    detail::RowMatrix<T> col, gcol;
    for (std::size_t n = 0; n < N; ++n) {
        const Eigen::Map<const detail::RowMatrix<T>> gmat(&grad_out.at(n, 0, 0, 0), static_cast<Eigen::Index>(O), P);
        for (std::size_t o = 0; o < O; ++o) r.bias[o] += gmat.row(static_cast<Eigen::Index>(o)).sum();
        detail::im2col(&input.at(n, 0, 0, 0), g, col);
        gw.noalias() += gmat * col.transpose();
        gcol.noalias() = wmat.transpose() * gmat;
        detail::col2im(gcol, g, &r.input.at(n, 0, 0, 0));
    }
    return r;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    if (x.empty()) throw ShapeError("relu: empty tensor");
    Tensor<T> y = x;
    for (auto& v : y.values()) v = v > T{0} ? v : T{0};
    return y;
}

/// Gradient passes where the forward input was strictly positive.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& input) {
    require_shape(grad_out, input.shape(), "relu_backward");
    Tensor<T> g = grad_out;
    for (std::size_t i = 0; i < g.numel(); ++i)
        if (!(input[i] > T{0})) g[i] = T{0};
    return g;
}

namespace detail {

struct LerpTap {
    std::size_t lo;
    std::size_t hi;
    double frac;
};

// align_corners=false: src = (dst + 0.5) / factor - 0.5, clamped below at 0;
// the upper neighbour is clamped to the last row/column.
inline std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t factor) {
    std::vector<LerpTap> taps(in * factor);
    for (std::size_t d = 0; d < taps.size(); ++d) {
        double src = (static_cast<double>(d) + 0.5) / static_cast<double>(factor) - 0.5;
        if (src < 0) src = 0;
        auto lo = static_cast<std::size_t>(src);
        if (lo > in - 1) lo = in - 1;
        const std::size_t hi = std::min(lo + 1, in - 1);
        taps[d] = {lo, hi, src - static_cast<double>(lo)};
    }
    return taps;
}

}  // namespace detail

/// Bilinear upsampling by an integer factor with half-pixel (align_corners=false)
/// sampling: output pixel d reads input coordinate max(0, (d + 0.5) / factor - 0.5).
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, std::size_t factor) {
    require_rank(x, 4, "bilinear_upsample");
    if (x.empty()) throw ShapeError("bilinear_upsample: empty tensor");
    if (factor < 1) throw ShapeError("bilinear_upsample: factor must be >= 1");
    if (factor == 1) return x;
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const auto ty = detail::lerp_taps(H, factor);
    const auto tx = detail::lerp_taps(W, factor);
    Tensor<T> y({N, C, H * factor, W * factor});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const T* src = &x.at(n, c, 0, 0);
            T* dst = &y.at(n, c, 0, 0);
            for (std::size_t oy = 0; oy < ty.size(); ++oy) {
                const auto& a = ty[oy];
                const T fy = static_cast<T>(a.frac);
                for (std::size_t ox = 0; ox < tx.size(); ++ox) {
                    const auto& b = tx[ox];
                    const T fx = static_cast<T>(b.frac);
                    const T top = src[a.lo * W + b.lo] * (1 - fx) + src[a.lo * W + b.hi] * fx;
                    const T bot = src[a.hi * W + b.lo] * (1 - fx) + src[a.hi * W + b.hi] * fx;
                    dst[oy * tx.size() + ox] = top * (1 - fy) + bot * fy;
                }
            }
        }
    return y;
}

template <typename T>
Tensor<T> bilinear_upsample_backward(const Tensor<T>& grad_out, const Shape& input_shape, std::size_t factor) {
    if (factor < 1) throw ShapeError("bilinear_upsample_backward: factor must be >= 1");
    const std::size_t N = input_shape.at(0), C = input_shape.at(1), H = input_shape.at(2), W = input_shape.at(3);
    require_shape(grad_out, {N, C, H * factor, W * factor}, "bilinear_upsample_backward");
    if (factor == 1) return grad_out;
    const auto ty = detail::lerp_taps(H, factor);
    const auto tx = detail::lerp_taps(W, factor);
    Tensor<T> g(input_shape);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const T* src = &grad_out.at(n, c, 0, 0);
            T* dst = &g.at(n, c, 0, 0);
            for (std::size_t oy = 0; oy < ty.size(); ++oy) {
                const auto& a = ty[oy];
                const T fy = static_cast<T>(a.frac);
                for (std::size_t ox = 0; ox < tx.size(); ++ox) {
                    const auto& b = tx[ox];
                    const T fx = static_cast<T>(b.frac);
                    const T v = src[oy * tx.size() + ox];
                    dst[a.lo * W + b.lo] += v * (1 - fy) * (1 - fx);
                    dst[a.lo * W + b.hi] += v * (1 - fy) * fx;
                    dst[a.hi * W + b.lo] += v * fy * (1 - fx);
                    dst[a.hi * W + b.hi] += v * fy * fx;
                }
            }
        }
    return g;
}

/// Softmax over axis 1 of an N x K x H x W tensor.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
    require_rank(logits, 4, "softmax_channels");
    if (logits.empty()) throw ShapeError("softmax_channels: empty tensor");
    require_finite(logits, "softmax_channels input");
    const std::size_t N = logits.dim(0), K = logits.dim(1), P = logits.dim(2) * logits.dim(3);
    Tensor<T> y(logits.shape());
    for (std::size_t n = 0; n < N; ++n) {
        const T* x = &logits.at(n, 0, 0, 0);
        T* out = &y.at(n, 0, 0, 0);
        for (std::size_t p = 0; p < P; ++p) {
            T m = x[p];
            for (std::size_t k = 1; k < K; ++k) m = std::max(m, x[k * P + p]);
            T sum = 0;
            for (std::size_t k = 0; k < K; ++k) {
                out[k * P + p] = std::exp(x[k * P + p] - m);
                sum += out[k * P + p];
            }
            for (std::size_t k = 0; k < K; ++k) out[k * P + p] /= sum;
        }
    }
    return y;
}

template <typename T>
Tensor<T> softmax_channels_backward(const Tensor<T>& grad_out, const Tensor<T>& probs) {
    require_shape(grad_out, probs.shape(), "softmax_channels_backward");
    const std::size_t N = probs.dim(0), K = probs.dim(1), P = probs.dim(2) * probs.dim(3);
    Tensor<T> g(probs.shape());
    for (std::size_t n = 0; n < N; ++n) {
        const T* y = &probs.at(n, 0, 0, 0);
        const T* gy = &grad_out.at(n, 0, 0, 0);
        T* gx = &g.at(n, 0, 0, 0);
        for (std::size_t p = 0; p < P; ++p) {
            T dot = 0;
            for (std::size_t k = 0; k < K; ++k) dot += y[k * P + p] * gy[k * P + p];
            for (std::size_t k = 0; k < K; ++k) gx[k * P + p] = y[k * P + p] * (gy[k * P + p] - dot);
        }
    }
    return g;
}

template <typename T>
struct LossAndGrad {
    T loss = 0;
    Tensor<T> grad;
    std::size_t counted = 0;  // non-ignored pixels
};

/// Mean over non-ignored pixels of -log softmax(logits)[label]. When
/// `normalizer` is non-zero it replaces the pixel count as the divisor, so
/// per-sample pieces of one batch can be summed into the batch mean.
template <typename T>
LossAndGrad<T> cross_entropy_ignore(const Tensor<T>& logits, const LabelMap& labels, std::size_t normalizer = 0) {
    require_rank(logits, 4, "cross_entropy_ignore logits");
    const std::size_t N = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
    require_shape(labels, {N, H, W}, "cross_entropy_ignore labels");
    const std::size_t P = H * W;
    std::size_t counted = 0;
    for (auto l : labels.values()) {
        if (l == kIgnoreLabel) continue;
        if (l >= K)
            throw Error("cross_entropy_ignore: label " + std::to_string(l) + " out of range for " +
                        std::to_string(K) + " classes");
        ++counted;
    }
    LossAndGrad<T> r{T{0}, Tensor<T>(logits.shape()), counted};
    const std::size_t denom = normalizer ? normalizer : counted;
    if (counted == 0) return r;
    const Tensor<T> probs = softmax_channels(logits);
    double total = 0;
    const T inv = T{1} / static_cast<T>(denom);
    for (std::size_t n = 0; n < N; ++n) {
        const T* x = &logits.at(n, 0, 0, 0);
        const T* pr = &probs.at(n, 0, 0, 0);
        T* g = &r.grad.at(n, 0, 0, 0);
        const std::uint8_t* lab = labels.data() + n * P;
        for (std::size_t p = 0; p < P; ++p) {
            const auto l = lab[p];
            if (l == kIgnoreLabel) continue;
            T m = x[p];
            for (std::size_t k = 1; k < K; ++k) m = std::max(m, x[k * P + p]);
            T s = 0;
            for (std::size_t k = 0; k < K; ++k) s += std::exp(x[k * P + p] - m);
            total += static_cast<double>(std::log(s) + m - x[l * P + p]);
            for (std::size_t k = 0; k < K; ++k) g[k * P + p] = pr[k * P + p] * inv;
            g[l * P + p] -= inv;
        }
    }
    r.loss = static_cast<T>(total / static_cast<double>(denom));
    if (!std::isfinite(r.loss)) throw NumericError("cross_entropy_ignore: non-finite loss");
    return r;
}

/// Mean over the spatial axes: N x C x H x W -> N x C x 1 x 1.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    require_rank(x, 4, "global_avg_pool");
    const std::size_t N = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
    Tensor<T> y({N, C, 1, 1});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const T* src = &x.at(n, c, 0, 0);
            T s = 0;
            for (std::size_t p = 0; p < P; ++p) s += src[p];
            y.at(n, c, 0, 0) = s / static_cast<T>(P);
        }
    return y;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& grad_out, const Shape& input_shape) {
    const std::size_t N = input_shape.at(0), C = input_shape.at(1), P = input_shape.at(2) * input_shape.at(3);
    require_shape(grad_out, {N, C, 1, 1}, "global_avg_pool_backward");
    Tensor<T> g(input_shape);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const T v = grad_out.at(n, c, 0, 0) / static_cast<T>(P);
            T* dst = &g.at(n, c, 0, 0);
            for (std::size_t p = 0; p < P; ++p) dst[p] = v;
        }
    return g;
}

/// Concatenates NCHW tensors with matching N, H, W along the channel axis.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    const auto& first = parts.front();
    require_rank(first, 4, "concat_channels");
    std::size_t C = 0;
    for (const auto& p : parts) {
        require_rank(p, 4, "concat_channels");
        if (p.dim(0) != first.dim(0) || p.dim(2) != first.dim(2) || p.dim(3) != first.dim(3))
            throw ShapeError("concat_channels: " + shape_str(p.shape()) + " vs " + shape_str(first.shape()));
        C += p.dim(1);
    }
    const std::size_t N = first.dim(0), P = first.dim(2) * first.dim(3);
    Tensor<T> out({N, C, first.dim(2), first.dim(3)});
    for (std::size_t n = 0; n < N; ++n) {
        T* dst = &out.at(n, 0, 0, 0);
        for (const auto& p : parts) {
            const T* src = &p.at(n, 0, 0, 0);
            std::copy(src, src + p.dim(1) * P, dst);
            dst += p.dim(1) * P;
        }
    }
    return out;
}

/// Splits a channel-concatenated gradient back into per-part gradients.
template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x, const std::vector<std::size_t>& channels) {
    require_rank(x, 4, "split_channels");
    std::size_t total = 0;
    for (auto c : channels) total += c;
    if (total != x.dim(1)) throw ShapeError("split_channels: channel counts do not sum to " + shape_str(x.shape()));
    const std::size_t N = x.dim(0), P = x.dim(2) * x.dim(3);
    std::vector<Tensor<T>> out;
    for (auto c : channels) out.emplace_back(Shape{N, c, x.dim(2), x.dim(3)});
    for (std::size_t n = 0; n < N; ++n) {
        const T* src = &x.at(n, 0, 0, 0);
        for (std::size_t i = 0; i < channels.size(); ++i) {
            std::copy(src, src + channels[i] * P, &out[i].at(n, 0, 0, 0));
            src += channels[i] * P;
        }
    }
    return out;
}

}  // namespace sia

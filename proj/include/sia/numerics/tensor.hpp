#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sia/numerics/common.hpp"

namespace sia {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

/// Dense row-major array. The scalar type doubles as the precision switch:
/// training runs on Tensor<float>, gradient checks instantiate Tensor<double>.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{0})
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_numel(shape_))
            throw ShapeError("Tensor: data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // NCHW accessor.
    T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(Shape s) const { return Tensor(std::move(s), data_); }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(),
                       [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    bool operator==(const Tensor&) const = default;

private:
    Shape shape_;
    std::vector<T> data_;
};

template <typename T>
void require_finite(const Tensor<T>& t, const std::string& what) {
    if (!t.all_finite()) throw NumericError(what + ": non-finite value");
}

template <typename T>
void require_shape(const Tensor<T>& t, const Shape& expected, const std::string& what) {
    if (t.shape() != expected)
        throw ShapeError(what + ": expected " + shape_str(expected) + ", got " + shape_str(t.shape()));
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const std::string& what) {
    if (t.rank() != rank)
        throw ShapeError(what + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_str(t.shape()));
}

/// Named parameters, iterated in lexicographic order.
template <typename T>
using ParamSet = std::map<std::string, Tensor<T>>;

/// Returns the first key (in iteration order) at which the two sets differ in
/// presence or shape, or nullopt when they are soup-compatible.
template <typename T, typename U>
std::optional<std::string> first_incompatibility(const ParamSet<T>& a, const ParamSet<U>& b) {
    auto ia = a.begin();
    auto ib = b.begin();
    while (ia != a.end() && ib != b.end()) {
        if (ia->first != ib->first) return std::min(ia->first, ib->first);
        if (ia->second.shape() != ib->second.shape()) return ia->first;
        ++ia;
        ++ib;
    }
    if (ia != a.end()) return ia->first;
    if (ib != b.end()) return ib->first;
    return std::nullopt;
}

template <typename T, typename U>
bool soup_compatible(const ParamSet<T>& a, const ParamSet<U>& b) {
    return !first_incompatibility(a, b).has_value();
}

template <typename T, typename U>
void require_compatible(const ParamSet<T>& a, const ParamSet<U>& b, const std::string& what) {
    if (auto key = first_incompatibility(a, b)) {
        std::string detail = " at '" + *key + "'";
        auto ia = a.find(*key);
        auto ib = b.find(*key);
        detail += " (" + (ia == a.end() ? std::string("missing") : shape_str(ia->second.shape())) +
                  " vs " + (ib == b.end() ? std::string("missing") : shape_str(ib->second.shape())) +
                  ")";
        throw ShapeError(what + ": parameter sets are not compatible" + detail);
    }
}

template <typename U, typename T>
ParamSet<U> cast_params(const ParamSet<T>& p) {
    ParamSet<U> out;
    for (const auto& [k, v] : p) out.emplace(k, v.template cast<U>());
    return out;
}

template <typename T>
ParamSet<T> zeros_like(const ParamSet<T>& p) {
    ParamSet<T> out;
    for (const auto& [k, v] : p) out.emplace(k, Tensor<T>(v.shape()));
    return out;
}

/// a += scale * b, elementwise over compatible sets.
template <typename T>
void accumulate(ParamSet<T>& a, const ParamSet<T>& b, T scale = T{1}) {
    require_compatible(a, b, "accumulate");
    for (auto& [k, v] : a) {
        const auto& src = b.at(k);
        for (std::size_t i = 0; i < v.numel(); ++i) v[i] += scale * src[i];
    }
}

template <typename T>
std::size_t param_count(const ParamSet<T>& p) {
    std::size_t n = 0;
    for (const auto& [k, v] : p) n += v.numel();
    return n;
}

}  // namespace sia

#pragma once

#include <cmath>
#include <string>

#include "sia/numerics/tensor.hpp"

namespace sia {

enum class OptimizerKind { adamw, momentum };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adamw;
    double lr = 1e-3;
    double beta1 = 0.9;  // also the momentum coefficient in momentum mode
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    std::string scaled_prefix;     // parameters named with this prefix use
    double prefix_lr_scale = 1.0;  // lr * prefix_lr_scale
};

template <typename T>
struct OptimizerState {
    ParamSet<T> first_moment;
    ParamSet<T> second_moment;
    std::size_t steps = 0;
};

/// One in-place update.
///
/// adamw:    m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;
///           w <- w - lr (m_hat / (sqrt(v_hat) + eps) + wd w)
/// momentum: u <- b1 u + g;  w <- w - lr (u + wd w)
///
/// With lr == 0 the parameters are left untouched (moments still advance).
template <typename T>
void optimizer_step(ParamSet<T>& params, const ParamSet<T>& grads, OptimizerState<T>& state,
                    const OptimizerConfig& cfg) {
    require_compatible(params, grads, "optimizer_step");
    if (state.first_moment.empty()) state.first_moment = zeros_like(params);
    if (cfg.kind == OptimizerKind::adamw && state.second_moment.empty()) state.second_moment = zeros_like(params);
    require_compatible(params, state.first_moment, "optimizer_step state");
    ++state.steps;

    const T b1 = static_cast<T>(cfg.beta1);
    const T b2 = static_cast<T>(cfg.beta2);
    const T wd = static_cast<T>(cfg.weight_decay);
    const T bias1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(state.steps)));
    const T bias2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(state.steps)));

    for (auto& [name, w] : params) {
        const bool scaled = !cfg.scaled_prefix.empty() && name.rfind(cfg.scaled_prefix, 0) == 0;
        const T lr = static_cast<T>(scaled ? cfg.lr * cfg.prefix_lr_scale : cfg.lr);
        const auto& g = grads.at(name);
        auto& m = state.first_moment.at(name);
        if (!g.all_finite()) throw NumericError("optimizer_step: non-finite gradient for '" + name + "'");
        if (cfg.kind == OptimizerKind::adamw) {
            auto& v = state.second_moment.at(name);
            for (std::size_t i = 0; i < w.numel(); ++i) {
                m[i] = b1 * m[i] + (1 - b1) * g[i];
                v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
                if (lr == T{0}) continue;
                const T mh = m[i] / bias1;
                const T vh = v[i] / bias2;
                w[i] -= lr * (mh / (std::sqrt(vh) + static_cast<T>(cfg.eps)) + wd * w[i]);
            }
        } else {
            for (std::size_t i = 0; i < w.numel(); ++i) {
                m[i] = b1 * m[i] + g[i];
                if (lr == T{0}) continue;
                w[i] -= lr * (m[i] + wd * w[i]);
            }
        }
    }
}

}  // namespace sia

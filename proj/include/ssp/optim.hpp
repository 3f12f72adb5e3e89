#pragma once

// Adam with bias correction, global-norm clipping and a cosine schedule.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "ssp/errors.hpp"
#include "ssp/params.hpp"

namespace ssp {

struct AdamConfig {
    double lr = 1e-3;
    double lr_min = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip = 1.0; // <= 0 disables clipping

    bool operator==(const AdamConfig&) const = default;
};

struct AdamState {
    std::vector<double> m, v;
    std::int64_t step = 0;

    AdamState() = default;
    explicit AdamState(const ParamSet& ps) : m(ps.total_size(), 0.0), v(ps.total_size(), 0.0) {}
};

/// Cosine decay from lr to lr_min over `total` steps; `step` counts from 0.
inline double cosine_lr(const AdamConfig& c, std::int64_t step, std::int64_t total) {
    if (total <= 1) return c.lr;
    const double f = std::min(1.0, static_cast<double>(step) / static_cast<double>(total - 1));
    return c.lr_min + 0.5 * (c.lr - c.lr_min) * (1.0 + std::cos(std::numbers::pi * f));
}

/// Euclidean norm of the gradient restricted to trainable tensors.
inline double grad_norm(const ParamSet& ps, const Grads& g) {
    double s = 0.0;
    for (int id = 0; id < ps.count(); ++id) {
        if (!ps.info(id).trainable) continue;
        for (double x : g[id]) s += x * x;
    }
    return std::sqrt(s);
}

/// One Adam step at learning rate `lr`. Gradients of non-trainable tensors
/// are ignored. Returns the gradient norm before clipping.
inline double adam_update(ParamSet& ps, const Grads& g, AdamState& st, const AdamConfig& c, double lr) {
    if (st.m.size() != ps.total_size() || st.v.size() != ps.total_size() || g.values().size() != ps.total_size())
        throw ShapeError("adam_update: optimizer state does not match the parameter set");
    const double norm = grad_norm(ps, g);
    if (!std::isfinite(norm)) throw DivergenceError("adam_update: non-finite gradient at step " + std::to_string(st.step + 1));
    const double scale = (c.clip > 0.0 && norm > c.clip) ? c.clip / norm : 1.0;
    ++st.step;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.step));
    auto& p = ps.values();
    const auto& gv = g.values();
    for (int id = 0; id < ps.count(); ++id) {
        const auto& info = ps.info(id);
        if (!info.trainable) continue;
        for (std::size_t k = info.offset; k < info.offset + info.size; ++k) {
            const double gk = scale * gv[k];
            st.m[k] = c.beta1 * st.m[k] + (1.0 - c.beta1) * gk;
            st.v[k] = c.beta2 * st.v[k] + (1.0 - c.beta2) * gk * gk;
            p[k] -= lr * (st.m[k] / bc1) / (std::sqrt(st.v[k] / bc2) + c.eps);
        }
    }
    return norm;
}

} // namespace ssp

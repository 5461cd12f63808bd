// Copyright (c) 2026 the slmss authors.
// Licensed under the Apache License, Version 2.0.

#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "slmss/common.hpp"
#include "slmss/tensor.hpp"

namespace slmss {

// Ordered by name so update order (and therefore floating-point results)
// never depends on insertion history.
using ParamMap = std::map<std::string, Tensor>;

struct OptimizerState {
    int64_t step = 0;
    std::map<std::string, std::vector<real>> m;  // first moment
    std::map<std::string, std::vector<real>> v;  // second moment
};

// Returns the global grad norm before clipping.
inline real clip_grad_norm(ParamMap& params, real max_norm) {
    real sq = 0;
    for (auto& [name, p] : params) {
        if (!p.has_grad()) continue;
        for (real g : p.grad_ref()) sq += g * g;
    }
    const real norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        const real s = max_norm / norm;
        for (auto& [name, p] : params) {
            if (!p.has_grad()) continue;
            for (real& g : p.grad()) g *= s;
        }
    }
    return norm;
}

inline void adam_step(ParamMap& params, OptimizerState& state, real lr, real beta1 = real(0.9),
                      real beta2 = real(0.999), real eps = real(1e-8)) {
    state.step += 1;
    const real bc1 = real(1) - std::pow(beta1, static_cast<real>(state.step));
    const real bc2 = real(1) - std::pow(beta2, static_cast<real>(state.step));
    for (auto& [name, p] : params) {
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.empty()) m.assign(p.numel(), real(0));
        if (v.empty()) v.assign(p.numel(), real(0));
        if (m.size() != p.numel() || v.size() != p.numel())
            throw ShapeError("adam_step: moment size mismatch for " + name);
        const std::vector<real>* gp = p.has_grad() ? &p.grad_ref() : nullptr;
        auto& pd = p.data();
        for (size_t i = 0; i < pd.size(); ++i) {
            const real g = gp ? (*gp)[i] : real(0);
            if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in " + name);
            m[i] = beta1 * m[i] + (real(1) - beta1) * g;
            v[i] = beta2 * v[i] + (real(1) - beta2) * g * g;
            pd[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        }
    }
}

struct LrSchedule {
    real base_lr = real(5e-5);
    int64_t warmup_steps = 0;
    int64_t total_steps = 1;
    real floor_lr = real(0);
};

// Linear ramp to base_lr over warmup_steps (step 0 uses the step-1 value so
// the first update is never zero), then cosine decay to floor_lr.
// Steps past total_steps clamp to floor_lr.
inline real lr_at(const LrSchedule& s, int64_t step) {
    if (s.warmup_steps > 0 && step <= s.warmup_steps) {
        const int64_t eff = step < 1 ? 1 : step;
        return s.base_lr * static_cast<real>(eff) / static_cast<real>(s.warmup_steps);
    }
    if (step >= s.total_steps) return s.floor_lr;
    const real t = static_cast<real>(step - s.warmup_steps) / static_cast<real>(s.total_steps - s.warmup_steps);
    return s.floor_lr + (s.base_lr - s.floor_lr) * real(0.5) * (real(1) + std::cos(t * real(M_PI)));
}

}  // namespace slmss

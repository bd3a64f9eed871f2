#include "lota/optim.hpp"

#include "lota/errors.hpp"

#include <cmath>

namespace lota {

OptimizerState OptimizerState::zeros_like(const ParameterMap & params) {
    return OptimizerState{lota::zeros_like(params), 0};
}

void clip_group_norm(ParameterMap & grads, double max_norm) {
    if (!(max_norm > 0.0)) throw ValidationError("invalid_argument", "clip_group_norm: max_norm must be positive");
    for (auto & [name, g] : grads) {
        double sq = 0.0;
        for (float v : g.data) sq += static_cast<double>(v) * v;
        const double norm = std::sqrt(sq);
        if (norm > max_norm) {
            const double scale = max_norm / norm;
            for (float & v : g.data) v = static_cast<float>(v * scale);
        }
    }
}

ParameterMap clipped_group_norm(const ParameterMap & grads, double max_norm) {
    ParameterMap out = grads;
    clip_group_norm(out, max_norm);
    return out;
}

void rmsprop_step(ParameterMap & params, const ParameterMap & grads, OptimizerState & state,
                  const RmsPropConfig & config, const SparsityMask * mask) {
    require_aligned(params, grads, "rmsprop_step");
    require_aligned(params, state.second_moment, "rmsprop_step");
    if (mask && !aligned(*mask, params)) throw AlignmentError("rmsprop_step: mask is not aligned with parameters");

    const double d = config.decay;
    const double lr = config.learning_rate;
    const double eps = config.epsilon;
    for (auto & [name, w] : params) {
        const auto & g = grads.at(name).data;
        auto & v = state.second_moment.at(name).data;
        const uint8_t * keep = mask ? mask->entries.at(name).keep.data() : nullptr;
        for (size_t i = 0; i < w.data.size(); ++i) {
            if (keep && !keep[i]) continue;
            const double gi = g[i];
            const double vi = d * static_cast<double>(v[i]) + (1.0 - d) * gi * gi;
            const double wi = static_cast<double>(w.data[i]) - lr * gi / (std::sqrt(vi) + eps);
            if (!std::isfinite(static_cast<float>(wi)) || !std::isfinite(static_cast<float>(vi))) {
                throw NonFiniteError("rmsprop_step: non-finite update in '" + name + "'");
            }
            v[i] = static_cast<float>(vi);
            w.data[i] = static_cast<float>(wi);
        }
    }
    ++state.step;
}

} // namespace lota

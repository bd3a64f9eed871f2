#pragma once

#include "lota/sparsity.hpp"
#include "lota/tensor.hpp"

#include <cstdint>

namespace lota {

struct RmsPropConfig {
    double learning_rate = 1e-3;
    double decay = 0.99;
    double epsilon = 1e-8;
};

struct OptimizerState {
    ParameterMap second_moment;  // v, elementwise >= 0
    uint64_t step = 0;

    static OptimizerState zeros_like(const ParameterMap & params);
};

// Scales each named group whose L2 norm exceeds max_norm down to max_norm;
// groups at or below the limit are left bit-for-bit untouched.
void clip_group_norm(ParameterMap & grads, double max_norm);
ParameterMap clipped_group_norm(const ParameterMap & grads, double max_norm);

// v <- d v + (1 - d) g^2 ;  w <- w - lr g / (sqrt(v) + eps)
// Coordinates where `mask` is false are skipped entirely: neither w nor v is
// touched.
void rmsprop_step(ParameterMap & params, const ParameterMap & grads, OptimizerState & state,
                  const RmsPropConfig & config, const SparsityMask * mask = nullptr);

} // namespace lota

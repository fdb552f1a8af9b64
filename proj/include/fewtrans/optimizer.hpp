#pragma once

#include <cstdint>
#include <vector>

#include "fewtrans/matrix.hpp"

namespace fewtrans {

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Moment accumulators for one tensor.
struct AdamState {
    Matrix m;
    Matrix v;
    std::int64_t t = 0;
    AdamParams hp;
};

/// One bias-corrected Adam update, no weight decay. Lazily shapes the
/// accumulators on the first call; throws on shape mismatch or non-finite
/// gradients.
void adam_step(AdamState& state, Matrix& param, const Matrix& grad, double lr);

/// Adam over a set of tensors with per-tensor learning rates (split
/// backbone/head rates are two groups of slots). One shared step counter.
class AdamOptimizer {
public:
    explicit AdamOptimizer(AdamParams hp = {}) : hp_(hp) {}

    void add_param(Matrix* param, double lr);
    std::size_t n_params() const { return slots_.size(); }
    /// grads aligned with add_param order
    void step(const std::vector<Matrix>& grads);

private:
    struct Slot {
        Matrix* param;
        double lr;
        Matrix m, v;
    };
    std::vector<Slot> slots_;
    std::int64_t t_ = 0;
    AdamParams hp_;
};

}  // namespace fewtrans

#include "fewtrans/optimizer.hpp"

#include <cmath>

#include "fewtrans/errors.hpp"

namespace fewtrans {

namespace {

void apply_adam(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v, std::int64_t t,
                double lr, const AdamParams& hp) {
    if (!param.same_shape(grad)) throw Error("adam: parameter/gradient shape mismatch");
    if (!all_finite(grad)) throw Error("adam: non-finite gradient");
    if (m.size() == 0) m = Matrix(param.rows(), param.cols());
    if (v.size() == 0) v = Matrix(param.rows(), param.cols());
    if (!m.same_shape(param)) throw Error("adam: accumulator shape mismatch");

    const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(t));
    double* p = param.data();
    const double* g = grad.data();
    double* mp = m.data();
    double* vp = v.data();
    for (std::size_t i = 0; i < param.size(); ++i) {
        mp[i] = hp.beta1 * mp[i] + (1.0 - hp.beta1) * g[i];
        vp[i] = hp.beta2 * vp[i] + (1.0 - hp.beta2) * g[i] * g[i];
        const double mhat = mp[i] / bc1;
        const double vhat = vp[i] / bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + hp.eps);
    }
}

}  // namespace

void adam_step(AdamState& state, Matrix& param, const Matrix& grad, double lr) {
    if (!(lr > 0.0)) throw Error("adam: learning rate must be positive");
    ++state.t;
    apply_adam(param, grad, state.m, state.v, state.t, lr, state.hp);
}

void AdamOptimizer::add_param(Matrix* param, double lr) {
    if (!param) throw Error("adam: null parameter");
    if (!(lr > 0.0)) throw Error("adam: learning rate must be positive");
    slots_.push_back(Slot{param, lr, Matrix(), Matrix()});
}

void AdamOptimizer::step(const std::vector<Matrix>& grads) {
    if (grads.size() != slots_.size()) throw Error("adam: gradient count mismatch");
    ++t_;
    for (std::size_t i = 0; i < slots_.size(); ++i)
        apply_adam(*slots_[i].param, grads[i], slots_[i].m, slots_[i].v, t_, slots_[i].lr, hp_);
}

}  // namespace fewtrans

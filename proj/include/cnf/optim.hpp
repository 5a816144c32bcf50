#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cnf/errors.hpp"
#include "cnf/rng.hpp"
#include "cnf/tensor.hpp"

namespace cnf {

/// theta <- theta - alpha * grad, elementwise.
inline void sgd_step(Tensor& params, const Tensor& grads, double alpha) {
    require_same_shape(params, grads, "sgd_step");
    double* p = params.data();
    const double* g = grads.data();
    for (std::size_t i = 0; i < params.size(); ++i) p[i] -= alpha * g[i];
}

/// Adam moment estimates for one set of parameter tensors. The step count
/// is shared across tensors and drives the bias correction.
struct AdamState {
    double alpha = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t step_count = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;

    void init(const std::vector<Tensor*>& params) {
        m.clear();
        v.clear();
        for (const Tensor* p : params) {
            m.emplace_back(p->shape());
            v.emplace_back(p->shape());
        }
        step_count = 0;
    }
};

/// One Adam update over all tensors:
///   m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2   (squared gradient)
///   theta <- theta - alpha * mhat / (sqrt(vhat) + eps)
/// with mhat, vhat the bias-corrected moments.
inline void adam_step(const std::vector<Tensor*>& params,
                      const std::vector<const Tensor*>& grads, AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw shape_error("adam_step: parameter/gradient/state count mismatch");
    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
    for (std::size_t t = 0; t < params.size(); ++t) {
        Tensor& theta = *params[t];
        const Tensor& g = *grads[t];
        require_same_shape(theta, g, "adam_step");
        require_same_shape(theta, state.m[t], "adam_step state");
        double* p = theta.data();
        const double* gp = g.data();
        double* mp = state.m[t].data();
        double* vp = state.v[t].data();
        for (std::size_t i = 0; i < theta.size(); ++i) {
            mp[i] = state.beta1 * mp[i] + (1.0 - state.beta1) * gp[i];
            vp[i] = state.beta2 * vp[i] + (1.0 - state.beta2) * gp[i] * gp[i];
            const double mhat = mp[i] / bc1;
            const double vhat = vp[i] / bc2;
            p[i] -= state.alpha * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

inline void adam_step(Tensor& params, const Tensor& grads, AdamState& state) {
    std::vector<Tensor*> p{&params};
    std::vector<const Tensor*> g{&grads};
    adam_step(p, g, state);
}

/// Index batches for one epoch: a fresh uniform permutation of [0, n)
/// partitioned into consecutive batches. The final short batch is kept.
inline std::vector<std::vector<std::size_t>> batch_indices(std::size_t n,
                                                           std::size_t batch_size,
                                                           Rng& rng) {
    if (n == 0) throw data_error("batch_indices: empty dataset");
    if (batch_size == 0) throw config_error("batch_indices: batch_size must be >= 1");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        batches.emplace_back(order.begin() + static_cast<long>(start),
                             order.begin() + static_cast<long>(end));
    }
    return batches;
}

} // namespace cnf

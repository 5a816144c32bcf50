#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "cnf/errors.hpp"
#include "cnf/layers.hpp"
#include "cnf/tensor.hpp"

namespace cnf {

/// Regularization weights. epsilon_l1 smooths |w| into sqrt(w^2 + eps) so
/// the penalty stays differentiable at zero.
struct RegConfig {
    double lambda_l1 = 0.0;
    double lambda_l2 = 0.0;
    double epsilon_l1 = 1e-8;

    void validate() const {
        if (lambda_l1 < 0.0 || lambda_l2 < 0.0 || epsilon_l1 < 0.0)
            throw config_error("regularization weights must be non-negative");
    }
};

struct LossValue {
    double data_loss = 0.0;
    double reg_loss = 0.0;
    double total = 0.0;
};

namespace detail {

// Probabilities are clamped away from {0,1} before logs; the exact loss is
// undefined there.
constexpr double kProbClamp = 1e-12;

inline double clamp_prob(double p) {
    if (p < kProbClamp) return kProbClamp;
    if (p > 1.0 - kProbClamp) return 1.0 - kProbClamp;
    return p;
}

} // namespace detail

inline double binary_cross_entropy(const std::vector<double>& predicted,
                                   const std::vector<int>& actual) {
    if (predicted.size() != actual.size())
        throw shape_error("binary_cross_entropy: " + std::to_string(predicted.size()) +
                          " predictions vs " + std::to_string(actual.size()) + " labels");
    if (predicted.empty()) throw data_error("binary_cross_entropy: empty input");
    double sum = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const double p = detail::clamp_prob(predicted[i]);
        sum += actual[i] ? std::log(p) : std::log(1.0 - p);
    }
    return -sum / static_cast<double>(predicted.size());
}

/// Mean negative log-probability of the true class over a batch of
/// probability rows.
inline double categorical_cross_entropy(const Tensor& predicted,
                                        const std::vector<std::size_t>& labels) {
    if (predicted.rank() != 2)
        throw shape_error("categorical_cross_entropy: predictions must be batch x K, got " +
                          predicted.shape_str());
    const std::size_t batch = predicted.extent(0), k = predicted.extent(1);
    if (labels.size() != batch)
        throw shape_error("categorical_cross_entropy: " + std::to_string(batch) +
                          " rows vs " + std::to_string(labels.size()) + " labels");
    double sum = 0.0;
    for (std::size_t r = 0; r < batch; ++r) {
        double row_sum = 0.0;
        for (std::size_t c = 0; c < k; ++c) row_sum += predicted(r, c);
        if (std::abs(row_sum - 1.0) > 1e-6)
            throw data_error("categorical_cross_entropy: row " + std::to_string(r) +
                             " sums to " + std::to_string(row_sum) + ", not 1");
        if (labels[r] >= k)
            throw data_error("categorical_cross_entropy: label " +
                             std::to_string(labels[r]) + " out of range at row " +
                             std::to_string(r));
        sum += std::log(detail::clamp_prob(predicted(r, labels[r])));
    }
    return -sum / static_cast<double>(batch);
}

/// Fused backward of softmax followed by categorical cross-entropy:
/// grad = (softmax(logits) - onehot(labels)) / batch.
inline Tensor softmax_ce_gradient(const Tensor& logits,
                                  const std::vector<std::size_t>& labels) {
    if (logits.rank() != 2)
        throw shape_error("softmax_ce_gradient: logits must be batch x K, got " +
                          logits.shape_str());
    const std::size_t batch = logits.extent(0), k = logits.extent(1);
    if (labels.size() != batch)
        throw shape_error("softmax_ce_gradient: " + std::to_string(batch) + " rows vs " +
                          std::to_string(labels.size()) + " labels");
    Tensor grad({batch, k});
    const double inv_batch = 1.0 / static_cast<double>(batch);
    for (std::size_t r = 0; r < batch; ++r) {
        if (labels[r] >= k)
            throw data_error("softmax_ce_gradient: label " + std::to_string(labels[r]) +
                             " out of range at row " + std::to_string(r));
        Tensor row({k});
        for (std::size_t c = 0; c < k; ++c) row[c] = logits(r, c);
        const Tensor p = softmax(row);
        for (std::size_t c = 0; c < k; ++c)
            grad(r, c) = (p[c] - (c == labels[r] ? 1.0 : 0.0)) * inv_batch;
    }
    return grad;
}

inline double l2_penalty(const Tensor& weights) {
    double sum = 0.0;
    for (double w : weights.values()) sum += w * w;
    return sum;
}

inline double l1_penalty(const Tensor& weights) {
    double sum = 0.0;
    for (double w : weights.values()) sum += std::abs(w);
    return sum;
}

inline double l1_smoothed(const Tensor& weights, double epsilon) {
    if (epsilon < 0.0) throw config_error("l1 smoothing epsilon must be >= 0");
    double sum = 0.0;
    for (double w : weights.values()) sum += std::sqrt(w * w + epsilon);
    return sum;
}

/// d/dw of the smoothed L1 penalty, defined everywhere for epsilon > 0.
inline double l1_smoothed_grad(double w, double epsilon) {
    return w / std::sqrt(w * w + epsilon);
}

/// Combined objective: data loss plus lambda-weighted penalties over the
/// given weight tensors (callers pass dense-layer weights only; biases and
/// conv kernels are unpenalized).
inline LossValue regularized_loss(double data_loss, const std::vector<const Tensor*>& weights,
                                  const RegConfig& cfg) {
    cfg.validate();
    double reg = 0.0;
    for (const Tensor* w : weights) {
        if (cfg.lambda_l1 > 0.0) reg += cfg.lambda_l1 * l1_smoothed(*w, cfg.epsilon_l1);
        if (cfg.lambda_l2 > 0.0) reg += cfg.lambda_l2 * l2_penalty(*w);
    }
    return LossValue{data_loss, reg, data_loss + reg};
}

} // namespace cnf

#pragma once

#include <cmath>
#include <vector>

#include "cnf/errors.hpp"
#include "cnf/layers.hpp"
#include "cnf/rng.hpp"
#include "cnf/tensor.hpp"

namespace cnf {

/// Per-layer runtime state: parameter tensors for parametric layers plus
/// whatever the forward pass must retain for backward (inputs, argmax
/// indices, dropout masks, softmax outputs).
struct LayerState {
    std::vector<Tensor> params; // conv/dense: {weights, bias}
    std::vector<Tensor> grads;  // same shapes as params

    Tensor cached_input;
    std::vector<std::size_t> argmax; // max pool
    Tensor mask;                     // dropout
    Tensor cached_output;            // softmax probabilities
    bool has_cache = false;
};

/// A ModelSpec instantiated with parameters. Forward runs one sample at a
/// time; backward consumes the gradient at the final softmax input (the
/// fused cross-entropy path) and accumulates parameter gradients.
class Network {
public:
    explicit Network(const ModelSpec& spec) : spec_(resolved(spec)) {
        shapes_ = infer_shapes(spec_);
        states_.resize(spec_.layers.size());
        for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
            const LayerSpec& layer = spec_.layers[li];
            LayerState& st = states_[li];
            if (layer.kind == LayerKind::conv2d) {
                st.params = {Tensor({layer.out_channels, layer.in_channels,
                                     layer.kernel_size, layer.kernel_size}),
                             Tensor({layer.out_channels})};
            } else if (layer.kind == LayerKind::dense) {
                st.params = {Tensor({layer.out_units, layer.in_units}),
                             Tensor({layer.out_units})};
            }
            for (const Tensor& p : st.params) st.grads.emplace_back(p.shape());
        }
    }

    const ModelSpec& spec() const { return spec_; }
    const std::vector<std::vector<std::size_t>>& layer_shapes() const { return shapes_; }

    /// Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases.
    /// The draw order is fixed, so parameters are a pure function of the
    /// rng state.
    void init_params(Rng& rng) {
        for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
            const LayerSpec& layer = spec_.layers[li];
            LayerState& st = states_[li];
            if (layer.kind == LayerKind::conv2d) {
                const double fan_in =
                    static_cast<double>(layer.in_channels * layer.kernel_size * layer.kernel_size);
                const double fan_out =
                    static_cast<double>(layer.out_channels * layer.kernel_size * layer.kernel_size);
                const double limit = std::sqrt(6.0 / (fan_in + fan_out));
                for (double& w : st.params[0].values()) w = rng.uniform(-limit, limit);
                st.params[1].fill(0.0);
            } else if (layer.kind == LayerKind::dense) {
                const double limit =
                    std::sqrt(6.0 / static_cast<double>(layer.in_units + layer.out_units));
                for (double& w : st.params[0].values()) w = rng.uniform(-limit, limit);
                st.params[1].fill(0.0);
            }
        }
    }

    std::vector<Tensor*> parameters() {
        std::vector<Tensor*> out;
        for (LayerState& st : states_)
            for (Tensor& p : st.params) out.push_back(&p);
        return out;
    }

    std::vector<const Tensor*> parameters() const {
        std::vector<const Tensor*> out;
        for (const LayerState& st : states_)
            for (const Tensor& p : st.params) out.push_back(&p);
        return out;
    }

    std::vector<const Tensor*> gradients() const {
        std::vector<const Tensor*> out;
        for (const LayerState& st : states_)
            for (const Tensor& g : st.grads) out.push_back(&g);
        return out;
    }

    /// Weight tensors of dense layers only — the regularization targets.
    std::vector<const Tensor*> dense_weights() const {
        std::vector<const Tensor*> out;
        for (std::size_t li = 0; li < spec_.layers.size(); ++li)
            if (spec_.layers[li].kind == LayerKind::dense)
                out.push_back(&states_[li].params[0]);
        return out;
    }

    std::vector<Tensor*> dense_weight_grads() {
        std::vector<Tensor*> out;
        for (std::size_t li = 0; li < spec_.layers.size(); ++li)
            if (spec_.layers[li].kind == LayerKind::dense)
                out.push_back(&states_[li].grads[0]);
        return out;
    }

    std::vector<Tensor*> dense_weights_mutable() {
        std::vector<Tensor*> out;
        for (std::size_t li = 0; li < spec_.layers.size(); ++li)
            if (spec_.layers[li].kind == LayerKind::dense)
                out.push_back(&states_[li].params[0]);
        return out;
    }

    void zero_grads() {
        for (LayerState& st : states_)
            for (Tensor& g : st.grads) g.fill(0.0);
    }

    /// Overrides every dropout layer's probability (used by the tuner).
    void set_dropout(double p) {
        if (!(p >= 0.0 && p < 1.0))
            throw config_error("dropout probability must lie in [0,1), got " +
                               std::to_string(p));
        for (LayerSpec& layer : spec_.layers)
            if (layer.kind == LayerKind::dropout) layer.drop_p = p;
    }

    bool ends_with_softmax() const {
        return !spec_.layers.empty() &&
               spec_.layers.back().kind == LayerKind::activation &&
               spec_.layers.back().fn == ActFn::softmax;
    }

    /// Runs all layers on one sample. Training phase applies dropout and
    /// retains caches; inference is cache-free and deterministic.
    Tensor forward(const Tensor& input, Phase phase, Rng* dropout_rng = nullptr) {
        if (input.shape() != std::vector<std::size_t>{spec_.input_shape[0], spec_.input_shape[1],
                                                      spec_.input_shape[2]})
            throw shape_error("forward: input " + input.shape_str() +
                              " does not match model input " +
                              Tensor::shape_string({spec_.input_shape[0], spec_.input_shape[1],
                                                    spec_.input_shape[2]}));
        Tensor cur = input;
        for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
            const LayerSpec& layer = spec_.layers[li];
            LayerState& st = states_[li];
            st.has_cache = phase == Phase::train;
            switch (layer.kind) {
            case LayerKind::conv2d:
                if (phase == Phase::train) st.cached_input = cur;
                cur = conv2d_forward(cur, st.params[0], st.params[1], layer.stride,
                                     layer.padding);
                break;
            case LayerKind::activation:
                if (layer.fn == ActFn::relu) {
                    if (phase == Phase::train) st.cached_input = cur;
                    cur = relu(cur);
                } else {
                    cur = softmax(cur);
                    if (phase == Phase::train) st.cached_output = cur;
                }
                break;
            case LayerKind::pool2d: {
                if (phase == Phase::train) st.cached_input = cur;
                PoolResult res = pool2d_forward(cur, layer.pool_size, layer.pool_mode);
                st.argmax = std::move(res.argmax);
                cur = std::move(res.output);
                break;
            }
            case LayerKind::dropout: {
                if (phase == Phase::train) {
                    if (dropout_rng == nullptr)
                        throw contract_error("forward: dropout in train phase needs an rng");
                    DropoutResult res = dropout_forward(cur, layer.drop_p, *dropout_rng,
                                                        Phase::train);
                    st.mask = std::move(res.mask);
                    cur = std::move(res.output);
                }
                break; // inference: identity
            }
            case LayerKind::flatten:
                cur = flatten_forward(cur);
                break;
            case LayerKind::dense:
                if (phase == Phase::train) st.cached_input = cur;
                cur = dense_forward(cur, st.params[0], st.params[1]);
                break;
            }
        }
        return cur;
    }

    /// Backpropagates from the gradient at the final softmax's input
    /// (i.e. the fused softmax + cross-entropy cotangent), accumulating
    /// into the parameter gradient buffers. Requires a trailing softmax
    /// layer and a preceding train-phase forward pass.
    void backward_from_logits(const Tensor& grad_logits) {
        if (!ends_with_softmax())
            throw contract_error("backward_from_logits requires a trailing softmax layer");
        Tensor grad = grad_logits;
        for (std::size_t n = spec_.layers.size() - 1; n-- > 0;) {
            grad = layer_backward(n, grad);
        }
    }

    /// Gradient of one layer given the gradient of its output.
    Tensor layer_backward(std::size_t li, const Tensor& grad_out) {
        const LayerSpec& layer = spec_.layers[li];
        LayerState& st = states_[li];
        if (!st.has_cache)
            throw contract_error("layer " + std::to_string(li) +
                                 ": backward called without a cached forward pass");
        switch (layer.kind) {
        case LayerKind::conv2d: {
            ConvGrads g = conv2d_backward(grad_out, st.cached_input, st.params[0],
                                          layer.stride, layer.padding);
            accumulate(st.grads[0], g.weights);
            accumulate(st.grads[1], g.bias);
            return std::move(g.input);
        }
        case LayerKind::activation:
            if (layer.fn == ActFn::relu) return relu_backward(grad_out, st.cached_input);
            return softmax_backward(grad_out, st.cached_output);
        case LayerKind::pool2d:
            return pool2d_backward(grad_out, st.cached_input.shape(), layer.pool_size,
                                   layer.pool_mode,
                                   layer.pool_mode == PoolMode::max ? st.argmax
                                                                    : std::vector<std::size_t>{});
        case LayerKind::dropout:
            return dropout_backward(grad_out, st.mask);
        case LayerKind::flatten: {
            const auto& in_shape = li == 0
                                       ? std::vector<std::size_t>{spec_.input_shape[0],
                                                                  spec_.input_shape[1],
                                                                  spec_.input_shape[2]}
                                       : shapes_[li - 1];
            return unflatten(grad_out, in_shape);
        }
        case LayerKind::dense: {
            DenseGrads g = dense_backward(grad_out, st.cached_input, st.params[0]);
            accumulate(st.grads[0], g.weights);
            accumulate(st.grads[1], g.bias);
            return std::move(g.input);
        }
        }
        throw contract_error("layer_backward: unknown layer kind");
    }

    std::vector<LayerState>& states() { return states_; }
    const std::vector<LayerState>& states() const { return states_; }

private:
    static void accumulate(Tensor& into, const Tensor& add) {
        double* a = into.data();
        const double* b = add.data();
        for (std::size_t i = 0; i < into.size(); ++i) a[i] += b[i];
    }

    ModelSpec spec_;
    std::vector<std::vector<std::size_t>> shapes_;
    std::vector<LayerState> states_;
};

} // namespace cnf

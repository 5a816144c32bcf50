#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cnf/errors.hpp"
#include "cnf/rng.hpp"
#include "cnf/tensor.hpp"

namespace cnf {

enum class Padding { valid, same };
enum class PoolMode { max, mean };
enum class ActFn { relu, softmax };
enum class LayerKind { conv2d, activation, pool2d, dropout, flatten, dense };
enum class Phase { train, infer };

/// One row of a network description. Fields not used by `kind` stay at
/// their defaults; in_channels / in_units may be left 0 and are then
/// filled in by shape inference.
struct LayerSpec {
    LayerKind kind = LayerKind::flatten;

    // conv2d
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel_size = 0;
    std::size_t stride = 1;
    Padding padding = Padding::valid;

    // activation
    ActFn fn = ActFn::relu;

    // pool2d
    std::size_t pool_size = 0;
    PoolMode pool_mode = PoolMode::max;

    // dropout
    double drop_p = 0.0;

    // dense
    std::size_t in_units = 0;
    std::size_t out_units = 0;

    static LayerSpec conv(std::size_t out_channels, std::size_t kernel_size,
                          Padding padding, std::size_t stride = 1,
                          std::size_t in_channels = 0) {
        if (kernel_size < 1) throw config_error("conv kernel_size must be >= 1");
        if (stride < 1) throw config_error("conv stride must be >= 1");
        LayerSpec s;
        s.kind = LayerKind::conv2d;
        s.in_channels = in_channels;
        s.out_channels = out_channels;
        s.kernel_size = kernel_size;
        s.stride = stride;
        s.padding = padding;
        return s;
    }

    static LayerSpec activation(ActFn fn) {
        LayerSpec s;
        s.kind = LayerKind::activation;
        s.fn = fn;
        return s;
    }

    static LayerSpec pool(std::size_t size, PoolMode mode) {
        if (size < 1) throw config_error("pool size must be >= 1");
        LayerSpec s;
        s.kind = LayerKind::pool2d;
        s.pool_size = size;
        s.pool_mode = mode;
        return s;
    }

    static LayerSpec dropout(double p) {
        if (!(p >= 0.0 && p < 1.0)) {
            throw config_error("dropout probability must lie in [0,1), got " +
                               std::to_string(p));
        }
        LayerSpec s;
        s.kind = LayerKind::dropout;
        s.drop_p = p;
        return s;
    }

    static LayerSpec flat() {
        LayerSpec s;
        s.kind = LayerKind::flatten;
        return s;
    }

    static LayerSpec dense(std::size_t out_units, std::size_t in_units = 0) {
        LayerSpec s;
        s.kind = LayerKind::dense;
        s.in_units = in_units;
        s.out_units = out_units;
        return s;
    }
};

/// Network description: input geometry, ordered layers, class count.
struct ModelSpec {
    std::array<std::size_t, 3> input_shape{1, 1, 1}; // channels, height, width
    std::vector<LayerSpec> layers;
    std::size_t class_count = 0;
};

// ---------------------------------------------------------------------------
// shape inference and parameter counting
// ---------------------------------------------------------------------------

namespace detail {

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                                   Padding padding) {
    if (padding == Padding::valid) {
        if (in < k) return 0;
        return (in - k) / stride + 1;
    }
    return (in + stride - 1) / stride; // ceil(in / stride)
}

} // namespace detail

/// Output shape of every layer in order (the input shape alone for an
/// empty layer list). Throws shape_error naming the offending layer when
/// any extent collapses to zero or channel counts disagree.
inline std::vector<std::vector<std::size_t>> infer_shapes(const ModelSpec& model) {
    std::vector<std::vector<std::size_t>> out;
    out.reserve(model.layers.size());
    std::vector<std::size_t> cur = {model.input_shape[0], model.input_shape[1],
                                    model.input_shape[2]};
    if (model.layers.empty()) return {cur};
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        const LayerSpec& layer = model.layers[li];
        const std::string where = "layer " + std::to_string(li);
        switch (layer.kind) {
        case LayerKind::conv2d: {
            if (cur.size() != 3)
                throw shape_error(where + ": conv2d requires a CxHxW input, got " +
                                  Tensor::shape_string(cur));
            if (layer.in_channels != 0 && layer.in_channels != cur[0])
                throw shape_error(where + ": conv2d expects " +
                                  std::to_string(layer.in_channels) +
                                  " input channels but receives " +
                                  Tensor::shape_string(cur));
            const std::size_t h =
                detail::conv_out_extent(cur[1], layer.kernel_size, layer.stride, layer.padding);
            const std::size_t w =
                detail::conv_out_extent(cur[2], layer.kernel_size, layer.stride, layer.padding);
            if (h == 0 || w == 0)
                throw shape_error(where + ": conv2d kernel " +
                                  std::to_string(layer.kernel_size) +
                                  " does not fit input " + Tensor::shape_string(cur));
            cur = {layer.out_channels, h, w};
            break;
        }
        case LayerKind::activation:
        case LayerKind::dropout:
            break; // shape preserving
        case LayerKind::pool2d: {
            if (cur.size() != 3)
                throw shape_error(where + ": pool2d requires a CxHxW input, got " +
                                  Tensor::shape_string(cur));
            const std::size_t h = cur[1] / layer.pool_size;
            const std::size_t w = cur[2] / layer.pool_size;
            if (h == 0 || w == 0)
                throw shape_error(where + ": pool window " +
                                  std::to_string(layer.pool_size) +
                                  " larger than input " + Tensor::shape_string(cur));
            cur = {cur[0], h, w};
            break;
        }
        case LayerKind::flatten: {
            std::size_t vol = 1;
            for (std::size_t e : cur) vol *= e;
            cur = {vol};
            break;
        }
        case LayerKind::dense: {
            if (cur.size() != 1)
                throw shape_error(where + ": dense requires a flat input, got " +
                                  Tensor::shape_string(cur));
            if (layer.in_units != 0 && layer.in_units != cur[0])
                throw shape_error(where + ": dense expects " +
                                  std::to_string(layer.in_units) +
                                  " inputs but receives " + std::to_string(cur[0]));
            if (layer.out_units == 0)
                throw shape_error(where + ": dense out_units must be positive");
            cur = {layer.out_units};
            break;
        }
        }
        out.push_back(cur);
    }
    return out;
}

/// Copy of `model` with every inferred field (conv in_channels, dense
/// in_units) filled from the shape chain, validated against class_count.
inline ModelSpec resolved(const ModelSpec& model) {
    ModelSpec r = model;
    std::vector<std::size_t> cur = {r.input_shape[0], r.input_shape[1], r.input_shape[2]};
    const auto shapes = infer_shapes(model);
    for (std::size_t li = 0; li < r.layers.size(); ++li) {
        LayerSpec& layer = r.layers[li];
        if (layer.kind == LayerKind::conv2d && layer.in_channels == 0)
            layer.in_channels = cur[0];
        if (layer.kind == LayerKind::dense && layer.in_units == 0)
            layer.in_units = cur[0];
        cur = shapes[li];
    }
    if (r.class_count != 0 && (cur.size() != 1 || cur[0] != r.class_count)) {
        throw shape_error("final layer produces " + Tensor::shape_string(cur) +
                          " but the model declares " + std::to_string(r.class_count) +
                          " classes");
    }
    return r;
}

struct ParamCount {
    std::vector<std::size_t> per_layer;
    std::size_t total = 0;
};

/// Trainable parameter counts: conv C_out*(C_in*k^2+1), dense out*(in+1),
/// zero elsewhere.
inline ParamCount count_params(const ModelSpec& model) {
    const ModelSpec r = resolved(model);
    ParamCount pc;
    pc.per_layer.reserve(r.layers.size());
    for (const LayerSpec& layer : r.layers) {
        std::size_t n = 0;
        if (layer.kind == LayerKind::conv2d)
            n = layer.out_channels *
                (layer.in_channels * layer.kernel_size * layer.kernel_size + 1);
        else if (layer.kind == LayerKind::dense)
            n = layer.out_units * (layer.in_units + 1);
        pc.per_layer.push_back(n);
        pc.total += n;
    }
    return pc;
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

namespace detail {

struct PadOffsets {
    std::size_t out_h = 0, out_w = 0;
    long pad_top = 0, pad_left = 0;
};

inline PadOffsets conv_geometry(std::size_t h, std::size_t w, std::size_t k,
                                std::size_t stride, Padding padding) {
    PadOffsets g;
    g.out_h = conv_out_extent(h, k, stride, padding);
    g.out_w = conv_out_extent(w, k, stride, padding);
    if (g.out_h == 0 || g.out_w == 0) {
        throw shape_error("conv2d: kernel " + std::to_string(k) + " with stride " +
                          std::to_string(stride) + " does not fit input " +
                          std::to_string(h) + "x" + std::to_string(w));
    }
    if (padding == Padding::same) {
        const long total_h =
            std::max<long>(0, static_cast<long>((g.out_h - 1) * stride + k) - static_cast<long>(h));
        const long total_w =
            std::max<long>(0, static_cast<long>((g.out_w - 1) * stride + k) - static_cast<long>(w));
        g.pad_top = total_h / 2;
        g.pad_left = total_w / 2;
    }
    return g;
}

} // namespace detail

/// Cross-correlation of each kernel with the input plus a per-channel bias
/// broadcast over all spatial positions.
inline Tensor conv2d_forward(const Tensor& input, const Tensor& weights,
                             const Tensor& bias, std::size_t stride, Padding padding) {
    if (input.rank() != 3)
        throw shape_error("conv2d_forward: input must be CxHxW, got " + input.shape_str());
    if (weights.rank() != 4)
        throw shape_error("conv2d_forward: weights must be OxIxKxK, got " +
                          weights.shape_str());
    const std::size_t c_in = input.extent(0), h = input.extent(1), w = input.extent(2);
    const std::size_t c_out = weights.extent(0), k = weights.extent(2);
    if (weights.extent(1) != c_in)
        throw shape_error("conv2d_forward: input " + input.shape_str() +
                          " does not match weights " + weights.shape_str());
    if (weights.extent(2) != weights.extent(3))
        throw shape_error("conv2d_forward: kernels must be square, got " +
                          weights.shape_str());
    if (bias.size() != c_out)
        throw shape_error("conv2d_forward: bias " + bias.shape_str() + " vs " +
                          std::to_string(c_out) + " output channels");

    const auto g = detail::conv_geometry(h, w, k, stride, padding);
    Tensor out({c_out, g.out_h, g.out_w});

    const double* in = input.data();
    const double* wp = weights.data();
    double* op = out.data();
    for (std::size_t oc = 0; oc < c_out; ++oc) {
        double* channel = op + oc * g.out_h * g.out_w;
        const double b = bias[oc];
        for (std::size_t i = 0; i < g.out_h * g.out_w; ++i) channel[i] = b;
        for (std::size_t ic = 0; ic < c_in; ++ic) {
            const double* plane = in + ic * h * w;
            for (std::size_t ky = 0; ky < k; ++ky) {
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const double wv = wp[((oc * c_in + ic) * k + ky) * k + kx];
                    if (wv == 0.0) continue;
                    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                        const long iy = static_cast<long>(oy * stride + ky) - g.pad_top;
                        if (iy < 0 || iy >= static_cast<long>(h)) continue;
                        const double* row = plane + static_cast<std::size_t>(iy) * w;
                        double* orow = channel + oy * g.out_w;
                        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                            const long ix = static_cast<long>(ox * stride + kx) - g.pad_left;
                            if (ix < 0 || ix >= static_cast<long>(w)) continue;
                            orow[ox] += wv * row[static_cast<std::size_t>(ix)];
                        }
                    }
                }
            }
        }
    }
    return out;
}

struct ConvGrads {
    Tensor input;
    Tensor weights;
    Tensor bias;
};

inline ConvGrads conv2d_backward(const Tensor& grad_out, const Tensor& input,
                                 const Tensor& weights, std::size_t stride,
                                 Padding padding) {
    const std::size_t c_in = input.extent(0), h = input.extent(1), w = input.extent(2);
    const std::size_t c_out = weights.extent(0), k = weights.extent(2);
    const auto g = detail::conv_geometry(h, w, k, stride, padding);
    if (grad_out.shape() != std::vector<std::size_t>{c_out, g.out_h, g.out_w})
        throw shape_error("conv2d_backward: grad " + grad_out.shape_str() +
                          " does not match forward output shape");

    ConvGrads grads{Tensor({c_in, h, w}), Tensor(weights.shape()), Tensor({c_out})};
    const double* in = input.data();
    const double* wp = weights.data();
    const double* gp = grad_out.data();
    double* gin = grads.input.data();
    double* gw = grads.weights.data();

    for (std::size_t oc = 0; oc < c_out; ++oc) {
        const double* gchan = gp + oc * g.out_h * g.out_w;
        double acc = 0.0;
        for (std::size_t i = 0; i < g.out_h * g.out_w; ++i) acc += gchan[i];
        grads.bias[oc] = acc;
        for (std::size_t ic = 0; ic < c_in; ++ic) {
            const double* plane = in + ic * h * w;
            double* gplane = gin + ic * h * w;
            for (std::size_t ky = 0; ky < k; ++ky) {
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const std::size_t widx = ((oc * c_in + ic) * k + ky) * k + kx;
                    const double wv = wp[widx];
                    double wacc = 0.0;
                    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                        const long iy = static_cast<long>(oy * stride + ky) - g.pad_top;
                        if (iy < 0 || iy >= static_cast<long>(h)) continue;
                        const double* row = plane + static_cast<std::size_t>(iy) * w;
                        double* grow = gplane + static_cast<std::size_t>(iy) * w;
                        const double* gorow = gchan + oy * g.out_w;
                        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                            const long ix = static_cast<long>(ox * stride + kx) - g.pad_left;
                            if (ix < 0 || ix >= static_cast<long>(w)) continue;
                            const double gv = gorow[ox];
                            wacc += gv * row[static_cast<std::size_t>(ix)];
                            grow[static_cast<std::size_t>(ix)] += gv * wv;
                        }
                    }
                    gw[widx] += wacc;
                }
            }
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

struct PoolResult {
    Tensor output;
    std::vector<std::size_t> argmax; // flat input index per output element (max mode)
};

/// Non-overlapping s*s window pooling with floor semantics; trailing rows
/// and columns that do not fill a window are dropped.
inline PoolResult pool2d_forward(const Tensor& input, std::size_t s, PoolMode mode) {
    if (input.rank() != 3)
        throw shape_error("pool2d_forward: input must be CxHxW, got " + input.shape_str());
    const std::size_t c = input.extent(0), h = input.extent(1), w = input.extent(2);
    const std::size_t oh = h / s, ow = w / s;
    if (oh == 0 || ow == 0)
        throw shape_error("pool2d_forward: window " + std::to_string(s) +
                          " larger than input " + input.shape_str());

    PoolResult res{Tensor({c, oh, ow}), {}};
    if (mode == PoolMode::max) res.argmax.resize(c * oh * ow);
    const double inv_area = 1.0 / static_cast<double>(s * s);
    const double* in = input.data();
    double* out = res.output.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* plane = in + ch * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::size_t oidx = (ch * oh + oy) * ow + ox;
                if (mode == PoolMode::max) {
                    double best = plane[oy * s * w + ox * s];
                    std::size_t best_idx = oy * s * w + ox * s;
                    for (std::size_t m = 0; m < s; ++m) {
                        const double* row = plane + (oy * s + m) * w + ox * s;
                        for (std::size_t n = 0; n < s; ++n) {
                            if (row[n] > best) { // first index wins ties
                                best = row[n];
                                best_idx = (oy * s + m) * w + ox * s + n;
                            }
                        }
                    }
                    out[oidx] = best;
                    res.argmax[oidx] = ch * h * w + best_idx;
                } else {
                    double sum = 0.0;
                    for (std::size_t m = 0; m < s; ++m) {
                        const double* row = plane + (oy * s + m) * w + ox * s;
                        for (std::size_t n = 0; n < s; ++n) sum += row[n];
                    }
                    out[oidx] = sum * inv_area;
                }
            }
        }
    }
    return res;
}

inline Tensor pool2d_backward(const Tensor& grad_out, const std::vector<std::size_t>& in_shape,
                              std::size_t s, PoolMode mode,
                              const std::vector<std::size_t>& argmax) {
    Tensor grad_in(in_shape);
    const std::size_t h = in_shape[1], w = in_shape[2];
    const std::size_t oh = grad_out.extent(1), ow = grad_out.extent(2);
    const double inv_area = 1.0 / static_cast<double>(s * s);
    const double* gp = grad_out.data();
    double* gi = grad_in.data();
    if (mode == PoolMode::max) {
        if (argmax.size() != grad_out.size())
            throw contract_error("pool2d_backward: missing or stale argmax cache");
        for (std::size_t i = 0; i < grad_out.size(); ++i) gi[argmax[i]] += gp[i];
    } else {
        for (std::size_t ch = 0; ch < in_shape[0]; ++ch) {
            for (std::size_t oy = 0; oy < oh; ++oy) {
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    const double v = gp[(ch * oh + oy) * ow + ox] * inv_area;
                    for (std::size_t m = 0; m < s; ++m) {
                        double* row = gi + ch * h * w + (oy * s + m) * w + ox * s;
                        for (std::size_t n = 0; n < s; ++n) row[n] += v;
                    }
                }
            }
        }
    }
    return grad_in;
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& input) {
    Tensor out = input;
    for (auto& x : out.values()) x = x > 0.0 ? x : 0.0;
    return out;
}

/// Gradient passes where the forward input was strictly positive; the
/// subgradient at exactly zero is taken as zero.
inline Tensor relu_backward(const Tensor& grad_out, const Tensor& forward_input) {
    require_same_shape(grad_out, forward_input, "relu_backward");
    Tensor grad_in = grad_out;
    const double* in = forward_input.data();
    double* g = grad_in.data();
    for (std::size_t i = 0; i < grad_in.size(); ++i)
        if (in[i] <= 0.0) g[i] = 0.0;
    return grad_in;
}

/// Numerically safe softmax: exponents are shifted by the max logit, which
/// leaves the result unchanged analytically.
inline Tensor softmax(const Tensor& logits) {
    Tensor out = logits;
    double* p = out.data();
    const std::size_t n = out.size();
    double mx = p[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, p[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = std::exp(p[i] - mx);
        sum += p[i];
    }
    const double inv = 1.0 / sum;
    for (std::size_t i = 0; i < n; ++i) p[i] *= inv;
    return out;
}

/// Full softmax Jacobian product: dL/dz_k = p_k (g_k - sum_c g_c p_c).
inline Tensor softmax_backward(const Tensor& grad_out, const Tensor& softmax_output) {
    require_same_shape(grad_out, softmax_output, "softmax_backward");
    Tensor grad_in = grad_out;
    const double* p = softmax_output.data();
    double* g = grad_in.data();
    double dot = 0.0;
    for (std::size_t i = 0; i < grad_in.size(); ++i) dot += g[i] * p[i];
    for (std::size_t i = 0; i < grad_in.size(); ++i) g[i] = p[i] * (g[i] - dot);
    return grad_in;
}

// ---------------------------------------------------------------------------
// flatten
// ---------------------------------------------------------------------------

inline Tensor flatten_forward(const Tensor& input) {
    return input.reshaped({input.size()});
}

inline Tensor unflatten(const Tensor& flat, std::vector<std::size_t> shape) {
    return flat.reshaped(std::move(shape));
}

/// Reference index arithmetic for the channel-major vectorization of a
/// square C_side x C_side feature map: j = i*C^2 + (y-1)*C + x, with y
/// 1-based. Kept verbatim for documentation and tests; internal layout is
/// the 0-based row-major j = i*H*W + y*W + x.
inline long flatten_index(long i, long x, long y, long c_side) {
    return i * c_side * c_side + (y - 1) * c_side + x;
}

// ---------------------------------------------------------------------------
// dense
// ---------------------------------------------------------------------------

inline Tensor dense_forward(const Tensor& input, const Tensor& weights,
                            const Tensor& bias) {
    if (weights.rank() != 2)
        throw shape_error("dense_forward: weights must be MxN, got " + weights.shape_str());
    const std::size_t m = weights.extent(0), n = weights.extent(1);
    if (input.size() != n)
        throw shape_error("dense_forward: input " + input.shape_str() +
                          " does not match weights " + weights.shape_str());
    if (bias.size() != m)
        throw shape_error("dense_forward: bias " + bias.shape_str() + " vs " +
                          std::to_string(m) + " output units");
    Tensor out({m});
    const double* x = input.data();
    const double* wp = weights.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = wp + i * n;
        double acc = bias[i];
        for (std::size_t j = 0; j < n; ++j) acc += row[j] * x[j];
        out[i] = acc;
    }
    return out;
}

struct DenseGrads {
    Tensor input;
    Tensor weights;
    Tensor bias;
};

inline DenseGrads dense_backward(const Tensor& grad_out, const Tensor& input,
                                 const Tensor& weights) {
    const std::size_t m = weights.extent(0), n = weights.extent(1);
    if (grad_out.size() != m)
        throw shape_error("dense_backward: grad " + grad_out.shape_str() + " vs " +
                          std::to_string(m) + " output units");
    DenseGrads grads{Tensor({n}), Tensor({m, n}), grad_out};
    const double* g = grad_out.data();
    const double* x = input.data();
    const double* wp = weights.data();
    double* gin = grads.input.data();
    double* gw = grads.weights.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double gi = g[i];
        const double* row = wp + i * n;
        double* grow = gw + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            grow[j] = gi * x[j];
            gin[j] += gi * row[j];
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

struct DropoutResult {
    Tensor output;
    Tensor mask; // scaled: 0 for dropped elements, 1/(1-p) for survivors
};

/// Inverted dropout: training scales survivors by 1/(1-p) so inference is
/// the identity (equivalent to weighting test-time outputs by the keep
/// factor). The scaled mask doubles as the backward multiplier.
inline DropoutResult dropout_forward(const Tensor& input, double p, Rng& rng,
                                     Phase phase) {
    if (!(p >= 0.0 && p < 1.0))
        throw config_error("dropout probability must lie in [0,1), got " +
                           std::to_string(p));
    if (phase == Phase::infer || p == 0.0) {
        return {input, Tensor::full(input.shape(), 1.0)};
    }
    DropoutResult res{input, Tensor(input.shape())};
    const double scale = 1.0 / (1.0 - p);
    double* out = res.output.data();
    double* mask = res.mask.data();
    for (std::size_t i = 0; i < res.output.size(); ++i) {
        if (rng.next_double() < p) {
            out[i] = 0.0;
            mask[i] = 0.0;
        } else {
            out[i] *= scale;
            mask[i] = scale;
        }
    }
    return res;
}

inline Tensor dropout_backward(const Tensor& grad_out, const Tensor& mask) {
    require_same_shape(grad_out, mask, "dropout_backward");
    Tensor grad_in = grad_out;
    const double* m = mask.data();
    double* g = grad_in.data();
    for (std::size_t i = 0; i < grad_in.size(); ++i) g[i] *= m[i];
    return grad_in;
}

// ---------------------------------------------------------------------------
// canonical model text
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

} // namespace detail

inline std::string render_layer(const LayerSpec& layer) {
    switch (layer.kind) {
    case LayerKind::conv2d: {
        std::string s = "conv(" + std::to_string(layer.out_channels) + "," +
                        std::to_string(layer.kernel_size) + "," +
                        (layer.padding == Padding::same ? "same" : "valid");
        if (layer.stride != 1) s += "," + std::to_string(layer.stride);
        return s + ")";
    }
    case LayerKind::activation:
        return layer.fn == ActFn::relu ? "relu" : "softmax";
    case LayerKind::pool2d:
        return "pool(" + std::to_string(layer.pool_size) + "," +
               (layer.pool_mode == PoolMode::max ? "max" : "mean") + ")";
    case LayerKind::dropout:
        return "dropout(" + detail::fmt_double(layer.drop_p) + ")";
    case LayerKind::flatten:
        return "flatten";
    case LayerKind::dense:
        return "dense(" + std::to_string(layer.out_units) + ")";
    }
    throw contract_error("render_layer: unknown layer kind");
}

/// Parses one layer token of the form `name` or `name(arg,...)`.
inline LayerSpec parse_layer(const std::string& token);

/// Renders a full model as canonical text: an `input` line, a `classes`
/// line, then one layer per line. parse_model_spec inverts this exactly,
/// so save -> load -> save of a checkpoint is byte identical.
inline std::string render_model_spec(const ModelSpec& model) {
    std::string s = "input " + std::to_string(model.input_shape[0]) + "x" +
                    std::to_string(model.input_shape[1]) + "x" +
                    std::to_string(model.input_shape[2]) + "\n";
    s += "classes " + std::to_string(model.class_count) + "\n";
    for (const LayerSpec& layer : model.layers) s += render_layer(layer) + "\n";
    return s;
}

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_args(const std::string& inner) {
    std::vector<std::string> args;
    std::string cur;
    for (char c : inner) {
        if (c == ',') {
            args.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!trim(cur).empty() || !args.empty()) args.push_back(trim(cur));
    return args;
}

inline std::size_t parse_size(const std::string& s, const std::string& what) {
    std::size_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw parse_error("expected a positive integer for " + what + ", got '" + s + "'");
    return v;
}

inline double parse_double(const std::string& s, const std::string& what) {
    double v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw parse_error("expected a number for " + what + ", got '" + s + "'");
    return v;
}

} // namespace detail

inline LayerSpec parse_layer(const std::string& token) {
    const std::string t = detail::trim(token);
    const std::size_t open = t.find('(');
    std::string name = t;
    std::vector<std::string> args;
    if (open != std::string::npos) {
        if (t.back() != ')')
            throw parse_error("malformed layer token '" + t + "': missing ')'");
        name = detail::trim(t.substr(0, open));
        args = detail::split_args(t.substr(open + 1, t.size() - open - 2));
    }
    auto want = [&](std::size_t lo, std::size_t hi) {
        if (args.size() < lo || args.size() > hi)
            throw parse_error("layer '" + name + "' takes " + std::to_string(lo) +
                              (hi != lo ? ".." + std::to_string(hi) : "") +
                              " arguments, got " + std::to_string(args.size()));
    };
    if (name == "conv") {
        want(3, 4);
        Padding pad;
        if (args[2] == "same")
            pad = Padding::same;
        else if (args[2] == "valid")
            pad = Padding::valid;
        else
            throw parse_error("conv padding must be 'same' or 'valid', got '" + args[2] + "'");
        std::size_t stride = args.size() == 4 ? detail::parse_size(args[3], "conv stride") : 1;
        return LayerSpec::conv(detail::parse_size(args[0], "conv out_channels"),
                               detail::parse_size(args[1], "conv kernel_size"), pad, stride);
    }
    if (name == "relu") {
        want(0, 0);
        return LayerSpec::activation(ActFn::relu);
    }
    if (name == "softmax") {
        want(0, 0);
        return LayerSpec::activation(ActFn::softmax);
    }
    if (name == "pool") {
        want(2, 2);
        PoolMode mode;
        if (args[1] == "max")
            mode = PoolMode::max;
        else if (args[1] == "mean")
            mode = PoolMode::mean;
        else
            throw parse_error("pool mode must be 'max' or 'mean', got '" + args[1] + "'");
        return LayerSpec::pool(detail::parse_size(args[0], "pool size"), mode);
    }
    if (name == "dropout") {
        want(1, 1);
        return LayerSpec::dropout(detail::parse_double(args[0], "dropout p"));
    }
    if (name == "flatten") {
        want(0, 0);
        return LayerSpec::flat();
    }
    if (name == "dense") {
        want(1, 1);
        return LayerSpec::dense(detail::parse_size(args[0], "dense units"));
    }
    throw parse_error("unknown layer '" + name +
                      "'; expected conv, relu, softmax, pool, dropout, flatten or dense");
}

inline ModelSpec parse_model_spec(const std::string& text) {
    ModelSpec model;
    bool have_input = false, have_classes = false;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t nl = text.find('\n', pos);
        std::string line = detail::trim(
            nl == std::string::npos ? text.substr(pos) : text.substr(pos, nl - pos));
        pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
        if (line.empty()) continue;
        if (line.rfind("input ", 0) == 0) {
            const std::string dims = detail::trim(line.substr(6));
            std::size_t a = dims.find('x'), b = dims.rfind('x');
            if (a == std::string::npos || b == a)
                throw parse_error("input shape must be CxHxW, got '" + dims + "'");
            model.input_shape = {detail::parse_size(dims.substr(0, a), "input channels"),
                                 detail::parse_size(dims.substr(a + 1, b - a - 1), "input height"),
                                 detail::parse_size(dims.substr(b + 1), "input width")};
            have_input = true;
        } else if (line.rfind("classes ", 0) == 0) {
            model.class_count = detail::parse_size(detail::trim(line.substr(8)), "classes");
            have_classes = true;
        } else {
            model.layers.push_back(parse_layer(line));
        }
    }
    if (!have_input) throw parse_error("model text is missing the 'input CxHxW' line");
    if (!have_classes) throw parse_error("model text is missing the 'classes K' line");
    return model;
}

} // namespace cnf

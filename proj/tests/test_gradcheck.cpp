#include <gtest/gtest.h>

#include "cnf/layers.hpp"
#include "cnf/loss.hpp"
#include "cnf/model.hpp"
#include "cnf/rng.hpp"
#include "test_util.hpp"

using namespace cnf;
using testutil::fd_gradient;
using testutil::max_grad_error;
using testutil::random_tensor;
using testutil::weighted_sum;

namespace {

constexpr double kTol = 1e-6;
constexpr int kTrials = 20;

} // namespace

TEST(GradCheck, ConvSpecFixture) {
    // random 1x4x4 input, 2 kernels 3x3, valid paddingvs central differences
    Rng rng(2024);
    const Tensor input = random_tensor({1, 4, 4}, rng);
    const Tensor weights = random_tensor({2, 1, 3, 3}, rng);
    const Tensor bias = random_tensor({2}, rng);
    const Tensor cot = random_tensor({2, 2, 2}, rng);

    const ConvGrads analytic = conv2d_backward(cot, input, weights, 1, Padding::valid);

    const Tensor fd_in = fd_gradient(input, [&](const Tensor& x) {
        return weighted_sum(conv2d_forward(x, weights, bias, 1, Padding::valid), cot);
    });
    const Tensor fd_w = fd_gradient(weights, [&](const Tensor& w) {
        return weighted_sum(conv2d_forward(input, w, bias, 1, Padding::valid), cot);
    });
    const Tensor fd_b = fd_gradient(bias, [&](const Tensor& b) {
        return weighted_sum(conv2d_forward(input, weights, b, 1, Padding::valid), cot);
    });
    EXPECT_LT(max_grad_error(analytic.input, fd_in), kTol);
    EXPECT_LT(max_grad_error(analytic.weights, fd_w), kTol);
    EXPECT_LT(max_grad_error(analytic.bias, fd_b), kTol);
}

TEST(GradCheck, ConvValidAndSame) {
    Rng rng(100);
    for (int trial = 0; trial < kTrials; ++trial) {
        const Padding pad = trial % 2 ? Padding::same : Padding::valid;
        const std::size_t cin = 1 + rng.below(2), cout = 1 + rng.below(3);
        const std::size_t h = 4 + rng.below(3), w = 4 + rng.below(3);
        const std::size_t k = 1 + rng.below(3);
        const std::size_t stride = 1 + rng.below(2);
        const Tensor input = random_tensor({cin, h, w}, rng);
        const Tensor weights = random_tensor({cout, cin, k, k}, rng);
        const Tensor bias = random_tensor({cout}, rng);
        const Tensor out = conv2d_forward(input, weights, bias, stride, pad);
        const Tensor cot = random_tensor(out.shape(), rng);

        const ConvGrads analytic = conv2d_backward(cot, input, weights, stride, pad);
        const Tensor fd_in = fd_gradient(input, [&](const Tensor& x) {
            return weighted_sum(conv2d_forward(x, weights, bias, stride, pad), cot);
        });
        const Tensor fd_w = fd_gradient(weights, [&](const Tensor& ww) {
            return weighted_sum(conv2d_forward(input, ww, bias, stride, pad), cot);
        });
        const Tensor fd_b = fd_gradient(bias, [&](const Tensor& b) {
            return weighted_sum(conv2d_forward(input, weights, b, stride, pad), cot);
        });
        EXPECT_LT(max_grad_error(analytic.input, fd_in), kTol) << "trial " << trial;
        EXPECT_LT(max_grad_error(analytic.weights, fd_w), kTol) << "trial " << trial;
        EXPECT_LT(max_grad_error(analytic.bias, fd_b), kTol) << "trial " << trial;
    }
}

TEST(GradCheck, MeanPool) {
    Rng rng(200);
    for (int trial = 0; trial < kTrials; ++trial) {
        const std::size_t c = 1 + rng.below(3), s = 2 + rng.below(2);
        const std::size_t h = s * (1 + rng.below(3)) + rng.below(2);
        const std::size_t w = s * (1 + rng.below(3)) + rng.below(2);
        const Tensor input = random_tensor({c, h, w}, rng);
        const PoolResult fwd = pool2d_forward(input, s, PoolMode::mean);
        const Tensor cot = random_tensor(fwd.output.shape(), rng);
        const Tensor analytic =
            pool2d_backward(cot, input.shape(), s, PoolMode::mean, {});
        const Tensor fd = fd_gradient(input, [&](const Tensor& x) {
            return weighted_sum(pool2d_forward(x, s, PoolMode::mean).output, cot);
        });
        EXPECT_LT(max_grad_error(analytic, fd), kTol) << "trial " << trial;
    }
}

TEST(GradCheck, MaxPool) {
    // margins keep the argmax stable under the finite-difference probes
    Rng rng(300);
    for (int trial = 0; trial < kTrials; ++trial) {
        const std::size_t c = 1 + rng.below(2), s = 2;
        const std::size_t h = 4, w = 4;
        Tensor input({c, h, w});
        for (double& v : input.values()) v = rng.uniform(-1.0, 1.0);
        for (std::size_t i = 0; i + 1 < input.size(); ++i) // separate close values
            for (std::size_t j = i + 1; j < input.size(); ++j)
                if (std::abs(input[i] - input[j]) < 1e-3) input[j] += 0.01;
        const PoolResult fwd = pool2d_forward(input, s, PoolMode::max);
        const Tensor cot = random_tensor(fwd.output.shape(), rng);
        const Tensor analytic =
            pool2d_backward(cot, input.shape(), s, PoolMode::max, fwd.argmax);
        const Tensor fd = fd_gradient(input, [&](const Tensor& x) {
            return weighted_sum(pool2d_forward(x, s, PoolMode::max).output, cot);
        });
        EXPECT_LT(max_grad_error(analytic, fd), kTol) << "trial " << trial;
    }
}

TEST(GradCheck, Relu) {
    Rng rng(400);
    for (int trial = 0; trial < kTrials; ++trial) {
        Tensor input = random_tensor({2, 3, 3}, rng);
        for (double& v : input.values()) // keep probes away from the kink at 0
            if (std::abs(v) < 1e-3) v += 0.01;
        const Tensor cot = random_tensor(input.shape(), rng);
        const Tensor analytic = relu_backward(cot, input);
        const Tensor fd = fd_gradient(input, [&](const Tensor& x) {
            return weighted_sum(relu(x), cot);
        });
        EXPECT_LT(max_grad_error(analytic, fd), kTol) << "trial " << trial;
    }
}

TEST(GradCheck, Dense) {
    Rng rng(500);
    for (int trial = 0; trial < kTrials; ++trial) {
        const std::size_t m = 1 + rng.below(5), n = 1 + rng.below(6);
        const Tensor x = random_tensor({n}, rng);
        const Tensor w = random_tensor({m, n}, rng);
        const Tensor b = random_tensor({m}, rng);
        const Tensor cot = random_tensor({m}, rng);

        const DenseGrads analytic = dense_backward(cot, x, w);
        const Tensor fd_x = fd_gradient(x, [&](const Tensor& t) {
            return weighted_sum(dense_forward(t, w, b), cot);
        });
        const Tensor fd_w = fd_gradient(w, [&](const Tensor& t) {
            return weighted_sum(dense_forward(x, t, b), cot);
        });
        const Tensor fd_b = fd_gradient(b, [&](const Tensor& t) {
            return weighted_sum(dense_forward(x, w, t), cot);
        });
        EXPECT_LT(max_grad_error(analytic.input, fd_x), kTol) << "trial " << trial;
        EXPECT_LT(max_grad_error(analytic.weights, fd_w), kTol) << "trial " << trial;
        EXPECT_LT(max_grad_error(analytic.bias, fd_b), kTol) << "trial " << trial;
    }
}

TEST(GradCheck, DropoutWithFixedMask) {
    Rng rng(600);
    for (int trial = 0; trial < kTrials; ++trial) {
        const Tensor input = random_tensor({4, 4}, rng);
        Rng mask_rng(trial + 1);
        const DropoutResult fwd = dropout_forward(input, 0.3, mask_rng, Phase::train);
        const Tensor cot = random_tensor(input.shape(), rng);
        const Tensor analytic = dropout_backward(cot, fwd.mask);
        // the mask is fixed; the forward is then a linear map
        const Tensor fd = fd_gradient(input, [&](const Tensor& x) {
            Tensor masked = x;
            for (std::size_t i = 0; i < masked.size(); ++i) masked[i] *= fwd.mask[i];
            return weighted_sum(masked, cot);
        });
        EXPECT_LT(max_grad_error(analytic, fd), kTol) << "trial " << trial;
    }
}

TEST(GradCheck, SoftmaxCrossEntropyFused) {
    Rng rng(700);
    for (int trial = 0; trial < kTrials; ++trial) {
        const std::size_t batch = 1 + rng.below(4), k = 2 + rng.below(4);
        const Tensor logits = random_tensor({batch, k}, rng, -2.0, 2.0);
        std::vector<std::size_t> labels(batch);
        for (auto& l : labels) l = rng.below(k);

        const Tensor analytic = softmax_ce_gradient(logits, labels);
        const Tensor fd = fd_gradient(logits, [&](const Tensor& z) {
            Tensor probs({batch, k});
            for (std::size_t r = 0; r < batch; ++r) {
                Tensor row({k});
                for (std::size_t c = 0; c < k; ++c) row[c] = z(r, c);
                const Tensor p = softmax(row);
                for (std::size_t c = 0; c < k; ++c) probs(r, c) = p[c];
            }
            return categorical_cross_entropy(probs, labels);
        });
        EXPECT_LT(max_grad_error(analytic, fd), kTol) << "trial " << trial;
    }
}

TEST(GradCheck, SoftmaxBackwardJacobian) {
    Rng rng(800);
    for (int trial = 0; trial < kTrials; ++trial) {
        const Tensor logits = random_tensor({5}, rng, -2.0, 2.0);
        const Tensor cot = random_tensor({5}, rng);
        const Tensor p = softmax(logits);
        const Tensor analytic = softmax_backward(cot, p);
        const Tensor fd = fd_gradient(logits, [&](const Tensor& z) {
            return weighted_sum(softmax(z), cot);
        });
        EXPECT_LT(max_grad_error(analytic, fd), kTol) << "trial " << trial;
    }
}

TEST(GradCheck, WholeNetworkThroughLoss) {
    // end-to-end: conv -> relu -> pool -> flatten -> dense -> softmax + CE
    ModelSpec spec;
    spec.input_shape = {1, 6, 6};
    spec.class_count = 3;
    spec.layers = {
        LayerSpec::conv(2, 3, Padding::same), LayerSpec::activation(ActFn::relu),
        LayerSpec::pool(2, PoolMode::max),    LayerSpec::flat(),
        LayerSpec::dense(3),                  LayerSpec::activation(ActFn::softmax),
    };
    Rng rng(900);
    Network net(spec);
    net.init_params(rng);
    const Tensor image = random_tensor({1, 6, 6}, rng, 0.0, 1.0);
    const std::size_t label = 1;

    net.zero_grads();
    const Tensor probs = net.forward(image, Phase::train);
    Tensor grad_logits = probs;
    grad_logits[label] -= 1.0;
    net.backward_from_logits(grad_logits);

    auto params = net.parameters();
    auto grads = net.gradients();
    for (std::size_t t = 0; t < params.size(); ++t) {
        const Tensor fd = fd_gradient(*params[t], [&](const Tensor& p) {
            const Tensor saved = *params[t];
            *params[t] = p;
            const Tensor out = net.forward(image, Phase::train);
            *params[t] = saved;
            return -std::log(out[label]);
        });
        EXPECT_LT(max_grad_error(*grads[t], fd), 1e-5) << "tensor " << t;
    }
}

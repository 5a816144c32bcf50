#include <gtest/gtest.h>

#include <cmath>

#include "cnf/optim.hpp"
#include "test_util.hpp"

using namespace cnf;

// --- batch iterator -------------------------------------------------------------

TEST(BatchIterator, PartitionArithmetic) {
    Rng rng(1);
    const auto batches = batch_indices(10, 4, rng);
    ASSERT_EQ(batches.size(), 3u);
    EXPECT_EQ(batches[0].size(), 4u);
    EXPECT_EQ(batches[1].size(), 4u);
    EXPECT_EQ(batches[2].size(), 2u); // final short batch kept
}

TEST(BatchIterator, OversizedBatchIsOnePermutation) {
    Rng rng(2);
    const auto batches = batch_indices(6, 100, rng);
    ASSERT_EQ(batches.size(), 1u);
    std::vector<bool> seen(6, false);
    for (std::size_t i : batches[0]) seen[i] = true;
    for (bool s : seen) EXPECT_TRUE(s);
}

TEST(BatchIterator, SeedDeterminism) {
    Rng a(77), b(77), c(78);
    const auto ba = batch_indices(50, 8, a);
    const auto bb = batch_indices(50, 8, b);
    const auto bc = batch_indices(50, 8, c);
    EXPECT_EQ(ba, bb);
    EXPECT_NE(ba, bc);
}

TEST(BatchIterator, CoversEverySampleOncePerEpoch) {
    Rng rng(3);
    const auto batches = batch_indices(23, 5, rng);
    std::vector<int> count(23, 0);
    for (const auto& batch : batches)
        for (std::size_t i : batch) count[i] += 1;
    for (int c : count) EXPECT_EQ(c, 1);
}

TEST(BatchIterator, EmptyDatasetThrows) {
    Rng rng(1);
    EXPECT_THROW(batch_indices(0, 4, rng), data_error);
}

// --- sgd -------------------------------------------------------------------------

TEST(Sgd, ZeroGradientLeavesParams) {
    Tensor theta({3}, {1, 2, 3});
    const Tensor grad = Tensor::zeros({3});
    sgd_step(theta, grad, 0.5);
    EXPECT_DOUBLE_EQ(theta[0], 1.0);
    EXPECT_DOUBLE_EQ(theta[2], 3.0);
}

TEST(Sgd, HandStep) {
    Tensor theta({1}, {1.0});
    const Tensor grad({1}, {2.0});
    sgd_step(theta, grad, 0.1);
    EXPECT_DOUBLE_EQ(theta[0], 0.8);
}

TEST(Sgd, TwoStepsEqualDoubleRate) {
    const Tensor grad({1}, {0.3});
    Tensor a({1}, {1.0}), b({1}, {1.0});
    sgd_step(a, grad, 0.1);
    sgd_step(a, grad, 0.1);
    sgd_step(b, grad, 0.2);
    EXPECT_NEAR(a[0], b[0], 1e-15);
}

TEST(Sgd, ShapeMismatchThrows) {
    Tensor theta({2});
    const Tensor grad({3});
    EXPECT_THROW(sgd_step(theta, grad, 0.1), shape_error);
}

TEST(Sgd, QuadraticConvergence) {
    // f(theta) = theta^2, grad = 2 theta; (1 - 2*0.1)^200 collapses to ~0
    Tensor theta({1}, {1.0});
    for (int step = 0; step < 200; ++step) {
        const Tensor grad({1}, {2.0 * theta[0]});
        sgd_step(theta, grad, 0.1);
    }
    EXPECT_LT(std::abs(theta[0]), 1e-6);
}

// --- adam -------------------------------------------------------------------------

TEST(Adam, FirstStepClosedForm) {
    Tensor theta({1}, {0.0});
    const Tensor grad({1}, {1.0});
    AdamState st;
    st.alpha = 0.1;
    std::vector<Tensor*> params{&theta};
    st.init(params);
    adam_step(theta, grad, st);
    EXPECT_NEAR(theta[0], -0.1 / (1.0 + 1e-8), 1e-12);
    EXPECT_NEAR(st.m[0][0], 0.1, 1e-15);
    EXPECT_NEAR(st.v[0][0], 0.001, 1e-15);
    EXPECT_EQ(st.step_count, 1u);
}

TEST(Adam, ZeroGradientFromFreshState) {
    Tensor theta({2}, {0.4, -0.7});
    const Tensor grad = Tensor::zeros({2});
    AdamState st;
    std::vector<Tensor*> params{&theta};
    st.init(params);
    for (int i = 0; i < 5; ++i) adam_step(theta, grad, st);
    EXPECT_DOUBLE_EQ(theta[0], 0.4);
    EXPECT_DOUBLE_EQ(theta[1], -0.7);
}

TEST(Adam, ConstantGradientStepApproachesAlpha) {
    Tensor theta({1}, {0.0});
    const Tensor grad({1}, {3.0});
    AdamState st;
    st.alpha = 0.01;
    std::vector<Tensor*> params{&theta};
    st.init(params);
    double prev = theta[0];
    double step_size = 0.0;
    for (int i = 0; i < 500; ++i) {
        adam_step(theta, grad, st);
        step_size = prev - theta[0];
        prev = theta[0];
    }
    // bias correction saturates: |delta theta| -> alpha regardless of |g|
    EXPECT_NEAR(step_size, st.alpha, 1e-6);
}

TEST(Adam, FirstStepMagnitudeWindow) {
    // |delta| in [0.99 alpha, alpha] for any |g| >= 1e-3 with defaults
    for (double g : {1e-3, 0.05, 1.0, 250.0}) {
        for (double sign : {1.0, -1.0}) {
            Tensor theta({1}, {0.0});
            const Tensor grad({1}, {sign * g});
            AdamState st;
            st.alpha = 0.1;
            std::vector<Tensor*> params{&theta};
            st.init(params);
            adam_step(theta, grad, st);
            const double delta = std::abs(theta[0]);
            EXPECT_GE(delta, 0.99 * st.alpha) << "g=" << g;
            EXPECT_LE(delta, st.alpha) << "g=" << g;
            EXPECT_EQ(theta[0] > 0, sign < 0);
        }
    }
}

TEST(Adam, DeterministicBitwise) {
    auto run = [] {
        Tensor theta({3}, {0.3, -0.2, 0.9});
        AdamState st;
        std::vector<Tensor*> params{&theta};
        st.init(params);
        Rng rng(5);
        for (int i = 0; i < 50; ++i) {
            const Tensor grad({3}, {rng.normal(), rng.normal(), rng.normal()});
            adam_step(theta, grad, st);
        }
        return theta;
    };
    const Tensor a = run(), b = run();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Adam, QuadraticConvergence) {
    Tensor theta({1}, {1.0});
    AdamState st;
    st.alpha = 0.1;
    std::vector<Tensor*> params{&theta};
    st.init(params);
    for (int step = 0; step < 200; ++step) {
        const Tensor grad({1}, {2.0 * theta[0]});
        adam_step(theta, grad, st);
    }
    EXPECT_LT(std::abs(theta[0]), 1e-3);
}

TEST(Adam, ShapeMismatchThrows) {
    Tensor theta({2});
    const Tensor grad({3});
    AdamState st;
    std::vector<Tensor*> params{&theta};
    st.init(params);
    EXPECT_THROW(adam_step(theta, grad, st), shape_error);
}

TEST(Adam, SecondMomentNonNegative) {
    Rng rng(31);
    Tensor theta({4});
    AdamState st;
    std::vector<Tensor*> params{&theta};
    st.init(params);
    for (int i = 0; i < 100; ++i) {
        const Tensor grad = testutil::random_tensor({4}, rng, -5.0, 5.0);
        adam_step(theta, grad, st);
        for (double v : st.v[0].values()) EXPECT_GE(v, 0.0);
    }
}

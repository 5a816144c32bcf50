#include <gtest/gtest.h>

#include "cnf/tensor.hpp"

using cnf::Tensor;

TEST(Tensor, ShapeVolumeMatchesDataLength) {
    Tensor t({2, 3, 4});
    EXPECT_EQ(t.size(), 24u);
    EXPECT_EQ(t.rank(), 3u);
    EXPECT_EQ(t.extent(1), 3u);
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(t[i], 0.0);
}

TEST(Tensor, MismatchedDataThrows) {
    EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), cnf::shape_error);
}

TEST(Tensor, ZeroExtentThrows) {
    EXPECT_THROW(Tensor({2, 0, 3}), cnf::shape_error);
}

TEST(Tensor, IndexedAccess) {
    Tensor t({2, 2}, {1, 2, 3, 4});
    EXPECT_EQ(t(0, 0), 1.0);
    EXPECT_EQ(t(0, 1), 2.0);
    EXPECT_EQ(t(1, 0), 3.0);
    t(1, 1) = 9.0;
    EXPECT_EQ(t[3], 9.0);

    Tensor u({2, 2, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
    EXPECT_EQ(u(1, 0, 1), 5.0);
    EXPECT_EQ(u(0, 1, 0), 2.0);
}

TEST(Tensor, ReshapePreservesData) {
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor r = t.reshaped({6});
    EXPECT_EQ(r.rank(), 1u);
    EXPECT_EQ(r[4], 5.0);
    EXPECT_THROW(t.reshaped({5}), cnf::shape_error);
}

TEST(Tensor, FiniteCheck) {
    Tensor t({2}, {1.0, 2.0});
    EXPECT_TRUE(t.all_finite());
    t[0] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_FALSE(t.all_finite());
    t[0] = std::numeric_limits<double>::infinity();
    EXPECT_FALSE(t.all_finite());
}

TEST(Tensor, FullAndFill) {
    Tensor t = Tensor::full({3}, 2.5);
    EXPECT_EQ(t[2], 2.5);
    t.fill(-1.0);
    EXPECT_EQ(t[0], -1.0);
}

TEST(Tensor, ShapeString) {
    Tensor t({2, 3});
    EXPECT_EQ(t.shape_str(), "[2x3]");
}

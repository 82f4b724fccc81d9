#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "vidguide/autograd.hpp"
#include "vidguide/errors.hpp"
#include "vidguide/finite_diff.hpp"
#include "vidguide/ops.hpp"
#include "vidguide/tensor.hpp"

using namespace vidguide;

namespace {

Tensor random_tensor(Shape shape, unsigned seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = u(rng);
    return Tensor(std::move(shape), std::move(data));
}

// Checks a scalar objective against central differences.
void expect_gradient(const GraphObjective& f, const Tensor& z, double tol = 1e-6, double step = 1e-5) {
    const FiniteDiffReport r = finite_diff_check(f, z, step);
    EXPECT_LE(r.max_rel_error, tol) << "worst coordinate " << r.worst_index << " analytic " << r.worst_analytic
                                    << " numeric " << r.worst_numeric;
    EXPECT_EQ(r.coordinates_checked, z.size());
}

}  // namespace

TEST(Tensor, ShapeMustMatchData) {
    EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
    const Tensor t({2, 3}, std::vector<double>(6, 1.0));
    EXPECT_EQ(t.size(), 6u);
    EXPECT_EQ(t.dim(1), 3u);
    EXPECT_THROW(t.dim(2), DimensionError);
}

TEST(Tensor, ItemRequiresSingleElement) {
    EXPECT_DOUBLE_EQ(Tensor::scalar(2.5).item(), 2.5);
    EXPECT_THROW(Tensor::from({1.0, 2.0}).item(), ContractError);
}

TEST(Tensor, ReshapeKeepsData) {
    const Tensor t = Tensor::from({1, 2, 3, 4, 5, 6}).reshaped({2, 3});
    EXPECT_EQ(t.shape(), (Shape{2, 3}));
    EXPECT_EQ(t[4], 5.0);
    EXPECT_THROW(t.reshaped({4, 2}), DimensionError);
}

TEST(Tensor, BitIdenticalDistinguishesSignedZero) {
    EXPECT_TRUE(bit_identical(Tensor::from({0.0}), Tensor::from({0.0})));
    EXPECT_FALSE(bit_identical(Tensor::from({0.0}), Tensor::from({-0.0})));
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
    const Tensor m = random_tensor({2, 2}, 7);
    const Tensor eye({2, 2}, {1, 0, 0, 1});
    EXPECT_EQ(ops::matmul(constant(eye), constant(m)).value(), m);
    const Tensor a({2, 2}, {1, 2, 3, 4});
    EXPECT_EQ(ops::matmul(constant(a), constant(eye)).value(), a);
}

TEST(Matmul, HandArithmetic) {
    const Tensor a({2, 2}, {1, 2, 3, 4});
    const Tensor b({2, 1}, {5, 6});
    const Tensor c = ops::matmul(constant(a), constant(b)).value();
    EXPECT_EQ(c.shape(), (Shape{2, 1}));
    EXPECT_EQ(c[0], 17.0);
    EXPECT_EQ(c[1], 39.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    try {
        ops::matmul(constant(Tensor::zeros({2, 3})), constant(Tensor::zeros({2, 2})));
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[2, 2]"), std::string::npos) << msg;
    }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
    const Tensor b = random_tensor({3, 4}, 2);
    expect_gradient([&](const Var& a) { return ops::sum(ops::square(ops::matmul(a, constant(b)))); },
                    random_tensor({2, 3}, 1));
    const Tensor a = random_tensor({2, 2, 3}, 3);
    expect_gradient([&](const Var& x) { return ops::sum(ops::tanh(ops::matmul(constant(a), x))); },
                    random_tensor({2, 3, 2}, 4));
}

TEST(Softmax, SymmetricInputIsUniform) {
    const Tensor s = ops::softmax_lastdim(constant(Tensor::from({0.0, 0.0}))).value();
    EXPECT_EQ(s[0], 0.5);
    EXPECT_EQ(s[1], 0.5);
}

TEST(Softmax, ShiftInvariance) {
    for (double c : {-1000.0, -3.5, 0.0, 2.0, 700.0}) {
        const Tensor s = ops::softmax_lastdim(constant(Tensor::from({c, c, c}))).value();
        for (double v : s.vec()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
    }
}

TEST(Softmax, ClosedForm) {
    const Tensor s = ops::softmax_lastdim(constant(Tensor::from({std::log(1.0), std::log(3.0)}))).value();
    EXPECT_NEAR(s[0], 0.25, 1e-15);
    EXPECT_NEAR(s[1], 0.75, 1e-15);
}

TEST(Softmax, RowsAreDistributions) {
    const Tensor x = random_tensor({4, 5, 7}, 11, -50.0, 50.0);
    const Tensor s = ops::softmax_lastdim(constant(x)).value();
    for (std::size_t r = 0; r < 20; ++r) {
        double total = 0.0;
        for (std::size_t k = 0; k < 7; ++k) {
            EXPECT_GE(s[r * 7 + k], 0.0);
            total += s[r * 7 + k];
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
    EXPECT_TRUE(s.all_finite());
}

TEST(Softmax, EmptyTensorIsDimensionError) {
    EXPECT_THROW(ops::softmax_lastdim(constant(Tensor({0}, {}))), DimensionError);
    EXPECT_THROW(ops::softmax_lastdim(constant(Tensor({3, 0}, {}))), DimensionError);
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
    const Tensor w = random_tensor({3, 5}, 5);
    expect_gradient([&](const Var& x) { return ops::sum(ops::mul(ops::softmax_lastdim(x), constant(w))); },
                    random_tensor({3, 5}, 6, -2.0, 2.0));
}

TEST(Backward, SumGivesOnes) {
    const Var z = leaf(random_tensor({2, 3, 4}, 9));
    const Tensor g = backward(ops::sum(z), z);
    EXPECT_EQ(g.shape(), (Shape{2, 3, 4}));
    for (double v : g.vec()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, HalfSquaredNorm) {
    const Var z = leaf(Tensor::from({3.0, 4.0}));
    const Tensor g = backward(ops::scale(ops::sum(ops::square(z)), 0.5), z);
    EXPECT_EQ(g[0], 3.0);
    EXPECT_EQ(g[1], 4.0);
}

TEST(Backward, NonScalarLossIsContractError) {
    const Var z = leaf(Tensor::from({1.0, 2.0}));
    EXPECT_THROW(backward(ops::square(z), z), ContractError);
}

TEST(Backward, SharedSubgraphVisitedOnce) {
    // y = x*x used twice: d/dx (y + y) = 4x.
    const Var x = leaf(Tensor::from({1.5, -2.0}));
    const Var y = ops::mul(x, x);
    const Tensor g = backward(ops::sum(ops::add(y, y)), x);
    EXPECT_EQ(g[0], 6.0);
    EXPECT_EQ(g[1], -8.0);
}

TEST(Backward, UnreachedLeafGetsZeros) {
    const Var a = leaf(Tensor::from({1.0, 2.0}));
    const Var b = leaf(Tensor::from({3.0}));
    const Var loss = ops::sum(a);
    const Var leaves[] = {a, b};
    const std::vector<Tensor> g = backward(loss, leaves);
    EXPECT_EQ(g[1], Tensor::zeros({1}));
}

TEST(Backward, DeterministicForFixedGraph) {
    const Tensor w = random_tensor({6, 6}, 21);
    auto f = [&](const Var& x) {
        return ops::sum(ops::softmax_lastdim(ops::matmul(ops::silu(x), constant(w))));
    };
    const Tensor x0 = random_tensor({4, 6}, 22);
    const Var x1 = leaf(x0);
    const Var x2 = leaf(x0);
    EXPECT_TRUE(bit_identical(backward(f(x1), x1), backward(f(x2), x2)));
}

TEST(Backward, DeepChainDoesNotOverflowStack) {
    Var x = leaf(Tensor::from({0.5}));
    Var y = x;
    for (int i = 0; i < 20000; ++i) y = ops::add_scalar(y, 0.0);
    EXPECT_EQ(backward(ops::sum(y), x)[0], 1.0);
}

TEST(Broadcast, TrailingSuffixOnly) {
    const Var a = constant(Tensor::zeros({2, 3}));
    EXPECT_EQ(ops::add(a, constant(Tensor::from({1, 2, 3}))).value()[5], 3.0);
    EXPECT_THROW(ops::add(a, constant(Tensor::from({1, 2}))), DimensionError);
    EXPECT_THROW(ops::mul(constant(Tensor::zeros({3})), a), DimensionError);
}

TEST(ElementwiseOps, GradientsMatchFiniteDifferences) {
    const Tensor other = random_tensor({3, 4}, 31, 0.5, 1.5);
    const Tensor bias = random_tensor({4}, 32);
    const Tensor pos = random_tensor({3, 4}, 33, 0.5, 2.0);
    expect_gradient([&](const Var& x) { return ops::sum(ops::mul(ops::add(x, constant(bias)), constant(other))); },
                    random_tensor({3, 4}, 34));
    expect_gradient([&](const Var& x) { return ops::sum(ops::mul(constant(other), ops::add(constant(pos), x))); },
                    random_tensor({4}, 35));
    expect_gradient([&](const Var& x) { return ops::sum(ops::div(constant(other), x)); }, pos);
    expect_gradient([&](const Var& x) { return ops::sum(ops::div(x, constant(other))); }, pos);
    expect_gradient([&](const Var& x) { return ops::sum(ops::sub(ops::sqrt(x), ops::log(x))); }, pos);
    expect_gradient([&](const Var& x) { return ops::sum(ops::exp(ops::neg(x))); }, pos);
    expect_gradient([&](const Var& x) { return ops::mean(ops::silu(x)); }, random_tensor({3, 4}, 36, -3.0, 3.0));
    expect_gradient([&](const Var& x) { return ops::sum(ops::square(ops::clamp(x, -0.9, 0.9))); },
                    random_tensor({3, 4}, 37, -0.8, 0.8));
}

TEST(ShapeOps, GradientsMatchFiniteDifferences) {
    const Tensor w = random_tensor({2, 3, 4}, 41);
    expect_gradient([&](const Var& x) { return ops::sum(ops::mul(ops::expand_last(ops::sum_lastdim(x), 4), constant(w))); },
                    random_tensor({2, 3, 4}, 42));
    expect_gradient([&](const Var& x) { return ops::sum(ops::square(ops::select_last(x, 2))); },
                    random_tensor({2, 3, 4}, 43));
    const Tensor w2 = random_tensor({3, 2, 4}, 44);
    expect_gradient([&](const Var& x) { return ops::sum(ops::mul(ops::swap_leading(x), constant(w2))); },
                    random_tensor({2, 3, 4}, 45));
    const Tensor w3 = random_tensor({2, 4, 3}, 46);
    expect_gradient([&](const Var& x) { return ops::sum(ops::mul(ops::transpose_last2(x), constant(w3))); },
                    random_tensor({2, 3, 4}, 47));
}

TEST(PixelOps, LayoutRoundTrip) {
    const Tensor z = random_tensor({2, 3, 4, 6}, 51);
    const Var px = ops::to_pixels(constant(z));
    EXPECT_EQ(px.shape(), (Shape{2, 24, 3}));
    // Pixel (r=1, c=2) channel 1 of frame 1.
    EXPECT_EQ(px.value()[(1 * 24 + 1 * 6 + 2) * 3 + 1], z[((1 * 3 + 1) * 4 + 1) * 6 + 2]);
    EXPECT_EQ(ops::from_pixels(px, 4, 6).value(), z);
}

TEST(PixelOps, PoolAndUpsampleValues) {
    // One 2x2 grid, single channel.
    const Tensor x({1, 4, 1}, {1, 2, 3, 6});
    EXPECT_EQ(ops::avgpool2(constant(x), 2, 2).value().vec(), std::vector<double>{3.0});
    const Tensor up = ops::upsample2(constant(Tensor({1, 1, 1}, {5.0})), 1, 1).value();
    EXPECT_EQ(up.vec(), std::vector<double>(4, 5.0));
}

TEST(PixelOps, SmoothingPreservesConstantsAndAveragesNeighbours) {
    const Tensor c = Tensor::filled({1, 12, 2}, 3.0);
    const Tensor sc = ops::smooth3(constant(c), 3, 4).value();
    for (double v : sc.vec()) EXPECT_NEAR(v, 3.0, 1e-15);
    // Delta at the corner of a 3x3 grid spreads over the four cells that see it.
    std::vector<double> d(9, 0.0);
    d[0] = 1.0;
    const Tensor s = ops::smooth3(constant(Tensor({1, 9, 1}, d)), 3, 3).value();
    EXPECT_NEAR(s[0], 1.0 / 4.0, 1e-15);
    EXPECT_NEAR(s[1], 1.0 / 6.0, 1e-15);
    EXPECT_NEAR(s[4], 1.0 / 9.0, 1e-15);
    EXPECT_EQ(s[2], 0.0);
}

TEST(PixelOps, GradientsMatchFiniteDifferences) {
    const Tensor w = random_tensor({2, 6, 3}, 61);
    expect_gradient([&](const Var& x) { return ops::sum(ops::mul(ops::upsample2(ops::avgpool2(x, 4, 6), 2, 3), constant(Tensor::filled({2, 24, 3}, 0.5)))); },
                    random_tensor({2, 24, 3}, 62));
    expect_gradient([&](const Var& x) { return ops::sum(ops::mul(ops::avgpool2(x, 4, 6), constant(w))); },
                    random_tensor({2, 24, 3}, 63));
    const Tensor w2 = random_tensor({2, 24, 3}, 64);
    expect_gradient([&](const Var& x) { return ops::sum(ops::mul(ops::smooth3(x, 4, 6), constant(w2))); },
                    random_tensor({2, 24, 3}, 65));
    const Tensor w3 = random_tensor({2, 3, 4, 6}, 66);
    expect_gradient([&](const Var& x) { return ops::sum(ops::mul(ops::from_pixels(ops::to_pixels(x), 4, 6), constant(w3))); },
                    random_tensor({2, 3, 4, 6}, 67));
}

TEST(FiniteDiff, SumHasUnitGradient) {
    const FiniteDiffReport r = finite_diff_check([](const Var& x) { return ops::sum(x); }, random_tensor({5}, 71), 1e-5);
    EXPECT_LE(r.max_rel_error, 1e-9);
    EXPECT_EQ(r.coordinates_checked, 5u);
}

TEST(FiniteDiff, QuadraticIsExactUpToRoundoff) {
    const FiniteDiffReport r = finite_diff_check(
        [](const Var& x) { return ops::scale(ops::sum(ops::square(x)), 0.5); }, random_tensor({8}, 72), 1e-4);
    EXPECT_LE(r.max_rel_error, 1e-9);
}

TEST(FiniteDiff, CoordinateSubset) {
    const std::vector<std::size_t> coords{1, 3};
    const FiniteDiffReport r =
        finite_diff_check([](const Var& x) { return ops::sum(ops::exp(x)); }, random_tensor({6}, 73), 1e-5, coords);
    EXPECT_EQ(r.coordinates_checked, 2u);
    EXPECT_LE(r.max_rel_error, 1e-8);
}

TEST(FiniteDiff, DetectsCorruptedRule) {
    vidguide::testing::set_gradient_fault(true);
    const Tensor w = random_tensor({3, 4}, 74);
    const FiniteDiffReport r = finite_diff_check(
        [&](const Var& x) { return ops::sum(ops::mul(ops::softmax_lastdim(x), constant(w))); }, random_tensor({3, 4}, 75), 1e-5);
    vidguide::testing::set_gradient_fault(false);
    EXPECT_GT(r.max_rel_error, 1e-2);
}

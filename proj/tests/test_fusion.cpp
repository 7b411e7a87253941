#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "lcnn/fusion.hpp"
#include "lcnn/gradcheck.hpp"
#include "oracles/brute_force.hpp"

using namespace lcnn;

namespace {

const FusionOp kAll[] = {FusionOp(FusionKind::average), FusionOp(FusionKind::addition),
                         FusionOp(FusionKind::subtraction), FusionOp(FusionKind::log_compression)};

Tensor weighted_sum(const Tensor& t, std::uint64_t seed) {
    Rng rng(seed);
    return sum(mul(t, oracle::random_tensor(rng, t.shape())));
}

} // namespace

TEST(FusionOp, ParsesLowercaseNames) {
    for (const auto& op : kAll) EXPECT_EQ(parse_fusion_kind(to_string(op.kind)), op.kind);
    EXPECT_THROW(parse_fusion_kind("multiply"), ConfigError);
    EXPECT_THROW(FusionOp(FusionKind::log_compression, 0.0), ConfigError);
    EXPECT_THROW(FusionOp(FusionKind::log_compression, 1.0), ConfigError);
}

TEST(Fuse, Addition) {
    auto y = fuse(Tensor(Shape{2}, {1, 2}), Tensor(Shape{2}, {3, 4}), FusionOp(FusionKind::addition));
    EXPECT_EQ(y[0], 4.0);
    EXPECT_EQ(y[1], 6.0);
}

TEST(Fuse, SubtractionAnnihilatesAndAverageIsIdempotent) {
    Rng rng(1);
    auto s = oracle::random_tensor(rng, {3, 4}, -5, 5);
    auto d = fuse(s, s, FusionOp(FusionKind::subtraction));
    for (double v : d.values()) EXPECT_EQ(v, 0.0);
    auto a = fuse(s, s, FusionOp(FusionKind::average));
    for (std::size_t i = 0; i < s.numel(); ++i) EXPECT_EQ(a[i], s[i]);
}

TEST(Fuse, ShapeMismatch) {
    for (const auto& op : kAll) {
        EXPECT_THROW(fuse(Tensor(Shape{2}), Tensor(Shape{3}), op), DimensionError);
        EXPECT_THROW(l_block(Tensor(Shape{1, 2}), Tensor(Shape{2, 1}), op), DimensionError);
    }
}

TEST(Fuse, ZeroSecondOperandIsIdentity) {
    Rng rng(2);
    auto s = oracle::random_tensor(rng, {2, 3, 4});
    Tensor zero(s.shape());
    for (auto kind : {FusionKind::addition, FusionKind::subtraction, FusionKind::log_compression}) {
        auto y = fuse(s, zero, FusionOp(kind));
        for (std::size_t i = 0; i < s.numel(); ++i) EXPECT_EQ(y[i], s[i]) << to_string(kind);
    }
}

TEST(LogCompress, KnownValues) {
    auto y = log_compress(Tensor(Shape{1}, {0.5}), Tensor(Shape{1}, {0.5}));
    EXPECT_NEAR(y.item(), 0.5 - std::log(0.5), 1e-15);
    EXPECT_NEAR(y.item(), 1.19315, 5e-6);
}

TEST(LogCompress, ClampFiresAndCounts) {
    SaturationCounter counter;
    Tensor s(Shape{3}, {0.25, -1.0, 2.0});
    Tensor sb(Shape{3}, {1.0, 3.0, 0.0});
    auto y = log_compress(s, sb, 1e-6, &counter);
    EXPECT_EQ(counter.clamped, 2u);
    EXPECT_NEAR(y[0], 0.25 - std::log(1e-6), 1e-12);
    EXPECT_NEAR(y[0] - 0.25, 13.815510557964274, 1e-12);
    EXPECT_NEAR(y[1], -1.0 + 13.815510557964274, 1e-12);
    EXPECT_EQ(y[2], 2.0);
}

TEST(LogCompress, GradientIsZeroWhereClamped) {
    Tensor s(Shape{2}, {0.1, 0.2}, true), sb(Shape{2}, {1.5, 0.5}, true);
    backward(sum(log_compress(s, sb)));
    EXPECT_EQ(s.grad()[0], 1.0);
    EXPECT_EQ(s.grad()[1], 1.0);
    EXPECT_EQ(sb.grad()[0], 0.0);
    EXPECT_DOUBLE_EQ(sb.grad()[1], 2.0);
}

TEST(Fuse, FiniteDifferenceBothOperands) {
    Rng rng(4);
    for (const auto& op : kAll) {
        auto s = oracle::random_tensor(rng, {2, 5});
        // keep 1 - s_bar well above epsilon for log_compression
        auto sb = oracle::random_tensor(rng, {2, 5}, -1.0, 0.9);
        auto fs = [&](const Tensor& v) { return weighted_sum(fuse(v, sb, op), 5); };
        auto fb = [&](const Tensor& v) { return weighted_sum(fuse(s, v, op), 5); };
        EXPECT_LT(grad_check(fs, s).max_relative_error, 1e-6) << to_string(op.kind);
        EXPECT_LT(grad_check(fb, sb).max_relative_error, 1e-6) << to_string(op.kind);
    }
}

TEST(LBlock, SubtractionIsAntisymmetric) {
    Rng rng(5);
    auto a = oracle::random_tensor(rng, {2, 3, 2, 2}, 0, 2);
    auto b = oracle::random_tensor(rng, {2, 3, 2, 2}, 0, 2);
    auto out = l_block(a, b, FusionOp(FusionKind::subtraction));
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(out.b[i], -out.a[i]);
}

TEST(LBlock, CommutativeOpsAgreeAndAreSwapSymmetric) {
    Rng rng(6);
    auto a = oracle::random_tensor(rng, {4, 3}, 0, 2);
    auto b = oracle::random_tensor(rng, {4, 3}, 0, 2);
    for (auto kind : {FusionKind::average, FusionKind::addition}) {
        auto ab = l_block(a, b, FusionOp(kind));
        auto ba = l_block(b, a, FusionOp(kind));
        for (std::size_t i = 0; i < a.numel(); ++i) {
            EXPECT_EQ(ab.a[i], ab.b[i]);
            EXPECT_EQ(ab.a[i], ba.b[i]);
        }
    }
}

TEST(LBlock, OperandOrderFollowsReceivingStream) {
    Tensor a(Shape{1}, {0.2}), b(Shape{1}, {0.6});
    auto out = l_block(a, b, FusionOp(FusionKind::log_compression));
    EXPECT_NEAR(out.a.item(), 0.2 - std::log(0.4), 1e-15);
    EXPECT_NEAR(out.b.item(), 0.6 - std::log(0.8), 1e-15);
}

TEST(LBlock, ShapePreservingForEveryOperator) {
    Rng rng(7);
    for (const auto& op : kAll) {
        for (const Shape& shape : {Shape{1}, Shape{3, 4}, Shape{2, 3, 5, 5}}) {
            auto out = l_block(oracle::random_tensor(rng, shape, 0, 0.9), oracle::random_tensor(rng, shape, 0, 0.9), op);
            EXPECT_EQ(out.a.shape(), shape);
            EXPECT_EQ(out.b.shape(), shape);
        }
    }
}

TEST(Fuse, AdditionBoostsNonNegativeSignals) {
    Rng rng(8);
    auto s = oracle::random_tensor(rng, {50}, 0, 1);
    auto sb = oracle::random_tensor(rng, {50}, 0, 1);
    auto y = fuse(s, sb, FusionOp(FusionKind::addition));
    for (std::size_t i = 0; i < 50; ++i) EXPECT_GE(y[i], std::max(s[i], sb[i]));
}

TEST(LateFuse, ConcatenatesInOrder) {
    Tensor a(Shape{1, 3}, {1, 2, 3}), b(Shape{1, 3}, {4, 5, 6});
    auto y = late_fuse({a, b});
    ASSERT_EQ(y.shape(), (Shape{1, 6}));
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(y[i], double(i + 1));
    auto single = late_fuse({a});
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(single[i], a[i]);
    EXPECT_THROW(late_fuse({Tensor(Shape{2, 3}), Tensor(Shape{1, 3})}), DimensionError);
}

TEST(LateFuse, GradientOfSumRoutesOnesToEachSource) {
    Rng rng(9);
    auto a = oracle::random_tensor(rng, {2, 3});
    auto b = oracle::random_tensor(rng, {2, 4});
    auto fa = [&](const Tensor& v) { return sum(late_fuse({v, b})); };
    auto fb = [&](const Tensor& v) { return sum(late_fuse({a, v})); };
    EXPECT_LT(grad_check(fa, a).max_relative_error, 1e-9);
    EXPECT_LT(grad_check(fb, b).max_relative_error, 1e-9);
    auto ar = a.detach(true), br = b.detach(true);
    backward(sum(late_fuse({ar, br})));
    for (double g : ar.grad()) EXPECT_EQ(g, 1.0);
    for (double g : br.grad()) EXPECT_EQ(g, 1.0);
}

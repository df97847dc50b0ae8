#include "gar/losses.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace gar;
using gar::testing::grad_check;
using gar::testing::random_tensor;

namespace {

// Evaluates a loss on constant predictions.
template <class Fn>
double value_of(Fn fn, const Tensor& f, const Tensor& y)
{
    ad::Graph g;
    return fn(Batch{g.constant(f), y}).item();
}

Tensor col(std::initializer_list<double> v)
{
    return Tensor::column(std::vector<double>(v));
}

// Independent oracle: Pearson from textbook sums, per column.
double naive_pearson(const Tensor& f, const Tensor& y, std::size_t c)
{
    const std::size_t n = f.rows();
    double sf = 0, sy = 0, sff = 0, syy = 0, sfy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = f.at(i, c), b = y.at(i, c);
        sf += a;
        sy += b;
        sff += a * a;
        syy += b * b;
        sfy += a * b;
    }
    const double dn = static_cast<double>(n);
    return (dn * sfy - sf * sy) / std::sqrt((dn * sff - sf * sf) * (dn * syy - sy * sy));
}

} // namespace

TEST(Losses, MaeExamples)
{
    EXPECT_EQ(value_of(mae, col({1, 2}), col({1, 2})), 0.0);
    EXPECT_EQ(value_of(mae, col({3, 1, 4, 1}), col({2, 2, 3, 2})), 1.0);
    EXPECT_EQ(value_of(mae, col({0}), col({5})), 5.0);
}

TEST(Losses, MseExamples)
{
    EXPECT_EQ(value_of(mse, col({1, 2}), col({1, 2})), 0.0);
    EXPECT_EQ(value_of(mse, col({3, 1, 4, 1}), col({2, 2, 3, 2})), 1.0);
    EXPECT_EQ(value_of(mse, col({0}), col({3})), 9.0);
}

TEST(Losses, HuberBranches)
{
    auto h = [](double delta) { return [delta](const Batch& b) { return huber(b, delta); }; };
    EXPECT_DOUBLE_EQ(value_of(h(1.0), col({0.5}), col({0})), 0.125);
    EXPECT_DOUBLE_EQ(value_of(h(1.0), col({2}), col({0})), 1.5);
    EXPECT_DOUBLE_EQ(value_of(h(2.0), col({2}), col({0})), 0.5 * 2.0 * 2.0);
    ad::Graph g;
    EXPECT_THROW(huber(Batch{g.constant(col({1})), col({0})}, 0.0), std::invalid_argument);
}

TEST(Losses, PairwiseDiffExamples)
{
    EXPECT_DOUBLE_EQ(pairwise_diff_quadratic(col({3, 1, 4, 1}), col({2, 2, 3, 2})), 1.0);
    EXPECT_EQ(pairwise_diff_quadratic(col({5, 6, 9}), col({2, 3, 6})), 0.0);
    EXPECT_EQ(pairwise_diff_quadratic(col({5}), col({2})), 0.0);

    EXPECT_DOUBLE_EQ(value_of(loss_diff, col({3, 1, 4, 1}), col({2, 2, 3, 2})), 1.0);
    EXPECT_EQ(value_of(loss_diff, col({8, 9, 10}), col({1, 2, 3})), 0.0);
}

TEST(Losses, PairwiseDiffnormExamples)
{
    const auto y = col({1, 3, 2, 7});
    EXPECT_NEAR(pairwise_diffnorm_quadratic(col({7, 11, 9, 19}), y), 0.0, 1e-15); // 2y + 5
    EXPECT_NEAR(pairwise_diffnorm_quadratic(col({-1, -3, -2, -7}), y), 2.0, 1e-15);
    EXPECT_NEAR(pairwise_diffnorm_quadratic(col({1, 2, 3}), col({1, 3, 2})), 0.5, 1e-15);
    EXPECT_THROW(pairwise_diffnorm_quadratic(col({1, 1, 1}), col({1, 3, 2})), DegenerateBatch);
    EXPECT_THROW(pairwise_diffnorm_quadratic(col({1, 2, 3}), col({4, 4, 4})), DegenerateBatch);

    EXPECT_LT(value_of([](const Batch& b) { return loss_diffnorm(b); }, y, y), 1e-9);
    EXPECT_NEAR(value_of([](const Batch& b) { return loss_diffnorm(b, 0.0); }, col({1, 2, 3}), col({1, 3, 2})), 0.5,
                1e-15);
}

TEST(Losses, DiffnormEpsHandlesConstantBatch)
{
    const double v = value_of([](const Batch& b) { return loss_diffnorm(b); }, col({2, 2, 2}), col({1, 2, 3}));
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Losses, MseDecompositionExamples)
{
    auto d = mse_decomposition(col({3, 1, 4, 1}), col({2, 2, 3, 2}));
    EXPECT_DOUBLE_EQ(d.variance, 1.0);
    EXPECT_DOUBLE_EQ(d.squared_mean, 0.0);
    d = mse_decomposition(col({3, 3, 4, 5}), col({2, 2, 3, 4}));
    EXPECT_DOUBLE_EQ(d.variance, 0.0);
    EXPECT_DOUBLE_EQ(d.squared_mean, 1.0);
}

TEST(Losses, MaePearsonFusedExamples)
{
    auto fused = [](const Batch& b) { return mae_pearson_fused(b, 0.0); };
    EXPECT_NEAR(value_of(fused, col({1, 2, 3}), col({1, 3, 2})), 7.0 / 12.0, 1e-15);
    EXPECT_EQ(value_of(fused, col({1, 3, 2}), col({1, 3, 2})), 0.0);
    // Anti-correlated: beta clamps to 0, only the normalised term is left.
    const auto f = col({3, 2, 1}), y = col({1, 2, 3});
    EXPECT_DOUBLE_EQ(value_of(fused, f, y), value_of([](const Batch& b) { return loss_diffnorm(b, 0.0); }, f, y));
}

TEST(Losses, ShapeErrors)
{
    ad::Graph g;
    Batch bad{g.constant(col({1, 2})), col({1, 2, 3})};
    EXPECT_THROW(mae(bad), ShapeError);
    EXPECT_THROW(loss_diff(bad), ShapeError);
    Batch one{g.constant(col({1})), col({1})};
    EXPECT_THROW(loss_diffnorm(one), ShapeError);
}

TEST(Losses, BreakdownInvariants)
{
    std::mt19937_64 rng(3);
    for (int t = 0; t < 50; ++t) {
        const auto f = random_tensor(rng, {20, 1}, -5, 5);
        const auto y = random_tensor(rng, {20, 1}, -5, 5);
        const auto b = breakdown(f, y, 0.0);
        EXPECT_DOUBLE_EQ(b.l_diff, b.error_variance);
        EXPECT_NEAR(b.l_diffnorm, 1.0 - naive_pearson(f, y, 0), 1e-12);
        EXPECT_GE(b.l_diffnorm, 0.0);
        EXPECT_LE(b.l_diffnorm, 2.0);
    }
}

TEST(Losses, MultiTargetAveragesColumns)
{
    const Tensor f = Tensor::matrix({{1, 0}, {2, 5}, {3, 1}});
    const Tensor y = Tensor::matrix({{1, 2}, {3, 1}, {2, 7}});
    auto per_col = [&](std::size_t c) {
        return value_of(loss_diff, f.column_of(c).reshaped({3, 1}), y.column_of(c).reshaped({3, 1}));
    };
    EXPECT_NEAR(value_of(loss_diff, f, y), 0.5 * (per_col(0) + per_col(1)), 1e-14);
    EXPECT_NEAR(pairwise_diff_quadratic(f, y), 0.5 * (per_col(0) + per_col(1)), 1e-14);
    const double dn = value_of([](const Batch& b) { return loss_diffnorm(b, 0.0); }, f, y);
    EXPECT_NEAR(dn, 1.0 - 0.5 * (naive_pearson(f, y, 0) + naive_pearson(f, y, 1)), 1e-14);
}

// Invariants ------------------------------------------------------------------

TEST(LossesProperty, LinearFormsMatchQuadraticOracles)
{
    std::mt19937_64 rng(17);
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 2 + gar::bounded(rng, 63);
        const std::size_t cols = 1 + gar::bounded(rng, 3);
        const auto f = random_tensor(rng, {n, cols}, -10, 10);
        const auto y = random_tensor(rng, {n, cols}, -10, 10);
        const double lin = value_of(loss_diff, f, y);
        EXPECT_LT(gar::testing::rel_err(lin, pairwise_diff_quadratic(f, y)), 1e-9);
        const double dn = value_of([](const Batch& b) { return loss_diffnorm(b, 0.0); }, f, y);
        EXPECT_NEAR(dn, pairwise_diffnorm_quadratic(f, y), 1e-8);
    }
}

TEST(LossesProperty, ShiftAndAffineInvariance)
{
    std::mt19937_64 rng(19);
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 2 + gar::bounded(rng, 40);
        const auto f = random_tensor(rng, {n, 1}, -10, 10);
        const auto y = random_tensor(rng, {n, 1}, -10, 10);
        const double c = uniform(rng, -100, 100), a = uniform(rng, 0.1, 10);
        Tensor shifted = f, affine = f;
        for (std::size_t i = 0; i < n; ++i) {
            shifted[i] += c;
            affine[i] = a * affine[i] + c;
        }
        EXPECT_NEAR(value_of(loss_diff, shifted, y), value_of(loss_diff, f, y), 1e-10);
        auto dn = [](const Batch& b) { return loss_diffnorm(b, 0.0); };
        EXPECT_NEAR(value_of(dn, affine, y), value_of(dn, f, y), 1e-8);
    }
}

TEST(LossesProperty, MseDecompositionIdentity)
{
    std::mt19937_64 rng(23);
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 1 + gar::bounded(rng, 100);
        const auto f = random_tensor(rng, {n, 1}, -10, 10);
        const auto y = random_tensor(rng, {n, 1}, -10, 10);
        const auto d = mse_decomposition(f, y);
        EXPECT_LT(gar::testing::rel_err(d.variance + d.squared_mean, value_of(mse, f, y)), 1e-12);
    }
}

TEST(LossesProperty, PermutationInvariance)
{
    std::mt19937_64 rng(29);
    for (int t = 0; t < 50; ++t) {
        const std::size_t n = 3 + gar::bounded(rng, 30);
        const auto f = random_tensor(rng, {n, 1}, -10, 10);
        const auto y = random_tensor(rng, {n, 1}, -10, 10);
        const auto perm = permutation(n, rng);
        const auto fp = f.gather_rows(perm), yp = y.gather_rows(perm);
        auto same = [&](auto fn) {
            EXPECT_LT(gar::testing::rel_err(value_of(fn, fp, yp), value_of(fn, f, y)), 1e-12);
        };
        same(mae);
        same(mse);
        same(loss_diff);
        same([](const Batch& b) { return loss_diffnorm(b); });
        same([](const Batch& b) { return huber(b, 1.0); });
        same([](const Batch& b) { return mae_pearson_fused(b); });
    }
}

TEST(LossesProperty, GradientsMatchFiniteDifferences)
{
    std::mt19937_64 rng(31);
    for (int t = 0; t < 30; ++t) {
        const std::size_t n = 2 + gar::bounded(rng, 10);
        const auto f = random_tensor(rng, {n, 2}, -3, 3);
        const auto y = random_tensor(rng, {n, 2}, -3, 3);
        auto on = [&y](auto loss) {
            return [loss, &y](ad::Graph&, const std::vector<ad::Var>& v) { return loss(Batch{v[0], y}); };
        };
        EXPECT_LE(grad_check(on(mae), {f}), 1.0) << "mae";
        EXPECT_LE(grad_check(on(mse), {f}), 1.0) << "mse";
        EXPECT_LE(grad_check(on([](const Batch& b) { return huber(b, 0.7); }), {f}), 1.0) << "huber";
        EXPECT_LE(grad_check(on(loss_diff), {f}), 1.0) << "diff";
        EXPECT_LE(grad_check(on([](const Batch& b) { return loss_diffnorm(b); }), {f}), 1.0) << "diffnorm";
        EXPECT_LE(grad_check(on([](const Batch& b) { return loss_diffnorm(b, 0.0); }), {f}), 1.0) << "diffnorm0";
    }
}

#include "gar/losses.hpp"
#include "gar/metrics.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace gar;

namespace {

Tensor col(std::vector<double> v) { return Tensor::column(std::move(v)); }

} // namespace

TEST(Metrics, RankAverageTies)
{
    EXPECT_EQ(rank_average_ties(std::vector<double>{10, 20, 20, 30}), (std::vector<double>{1, 2.5, 2.5, 4}));
    EXPECT_EQ(rank_average_ties(std::vector<double>{-3, 0, 8}), (std::vector<double>{1, 2, 3}));
    EXPECT_EQ(rank_average_ties(std::vector<double>{4, 4, 4, 4, 4}), (std::vector<double>(5, 3.0)));
    EXPECT_EQ(rank_average_ties(std::vector<double>{3, 1, 2}), (std::vector<double>{3, 1, 2}));
    EXPECT_THROW(rank_average_ties(std::vector<double>{}), std::invalid_argument);
}

TEST(Metrics, PerfectPrediction)
{
    const auto r = evaluate(col({1, 4, 2, 8}), col({1, 4, 2, 8}));
    EXPECT_EQ(r.mae_avg, 0.0);
    EXPECT_EQ(r.rmse_avg, 0.0);
    EXPECT_DOUBLE_EQ(r.pearson_avg, 1.0);
    EXPECT_DOUBLE_EQ(r.spearman_avg, 1.0);
    EXPECT_EQ(r.r2_avg, 1.0);
}

TEST(Metrics, MonotoneTransformKeepsSpearman)
{
    std::vector<double> t{-2, -1, 0.5, 1, 3}, p;
    for (double v : t)
        p.push_back(v * v * v);
    const auto r = evaluate(col(p), col(t));
    EXPECT_DOUBLE_EQ(r.spearman_avg, 1.0);
    EXPECT_LT(r.pearson_avg, 1.0);
}

TEST(Metrics, HandExample)
{
    const auto r = evaluate(col({1, 2, 3}), col({1, 3, 2}));
    EXPECT_NEAR(r.pearson_avg, 0.5, 1e-15);
    EXPECT_NEAR(r.spearman_avg, 0.5, 1e-15);
    EXPECT_NEAR(r.mae_avg, 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(r.rmse_avg, std::sqrt(2.0 / 3.0), 1e-15);
    EXPECT_NEAR(r.r2_avg, 1.0 - 2.0 / 2.0, 1e-15);
}

TEST(Metrics, ErrorsAndDegenerateTruth)
{
    EXPECT_THROW(evaluate(col({1}), col({1})), std::invalid_argument);
    EXPECT_THROW(evaluate(col({1, 2}), col({1, 2, 3})), ShapeError);
    const auto r = evaluate(col({1, 2, 3}), col({5, 5, 5}));
    EXPECT_FALSE(r.correlations_defined);
    EXPECT_TRUE(std::isnan(r.pearson_avg));
    EXPECT_DOUBLE_EQ(r.mae_avg, 3.0);
    const auto j = to_json(r);
    EXPECT_TRUE(j["pearson"].is_null());
    EXPECT_EQ(j["correlations_defined"], false);
}

TEST(Metrics, ConstantPredictionsHaveNoCorrelation)
{
    // 0.1 * 3 / 3 rounds away from 0.1, which used to leave a tiny variance.
    const auto r = evaluate(col({0.1, 0.1, 0.1}), col({1, 2, 4}));
    EXPECT_TRUE(std::isnan(r.pearson_avg));
    EXPECT_TRUE(std::isnan(r.spearman_avg));
    EXPECT_TRUE(r.correlations_defined);
}

TEST(Metrics, MultiTargetAverages)
{
    const Tensor t = Tensor::matrix({{1, 10}, {2, 30}, {3, 20}});
    const Tensor p = Tensor::matrix({{1, 10}, {3, 20}, {2, 30}});
    const auto r = evaluate(p, t);
    ASSERT_EQ(r.pearson.size(), 2u);
    EXPECT_NEAR(r.pearson[0], 0.5, 1e-15);
    EXPECT_NEAR(r.pearson[1], 0.5, 1e-15);
    EXPECT_NEAR(r.mae_avg, 0.5 * (r.mae[0] + r.mae[1]), 1e-15);
    EXPECT_EQ(to_json(r)["per_target"]["mae"].size(), 2u);
}

TEST(Metrics, Serialization)
{
    const auto r = evaluate(col({1, 2, 3}), col({1, 3, 2}));
    EXPECT_EQ(metrics_csv_header(), "mae,rmse,pearson,spearman,r2");
    EXPECT_EQ(to_csv_row(r).substr(0, 12), "0.6666666667");
    EXPECT_EQ(parse_metric("spearman"), Metric::spearman);
    EXPECT_THROW(parse_metric("auc"), std::invalid_argument);
    EXPECT_TRUE(higher_is_better(Metric::pearson));
    EXPECT_FALSE(higher_is_better(Metric::rmse));
}

TEST(MetricsProperty, CrossModuleConsistency)
{
    std::mt19937_64 rng(83);
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 2 + gar::bounded(rng, 80);
        const auto f = gar::testing::random_tensor(rng, {n, 1}, -10, 10);
        const auto y = gar::testing::random_tensor(rng, {n, 1}, -10, 10);
        const auto r = evaluate(f, y);
        ad::Graph g;
        const Batch b{g.constant(f), y};
        EXPECT_NEAR(r.pearson_avg, 1.0 - loss_diffnorm(b, 0.0).item(), 1e-10);
        EXPECT_LT(gar::testing::rel_err(r.rmse_avg * r.rmse_avg, mse(b).item()), 1e-12);
        EXPECT_GE(r.rmse[0], r.mae[0]);
        EXPECT_GE(r.pearson_avg, -1.0);
        EXPECT_LE(r.pearson_avg, 1.0);

        // Spearman is unchanged by strictly increasing maps of either side.
        Tensor fe = f, ye = y;
        for (std::size_t i = 0; i < n; ++i) {
            fe[i] = std::exp(0.3 * fe[i]);
            ye[i] = ye[i] * ye[i] * ye[i] + ye[i];
        }
        EXPECT_NEAR(evaluate(fe, ye).spearman_avg, r.spearman_avg, 1e-12);
    }
}

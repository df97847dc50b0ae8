#include "gar/bench.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace gar;

namespace {

// Least-squares slope of log(median) against log(N).
double loglog_slope(const std::vector<TimingRow>& rows, const std::string& name)
{
    std::vector<double> x, y;
    for (const auto& r : rows)
        if (r.loss_name == name) {
            x.push_back(std::log(static_cast<double>(r.batch_size)));
            y.push_back(std::log(static_cast<double>(r.median_ns)));
        }
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

} // namespace

TEST(Bench, RowsAreOrderedAndConsistent)
{
    const auto rows = time_losses({32, 64}, kMinRepeats, 7);
    ASSERT_EQ(rows.size(), 2 * timed_loss_names().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        EXPECT_EQ(r.batch_size, i < 6 ? 32u : 64u);
        EXPECT_EQ(r.loss_name, timed_loss_names()[i % 6]);
        EXPECT_EQ(r.repeats, kMinRepeats);
        EXPECT_LE(r.p10_ns, r.median_ns);
        EXPECT_LE(r.median_ns, r.p90_ns);
        EXPECT_GT(r.p10_ns, 0);
    }
    const auto csv = timing_csv(rows);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "batch_size,loss_name,median_ns,p10_ns,p90_ns,repeats");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 13);
    EXPECT_EQ(median_of(rows, 64, "gar"), rows[9].median_ns);
    EXPECT_THROW(median_of(rows, 128, "gar"), std::out_of_range);
}

TEST(Bench, Validation)
{
    EXPECT_THROW(time_losses({64}, kMinRepeats - 1, 1), std::invalid_argument);
    EXPECT_THROW(time_losses({1}, kMinRepeats, 1), std::invalid_argument);
    EXPECT_THROW(time_losses({64}, kMinRepeats, 1, {"mse"}), std::invalid_argument);
    const auto rows = time_losses({16}, kMinRepeats, 1, {"loss_diff"});
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].loss_name, "loss_diff");
}

TEST(Bench, NearestRankPercentile)
{
    const std::vector<std::int64_t> v{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
    EXPECT_EQ(detail::percentile(v, 0.5), 6);
    EXPECT_EQ(detail::percentile(v, 0.1), 2);
    EXPECT_EQ(detail::percentile(v, 0.9), 10);
    EXPECT_EQ(detail::percentile(v, 0.0), 1);
    EXPECT_EQ(detail::percentile(v, 1.0), 11);
}

// Doubling ratios of single medians are noisy on a shared core, so growth
// is read off a log-log fit over four sizes.
TEST(Bench, GrowthRates)
{
    const auto rows =
        time_losses({512, 1024, 2048, 4096}, kMinRepeats, 11, {"mae", "loss_diff", "pairwise_diff_quadratic"});
    const double lin = loglog_slope(rows, "loss_diff");
    const double quad = loglog_slope(rows, "pairwise_diff_quadratic");
    EXPECT_GT(lin, 0.6);
    EXPECT_LT(lin, 1.5);
    EXPECT_GT(quad, 1.6);
    EXPECT_LT(quad, 2.4);
    EXPECT_GE(static_cast<double>(median_of(rows, 4096, "pairwise_diff_quadratic")) /
                  static_cast<double>(median_of(rows, 4096, "loss_diff")),
              10.0);
}

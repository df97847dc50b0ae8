#include "gar/datasets.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

using namespace gar;

namespace {

std::filesystem::path temp_file(const std::string& name, const std::string& content)
{
    const auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream(path) << content;
    return path;
}

Dataset ramp(std::size_t n)
{
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = static_cast<double>(i);
        y[i] = 2.0 * static_cast<double>(i);
    }
    return Dataset{Tensor::matrix(n, 1, x), Tensor::matrix(n, 1, y), {"x"}, {"y"}};
}

} // namespace

TEST(Datasets, SineGrid)
{
    const auto d = gen_sine();
    ASSERT_EQ(d.rows(), 629u);
    EXPECT_EQ(d.features.at(0, 0), -10.0 * std::numbers::pi);
    EXPECT_LT(std::fabs(d.targets.at(0, 0)), 1e-12);
    EXPECT_LE(d.features.at(628, 0), 10.0 * std::numbers::pi);
    for (double y : d.targets.values())
        EXPECT_LE(std::fabs(y), 1.0);
    EXPECT_EQ(gen_sine().features, d.features);
}

TEST(Datasets, SquaredSineGrid)
{
    const auto d = gen_squared_sine();
    ASSERT_EQ(d.rows(), 20481u);
    EXPECT_EQ(d.features.at(10240, 0), 0.0);
    EXPECT_EQ(d.targets.at(10240, 0), 0.0);
    EXPECT_DOUBLE_EQ(d.features.at(0, 0), -32.0);
    EXPECT_DOUBLE_EQ(d.features.at(20480, 0), 32.0);
    double sq = 0.0;
    for (double x : d.features.values())
        sq += x * x;
    const double mean_sq = sq / 20481.0;
    double normalised = 0.0;
    for (double x : d.features.values())
        normalised += x * x / mean_sq;
    EXPECT_NEAR(normalised / 20481.0, 1.0, 1e-12);
    const double x5 = d.features.at(5, 0);
    EXPECT_DOUBLE_EQ(d.targets.at(5, 0), x5 * x5 * std::sin(x5) / mean_sq);
}

TEST(Datasets, HoldoutSplitIsHalfAndDisjoint)
{
    const auto s = holdout_split(629, 7);
    EXPECT_EQ(s.train_idx.size(), 314u);
    EXPECT_EQ(s.eval_idx.size(), 315u);
    std::set<std::size_t> all(s.train_idx.begin(), s.train_idx.end());
    all.insert(s.eval_idx.begin(), s.eval_idx.end());
    EXPECT_EQ(all.size(), 629u);
    EXPECT_EQ(holdout_split(629, 7).train_idx, s.train_idx);
    EXPECT_NE(holdout_split(629, 8).train_idx, s.train_idx);
}

TEST(Datasets, LoadCsvBasics)
{
    const auto p = temp_file("gar_basic.csv", "a,b,t\n1,2,3\n4,5,6\n7,8.5,-9e-1\n");
    const auto d = load_csv(p.string(), {"t"});
    EXPECT_EQ(d.rows(), 3u);
    EXPECT_EQ(d.feature_dim(), 2u);
    EXPECT_EQ(d.target_dim(), 1u);
    EXPECT_EQ(d.features.at(2, 1), 8.5);
    EXPECT_EQ(d.targets.at(2, 0), -0.9);
    EXPECT_EQ(d.feature_names, (std::vector<std::string>{"a", "b"}));

    const auto dropped = load_csv(p.string(), {"t"}, {"a"});
    EXPECT_EQ(dropped.feature_dim(), 1u);
    std::filesystem::remove(p);
}

TEST(Datasets, LoadCsvSemicolonAndQuotedHeader)
{
    const auto p = temp_file("gar_semi.csv", "\"fixed acidity\";\"quality\"\n7.0;6\n6.3;5\n");
    const auto d = load_csv(p.string(), {"quality"});
    EXPECT_EQ(d.feature_names, (std::vector<std::string>{"fixed acidity"}));
    EXPECT_EQ(d.targets.at(1, 0), 5.0);
    std::filesystem::remove(p);
}

TEST(Datasets, LoadCsvErrors)
{
    const auto p = temp_file("gar_err.csv", "a,b,t\n1,2,3\n4,x,6\n");
    try {
        load_csv(p.string(), {"t"});
        FAIL() << "expected an error";
    } catch (const DatasetError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("row 3"), std::string::npos) << msg;
        EXPECT_NE(msg.find("'b'"), std::string::npos) << msg;
    }
    try {
        load_csv(p.string(), {"missing"});
        FAIL() << "expected an error";
    } catch (const DatasetError& e) {
        EXPECT_NE(std::string(e.what()).find("missing"), std::string::npos);
    }
    const auto empty = temp_file("gar_empty.csv", "");
    EXPECT_THROW(load_csv(empty.string(), {"t"}), DatasetError);
    EXPECT_THROW(load_csv("/nonexistent/gar.csv", {"t"}), DatasetError);
    std::filesystem::remove(p);
    std::filesystem::remove(empty);
}

TEST(Datasets, CsvRoundTripIsExact)
{
    std::mt19937_64 rng(5);
    const std::size_t n = 50;
    Dataset d{gar::testing::random_tensor(rng, {n, 3}, -1e6, 1e6), gar::testing::random_tensor(rng, {n, 2}, -1, 1),
              {"f0", "f1", "f2"}, {"t0", "t1"}};
    d.features.at(0, 0) = 1e-300;
    d.features.at(1, 1) = 0.1;
    const auto path = std::filesystem::temp_directory_path() / "gar_roundtrip.csv";
    write_csv(d, path.string());
    const auto back = load_csv(path.string(), {"t0", "t1"});
    EXPECT_EQ(back.features, d.features);
    EXPECT_EQ(back.targets, d.targets);
    std::filesystem::remove(path);
}

TEST(Datasets, SplitArithmetic)
{
    const auto s = split_indices(10, SplitPlan{0.2, 2, 123});
    EXPECT_EQ(s.test_idx.size(), 2u);
    ASSERT_EQ(s.folds.size(), 2u);
    EXPECT_EQ(s.folds[0].val_idx.size(), 4u);
    EXPECT_EQ(s.folds[1].val_idx.size(), 4u);
    EXPECT_EQ(s.folds[0].train_idx.size(), 4u);
    EXPECT_THROW(split_indices(8, SplitPlan{0.2, 5, 1}), DatasetError);
    EXPECT_THROW(split_indices(100, SplitPlan{0.0, 5, 1}), std::invalid_argument);
    EXPECT_THROW(split_indices(100, SplitPlan{0.2, 1, 1}), std::invalid_argument);
}

TEST(DatasetsProperty, SplitsPartitionAndAreDeterministic)
{
    std::mt19937_64 rng(9);
    for (int t = 0; t < 50; ++t) {
        const std::size_t n = 20 + gar::bounded(rng, 500);
        const std::size_t k = 2 + gar::bounded(rng, 5);
        const SplitPlan plan{uniform(rng, 0.05, 0.5), k, rng()};
        const auto s = split_indices(n, plan);
        std::set<std::size_t> test(s.test_idx.begin(), s.test_idx.end());
        EXPECT_EQ(test.size(), static_cast<std::size_t>(std::ceil(plan.test_fraction * static_cast<double>(n))));
        std::set<std::size_t> vals;
        for (const auto& f : s.folds) {
            EXPECT_EQ(f.train_idx.size() + f.val_idx.size() + test.size(), n);
            for (auto i : f.val_idx) {
                EXPECT_FALSE(test.count(i));
                EXPECT_TRUE(vals.insert(i).second) << "validation folds overlap";
            }
            for (auto i : f.train_idx)
                EXPECT_FALSE(test.count(i));
        }
        EXPECT_EQ(vals.size() + test.size(), n);
        const auto again = split_indices(n, plan);
        EXPECT_EQ(again.test_idx, s.test_idx);
        EXPECT_EQ(again.folds.back().val_idx, s.folds.back().val_idx);
    }
}

TEST(Datasets, SplitAndFoldMaterialisesRows)
{
    const auto data = ramp(30);
    const auto sd = split_and_fold(data, SplitPlan{0.2, 3, 4});
    EXPECT_EQ(sd.test.rows(), 6u);
    EXPECT_EQ(sd.folds.size(), 3u);
    for (std::size_t i = 0; i < sd.test.rows(); ++i)
        EXPECT_EQ(sd.test.targets.at(i, 0), 2.0 * sd.test.features.at(i, 0));
}

TEST(Datasets, StandardizeUsesTrainStatistics)
{
    Dataset train{Tensor::matrix({{1, 5}, {3, 5}, {5, 5}}), Tensor::matrix({{10}, {20}, {30}}), {"a", "c"}, {"y"}};
    Dataset test{Tensor::matrix({{7, 6}}), Tensor::matrix({{40}}), {"a", "c"}, {"y"}};
    const auto r = standardize(train, {test}, false);
    const double sd = std::sqrt(8.0 / 3.0);
    EXPECT_NEAR(r.train.features.at(0, 0), -2.0 / sd, 1e-15);
    EXPECT_EQ(r.train.features.at(0, 1), 0.0); // constant column: centred, scale 1
    EXPECT_NEAR(r.others[0].features.at(0, 0), 4.0 / sd, 1e-15);
    EXPECT_EQ(r.others[0].features.at(0, 1), 1.0);
    EXPECT_EQ(r.train.targets.at(2, 0), 30.0);
    EXPECT_THROW(r.stats.apply(r.train), DatasetError);

    const auto t = standardize(train, {}, true);
    EXPECT_NEAR(t.train.targets.at(0, 0), -10.0 / std::sqrt(200.0 / 3.0), 1e-14);
    EXPECT_NEAR(t.stats.unscale_targets(t.train.targets).at(0, 0), 10.0, 1e-12);
}

TEST(DatasetsProperty, StandardizedTrainIsZeroMeanUnitStd)
{
    std::mt19937_64 rng(13);
    for (int t = 0; t < 20; ++t) {
        const std::size_t n = 5 + gar::bounded(rng, 100);
        Dataset d{gar::testing::random_tensor(rng, {n, 4}, -50, 300), gar::testing::random_tensor(rng, {n, 1}),
                  {"a", "b", "c", "d"}, {"y"}};
        const auto s = standardize(d, {}, false).train;
        for (std::size_t c = 0; c < 4; ++c) {
            double m = 0, v = 0;
            for (std::size_t i = 0; i < n; ++i)
                m += s.features.at(i, c);
            m /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i)
                v += (s.features.at(i, c) - m) * (s.features.at(i, c) - m);
            EXPECT_LT(std::fabs(m), 1e-10);
            EXPECT_NEAR(std::sqrt(v / static_cast<double>(n)), 1.0, 1e-10);
        }
    }
}

TEST(Datasets, Presets)
{
    const auto c = find_preset("concrete");
    ASSERT_TRUE(c.has_value());
    EXPECT_EQ(c->targets, (std::vector<std::string>{"compressive_strength"}));
    EXPECT_FALSE(find_preset("imagenet").has_value());
}

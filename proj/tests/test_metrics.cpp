#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "adg/metrics.hpp"
#include "test_support.hpp"

using namespace adg;

TEST(MetricsCsv, HeaderFollowsFieldOrder) {
  EXPECT_EQ(metrics_csv_header(),
            "wall_seconds,logical_tick,epoch,train_objective,validation_objective,"
            "test_rmse_or_accuracy,comm_sends,comm_time");
  EXPECT_EQ(kMetricsSchemaVersion, 1);
}

TEST(MetricsCsv, RandomRowsRoundTrip) {
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> real(-1e6, 1e6);
  std::vector<MetricsRow> rows;
  for (std::uint64_t e = 1; e <= 40; ++e) {
    rows.push_back({0.001 * double(e), 7 * e, e, real(gen), real(gen), std::abs(real(gen)),
                    gen() % 100000, std::abs(real(gen))});
  }
  rows.push_back({0.0, 0, 0, 1e-300, -0.0, 5e-324, 0, 0.0});
  std::stringstream ss;
  write_metrics_csv(ss, rows);
  EXPECT_EQ(read_metrics_csv(ss), rows);
}

TEST(MetricsCsv, RejectsMalformedInput) {
  EXPECT_THROW(parse_metrics_row("1,2,3"), DataError);
  EXPECT_THROW(parse_metrics_row("a,1,1,1,1,1,1,1"), DataError);
  EXPECT_THROW(parse_metrics_row("1x,1,1,1,1,1,1,1"), DataError);
  EXPECT_THROW(parse_metrics_row("1,-1,1,1,1,1,1,1"), DataError);
  EXPECT_THROW(parse_metrics_row("1,1,1,,1,1,1,1"), DataError);
  std::stringstream wrong("epoch,loss\n1,2\n");
  EXPECT_THROW(read_metrics_csv(wrong), DataError);
  std::stringstream empty;
  EXPECT_THROW(read_metrics_csv(empty), DataError);
}

TEST(ShouldStop, Examples) {
  const std::vector<double> close{100.0, 100.00005};
  const std::vector<double> far{100.0, 99.0};
  EXPECT_TRUE(should_stop(close, 1e-4));
  EXPECT_FALSE(should_stop(far, 1e-4));
  EXPECT_FALSE(should_stop(std::vector<double>{1.0}, 1e-4));
  EXPECT_TRUE(should_stop(far, 1e-4, 2));
  EXPECT_FALSE(should_stop(far, 1e-4, 3));
  EXPECT_THROW(should_stop(far, 0.0), ContractViolation);
}

TEST(ShouldStop, GeometricSequenceStopsAtClosedFormIndex) {
  for (double eps : {1e-1, 1e-2, 1e-4, 1e-7, 3e-5}) {
    // gap between entries k-1 and k is 0.5^k; first k with 0.5^k < eps
    const auto expected = static_cast<std::size_t>(std::floor(std::log2(1.0 / eps))) + 1;
    std::vector<double> history;
    std::size_t stopped_at = 0;
    for (std::size_t k = 0; k < 100; ++k) {
      history.push_back(std::pow(0.5, double(k)));
      if (should_stop(history, eps)) {
        stopped_at = k;
        break;
      }
    }
    EXPECT_EQ(stopped_at, expected) << eps;
  }
}

TEST(Rmse, PerfectModelIsZero) {
  DenseMatrix p(3, 2, std::vector<double>{1, 0, 0, 1, 1, 1});
  DenseMatrix q(2, 2, std::vector<double>{2, 3, -1, 0.5});
  RatingMatrix test{{}, 3, 2};
  for (std::uint32_t u = 0; u < 3; ++u)
    for (std::uint32_t i = 0; i < 2; ++i)
      test.ratings.push_back({u, i, p(u, 0) * q(i, 0) + p(u, 1) * q(i, 1)});
  EXPECT_NEAR(evaluate_rmse(p, q, test).rmse, 0.0, 1e-9);
}

TEST(Rmse, ZeroModelGivesConstantMagnitude) {
  const DenseMatrix p(4, 3), q(5, 3);
  RatingMatrix test{{{0, 1, -2.5}, {3, 4, -2.5}, {2, 0, -2.5}}, 4, 5};
  EXPECT_DOUBLE_EQ(evaluate_rmse(p, q, test).rmse, 2.5);
}

TEST(Rmse, FiveRatingToy) {
  const DenseMatrix p(2, 1, std::vector<double>{1.0, 2.0});
  const DenseMatrix q(3, 1, std::vector<double>{0.5, 1.0, -1.0});
  // predictions 0.5, 1, -1, 1, 2 ; errors 0.5, 1, 1, -1, 0
  RatingMatrix test{{{0, 0, 1.0}, {0, 1, 2.0}, {0, 2, 0.0}, {1, 0, 0.0}, {1, 1, 2.0}}, 2, 3};
  const RmseResult r = evaluate_rmse(p, q, test);
  EXPECT_NEAR(r.rmse, std::sqrt((0.25 + 1 + 1 + 1 + 0) / 5.0), 1e-15);
  EXPECT_EQ(r.evaluated, 5u);
}

TEST(Rmse, UnseenPolicies) {
  RatingMatrix train{{{0, 0, 3.0}, {1, 0, 1.0}}, 3, 2};
  const auto cov = TrainingCoverage::from(train);
  EXPECT_DOUBLE_EQ(cov.global_mean, 2.0);
  const DenseMatrix p(3, 1, 1.0), q(2, 1, 1.0);
  RatingMatrix test{{{0, 0, 1.0}, {2, 0, 5.0}, {0, 1, 4.0}}, 3, 2};
  const RmseResult skip = evaluate_rmse(p, q, test, cov, UnseenPolicy::skip);
  EXPECT_EQ(skip.evaluated, 1u);
  EXPECT_EQ(skip.skipped, 2u);
  EXPECT_DOUBLE_EQ(skip.rmse, 0.0);
  const RmseResult mean = evaluate_rmse(p, q, test, cov, UnseenPolicy::global_mean);
  EXPECT_EQ(mean.evaluated, 3u);
  EXPECT_NEAR(mean.rmse, std::sqrt((0.0 + 9.0 + 4.0) / 3.0), 1e-15);
  const RatingMatrix none{{}, 3, 2};
  EXPECT_THROW(evaluate_rmse(p, q, none), ContractViolation);
}

TEST(Accuracy, CountsSignAgreement) {
  using adg::test::dense_example;
  const std::vector<LabeledExample> ex{dense_example({1.0, 0.0}, 1), dense_example({-1.0, 0.0}, 1),
                                       dense_example({0.0, 2.0}, -1), dense_example({0.0, 0.0}, 1)};
  EXPECT_DOUBLE_EQ(classification_accuracy(ParamVector{1.0, -1.0}, ex), 0.75);
}

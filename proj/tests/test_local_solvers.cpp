#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "adg/local_solvers.hpp"
#include "adg/workers.hpp"
#include "test_support.hpp"

using namespace adg;
using adg::test::bitwise_equal;
using adg::test::distance;
using adg::test::random_examples;
using adg::test::random_vector;

namespace {

// 1/2 (w - c)^2 in one dimension.
std::shared_ptr<QuadraticShard> scalar_quadratic(double c) {
  return std::make_shared<QuadraticShard>(Eigen::MatrixXd::Ones(1, 1),
                                          Eigen::VectorXd::Constant(1, c));
}

// Straight-line variance-reduced epoch with the same draw order.
ParamVector reference_svrg(const ParamVector& w_tilde, const std::vector<LabeledExample>& shard,
                           std::size_t t_max, std::size_t b, double gamma,
                           const LogisticLossParams& loss, RngState rng) {
  const std::size_t d = w_tilde.size();
  auto grad_one = [&](const ParamVector& w, const LabeledExample& ex, ParamVector& acc) {
    double dot = 0.0;
    for (std::size_t j = 0; j < ex.features.indices.size(); ++j) {
      dot += w[ex.features.indices[j]] * ex.features.values[j];
    }
    const double y = ex.label;
    const double s = -y * (1.0 / (1.0 + std::exp(y * dot)));
    for (std::size_t j = 0; j < ex.features.indices.size(); ++j) {
      acc[ex.features.indices[j]] += s * ex.features.values[j];
    }
  };
  const double reg = loss.lambda / static_cast<double>(loss.n_total);
  ParamVector mu(d, 0.0);
  for (const auto& ex : shard) grad_one(w_tilde, ex, mu);
  const double inv_n = 1.0 / static_cast<double>(shard.size());
  for (std::size_t j = 0; j < d; ++j) mu[j] = mu[j] * inv_n + reg * w_tilde[j];
  const double inv_b = 1.0 / static_cast<double>(b);
  ParamVector w = w_tilde;
  for (std::size_t t = 0; t < t_max; ++t) {
    std::vector<std::size_t> idx(b);
    for (auto& i : idx) i = rng.index(shard.size());
    ParamVector g_now(d, 0.0), g_anchor(d, 0.0);
    for (auto i : idx) {
      grad_one(w, shard[i], g_now);
      grad_one(w_tilde, shard[i], g_anchor);
    }
    ParamVector next(d);
    for (std::size_t j = 0; j < d; ++j) {
      const double gn = g_now[j] * inv_b + reg * w[j];
      const double ga = g_anchor[j] * inv_b + reg * w_tilde[j];
      next[j] = w[j] - gamma * (gn - ga + mu[j]);
    }
    w = next;
  }
  return w;
}

}  // namespace

TEST(GradientLocalStep, ScalarQuadraticExample) {
  const auto shard = scalar_quadratic(2.0);
  const ParamVector out = gradient_local_step(ParamVector{0.0}, *shard, 0.5);
  EXPECT_DOUBLE_EQ(out[0], 1.0);
}

TEST(GradientLocalStep, ZeroStepIsIdentity) {
  const auto shard = scalar_quadratic(2.0);
  const ParamVector w{3.25};
  EXPECT_EQ(gradient_local_step(w, *shard, 0.0), w);
}

TEST(GradientLocalStep, LogisticShardComposesWithMeanGradient) {
  std::mt19937_64 gen(1);
  const std::size_t d = 7, n_total = 40;
  const auto examples = random_examples(gen, 10, d);
  const LogisticLossParams loss{0.6, n_total};
  const LogisticShard shard(examples, d, loss);
  const ParamVector w = random_vector(gen, d);
  const double gamma = 0.3;
  const ParamVector mean = shard_mean_gradient(w, examples, loss);
  const ParamVector out = gradient_local_step(w, shard, gamma);
  for (std::size_t j = 0; j < d; ++j) {
    EXPECT_NEAR(out[j], w[j] - gamma * (10.0 / 40.0) * mean[j], 1e-14);
  }
}

TEST(GradientLocalStep, NonFiniteResultThrows) {
  const auto shard = scalar_quadratic(0.0);
  EXPECT_THROW(gradient_local_step(ParamVector{1e308}, *shard, 1e10), DivergedError);
}

TEST(GradientLocalStep, ContractsTowardsShardMinimizer) {
  std::mt19937_64 gen(2);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 30; ++trial) {
    Eigen::MatrixXd a(8, 4);
    for (Eigen::Index r = 0; r < a.rows(); ++r)
      for (Eigen::Index c = 0; c < a.cols(); ++c) a(r, c) = normal(gen);
    Eigen::VectorXd b(8);
    for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = normal(gen);
    const QuadraticShard shard(a, b);
    const Eigen::VectorXd star = (a.transpose() * a).ldlt().solve(a.transpose() * b);
    const ParamVector w_star(star.data(), star.data() + star.size());
    const double l = shard.smoothness();
    for (double frac : {0.1, 1.0, 1.9}) {
      const ParamVector w = random_vector(gen, 4, 3.0);
      const ParamVector next = gradient_local_step(w, shard, frac / l);
      EXPECT_LT(distance(next, w_star), distance(w, w_star)) << trial << " " << frac;
    }
  }
}

TEST(SvrgLocalEpoch, FullBatchSingleStepIsGradientStep) {
  std::mt19937_64 gen(3);
  const auto shard = random_examples(gen, 6, 5);
  const LogisticLossParams loss{0.2, 6};
  const ParamVector w = random_vector(gen, 5);
  RngState rng(9, 0);
  const ParamVector out = svrg_local_epoch(w, shard, {1, 6, 0.4}, loss, rng);
  const ParamVector mu = shard_mean_gradient(w, shard, loss);
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(out[j], w[j] - 0.4 * mu[j], 1e-15);
}

TEST(SvrgLocalEpoch, ZeroStepIsIdentity) {
  std::mt19937_64 gen(4);
  const auto shard = random_examples(gen, 6, 5);
  const ParamVector w = random_vector(gen, 5);
  RngState rng(9, 0);
  EXPECT_EQ(svrg_local_epoch(w, shard, {7, 3, 0.0}, {0.1, 6}, rng), w);
}

TEST(SvrgLocalEpoch, BitwiseEqualToStraightLineLoop) {
  std::mt19937_64 gen(5);
  const auto shard = random_examples(gen, 10, 6);
  const LogisticLossParams loss{0.5, 30};
  const ParamVector w = random_vector(gen, 6);
  RngState rng(77, 3);
  const ParamVector out = svrg_local_epoch(w, shard, {5, 2, 0.25}, loss, rng);
  const ParamVector ref = reference_svrg(w, shard, 5, 2, 0.25, loss, RngState(77, 3));
  EXPECT_TRUE(bitwise_equal(out, ref));
}

TEST(SvrgLocalEpoch, RepeatedSingleStepsEqualGradientDescent) {
  std::mt19937_64 gen(6);
  const auto shard = random_examples(gen, 8, 4);
  const LogisticLossParams loss{0.3, 8};
  ParamVector w = random_vector(gen, 4), gd = w;
  RngState rng(1, 1);
  for (int it = 0; it < 20; ++it) {
    w = svrg_local_epoch(w, shard, {1, 3, 0.5}, loss, rng);
    const ParamVector g = shard_mean_gradient(gd, shard, loss);
    for (std::size_t j = 0; j < 4; ++j) gd[j] -= 0.5 * g[j];
  }
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(w[j], gd[j], 1e-13);
}

TEST(SvrgLocalEpoch, DeterministicAndValidated) {
  std::mt19937_64 gen(7);
  const auto shard = random_examples(gen, 10, 4);
  const ParamVector w = random_vector(gen, 4);
  RngState a(5, 2), b(5, 2);
  EXPECT_EQ(svrg_local_epoch(w, shard, {4, 3, 0.1}, {0.1, 10}, a),
            svrg_local_epoch(w, shard, {4, 3, 0.1}, {0.1, 10}, b));
  EXPECT_THROW(svrg_local_epoch(w, shard, {4, 11, 0.1}, {0.1, 10}, a), ContractViolation);
  EXPECT_THROW(svrg_local_epoch(w, shard, {0, 1, 0.1}, {0.1, 10}, a), ContractViolation);
}

TEST(SvrgLocalEpoch, DivergenceCarriesLastFiniteIterate) {
  const std::vector<LabeledExample> shard{adg::test::dense_example({1.0}, 1)};
  RngState rng(1, 0);
  try {
    svrg_local_epoch(ParamVector{1.0}, shard, {50, 1, 1e307}, {1.0, 1}, rng);
    FAIL() << "expected divergence";
  } catch (const DivergedError& e) {
    EXPECT_TRUE(all_finite(e.last_finite()));
    EXPECT_LT(e.step(), 50u);
  }
}

TEST(MfLocalEpoch, ZeroStepLeavesStateUnchanged) {
  RngState init(3, 0);
  FactorState s = init_factors(3, 4, {0.1, 2}, init);
  const FactorState before = s;
  const std::vector<Rating> r{{0, 1, 2.0}, {2, 3, -1.0}};
  RngState rng(3, 1);
  mf_local_epoch(s, r, 0.0, {0.1, 2}, rng, 10);
  EXPECT_EQ(s, before);
}

TEST(MfLocalEpoch, SimultaneousUpdateExample) {
  FactorState s{DenseMatrix(1, 2, std::vector<double>{1, 0}),
                DenseMatrix(1, 2, std::vector<double>{1, 0})};
  const std::vector<Rating> r{{0, 0, 2.0}};
  RngState rng(1, 0);
  mf_local_epoch(s, r, 0.1, {0.0, 2}, rng, 1);
  EXPECT_DOUBLE_EQ(s.p_block(0, 0), 1.2);
  EXPECT_DOUBLE_EQ(s.p_block(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(s.q_shared(0, 0), 1.2);
  EXPECT_DOUBLE_EQ(s.q_shared(0, 1), 0.0);
}

TEST(MfLocalEpoch, OneEpochBitwiseEqualToReferenceLoop) {
  const std::size_t k = 3;
  RngState init(11, 0);
  const MfLossParams loss{0.05, k};
  FactorState s = init_factors(5, 6, loss, init);
  FactorState ref = s;
  std::vector<Rating> ratings;
  std::mt19937_64 gen(12);
  for (std::uint32_t u = 0; u < 5; ++u)
    for (std::uint32_t i = 0; i < 6; ++i)
      if ((u + 2 * i) % 3 == 0) ratings.push_back({u, i, std::normal_distribution<double>()(gen)});
  RngState rng(11, 4), rng_ref(11, 4);
  mf_local_epoch(s, ratings, 0.05, loss, rng, ratings.size());
  for (std::size_t step = 0; step < ratings.size(); ++step) {
    const Rating& r = ratings[rng_ref.index(ratings.size())];
    double dot = 0.0;
    for (std::size_t c = 0; c < k; ++c) dot += ref.q_shared(r.item, c) * ref.p_block(r.user, c);
    const double e = r.value - dot;
    for (std::size_t c = 0; c < k; ++c) {
      const double p = ref.p_block(r.user, c), q = ref.q_shared(r.item, c);
      ref.p_block(r.user, c) = p - 0.05 * (-2.0 * e * q + 2.0 * 0.05 * p);
      ref.q_shared(r.item, c) = q - 0.05 * (-2.0 * e * p + 2.0 * 0.05 * q);
    }
  }
  EXPECT_TRUE(bitwise_equal(s.p_block.data(), ref.p_block.data()));
  EXPECT_TRUE(bitwise_equal(s.q_shared.data(), ref.q_shared.data()));
}

TEST(MfLocalEpoch, UnratedItemRowsAreUntouched) {
  RngState init(2, 0);
  const MfLossParams loss{0.1, 4};
  FactorState s = init_factors(2, 5, loss, init);
  const DenseMatrix q0 = s.q_shared;
  const std::vector<Rating> r{{0, 1, 1.0}, {1, 3, 2.0}, {1, 1, 0.5}};
  RngState rng(2, 1);
  mf_local_epoch(s, r, 0.05, loss, rng, 30);
  for (std::size_t item : {0u, 2u, 4u}) {
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(s.q_shared(item, c), q0(item, c));
  }
}

TEST(MfLocalEpoch, RejectsBadInputs) {
  FactorState s{DenseMatrix(1, 2), DenseMatrix(1, 2)};
  RngState rng(1, 0);
  const std::vector<Rating> none;
  EXPECT_THROW(mf_local_epoch(s, none, 0.1, {0.0, 2}, rng, 1), ContractViolation);
  const std::vector<Rating> outside{{3, 0, 1.0}};
  EXPECT_THROW(mf_local_epoch(s, outside, 0.1, {0.0, 2}, rng, 1), ContractViolation);
}

TEST(MfLocalEpoch, DivergenceReportsStep) {
  FactorState s{DenseMatrix(1, 1, 1.0), DenseMatrix(1, 1, 1.0)};
  const std::vector<Rating> r{{0, 0, 1e150}};
  RngState rng(1, 0);
  EXPECT_THROW(mf_local_epoch(s, r, 1e10, {0.0, 1}, rng, 100), DivergedError);
}

TEST(InitFactors, RangeAndDeterminism) {
  RngState a(42, 7), b(42, 7);
  const FactorState fa = init_factors(10, 8, {0.0, 1}, a);
  const FactorState fb = init_factors(10, 8, {0.0, 1}, b);
  EXPECT_EQ(fa, fb);
  for (double x : fa.p_block.data()) EXPECT_TRUE(x >= 0.0 && x <= 1.0);
  for (double x : fa.q_shared.data()) EXPECT_TRUE(x >= 0.0 && x <= 1.0);
}

TEST(InitFactors, SampleMeanMatchesUniform) {
  const std::size_t k = 100;
  RngState rng(5, 0);
  const FactorState f = init_factors(50, 50, {0.0, k}, rng);  // 10^4 draws in P
  double sum = 0.0;
  for (double x : f.p_block.data()) sum += x;
  const double n = static_cast<double>(f.p_block.data().size());
  const double hi = 1.0 / std::sqrt(static_cast<double>(k));
  const double se = hi / std::sqrt(12.0) / std::sqrt(n);
  EXPECT_NEAR(sum / n, hi / 2.0, 3.0 * se);
}

TEST(Workers, MfWorkerRunsOnBasisAndKeepsLocalRows) {
  RngState init(1, 0);
  const MfLossParams loss{0.05, 2};
  FactorState s = init_factors(2, 3, loss, init);
  const std::vector<Rating> r{{0, 0, 1.0}, {1, 2, 2.0}};
  MfWorker worker(r, s.p_block, 3, 0.05, loss, RngState(1, 1), r.size());
  const ParamVector basis = s.q_shared.data();
  const ParamVector out = worker.local_epoch(basis);
  FactorState ref = s;
  RngState rng(1, 1);
  mf_local_epoch(ref, r, 0.05, loss, rng, r.size());
  EXPECT_EQ(out, ref.q_shared.data());
  EXPECT_EQ(worker.local_state(), ref.p_block.data());
  EXPECT_EQ(worker.work_units(), 2u);
}

TEST(Workers, SvrgWorkerAdvancesItsStream) {
  std::mt19937_64 gen(8);
  const auto shard = random_examples(gen, 10, 3);
  SvrgWorker worker(shard, {3, 2, 0.1}, {0.1, 10}, RngState(4, 0));
  const ParamVector w(3, 0.0);
  RngState rng(4, 0);
  const ParamVector first = svrg_local_epoch(w, shard, {3, 2, 0.1}, {0.1, 10}, rng);
  const ParamVector second = svrg_local_epoch(w, shard, {3, 2, 0.1}, {0.1, 10}, rng);
  EXPECT_EQ(worker.local_epoch(w), first);
  EXPECT_EQ(worker.local_epoch(w), second);
}

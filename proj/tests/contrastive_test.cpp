#include "cvd/core/grad_check.hpp"
#include "cvd/loss/batching.hpp"
#include "cvd/loss/contrastive.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace cvd;

namespace {

TensorD unit_rows(Index n, Index d, std::mt19937_64& rng) {
  auto t = random_tensor<double>({n, d}, rng);
  auto m = t.matrix();
  for (Index i = 0; i < n; ++i) m.row(i).normalize();
  return t;
}

double infonce_value(const TensorD& es, const TensorD& ea, const LossConfig& cfg) {
  Tape<double> tape;
  return infonce_loss<double>({tape.constant(es), tape.constant(ea), {}}, cfg).value().item();
}

// Direct evaluation of the smoothed symmetric loss with plain loops.
double infonce_oracle(const TensorD& es, const TensorD& ea, double tau, double eps) {
  const Index n = es.dim(0), d = es.dim(1);
  std::vector<double> s(static_cast<std::size_t>(n * n));
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      double acc = 0;
      for (Index k = 0; k < d; ++k) acc += es.at(i, k) * ea.at(j, k);
      s[static_cast<std::size_t>(i * n + j)] = acc / tau;
    }
  auto direction = [&](bool rows) {
    double total = 0;
    for (Index i = 0; i < n; ++i) {
      auto at = [&](Index j) { return rows ? s[static_cast<std::size_t>(i * n + j)] : s[static_cast<std::size_t>(j * n + i)]; };
      double mx = -1e300;
      for (Index j = 0; j < n; ++j) mx = std::max(mx, at(j));
      double z = 0;
      for (Index j = 0; j < n; ++j) z += std::exp(at(j) - mx);
      const double lse = mx + std::log(z);
      for (Index j = 0; j < n; ++j) {
        const double q = eps / static_cast<double>(n) + (i == j ? 1.0 - eps : 0.0);
        total -= q * (at(j) - lse);
      }
    }
    return total / static_cast<double>(n);
  };
  return 0.5 * (direction(true) + direction(false));
}

}  // namespace

TEST(Triplet, HingeCases) {
  Tape<double> tape;
  auto a = tape.constant(TensorD({2}, {0.0, 0.0}));
  auto p1 = tape.constant(TensorD({2}, {1.0, 0.0}));
  auto n1 = tape.constant(TensorD({2}, {0.0, 2.0}));
  EXPECT_EQ(triplet_loss(a, p1, n1, 0.5).value().item(), 0.0);
  EXPECT_EQ(triplet_loss(a, n1, p1, 0.5).value().item(), 1.5);
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    auto anchor = tape.constant(random_tensor<double>({5}, rng));
    auto same = tape.constant(random_tensor<double>({5}, rng));
    EXPECT_EQ(triplet_loss(anchor, same, same, 0.7).value().item(), 0.7);
  }
}

TEST(Triplet, NonNegativeAndZeroExactlyWhenSeparated) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 200; ++t) {
    Tape<double> tape;
    auto a = tape.constant(random_tensor<double>({4}, rng));
    auto p = tape.constant(random_tensor<double>({4}, rng));
    auto n = tape.constant(random_tensor<double>({4}, rng));
    const double m = 0.25;
    const double loss = triplet_loss(a, p, n, m).value().item();
    const double dp = (a.value().values() - p.value().values()).norm();
    const double dn = (a.value().values() - n.value().values()).norm();
    EXPECT_GE(loss, 0.0);
    EXPECT_EQ(loss == 0.0, dn >= dp + m);
  }
}

TEST(Triplet, ZeroSubgradientWhenInactive) {
  Tape<double> tape;
  auto a = tape.leaf(TensorD({2}, {0.0, 0.0}));
  auto p = tape.leaf(TensorD({2}, {1.0, 0.0}));
  auto n = tape.leaf(TensorD({2}, {0.0, 1.5}));
  auto loss = triplet_loss(a, p, n, 0.5);  // exactly at the hinge corner
  EXPECT_EQ(loss.value().item(), 0.0);
  auto g = tape.backward(loss);
  EXPECT_EQ(g[a].values().cwiseAbs().maxCoeff(), 0.0);
}

TEST(LabelSmoothedCE, PlainCrossEntropyAtZeroEps) {
  std::mt19937_64 rng(3);
  Tape<double> tape;
  auto logits = random_tensor<double>({5}, rng);
  const double lse = std::log(logits.values().array().exp().sum());
  for (Index t = 0; t < 5; ++t) {
    EXPECT_NEAR(label_smoothed_ce(tape.constant(logits), t, 0.0).value().item(), lse - logits[t], 1e-12);
  }
}

TEST(LabelSmoothedCE, UniformLogitsGiveLogN) {
  Tape<double> tape;
  for (Index n : {2, 3, 7}) {
    for (double eps : {0.0, 0.1, 0.5}) {
      EXPECT_NEAR(label_smoothed_ce(tape.constant(TensorD({n}, 0.3)), 1, eps).value().item(), std::log(double(n)), 1e-12);
    }
  }
}

TEST(LabelSmoothedCE, TwoClassExample) {
  Tape<double> tape;
  const double v = label_smoothed_ce(tape.constant(TensorD({2}, {1.0, 0.0})), 0, 0.1).value().item();
  // 0.95 ln(1 + e^-1) + 0.05 ln(1 + e), evaluated independently.
  const double expected = 0.95 * std::log1p(std::exp(-1.0)) + 0.05 * std::log1p(std::exp(1.0));
  EXPECT_NEAR(v, expected, 1e-12);
  EXPECT_NEAR(v, 0.3632617, 1e-6);
}

TEST(LabelSmoothedCE, RejectsOutOfRangeTarget) {
  Tape<double> tape;
  EXPECT_THROW(label_smoothed_ce(tape.constant(TensorD({3}, 0.0)), 3, 0.1), std::out_of_range);
  EXPECT_THROW(label_smoothed_ce(tape.constant(TensorD({3}, 0.0)), -1, 0.1), std::out_of_range);
}

TEST(InfoNCE, SinglePairIsZero) {
  TensorD e({1, 3}, {0.0, 1.0, 0.0});
  EXPECT_EQ(infonce_value(e, e, LossConfig{}), 0.0);
}

TEST(InfoNCE, ConstantSimilarityGivesLogN) {
  for (Index n : {2, 4, 16}) {
    for (double eps : {0.0, 0.1, 0.3}) {
      for (double tau : {0.07, 1.0}) {
        TensorD e({n, 4}, 0.5);
        LossConfig cfg;
        cfg.label_smoothing = eps;
        cfg.temperature = tau;
        EXPECT_NEAR(infonce_value(e, e, cfg), std::log(double(n)), 1e-6) << n << " " << eps << " " << tau;
      }
    }
  }
  TensorD e4({4, 2}, {1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0});
  EXPECT_NEAR(infonce_value(e4, e4, LossConfig{}), 1.386294, 1e-6);
}

TEST(InfoNCE, OrthonormalPair) {
  TensorD e({2, 2}, {1.0, 0.0, 0.0, 1.0});
  LossConfig cfg;
  cfg.temperature = 1.0;
  cfg.label_smoothing = 0.0;
  EXPECT_NEAR(infonce_value(e, e, cfg), std::log1p(std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(infonce_value(e, e, cfg), 0.313262, 1e-5);
}

TEST(InfoNCE, MatchesLoopOracle) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 20; ++t) {
    const Index n = 1 + t % 9;
    auto es = unit_rows(n, 8, rng), ea = unit_rows(n, 8, rng);
    LossConfig cfg;
    cfg.label_smoothing = (t % 3) * 0.1;
    cfg.temperature = t % 2 ? 0.07 : 0.5;
    EXPECT_NEAR(infonce_value(es, ea, cfg), infonce_oracle(es, ea, cfg.temperature, cfg.label_smoothing), 1e-10);
    EXPECT_GE(infonce_value(es, ea, cfg), 0.0);
  }
}

TEST(InfoNCE, PairRelabelingInvariance) {
  std::mt19937_64 rng(5);
  const Index n = 9;
  auto es = unit_rows(n, 6, rng), ea = unit_rows(n, 6, rng);
  const auto perm = seeded_permutation(n, 17);
  TensorD ps({n, 6}), pa({n, 6});
  for (Index i = 0; i < n; ++i) {
    ps.matrix().row(i) = es.matrix().row(perm[static_cast<std::size_t>(i)]);
    pa.matrix().row(i) = ea.matrix().row(perm[static_cast<std::size_t>(i)]);
  }
  EXPECT_NEAR(infonce_value(es, ea, LossConfig{}), infonce_value(ps, pa, LossConfig{}), 1e-12);
}

TEST(InfoNCE, RejectsBadBatches) {
  Tape<double> tape;
  TensorD e({2, 2}, {1.0, 0.0, 0.0, 1.0});
  EmbeddingBatch<double> dup{tape.constant(e), tape.constant(e), {5, 5}};
  EXPECT_THROW(infonce_loss(dup, LossConfig{}), std::invalid_argument);
  EmbeddingBatch<double> ok{tape.constant(e), tape.constant(e), {5, 6}};
  EXPECT_NO_THROW(infonce_loss(ok, LossConfig{}));
  EmbeddingBatch<double> not_unit{tape.constant(TensorD({2, 2}, 1.0)), tape.constant(e), {}};
  EXPECT_THROW(infonce_loss(not_unit, LossConfig{}), std::invalid_argument);
  LossConfig bad;
  bad.label_smoothing = 1.0;
  EXPECT_THROW(infonce_loss(ok, bad), std::invalid_argument);
}

TEST(InfoNCE, LearnableTemperatureMatchesFixed) {
  std::mt19937_64 rng(6);
  auto es = unit_rows(5, 4, rng), ea = unit_rows(5, 4, rng);
  Tape<double> tape;
  auto log_tau = tape.leaf(TensorD::scalar(std::log(0.07)));
  auto loss = infonce_loss<double>({tape.constant(es), tape.constant(ea), {}}, LossConfig{}, log_tau);
  EXPECT_NEAR(loss.value().item(), infonce_value(es, ea, LossConfig{}), 1e-10);
  EXPECT_TRUE(tape.backward(loss).touched(log_tau));
}

TEST(InfoNCE, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  for (double eps : {0.0, 0.1}) {
    LossConfig cfg;
    cfg.label_smoothing = eps;
    cfg.temperature = 0.5;
    auto closure64 = [cfg](Tape<double>&, const std::vector<Var<double>>& x) {
      return infonce_loss<double>({l2_normalize(x[0]), l2_normalize(x[1]), {}}, cfg);
    };
    auto closure32 = [cfg](Tape<float>&, const std::vector<Var<float>>& x) {
      return infonce_loss<float>({l2_normalize(x[0]), l2_normalize(x[1]), {}}, cfg);
    };
    auto es = random_tensor<double>({6, 5}, rng), ea = random_tensor<double>({6, 5}, rng);
    EXPECT_LT(grad_check<double>(closure64, {es, ea}, {.step = 1e-5}).max_rel_error, 1e-6);
    EXPECT_LT(grad_check<float>(closure32, {es.cast<float>(), ea.cast<float>()}, {.step = 1e-3}).max_rel_error, 1e-3);
  }
}

TEST(InfoNCE, OneStepDecreasesLoss) {
  LossConfig cfg;
  cfg.temperature = 1.0;
  cfg.label_smoothing = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    auto es = random_tensor<double>({2, 3}, rng), ea = random_tensor<double>({2, 3}, rng);
    auto eval = [&](const TensorD& s, const TensorD& a, TensorD* gs, TensorD* ga) {
      Tape<double> tape;
      auto vs = tape.leaf(s), va = tape.leaf(a);
      auto loss = infonce_loss<double>({l2_normalize(vs), l2_normalize(va), {}}, cfg);
      if (gs) {
        auto g = tape.backward(loss);
        *gs = g[vs];
        *ga = g[va];
      }
      return loss.value().item();
    };
    TensorD gs, ga;
    const double before = eval(es, ea, &gs, &ga);
    es.values() -= 0.05 * gs.values();
    ea.values() -= 0.05 * ga.values();
    EXPECT_LT(eval(es, ea, nullptr, nullptr), before) << "seed " << seed;
  }
}

// ---------------------------------------------------------------------------
// Haversine.

TEST(Haversine, Basics) {
  EXPECT_EQ(haversine({12.5, 41.9}, {12.5, 41.9}), 0.0);
  EXPECT_NEAR(haversine({0, 0}, {1, 0}), 2 * 3.14159265358979323846 * 6371000.0 / 360.0, 1e-6);
  EXPECT_NEAR(haversine({0, 0}, {1, 0}), 111194.9, 0.5);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> lon(-180, 180), lat(-90, 90);
  for (int t = 0; t < 100; ++t) {
    LonLat a{lon(rng), lat(rng)}, b{lon(rng), lat(rng)};
    EXPECT_EQ(haversine(a, b), haversine(b, a));
    EXPECT_LE(haversine(a, b), 3.14159265358979323846 * 6371000.0 + 1e-6);
  }
}

// ---------------------------------------------------------------------------
// Batch planning.

TEST(BatchPlans, PartitionPropertySweep) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 60; ++t) {
    const Index n = 1 + static_cast<Index>(rng() % 50);
    const Index bs = 2 + static_cast<Index>(rng() % 12);
    const std::uint64_t seed = rng();
    std::vector<LonLat> coords;
    for (Index i = 0; i < n; ++i) coords.push_back({double(rng() % 1000) * 1e-4, double(rng() % 1000) * 1e-4});
    auto e = unit_rows(n, 4, rng);
    EXPECT_TRUE(gps_group_batches(coords, bs, seed).is_partition(n, bs));
    EXPECT_TRUE(similarity_mine_batches(e, e, bs, seed).is_partition(n, bs));
    EXPECT_TRUE(random_batches(n, bs, seed).is_partition(n, bs));
  }
}

TEST(BatchPlans, DeterministicPerSeed) {
  std::mt19937_64 rng(10);
  std::vector<LonLat> coords;
  for (int i = 0; i < 40; ++i) coords.push_back({double(rng() % 1000) * 1e-4, double(rng() % 1000) * 1e-4});
  EXPECT_EQ(gps_group_batches(coords, 8, 3).batches, gps_group_batches(coords, 8, 3).batches);
  EXPECT_NE(gps_group_batches(coords, 8, 3).batches, gps_group_batches(coords, 8, 4).batches);
}

TEST(BatchPlans, FullBatch) {
  std::vector<LonLat> coords(7);
  for (int i = 0; i < 7; ++i) coords[static_cast<std::size_t>(i)] = {i * 0.01, 0.0};
  auto plan = gps_group_batches(coords, 7, 1);
  ASSERT_EQ(plan.batches.size(), 1u);
  EXPECT_EQ(plan.batches[0].size(), 7u);
  EXPECT_TRUE(plan.is_partition(7, 7));
  EXPECT_THROW(gps_group_batches(coords, 1, 1), std::invalid_argument);
}

TEST(BatchPlans, GpsBatchesAreGeographicallyTighter) {
  auto mean_intra = [](const BatchPlan& plan, const std::vector<LonLat>& c) {
    double total = 0;
    Index pairs = 0;
    for (const auto& b : plan.batches)
      for (std::size_t i = 0; i < b.size(); ++i)
        for (std::size_t j = i + 1; j < b.size(); ++j) {
          total += haversine(c[static_cast<std::size_t>(b[i])], c[static_cast<std::size_t>(b[j])]);
          ++pairs;
        }
    return total / static_cast<double>(pairs);
  };
  std::vector<double> diff;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed + 100);
    std::uniform_real_distribution<double> u(0.0, 0.05);
    std::vector<LonLat> coords;
    for (int i = 0; i < 200; ++i) coords.push_back({u(rng), u(rng)});
    diff.push_back(mean_intra(random_batches(200, 16, seed), coords) - mean_intra(gps_group_batches(coords, 16, seed), coords));
  }
  std::nth_element(diff.begin(), diff.begin() + 10, diff.end());
  EXPECT_GE(diff[10], 0.0);
}

TEST(BatchPlans, OrthogonalEmbeddingsTieBreakByIndex) {
  const Index n = 8;
  TensorD e({n, n}, 0.0);
  for (Index i = 0; i < n; ++i) e.at(i, i) = 1.0;
  auto plan = similarity_mine_batches(e, e, 3, 5);
  const auto order = seeded_permutation(n, 5);
  std::vector<char> used(n, 0);
  std::size_t k = 0;
  for (Index anchor : order) {
    if (used[static_cast<std::size_t>(anchor)]) continue;
    std::vector<Index> expect{anchor};
    used[static_cast<std::size_t>(anchor)] = 1;
    for (Index j = 0; j < n && expect.size() < 3; ++j) {
      if (!used[static_cast<std::size_t>(j)]) {
        expect.push_back(j);
        used[static_cast<std::size_t>(j)] = 1;
      }
    }
    ASSERT_LT(k, plan.batches.size());
    EXPECT_EQ(plan.batches[k++], expect);
  }
  EXPECT_EQ(k, plan.batches.size());
}

TEST(BatchPlans, MinedBatchesAreMoreSimilar) {
  auto mean_sim = [](const BatchPlan& plan, const TensorD& e) {
    double total = 0;
    Index pairs = 0;
    for (const auto& b : plan.batches)
      for (std::size_t i = 0; i < b.size(); ++i)
        for (std::size_t j = i + 1; j < b.size(); ++j) {
          total += e.matrix().row(b[i]).dot(e.matrix().row(b[j]));
          ++pairs;
        }
    return total / static_cast<double>(pairs);
  };
  std::vector<double> diff;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed + 200);
    auto centers = unit_rows(10, 16, rng);
    TensorD e({100, 16});
    for (Index i = 0; i < 100; ++i) {
      e.matrix().row(i) = centers.matrix().row(i % 10) + 0.3 * random_tensor<double>({1, 16}, rng).matrix().row(0);
      e.matrix().row(i).normalize();
    }
    diff.push_back(mean_sim(similarity_mine_batches(e, e, 10, seed), e) - mean_sim(random_batches(100, 10, seed), e));
  }
  std::nth_element(diff.begin(), diff.begin() + 10, diff.end());
  EXPECT_GT(diff[10], 0.0);
}

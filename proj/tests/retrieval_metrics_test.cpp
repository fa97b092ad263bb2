#include "cvd/core/grad_check.hpp"
#include "cvd/eval/geolocalize.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace cvd;

namespace {

TensorD unit_rows(Index n, Index d, std::mt19937_64& rng) {
  auto t = random_tensor<double>({n, d}, rng);
  for (Index i = 0; i < n; ++i) t.matrix().row(i).normalize();
  return t;
}

std::vector<std::string> numbered(Index n) {
  std::vector<std::string> ids;
  char buf[16];
  for (Index i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "%06td", i);
    ids.emplace_back(buf);
  }
  return ids;
}

std::vector<LonLat> line_coords(Index n) {
  std::vector<LonLat> c;
  for (Index i = 0; i < n; ++i) c.push_back({0.001 * double(i), -0.0005 * double(i)});
  return c;
}

}  // namespace

TEST(BuildIndex, SingleEntryAndNormalization) {
  auto one = build_index(TensorD({1, 3}, {0.0, 3.0, 4.0}), {"a"}, {{1.0, 2.0}});
  EXPECT_EQ(one.size(), 1);
  EXPECT_NEAR(one.gallery().row(0).norm(), 1.0, 1e-12);
  std::mt19937_64 rng(1);
  auto raw = random_tensor<double>({50, 8}, rng, 3.0);
  auto index = build_index(raw, numbered(50), line_coords(50));
  for (Index i = 0; i < 50; ++i) EXPECT_NEAR(index.gallery().row(i).norm(), 1.0, 1e-6);
}

TEST(BuildIndex, DuplicateIdNamed) {
  try {
    build_index(TensorD({2, 2}, {1.0, 0.0, 0.0, 1.0}), {"x7", "x7"}, line_coords(2));
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("x7"), std::string::npos);
  }
  EXPECT_THROW(build_index(TensorD({2, 2}, 1.0), {"a"}, line_coords(2)), std::invalid_argument);
}

TEST(QueryTopk, SelfMatchAndFullPermutation) {
  std::mt19937_64 rng(2);
  auto g = unit_rows(30, 16, rng);
  auto index = build_index(g, numbered(30), line_coords(30));
  for (Index j : {0, 7, 29}) {
    auto top = query_topk(index, index.gallery().row(j).transpose(), 1);
    EXPECT_EQ(top[0].id, index.ids()[static_cast<std::size_t>(j)]);
    EXPECT_NEAR(top[0].score, 1.0, 1e-6);
  }
  auto all = query_topk(index, g.matrix().row(3).transpose(), 30);
  ASSERT_EQ(all.size(), 30u);
  std::set<std::string> seen;
  for (std::size_t i = 0; i < all.size(); ++i) {
    seen.insert(all[i].id);
    if (i > 0) EXPECT_GE(all[i - 1].score, all[i].score);
  }
  EXPECT_EQ(seen.size(), 30u);
  EXPECT_THROW(query_topk(index, g.matrix().row(0).transpose(), 0), std::out_of_range);
  EXPECT_THROW(query_topk(index, g.matrix().row(0).transpose(), 31), std::out_of_range);
}

TEST(QueryTopk, TiesByAscendingId) {
  TensorD g({3, 2}, {1.0, 0.0, 1.0, 0.0, 0.0, 1.0});
  auto index = build_index(g, {"b", "a", "c"}, line_coords(3));
  Eigen::VectorXd q(2);
  q << 1.0, 0.0;
  auto top = query_topk(index, q, 3);
  EXPECT_EQ(top[0].id, "a");
  EXPECT_EQ(top[1].id, "b");
  EXPECT_EQ(top[2].id, "c");
  EXPECT_EQ(true_rank(index, q, 0), 2);
}

TEST(QueryTopk, MatchesBruteForceOracle) {
  std::mt19937_64 rng(3);
  Index mismatches = 0;
  for (int t = 0; t < 150; ++t) mismatches += oracle::topk_mismatches(oracle::random_topk_instance(rng, 400));
  EXPECT_EQ(mismatches, 0);
}

TEST(Recall, Counting) {
  EXPECT_EQ(recall_at_k({1, 1, 1}, 1), 100.0);
  EXPECT_EQ(recall_at_k({1, 2, 11, 3}, 10), 75.0);
  EXPECT_THROW(recall_at_k({}, 1), std::invalid_argument);
  EXPECT_THROW(recall_at_k({0, 1}, 1), std::invalid_argument);
}

TEST(Recall, MonotoneInK) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 100; ++t) {
    std::vector<Index> ranks;
    const Index n = 1 + static_cast<Index>(rng() % 40);
    for (Index i = 0; i < n; ++i) ranks.push_back(1 + static_cast<Index>(rng() % 30));
    for (Index k = 1; k < 32; ++k) EXPECT_LE(recall_at_k(ranks, k), recall_at_k(ranks, k + 1));
    EXPECT_EQ(recall_at_k(ranks, 30), 100.0);
  }
}

TEST(Recall, TopOnePercentK) {
  EXPECT_EQ(top1pct_k(1000), 10);
  EXPECT_EQ(top1pct_k(50), 1);
  EXPECT_EQ(top1pct_k(101), 2);
  EXPECT_EQ(top1pct_k(100), 1);
  EXPECT_EQ(top1pct_k(1), 1);
  for (Index n = 1; n <= 100; ++n) EXPECT_EQ(top1pct_k(n), 1);
  EXPECT_THROW(top1pct_k(0), std::invalid_argument);
}

TEST(EvaluateRetrieval, IdenticalQueriesScorePerfect) {
  std::mt19937_64 rng(5);
  auto g = unit_rows(40, 8, rng);
  auto ids = numbered(40);
  auto index = build_index(g, ids, line_coords(40));
  auto r = evaluate_retrieval(g, index, ids);
  EXPECT_EQ(r.r_at_1, 100.0);
  EXPECT_EQ(r.r_at_5, 100.0);
  EXPECT_EQ(r.r_at_10, 100.0);
  EXPECT_EQ(r.r_at_top1pct, 100.0);
  EXPECT_EQ(r.n_queries, 40);
  EXPECT_EQ(r.n_gallery, 40);
}

TEST(EvaluateRetrieval, RandomQueriesNearChance) {
  std::mt19937_64 rng(6);
  auto g = unit_rows(1000, 64, rng);
  auto q = unit_rows(1000, 64, rng);
  auto ids = numbered(1000);
  auto r = evaluate_retrieval(q, build_index(g, ids, line_coords(1000)), ids);
  EXPECT_GE(r.r_at_1, 0.0);
  EXPECT_LE(r.r_at_1, 1.0);
  EXPECT_LE(r.r_at_1, r.r_at_5);
  EXPECT_LE(r.r_at_5, r.r_at_10);
  EXPECT_LE(r.r_at_10, 100.0);
}

TEST(EvaluateRetrieval, MissingIdNamesQuery) {
  std::mt19937_64 rng(7);
  auto g = unit_rows(3, 4, rng);
  auto index = build_index(g, numbered(3), line_coords(3));
  try {
    evaluate_retrieval(g, index, {"000000", "000001", "zzz"});
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("query 2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("zzz"), std::string::npos);
  }
}

TEST(Geolocalize, SingleGalleryAndExactMatch) {
  std::mt19937_64 rng(8);
  auto one = build_index(unit_rows(1, 8, rng), {"only"}, {{-89.1, 30.4}});
  for (int t = 0; t < 5; ++t) {
    auto fix = geolocalize_embedding(unit_rows(1, 8, rng).matrix().row(0).transpose(), one);
    EXPECT_EQ(fix.id, "only");
    EXPECT_EQ(fix.lon, -89.1);
    EXPECT_EQ(fix.lat, 30.4);
  }
  auto g = unit_rows(20, 8, rng);
  auto index = build_index(g, numbered(20), line_coords(20));
  for (Index j = 0; j < 20; ++j) {
    Eigen::VectorXd q = index.gallery().row(j).transpose();
    auto fix = geolocalize_embedding(q, index);
    EXPECT_EQ(fix.lon, line_coords(20)[static_cast<std::size_t>(j)].lon);
    EXPECT_EQ(fix.id, query_topk(index, q, 1)[0].id);
  }
}

TEST(Geolocalize, ThroughEncoderAgreesWithTopk) {
  ConvNeXtConfig cfg;
  cfg.stage_channels = {8, 16, 16, 16};
  cfg.embed_dim = 16;
  auto params = init_convnext<float>(cfg, 9);
  std::mt19937_64 rng(10);
  std::vector<TensorF> sats;
  TensorD gallery({6, 16});
  for (Index i = 0; i < 6; ++i) {
    sats.push_back(random_tensor<float>({3, 32, 32}, rng));
    gallery.matrix().row(i) = embed_image(sats.back(), cfg, params).transpose();
  }
  auto index = build_index(gallery, numbered(6), line_coords(6));
  auto street = random_tensor<float>({3, 32, 64}, rng);
  auto fix = geolocalize(street, cfg, params, index);
  auto top = query_topk(index, embed_image(street, cfg, params), 1)[0];
  EXPECT_EQ(fix.id, top.id);
  EXPECT_EQ(fix.score, top.score);
  EXPECT_THROW(geolocalize(TensorF({3, 30, 64}), cfg, params, index), ShapeError);
}

TEST(Confusion, Counting) {
  auto c = confusion_matrix({0, 1, 2, 2}, {0, 1, 2, 2});
  EXPECT_EQ(c, (Confusion{{{1, 0, 0}, {0, 1, 0}, {0, 0, 2}}}));
  auto row = confusion_matrix({0, 1, 2}, {0, 0, 0});
  EXPECT_EQ(row[0], (std::array<std::int64_t, 3>{1, 1, 1}));
  EXPECT_THROW(confusion_matrix({3}, {0}), std::out_of_range);
  EXPECT_THROW(confusion_matrix({0, 1}, {0}), std::invalid_argument);
  std::mt19937_64 rng(11);
  for (int t = 0; t < 50; ++t) {
    std::vector<int> p, g;
    const auto n = rng() % 100;
    for (std::uint64_t i = 0; i < n; ++i) {
      p.push_back(int(rng() % 3));
      g.push_back(int(rng() % 3));
    }
    auto m = confusion_matrix(p, g);
    std::int64_t total = 0;
    for (auto& r : m)
      for (auto v : r) total += v;
    EXPECT_EQ(total, static_cast<std::int64_t>(n));
  }
}

TEST(ClassificationReport, Perfect) {
  auto r = classification_report(Confusion{{{4, 0, 0}, {0, 2, 0}, {0, 0, 9}}});
  for (const auto& m : r.per_class) {
    EXPECT_EQ(m.precision, 1.0);
    EXPECT_EQ(m.recall, 1.0);
    EXPECT_EQ(m.f1, 1.0);
  }
  EXPECT_EQ(r.oa, 1.0);
  EXPECT_EQ(r.macro_f1, 1.0);
}

TEST(ClassificationReport, WorkedExampleAgainstSampleCounting) {
  Confusion c{{{5, 0, 0}, {0, 0, 5}, {0, 0, 5}}};
  auto r = classification_report(c);
  EXPECT_EQ(r.per_class[2].precision, 0.5);
  EXPECT_EQ(r.per_class[2].recall, 1.0);
  EXPECT_NEAR(r.per_class[2].f1, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.oa, 10.0 / 15.0, 1e-15);
  EXPECT_EQ(r.per_class[1].precision, 0.0);  // zero denominator
  auto [pred, gt] = oracle::samples_from(c);
  auto o = oracle::count_samples(pred, gt);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(r.per_class[k].precision, o.p[k]);
    EXPECT_EQ(r.per_class[k].recall, o.r[k]);
    EXPECT_EQ(r.per_class[k].f1, o.f1[k]);
  }
  EXPECT_EQ(r.oa, o.oa);
}

TEST(ClassificationReport, RandomizedAgainstOracle) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 200; ++t) {
    Confusion c{};
    for (auto& row : c)
      for (auto& v : row) v = static_cast<std::int64_t>(rng() % 6);
    if (t % 7 == 0) c[1] = {0, 0, 0};
    auto r = classification_report(c);
    auto [pred, gt] = oracle::samples_from(c);
    if (pred.empty()) continue;
    auto o = oracle::count_samples(pred, gt);
    double lo = 1, hi = 0, sum_f1 = 0, weighted = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_EQ(r.per_class[k].precision, o.p[k]);
      EXPECT_EQ(r.per_class[k].recall, o.r[k]);
      EXPECT_EQ(r.per_class[k].f1, o.f1[k]);
      lo = std::min(lo, o.f1[k]);
      hi = std::max(hi, o.f1[k]);
      sum_f1 += o.f1[k];
      weighted += o.f1[k] * double(c[k][0] + c[k][1] + c[k][2]) / double(pred.size());
    }
    EXPECT_EQ(r.macro_f1, sum_f1 / 3.0);
    EXPECT_LE(r.macro_f1, hi + 1e-15);
    EXPECT_GE(r.macro_f1, lo - 1e-15);
    EXPECT_EQ(r.oa, o.oa);
    EXPECT_NEAR(classification_report(c, Averaging::weighted).macro_f1, weighted, 1e-12);
  }
}

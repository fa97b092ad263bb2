#include "cvd/synth/dataset.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <numeric>
#include <sstream>
#include <unistd.h>

using namespace cvd;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("cvd_synth_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  return dir;
}

std::uint64_t fnv1a(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::uint64_t h = 1469598103934665603ULL;
  char c;
  while (in.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

std::map<std::string, std::uint64_t> tree_hashes(const fs::path& root) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = fnv1a(e.path());
  }
  return out;
}

Scene empty_scene(double heading = 0) {
  Scene s;
  s.heading_deg = heading;
  s.ground = {100, 140, 60};
  return s;
}

SceneObject box(Vec2 lo, Vec2 hi, Rgb color, double height) {
  return {ObjectKind::building, {Shape2D::rect, lo, hi, 0}, color, height};
}

double water_fraction(const Image& img) {
  std::int64_t n = 0;
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      const Rgb p = img.get(r, c);
      n += std::abs(p[0] - 55) <= 12 && std::abs(p[1] - 85) <= 12 && std::abs(p[2] - 135) <= 14;
    }
  return static_cast<double>(n) / (img.width * img.height);
}

}  // namespace

TEST(Image, PpmRoundTripAndErrors) {
  Image img(5, 3);
  std::mt19937 rng(1);
  for (auto& b : img.rgb) b = static_cast<std::uint8_t>(rng());
  const auto dir = scratch_dir("ppm");
  fs::create_directories(dir);
  write_ppm(img, dir / "a.ppm");
  EXPECT_EQ(read_ppm(dir / "a.ppm"), img);

  std::ofstream(dir / "bad.ppm") << "P3\n1 1\n255\n0 0 0\n";
  EXPECT_THROW(read_ppm(dir / "bad.ppm"), std::runtime_error);
  {
    std::ofstream t(dir / "short.ppm", std::ios::binary);
    t << "P6\n4 4\n255\n" << std::string(10, 'x');
  }
  try {
    read_ppm(dir / "short.ppm");
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(Image, RasterGroupOperations) {
  Image img(6, 6);
  std::mt19937 rng(2);
  for (auto& b : img.rgb) b = static_cast<std::uint8_t>(rng());
  EXPECT_EQ(rotate_quarter_turns(rotate_quarter_turns(img, 1), -1), img);
  EXPECT_EQ(rotate_quarter_turns(img, 4), img);
  EXPECT_EQ(rotate_quarter_turns(rotate_quarter_turns(img, 1), 1), rotate_quarter_turns(img, 2));
  EXPECT_EQ(mirror_columns(mirror_columns(img)), img);
  EXPECT_EQ(roll_columns(roll_columns(img, 2), 4), img);
  // Clockwise: the top-left pixel moves to the top-right corner.
  EXPECT_EQ(rotate_quarter_turns(img, 1).get(0, 5), img.get(0, 0));
  EXPECT_EQ(roll_columns(img, 1).get(3, 0), img.get(3, 1));
  EXPECT_THROW(rotate_quarter_turns(Image(4, 2), 1), std::invalid_argument);
}

TEST(UnitDirection, ExactQuarterTurnAndMirrorSymmetry) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 2000; ++i) {
    const double b = static_cast<double>(rng() % (360 * 256)) * kHeadingQuantumDeg;
    const Vec2 d = unit_direction(b);
    EXPECT_NEAR(std::hypot(d.x, d.y), 1.0, 1e-15);
    const Vec2 q = unit_direction(b + 90);
    EXPECT_EQ(q.x, d.y);
    EXPECT_EQ(q.y, -d.x);
    const Vec2 m = unit_direction(360 - b);
    EXPECT_EQ(m.x, -d.x);
    EXPECT_EQ(m.y, d.y);
    const Vec2 w = unit_direction(b + 360);
    EXPECT_EQ(w.x, d.x);
    EXPECT_EQ(w.y, d.y);
  }
  EXPECT_EQ(unit_direction(0).x, 0.0);
  EXPECT_EQ(unit_direction(90).x, 1.0);
  EXPECT_EQ(unit_direction(180).y, -1.0);
}

TEST(GenerateScene, DeterministicPerSeedAndClass) {
  for (std::uint64_t seed : {0ULL, 1ULL, 77ULL}) {
    for (auto d : {Damage::light, Damage::medium, Damage::heavy}) {
      EXPECT_EQ(generate_scene(seed, d), generate_scene(seed, d));
    }
  }
  EXPECT_NE(generate_scene(1, Damage::light), generate_scene(2, Damage::light));
}

TEST(GenerateScene, LayoutAndDamageRules) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    for (auto d : {Damage::light, Damage::medium, Damage::heavy}) {
      const Scene s = generate_scene(seed, d);
      const DamageRules r = damage_rules(d);
      SCOPED_TRACE("seed " + std::to_string(seed) + " class " + std::to_string(int(d)));
      const int roads = count_kind(s, ObjectKind::road), buildings = count_kind(s, ObjectKind::building);
      const int trees = count_kind(s, ObjectKind::tree), signs = count_kind(s, ObjectKind::sign);
      EXPECT_TRUE(roads >= 1 && roads <= 2);
      EXPECT_TRUE(buildings >= 2 && buildings <= 6);
      EXPECT_TRUE(trees >= 3 && trees <= 10);
      EXPECT_TRUE(signs >= 0 && signs <= 3);
      const int debris = count_kind(s, ObjectKind::debris), fallen = count_kind(s, ObjectKind::fallen_tree);
      const int water = count_kind(s, ObjectKind::water);
      EXPECT_TRUE(debris >= r.debris_min && debris <= r.debris_max);
      EXPECT_TRUE(fallen >= r.fallen_min && fallen <= r.fallen_max);
      EXPECT_GE(water, r.water_min);
      if (d == Damage::light) EXPECT_EQ(water, 0);
      if (d == Damage::heavy) {
        EXPECT_GE(debris, 8);
        EXPECT_GE(fallen, 4);
        EXPECT_GE(road_water_fraction(s), 0.10);
      }
      EXPECT_GE(s.heading_deg, 0.0);
      EXPECT_LT(s.heading_deg, 360.0);
      const double half = s.extent_m / 2 + 1e-9;
      for (const auto& o : s.objects) {
        const auto& g = o.geometry;
        EXPECT_TRUE(std::abs(g.a.x) <= half && std::abs(g.a.y) <= half && std::abs(g.b.x) <= half &&
                    std::abs(g.b.y) <= half);
        if (g.shape == Shape2D::rect) EXPECT_TRUE(g.b.x > g.a.x && g.b.y > g.a.y);
        else EXPECT_GT(g.radius, 0.0);
        if (o.kind == ObjectKind::building || o.kind == ObjectKind::tree || o.kind == ObjectKind::sign) {
          EXPECT_GT(o.height_m, 0.0);
        }
      }
    }
  }
}

TEST(GenerateScene, ArtifactCountsIncreaseWithDamage) {
  std::map<Damage, double> mean;
  for (auto d : {Damage::light, Damage::medium, Damage::heavy}) {
    double total = 0;
    for (std::uint64_t seed = 1000; seed < 1100; ++seed) {
      const Scene s = generate_scene(seed, d);
      total += count_kind(s, ObjectKind::debris) + count_kind(s, ObjectKind::fallen_tree) +
               count_kind(s, ObjectKind::water);
    }
    mean[d] = total / 100;
  }
  EXPECT_GT(mean[Damage::heavy], mean[Damage::medium]);
  EXPECT_GT(mean[Damage::medium], mean[Damage::light]);
}

TEST(RenderOverhead, EmptySceneIsUniformGround) {
  const Image img = render_overhead(empty_scene(37.5), 64);
  EXPECT_EQ(img, Image(64, 64, {100, 140, 60}));
  EXPECT_THROW(render_overhead(empty_scene(), 16), std::invalid_argument);
}

TEST(RenderOverhead, EastBuildingAppearsRightOfCenter) {
  Scene s = empty_scene(0);
  const Rgb red{200, 20, 20};
  s.objects.push_back(box({10, -2}, {14, 2}, red, 8));
  const Image img = render_overhead(s, 64);  // 1 m per pixel
  // Pixel column c covers u = c + 0.5 - 32 meters east.
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c) {
      const double u = c + 0.5 - 32, v = 32 - r - 0.5;
      const bool inside = u >= 10 && u <= 14 && v >= -2 && v <= 2;
      EXPECT_EQ(img.get(r, c) == red, inside) << r << "," << c;
    }
  // Heading 90 puts east at image-up.
  const Image up = render_overhead(with_heading(s, 90), 64);
  EXPECT_EQ(up.get(32 - 12, 31), red);
}

TEST(RenderPanorama, EmptySceneSplitsAtHorizon) {
  const Image img = render_panorama(empty_scene(10), 128, 64);
  for (int r = 0; r < 64; ++r) {
    const Rgb expect = r < 32 ? Rgb{178, 206, 235} : Rgb{100, 140, 60};
    for (int c = 0; c < 128; ++c) ASSERT_EQ(img.get(r, c), expect) << r << "," << c;
  }
  EXPECT_THROW(render_panorama(empty_scene(), 100, 64), std::invalid_argument);
}

TEST(RenderPanorama, AzimuthNinetyLandsAtQuarterWidth) {
  Scene s = empty_scene(0);
  s.objects.push_back(box({18, -3}, {22, 3}, {200, 20, 20}, 12));
  const Image img = render_panorama(s, 128, 64);
  double sum = 0;
  int n = 0;
  for (int c = 0; c < 128; ++c) {
    bool hit = false;
    for (int r = 0; r < 64; ++r) {
      const Rgb p = img.get(r, c);
      hit = hit || (p[1] < 40 && p[0] > 100);
    }
    if (hit) {
      sum += c + 0.5;
      ++n;
    }
  }
  ASSERT_GT(n, 0);
  // atan(3/18) on either side of due east.
  const double half_span = std::atan(3.0 / 18.0) * 180 / M_PI / 360 * 128;
  EXPECT_NEAR(n, 2 * half_span, 2.0);
  EXPECT_NEAR(sum / n, 32.0, 0.5);
}

TEST(RenderPanorama, HeadingIsModulo360) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Scene s = generate_scene(seed, Damage::medium);
    Scene t = s;
    t.heading_deg = s.heading_deg + 360;
    EXPECT_EQ(render_panorama(s, 128, 64), render_panorama(t, 128, 64));
    EXPECT_EQ(render_overhead(s, 64), render_overhead(t, 64));
  }
}

TEST(CrossViewConsistency, ExactForQuarterTurnsOnRandomScenes) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scene s = generate_scene(seed * 7919, static_cast<Damage>(seed % 3));
    for (int theta : {0, 90, 180, 270}) {
      const auto r = cross_view_consistency(s, theta);
      EXPECT_EQ(r.panorama_mismatches, 0) << "seed " << seed << " theta " << theta;
      EXPECT_EQ(r.overhead_mismatches, 0) << "seed " << seed << " theta " << theta;
    }
    const auto m = mirror_consistency(s);
    EXPECT_TRUE(m.ok()) << "mirror seed " << seed << ": " << m.panorama_mismatches << "/" << m.overhead_mismatches;
  }
  EXPECT_THROW(cross_view_consistency(generate_scene(0, Damage::light), 45), std::invalid_argument);
}

TEST(Dataset, BalancedClassCountsAndPlanDeterminism) {
  SynthConfig cfg;
  cfg.n_samples = 30;
  cfg.seed = 5;
  const auto plan = plan_samples(cfg);
  std::map<Damage, int> counts;
  for (auto d : plan.damage) ++counts[d];
  EXPECT_EQ(counts[Damage::light], 10);
  EXPECT_EQ(counts[Damage::medium], 10);
  EXPECT_EQ(counts[Damage::heavy], 10);
  cfg.n_samples = 31;
  counts.clear();
  for (auto d : plan_samples(cfg).damage) ++counts[d];
  for (auto& [d, c] : counts) EXPECT_TRUE(c == 10 || c == 11);
  for (const auto& c : plan.centers) {
    EXPECT_LE(std::abs(c.lon - cfg.origin.lon), cfg.window_deg / 2);
    EXPECT_LE(std::abs(c.lat - cfg.origin.lat), cfg.window_deg / 2);
  }
  cfg.n_samples = 2;
  EXPECT_THROW(plan_samples(cfg), std::invalid_argument);
}

TEST(Dataset, EmitWritesManifestAndRegeneratesByteIdentical) {
  SynthConfig cfg;
  cfg.n_samples = 12;
  cfg.seed = 9;
  const auto a = scratch_dir("emit_a"), b = scratch_dir("emit_b");
  const auto manifest = emit_dataset(cfg, a);
  emit_dataset(cfg, b);
  const auto read = read_manifest(a / "manifest.jsonl");
  EXPECT_EQ(read.records, manifest.records);
  EXPECT_NO_THROW(read.validate(true));
  ASSERT_EQ(read.records.size(), 12U);
  EXPECT_EQ(read.records[3].id, "000003");
  EXPECT_EQ(read_ppm(a / read.records[3].sat).width, 64);
  EXPECT_EQ(read_ppm(a / read.records[3].street).width, 128);
  EXPECT_EQ(tree_hashes(a), tree_hashes(b));
  EXPECT_EQ(tree_hashes(a).size(), 25U);

  std::ifstream in(a / "manifest.jsonl");
  std::string first;
  std::getline(in, first);
  EXPECT_EQ(first.rfind("{\"id\":\"000000\",\"street\":\"street/000000.ppm\",\"sat\":\"sat/000000.ppm\",\"lon\":", 0),
            0U);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Dataset, UnwritableDirectoryRejected) {
  SynthConfig cfg;
  cfg.n_samples = 3;
  const auto file = scratch_dir("blocker");
  std::ofstream(file) << "x";
  EXPECT_THROW(emit_dataset(cfg, file / "sub"), std::runtime_error);
  fs::remove(file);
}

TEST(Dataset, ManifestRejectsBadRecords) {
  const auto dir = scratch_dir("manifest");
  fs::create_directories(dir);
  auto parse = [&](const std::string& text) {
    std::ofstream(dir / "m.jsonl") << text;
    return read_manifest(dir / "m.jsonl");
  };
  const std::string good =
      R"({"id":"a","street":"s.ppm","sat":"t.ppm","lon":1.0,"lat":2.0,"heading_deg":3.0,"damage":1})";
  EXPECT_EQ(parse(good + "\n").records.size(), 1U);
  EXPECT_THROW(parse(good + "\n" + good + "\n"), std::invalid_argument);
  EXPECT_THROW(parse(R"({"id":"a","street":"s","sat":"t","lon":1,"lat":2,"heading_deg":3,"damage":1,"x":0})"),
               std::invalid_argument);
  EXPECT_THROW(parse(R"({"id":"a","street":"s","sat":"t","lon":1,"lat":2,"damage":1})"), std::invalid_argument);
  EXPECT_THROW(parse(R"({"id":"a","street":"s","sat":"t","lon":1,"lat":2,"heading_deg":3,"damage":5})"),
               std::invalid_argument);
  EXPECT_THROW(parse("not json\n"), std::invalid_argument);
  EXPECT_THROW(parse(good).validate(true), std::invalid_argument);
  fs::remove_all(dir);
}

TEST(Dataset, WaterFractionClassifierSeparatesClasses) {
  SynthConfig cfg;
  cfg.n_samples = 300;
  cfg.seed = 21;
  const auto plan = plan_samples(cfg);
  std::vector<double> frac;
  std::vector<int> label;
  for (std::int64_t i = 0; i < cfg.n_samples; ++i) {
    const Scene s = generate_scene(sample_seed(cfg.seed, i), plan.damage[static_cast<std::size_t>(i)]);
    frac.push_back(water_fraction(render_overhead(s, 64)));
    label.push_back(static_cast<int>(s.damage));
  }
  // Two thresholds fitted on the first half, scored on the second.
  std::vector<double> cuts(frac.begin(), frac.begin() + 150);
  cuts.push_back(0);
  std::sort(cuts.begin(), cuts.end());
  auto predict = [](double f, double t1, double t2) { return f <= t1 ? 0 : (f <= t2 ? 1 : 2); };
  double best_t1 = 0, best_t2 = 0;
  int best = -1;
  for (double t1 : cuts)
    for (double t2 : cuts) {
      if (t2 < t1) continue;
      int ok = 0;
      for (int i = 0; i < 150; ++i) ok += predict(frac[i], t1, t2) == label[i];
      if (ok > best) best = ok, best_t1 = t1, best_t2 = t2;
    }
  int correct = 0;
  for (int i = 150; i < 300; ++i) correct += predict(frac[i], best_t1, best_t2) == label[i];
  EXPECT_GE(correct / 150.0, 0.80) << "thresholds " << best_t1 << " " << best_t2;
}

TEST(Dataset, RawOverheadNearestNeighbourIdentifiesPairs) {
  SynthConfig cfg;
  cfg.n_samples = 100;
  cfg.seed = 4;
  const auto data = make_dataset(cfg);
  auto pooled = [](const Image& img) {
    std::vector<double> v;
    for (int r = 0; r < img.height; r += 4)
      for (int c = 0; c < img.width; c += 4)
        for (int ch = 0; ch < 3; ++ch) {
          double s = 0;
          for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) s += img.get(r + i, c + j)[static_cast<std::size_t>(ch)];
          v.push_back(s / 16);
        }
    return v;
  };
  std::vector<std::vector<double>> feats;
  for (const auto& s : data) feats.push_back(pooled(s.sat));
  auto dist = [&](std::size_t a, std::size_t b) {
    double d = 0;
    for (std::size_t k = 0; k < feats[a].size(); ++k) d += (feats[a][k] - feats[b][k]) * (feats[a][k] - feats[b][k]);
    return d;
  };
  int exact = 0;
  for (std::size_t q = 0; q < feats.size(); ++q) {
    std::size_t best = 0;
    for (std::size_t g = 1; g < feats.size(); ++g)
      if (dist(q, g) < dist(q, best)) best = g;
    exact += best == q;
  }
  EXPECT_EQ(exact, 100);
  // Random pairing: expected one fixed point per permutation.
  std::mt19937_64 rng(8);
  double fixed = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> perm(100);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int i = 0; i < 100; ++i) fixed += perm[static_cast<std::size_t>(i)] == i;
  }
  EXPECT_NEAR(fixed / 200 / 100, 0.01, 0.005);
}

// Runs acceptance criteria 1-9 and prints one PASS/FAIL line per criterion.

#include "cvd/core/grad_check.hpp"
#include "cvd/loss/contrastive.hpp"
#include "cvd/pipeline/checkpoint.hpp"
#include "cvd/pipeline/sweep.hpp"
#include "cvd/pipeline/train.hpp"
#include "support/model_check.hpp"
#include "support/oracles.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using namespace cvd;
using namespace cvd::testing_support;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void log(const std::string& line) { std::cerr << "  " << line << std::endl; }

const fs::path kConfigDir = CVD_CONFIG_DIR;

template <typename S>
S scalar_of(const Var<S>&);

// ---------------------------------------------------------------------------

Outcome gradients() {
  double worst64 = 0, worst32 = 0;
  std::string worst_name, worst32_name;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    for (const auto& c : op_table<double>(seed)) {
      const double e = grad_check<double>(c.closure, c.inputs, {.step = 1e-5}).max_rel_error;
      if (e > worst64) worst64 = e, worst_name = c.name;
    }
    for (const auto& c : op_table<float>(seed)) {
      const double e = grad_check<float>(c.closure, c.inputs, {.step = 1e-3}).max_rel_error;
      if (e > worst32) worst32 = e, worst32_name = c.name;
    }
  }
  const auto cn = tiny_convnext();
  const auto gc = tiny_gcvit();
  std::mt19937_64 rng(8);
  const auto image = random_tensor<double>({3, 32, 32}, rng);
  const auto street = random_tensor<double>({3, 32, 64}, rng);
  const auto cnp = jitter(init_convnext<double>(cn, 9), 10);
  const auto gcp = jitter(init_gcvit<double>(gc, 26), 27);
  const auto cgp = jitter(merge_cgcvit(init_cgcvit<double>(gc, 30)), 31);

  auto both = [&](const std::string& name, const ParamSet<double>& params, const TensorD& x, auto&& fwd, Index entries) {
    const double e64 = check_model<double>(params, x, Forward<double>(fwd), entries).max_rel_error;
    const double e32 =
        check_model<float>(params.cast<float>(), x.cast<float>(), Forward<float>(fwd), entries).max_rel_error;
    if (e64 > worst64) worst64 = e64, worst_name = name;
    if (e32 > worst32) worst32 = e32, worst32_name = name;
  };
  both("convnext_encode", cnp, image, [&](auto x, const auto& p) { return convnext_encode(x, cn, p); }, 6);
  both("gcvit_encode", gcp, image, [&](auto x, const auto& p) { return gcvit_encode(x, gc, p); }, 4);
  // The street panorama enters as a constant; gradients flow to the
  // overhead input and every parameter of both branches and the head.
  both("cgcvit_forward", cgp, image, [&](auto x, const auto& p) {
    using S = decltype(scalar_of(x));
    return cgcvit_forward(x.tape->constant(street.cast<S>()), x, gc, p, p, p).logits;
  }, 3);
  return {worst64 < 1e-6 && worst32 < 1e-3,
          "max rel error f64 " + fmt("%.2e", worst64) + " (" + worst_name + "), f32 " + fmt("%.2e", worst32) + " (" + worst32_name + ")"};
}

Outcome loss_identities() {
  auto value = [](const TensorD& es, const TensorD& ea, const LossConfig& cfg) {
    Tape<double> tape;
    return infonce_loss(EmbeddingBatch<double>{tape.constant(es), tape.constant(ea), {}}, cfg).value()[0];
  };
  double worst = 0;
  for (Index n : {2, 4, 16})
    for (double eps : {0.0, 0.1}) {
      TensorD e({n, 4}, 0.5);
      LossConfig cfg;
      cfg.label_smoothing = eps;
      worst = std::max(worst, std::abs(value(e, e, cfg) - std::log(static_cast<double>(n))));
    }
  TensorD ortho({2, 2}, {1.0, 0.0, 0.0, 1.0});
  LossConfig unit;
  unit.temperature = 1.0;
  unit.label_smoothing = 0.0;
  const double pair_err = std::abs(value(ortho, ortho, unit) - std::log1p(std::exp(-1.0)));
  Tape<double> tape;
  auto a = tape.constant(TensorD({2}, {0.0, 0.0}));
  auto p = tape.constant(TensorD({2}, {1.0, 0.0}));
  auto n = tape.constant(TensorD({2}, {0.0, 2.0}));
  auto far = tape.constant(TensorD({2}, {0.0, 1.25}));
  const bool hinge = triplet_loss(a, p, n, 0.5).value()[0] == 0.0 && triplet_loss(a, n, p, 0.5).value()[0] == 1.5 &&
                     triplet_loss(a, p, far, 0.5).value()[0] == 0.25 && triplet_loss(a, p, p, 0.7).value()[0] == 0.7;
  return {worst <= 1e-6 && pair_err <= 1e-5 && hinge, "ln N max error " + fmt("%.1e", worst) + ", N=2 orthonormal error " +
                                                          fmt("%.1e", pair_err) + ", hinge cases " +
                                                          (hinge ? "exact" : "WRONG")};
}

Outcome retrieval_exactness() {
  std::mt19937_64 rng(2024);
  Index mismatches = 0, ties = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto inst = oracle::random_topk_instance(rng, 1000, 64);
    mismatches += oracle::topk_mismatches(inst);
    const auto m = inst.gallery.matrix();
    std::set<std::vector<double>> rows;
    for (Index r = 0; r < m.rows(); ++r) rows.insert(std::vector<double>(m.row(r).data(), m.row(r).data() + m.cols()));
    ties += static_cast<Index>(rows.size()) < m.rows();
  }
  return {mismatches == 0 && ties > 0, "1000 instances, " + std::to_string(ties) + " with duplicate rows, " +
                                           std::to_string(mismatches) + " mismatches"};
}

Outcome metric_arithmetic() {
  bool ok = recall_at_k({1, 1, 1}, 1) == 100.0 && recall_at_k({1, 2, 11, 3}, 10) == 75.0 &&
            recall_at_k({2, 1}, 1) == 50.0 && recall_at_k({6, 5}, 5) == 50.0;
  ok = ok && top1pct_k(1000) == 10;
  for (Index n = 1; n <= 100; ++n) ok = ok && top1pct_k(n) == 1;
  const Confusion worked{{{5, 0, 0}, {0, 0, 5}, {0, 0, 5}}};
  const auto r = classification_report(worked);
  ok = ok && r.per_class[2].precision == 0.5 && r.per_class[2].recall == 1.0 && r.oa == 10.0 / 15.0 &&
       r.per_class[1].precision == 0.0;
  std::mt19937_64 rng(5);
  int checked = 0;
  for (int t = 0; t < 200; ++t) {
    Confusion c{};
    for (auto& row : c)
      for (auto& v : row) v = static_cast<std::int64_t>(rng() % 7);
    const auto rep = classification_report(c);
    const auto [pred, gt] = oracle::samples_from(c);
    if (pred.empty()) continue;
    const auto o = oracle::count_samples(pred, gt);
    for (std::size_t k = 0; k < 3; ++k) {
      ok = ok && rep.per_class[k].precision == o.p[k] && rep.per_class[k].recall == o.r[k] &&
           rep.per_class[k].f1 == o.f1[k];
    }
    ok = ok && rep.oa == o.oa && confusion_matrix(pred, gt) == c;
    ++checked;
  }
  return {ok, "hand examples, k rule (k=10 at 1000, k=1 up to 100), " + std::to_string(checked) + " oracle matrices"};
}

// Geolocalization runs shared by criteria 5 and 6.
struct GeolocResults {
  std::map<std::string, std::vector<double>> r1, r5;
};

const PairData& geoloc_data() {
  static const PairData data = [] {
    SynthConfig sc;
    sc.n_samples = 320;
    sc.seed = 2024;
    return pairs_from_samples(make_dataset(sc));
  }();
  return data;
}

const std::vector<std::uint64_t> kSeeds{0, 1, 2};

void run_geoloc(GeolocResults& out, const std::vector<SplitRatio>& ratios) {
  auto base = load_config(kConfigDir / "geoloc_synthetic.json");
  base.eval_every = base.epochs;
  const auto rows = run_ratio_sweep<float>(base, geoloc_data(), ratios, kSeeds, log);
  for (const auto& row : rows) {
    out.r1[row.ratio].push_back(row.report.r_at_1);
    out.r5[row.ratio].push_back(row.report.r_at_5);
  }
}

Outcome geoloc_end_to_end(GeolocResults& res, double& seconds) {
  const auto t0 = Clock::now();
  run_geoloc(res, {SplitRatio{5, 5}});
  seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  const double r1 = median(res.r1["5:5"]), r5 = median(res.r5["5:5"]);
  return {r1 >= 80.0 && r5 >= 95.0 && seconds <= 1800,
          "median R@1 " + fmt("%.2f", r1) + " (>= 80), R@5 " + fmt("%.2f", r5) + " (>= 95)"};
}

Outcome ratio_trend(GeolocResults& res) {
  std::vector<SplitRatio> todo;
  for (int a = 1; a <= 4; ++a) todo.push_back({a, 10 - a});
  if (!res.r1.count("5:5")) todo.push_back({5, 5});
  run_geoloc(res, todo);
  bool ok = true;
  std::string trend;
  double prev = -1;
  for (int a = 1; a <= 5; ++a) {
    const double m = median(res.r1[SplitRatio{a, 10 - a}.str()]);
    if (prev >= 0 && m < prev - 2.0) ok = false;
    trend += (a > 1 ? " -> " : "") + fmt("%.1f", m);
    prev = m;
  }
  return {ok, "median R@1 1:9..5:5: " + trend};
}

Outcome damage_classification(double& seconds) {
  const auto t0 = Clock::now();
  SynthConfig sc;
  sc.n_samples = 300;
  sc.seed = 2025;
  const auto data = pairs_from_samples(make_dataset(sc));
  const auto base = load_config(kConfigDir / "damage_synthetic.json");
  std::map<ViewMode, std::vector<double>> oa;
  for (auto mode : {ViewMode::cross, ViewMode::street, ViewMode::sat})
    for (auto seed : kSeeds) {
      auto cfg = base;
      cfg.mode = mode;
      cfg.seed = seed;
      cfg.eval_every = cfg.epochs;
      const auto run = train_damage<float>(cfg, data);
      oa[mode].push_back(100.0 * run.report.oa);
      log(view_mode_name(mode) + " seed " + std::to_string(seed) + " OA " + fmt("%.2f", 100.0 * run.report.oa));
    }
  seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  const double cross = median(oa[ViewMode::cross]), street = median(oa[ViewMode::street]),
               sat = median(oa[ViewMode::sat]);
  const bool ok = cross >= 90.0 && cross >= std::max(street, sat) - 1.0 && seconds <= 1800;
  return {ok, "median OA cross " + fmt("%.2f", cross) + " (>= 90), street " + fmt("%.2f", street) + ", sat " +
                  fmt("%.2f", sat)};
}

std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : bytes) h = (h ^ c) * 1099511628211ULL;
  return h;
}

std::uint64_t tree_hash(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::uint64_t h = fnv1a("");
  for (const auto& f : files) h = fnv1a(fs::relative(f, root).string() + read_file_bytes(f), h);
  return h;
}

Outcome determinism() {
  const auto tmp = fs::temp_directory_path() / "cvd_acceptance";
  fs::remove_all(tmp);
  SynthConfig sc;
  sc.n_samples = 60;
  sc.seed = 77;
  emit_dataset(sc, tmp / "a");
  emit_dataset(sc, tmp / "b");
  const bool dataset = tree_hash(tmp / "a") == tree_hash(tmp / "b");

  bool ckpt = true;
  for (auto task : {Task::geoloc, Task::damage}) {
    auto cfg = TrainConfig::defaults(task);
    const auto params = task == Task::geoloc ? init_geoloc_params<float>(cfg)
                                             : merge_cgcvit(init_cgcvit<float>(cfg.gcvit, cfg.seed));
    save_checkpoint(make_checkpoint(params, cfg), tmp / "a.ckpt");
    save_checkpoint(load_checkpoint<float>(tmp / "a.ckpt"), tmp / "b.ckpt");
    ckpt = ckpt && read_file_bytes(tmp / "a.ckpt") == read_file_bytes(tmp / "b.ckpt");
  }

  sc.n_samples = 24;
  const auto data = pairs_from_samples(make_dataset(sc));
  auto cfg = TrainConfig::defaults(Task::geoloc);
  cfg.epochs = 2;
  cfg.batch_size = 6;
  cfg.base_lr = 1e-3;
  cfg.dtype = "f64";
  cfg.augment.grid_dropout = true;
  cfg.augment.color_jitter = 0.2;
  const auto a = train_geoloc<double>(cfg, data);
  const auto b = train_geoloc<double>(cfg, data);
  bool trace = a.log.steps.size() == b.log.steps.size();
  for (std::size_t i = 0; trace && i < a.log.steps.size(); ++i) trace = a.log.steps[i].loss == b.log.steps[i].loss;
  fs::remove_all(tmp);
  return {dataset && ckpt && trace, std::string("dataset hash ") + (dataset ? "identical" : "DIFFERS") +
                                        ", checkpoint save/load/save " + (ckpt ? "identical" : "DIFFERS") +
                                        ", f64 loss trace (" + std::to_string(a.log.steps.size()) + " steps) " +
                                        (trace ? "bit-exact" : "DIFFERS")};
}

Outcome consistency() {
  std::int64_t mismatches = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto scene = generate_scene(seed, static_cast<Damage>(seed % 3));
    for (int theta : {0, 90, 180, 270}) {
      const auto r = cross_view_consistency(scene, theta);
      mismatches += r.panorama_mismatches + r.overhead_mismatches;
    }
    const auto m = mirror_consistency(scene);
    mismatches += m.panorama_mismatches + m.overhead_mismatches;
  }
  return {mismatches == 0, "20 scenes x 4 rotations + mirror, " + std::to_string(mismatches) + " pixel mismatches"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-9"};
  std::vector<int> only;
  app.add_option("--only", only, "Criteria to run")->delimiter(',')->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);
  std::set<int> selected(only.begin(), only.end());
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9};

  GeolocResults geoloc;
  int failures = 0;
  for (int id : selected) {
    const auto t0 = Clock::now();
    Outcome o;
    double limit = 0, train_seconds = 0;
    try {
      switch (id) {
        case 1: o = gradients(), limit = 120; break;
        case 2: o = loss_identities(); break;
        case 3: o = retrieval_exactness(), limit = 60; break;
        case 4: o = metric_arithmetic(); break;
        case 5: o = geoloc_end_to_end(geoloc, train_seconds); break;
        case 6: o = ratio_trend(geoloc); break;
        case 7: o = damage_classification(train_seconds); break;
        case 8: o = determinism(); break;
        case 9: o = consistency(); break;
      }
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    if (limit > 0 && secs >= limit) {
      o.pass = false;
      o.detail += ", over the " + fmt("%.0f", limit) + " s limit";
    }
    failures += !o.pass;
    std::printf("criterion %d: %s  %s  [%.1f s]\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}

#include "cvd/pipeline/checkpoint.hpp"
#include "cvd/pipeline/reports.hpp"
#include "cvd/pipeline/sweep.hpp"
#include "cvd/pipeline/train.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <fstream>

namespace fs = std::filesystem;
using namespace cvd;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string dtype;
  std::string manifest;
  bool quiet = false;
};

void add_common(CLI::App* app, Common& c, bool out_required) {
  app->add_option("--config", c.config, "JSON config mirroring TrainConfig")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Seed override");
  auto* out = app->add_option("--out", c.out, "Output directory");
  if (out_required) out->required();
  app->add_option("--dtype", c.dtype, "Scalar type")->check(CLI::IsMember({"f32", "f64"}));
  app->add_option("--manifest", c.manifest, "Dataset manifest.jsonl")->check(CLI::ExistingFile);
  app->add_flag("--quiet", c.quiet, "No per-epoch progress");
}

TrainConfig resolve_config(const Common& c, Task task) {
  TrainConfig cfg = c.config.empty() ? TrainConfig::defaults(task) : load_config(c.config);
  if (cfg.task != task) throw std::invalid_argument("config task is " + task_name(cfg.task) + ", expected " + task_name(task));
  if (c.seed) cfg.seed = *c.seed;
  if (!c.dtype.empty()) cfg.dtype = c.dtype;
  if (!c.manifest.empty()) cfg.manifest = c.manifest;
  if (!cfg.manifest.empty()) cfg.manifest = fs::absolute(cfg.manifest);
  if (cfg.manifest.empty()) throw std::invalid_argument("no manifest given (--manifest or config.manifest)");
  cfg.validate();
  return cfg;
}

ProgressFn progress_for(const Common& c) {
  if (c.quiet) return {};
  return [](const std::string& line) { std::cerr << line << "\n"; };
}

fs::path prepare_out(const std::string& out) {
  const fs::path dir(out);
  fs::create_directories(dir);
  return dir;
}

PairData load_data(const fs::path& manifest) { return load_pairs(read_manifest(manifest)); }

template <typename Scalar>
void train_geoloc_cmd(const TrainConfig& cfg, const Common& c) {
  const auto data = load_data(cfg.manifest);
  const auto run = train_geoloc<Scalar>(cfg, data, progress_for(c));
  const auto dir = prepare_out(c.out);
  save_checkpoint(make_checkpoint(run.params, cfg), dir / "model.ckpt");
  write_text(dir / "steps.csv", step_log_csv(run.log));
  write_text(dir / "epochs.csv", epoch_log_csv(run.log));
  write_text(dir / "retrieval.csv", retrieval_csv(run.report));
  std::cout << retrieval_csv(run.report);
}

template <typename Scalar>
void train_damage_cmd(const TrainConfig& cfg, const Common& c) {
  const auto data = load_data(cfg.manifest);
  const auto run = train_damage<Scalar>(cfg, data, progress_for(c));
  const auto dir = prepare_out(c.out);
  save_checkpoint(make_checkpoint(run.params, cfg), dir / "model.ckpt");
  write_text(dir / "steps.csv", step_log_csv(run.log));
  write_text(dir / "epochs.csv", epoch_log_csv(run.log));
  write_text(dir / "classification.csv", classification_csv(run.report));
  for (const auto& note : run.log.notes) std::cerr << note << "\n";
  std::cout << classification_csv(run.report);
}

/// Rows of the manifest an evaluation covers: the config's test split, or
/// every row.
std::vector<Index> eval_rows(const PairData& data, const TrainConfig& cfg, bool all) {
  if (!all) return split_dataset(data.labels(), cfg.split, cfg.seed).test;
  std::vector<Index> rows(static_cast<std::size_t>(data.size()));
  for (Index i = 0; i < data.size(); ++i) rows[static_cast<std::size_t>(i)] = i;
  return rows;
}

template <typename Scalar>
void eval_geoloc_cmd(const fs::path& ckpt_path, const std::string& manifest, bool all, const std::string& out) {
  const auto ckpt = load_checkpoint<Scalar>(ckpt_path);
  const auto cfg = ckpt.train_config();
  if (cfg.task != Task::geoloc) throw std::invalid_argument("checkpoint is not a geolocalization model");
  const auto data = load_data(manifest.empty() ? cfg.manifest : fs::path(manifest));
  detail::check_rasters(data, cfg);
  const auto rows = eval_rows(data, cfg, all);
  const InputCache<Scalar> inputs(data, rows, cfg.input_size, cfg.crop_frac);
  const auto queries = embed_all(inputs.street, cfg.convnext, ckpt.params);
  const auto index = build_index(embed_all(inputs.sat, cfg.convnext, ckpt.params), data.ids(rows), data.coords(rows));
  const auto report = evaluate_retrieval(queries, index, data.ids(rows));
  const Eigen::MatrixXd sim = queries.matrix().template cast<double>() * index.gallery().transpose();
  const auto dir = prepare_out(out);
  write_text(dir / "retrieval.csv", retrieval_csv(report));
  write_similarity_pgm(sim, dir / "similarity.pgm");
  std::cout << retrieval_csv(report);
}

template <typename Scalar>
void eval_damage_cmd(const fs::path& ckpt_path, const std::string& manifest, bool all, const std::string& out) {
  const auto ckpt = load_checkpoint<Scalar>(ckpt_path);
  const auto cfg = ckpt.train_config();
  if (cfg.task != Task::damage) throw std::invalid_argument("checkpoint is not a damage model");
  const auto data = load_data(manifest.empty() ? cfg.manifest : fs::path(manifest));
  detail::check_rasters(data, cfg);
  const auto rows = eval_rows(data, cfg, all);
  const InputCache<Scalar> inputs(data, rows, cfg.input_size, cfg.crop_frac);
  std::vector<int> labels;
  for (Index i : rows) labels.push_back(data.records[static_cast<std::size_t>(i)].damage);
  const auto report = classification_report(confusion_matrix(predict_damage(inputs, cfg, ckpt.params), labels));
  const auto dir = prepare_out(out);
  write_text(dir / "classification.csv", classification_csv(report));
  std::cout << classification_csv(report);
}

template <typename Scalar>
void query_cmd(const fs::path& ckpt_path, const std::string& manifest, const fs::path& image, Index k,
               const std::string& out) {
  const auto ckpt = load_checkpoint<Scalar>(ckpt_path);
  const auto cfg = ckpt.train_config();
  if (cfg.task != Task::geoloc) throw std::invalid_argument("checkpoint is not a geolocalization model");
  const auto data = load_data(manifest.empty() ? cfg.manifest : fs::path(manifest));
  std::vector<Index> rows(static_cast<std::size_t>(data.size()));
  for (Index i = 0; i < data.size(); ++i) rows[static_cast<std::size_t>(i)] = i;
  std::vector<Tensor<Scalar>> gallery;
  for (const auto& sat : data.sat) gallery.push_back(preprocess_sat<Scalar>(sat, cfg.input_size));
  const auto index = build_index(embed_all(gallery, cfg.convnext, ckpt.params), data.ids(rows), data.coords(rows));
  const auto pano = read_ppm(image);
  const auto q = embed_all(std::vector{preprocess_street<Scalar>(pano, cfg.input_size, cfg.crop_frac)}, cfg.convnext,
                           ckpt.params);
  const Eigen::VectorXd qv = q.matrix().row(0).transpose();
  const auto fix = geolocalize_embedding(qv, index);
  std::string table = "rank,id,score,lon,lat\n";
  const auto matches = query_topk(index, qv, std::min<Index>(k, index.size()));
  for (std::size_t r = 0; r < matches.size(); ++r) {
    const auto& ll = index.coords()[static_cast<std::size_t>(matches[r].row)];
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu,%s,%.9g,%.9g,%.9g\n", r + 1, matches[r].id.c_str(), matches[r].score, ll.lon,
                  ll.lat);
    table += buf;
  }
  std::printf("lon %.9g lat %.9g (match %s, score %.6f)\n", fix.lon, fix.lat, fix.id.c_str(), fix.score);
  std::cout << table;
  if (!out.empty()) write_text(prepare_out(out) / "query.csv", table);
}

template <typename Scalar>
void sweep_cmd(const TrainConfig& cfg, const Common& c, const std::vector<std::string>& ratio_text,
               const std::vector<std::uint64_t>& seeds) {
  std::vector<SplitRatio> ratios;
  for (const auto& r : ratio_text) ratios.push_back(SplitRatio::parse(r));
  const auto data = load_data(cfg.manifest);
  const auto rows = run_ratio_sweep<Scalar>(cfg, data, ratios, seeds, progress_for(c));
  write_text(prepare_out(c.out) / "sweep.csv", sweep_csv(rows));
  std::cout << sweep_csv(rows);
}

SynthConfig load_synth_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("synth config: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("synth config: expected a JSON object");
  SynthConfig sc;
  for (const auto& [key, v] : j.items()) {
    if (key == "n_samples") sc.n_samples = v.get<int>();
    else if (key == "seed") sc.seed = v.get<std::uint64_t>();
    else if (key == "pano_width") sc.pano_width = v.get<int>();
    else if (key == "pano_height") sc.pano_height = v.get<int>();
    else if (key == "overhead_size") sc.overhead_size = v.get<int>();
    else if (key == "extent_m") sc.extent_m = v.get<double>();
    else if (key == "class_balance") sc.class_balance = v.get<bool>();
    else if (key == "window_deg") sc.window_deg = v.get<double>();
    else throw std::invalid_argument("synth config: unknown key '" + key + "'");
  }
  return sc;
}

std::string stored_dtype(const fs::path& ckpt, const std::string& requested) {
  const auto stored = checkpoint_dtype(ckpt);
  if (!requested.empty() && requested != stored) {
    throw std::invalid_argument("checkpoint holds " + stored + " tensors, --dtype asked for " + requested);
  }
  return stored;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-view geolocalization and damage perception toolkit"};
  app.require_subcommand(1);

  Common synth_c;
  std::optional<int> n_samples;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic paired dataset");
  synth->add_option("--seed", synth_c.seed, "Dataset seed");
  synth->add_option("--out", synth_c.out, "Output directory")->required();
  synth->add_option("--n", n_samples, "Number of pairs")->check(CLI::PositiveNumber);
  synth->add_option("--config", synth_c.config, "JSON generator config")->check(CLI::ExistingFile);
  synth->add_option("--dtype", synth_c.dtype, "Accepted for uniformity; rasters are 8-bit")->check(CLI::IsMember({"f32", "f64"}));

  Common tg_c, td_c;
  auto* tg = app.add_subcommand("train-geoloc", "Train the Siamese ConvNeXt");
  add_common(tg, tg_c, true);
  auto* td = app.add_subcommand("train-damage", "Train the CGCViT damage classifier");
  add_common(td, td_c, true);
  std::string mode;
  td->add_option("--mode", mode, "View mode override")->check(CLI::IsMember({"cross", "street", "sat"}));

  std::string ckpt, eval_manifest, eval_out, eval_dtype;
  bool eval_all = false;
  auto* eg = app.add_subcommand("eval-geoloc", "Evaluate retrieval from a checkpoint");
  auto* ed = app.add_subcommand("eval-damage", "Evaluate damage classification from a checkpoint");
  for (auto* sub : {eg, ed}) {
    sub->add_option("--checkpoint", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
    sub->add_option("--manifest", eval_manifest, "Manifest (default: the one in the checkpoint config)");
    sub->add_option("--out", eval_out, "Output directory")->required();
    sub->add_option("--dtype", eval_dtype, "Expected checkpoint dtype")->check(CLI::IsMember({"f32", "f64"}));
    sub->add_flag("--all", eval_all, "Evaluate every manifest row instead of the test split");
  }

  std::string q_image, q_out;
  Index q_k = 10;
  auto* query = app.add_subcommand("query", "Geolocalize one panorama against a gallery");
  query->add_option("--checkpoint", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  query->add_option("--manifest", eval_manifest, "Gallery manifest (default: the checkpoint's)");
  query->add_option("--image", q_image, "Street panorama (PPM)")->required()->check(CLI::ExistingFile);
  query->add_option("--k", q_k, "Table length")->check(CLI::PositiveNumber);
  query->add_option("--out", q_out, "Directory for query.csv");
  query->add_option("--dtype", eval_dtype, "Expected checkpoint dtype")->check(CLI::IsMember({"f32", "f64"}));

  Common sw_c;
  std::vector<std::string> ratios{"1:9", "2:8", "3:7", "4:6", "5:5", "6:4"};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  auto* sweep = app.add_subcommand("sweep-ratio", "Train and evaluate geolocalization across split ratios");
  add_common(sweep, sw_c, true);
  sweep->add_option("--ratios", ratios, "Ratios a:b")->delimiter(',');
  sweep->add_option("--seeds", seeds, "Seeds")->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      SynthConfig sc = synth_c.config.empty() ? SynthConfig{} : load_synth_config(synth_c.config);
      if (n_samples) sc.n_samples = *n_samples;
      if (synth_c.seed) sc.seed = *synth_c.seed;
      const auto m = emit_dataset(sc, synth_c.out);
      std::cout << "wrote " << m.records.size() << " pairs to " << (fs::path(synth_c.out) / "manifest.jsonl").string()
                << "\n";
    } else if (tg->parsed()) {
      const auto cfg = resolve_config(tg_c, Task::geoloc);
      if (cfg.dtype == "f64") train_geoloc_cmd<double>(cfg, tg_c);
      else train_geoloc_cmd<float>(cfg, tg_c);
    } else if (td->parsed()) {
      auto cfg = resolve_config(td_c, Task::damage);
      if (mode == "cross") cfg.mode = ViewMode::cross;
      if (mode == "street") cfg.mode = ViewMode::street;
      if (mode == "sat") cfg.mode = ViewMode::sat;
      if (cfg.dtype == "f64") train_damage_cmd<double>(cfg, td_c);
      else train_damage_cmd<float>(cfg, td_c);
    } else if (eg->parsed()) {
      if (stored_dtype(ckpt, eval_dtype) == "f64") eval_geoloc_cmd<double>(ckpt, eval_manifest, eval_all, eval_out);
      else eval_geoloc_cmd<float>(ckpt, eval_manifest, eval_all, eval_out);
    } else if (ed->parsed()) {
      if (stored_dtype(ckpt, eval_dtype) == "f64") eval_damage_cmd<double>(ckpt, eval_manifest, eval_all, eval_out);
      else eval_damage_cmd<float>(ckpt, eval_manifest, eval_all, eval_out);
    } else if (query->parsed()) {
      if (stored_dtype(ckpt, eval_dtype) == "f64") query_cmd<double>(ckpt, eval_manifest, q_image, q_k, q_out);
      else query_cmd<float>(ckpt, eval_manifest, q_image, q_k, q_out);
    } else if (sweep->parsed()) {
      const auto cfg = resolve_config(sw_c, Task::geoloc);
      if (cfg.dtype == "f64") sweep_cmd<double>(cfg, sw_c, ratios, seeds);
      else sweep_cmd<float>(cfg, sw_c, ratios, seeds);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

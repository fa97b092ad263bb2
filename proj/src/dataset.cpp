#include "cvd/synth/dataset.hpp"

#include "cvd/core/random.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <stdexcept>

namespace cvd {

namespace fs = std::filesystem;

void SynthConfig::validate() const {
  if (n_samples < 3) throw std::invalid_argument("SynthConfig: n_samples must be at least 3");
  if (overhead_size < 32) throw std::invalid_argument("SynthConfig: overhead_size must be at least 32");
  if (pano_height < 1 || pano_width != 2 * pano_height) {
    throw std::invalid_argument("SynthConfig: pano_width must be twice pano_height");
  }
  if (!(extent_m > 0)) throw std::invalid_argument("SynthConfig: extent_m must be positive");
  if (!(window_deg > 0)) throw std::invalid_argument("SynthConfig: window_deg must be positive");
}

std::string sample_id(std::int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06lld", static_cast<long long>(index));
  return buf;
}

std::uint64_t sample_seed(std::uint64_t seed, std::int64_t index) {
  return mix_seed(seed ^ (static_cast<std::uint64_t>(index) * 0x9E3779B97F4A7C15ULL));
}

SamplePlan plan_samples(const SynthConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(cfg.n_samples);
  SamplePlan plan;
  std::mt19937_64 rng(sample_seed(cfg.seed, -1));
  auto unit = [&rng] { return uniform01(rng); };
  plan.damage.resize(n);
  if (cfg.class_balance) {
    const auto order = seeded_permutation(static_cast<Index>(n), sample_seed(cfg.seed, -2));
    for (std::size_t i = 0; i < n; ++i) plan.damage[static_cast<std::size_t>(order[i])] = static_cast<Damage>(i % 3);
  } else {
    for (auto& d : plan.damage) d = static_cast<Damage>(std::min(2, static_cast<int>(unit() * 3)));
  }
  const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  const double cell = cfg.window_deg / static_cast<double>(side);
  const double lon0 = cfg.origin.lon - cfg.window_deg / 2, lat0 = cfg.origin.lat - cfg.window_deg / 2;
  plan.centers.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double gx = static_cast<double>(i % side) + 0.5 + (unit() - 0.5) * 0.6;
    const double gy = static_cast<double>(i / side) + 0.5 + (unit() - 0.5) * 0.6;
    plan.centers[i] = {lon0 + gx * cell, lat0 + gy * cell};
  }
  return plan;
}

Sample make_sample(const SynthConfig& cfg, const SamplePlan& plan, std::int64_t index) {
  const auto i = static_cast<std::size_t>(index);
  if (index < 0 || i >= plan.damage.size()) throw std::out_of_range("make_sample: index outside the plan");
  Sample s;
  s.scene = generate_scene(sample_seed(cfg.seed, index), plan.damage[i], cfg.extent_m);
  s.scene.center = plan.centers[i];
  s.street = render_panorama(s.scene, cfg.pano_width, cfg.pano_height);
  s.sat = render_overhead(s.scene, cfg.overhead_size);
  const auto id = sample_id(index);
  s.record = {id, "street/" + id + ".ppm", "sat/" + id + ".ppm", s.scene.center.lon, s.scene.center.lat,
              s.scene.heading_deg, static_cast<int>(s.scene.damage)};
  return s;
}

std::vector<Sample> make_dataset(const SynthConfig& cfg) {
  const auto plan = plan_samples(cfg);
  std::vector<Sample> out;
  out.reserve(plan.damage.size());
  for (std::int64_t i = 0; i < cfg.n_samples; ++i) out.push_back(make_sample(cfg, plan, i));
  return out;
}

DatasetManifest emit_dataset(const SynthConfig& cfg, const fs::path& out_dir) {
  const auto plan = plan_samples(cfg);
  try {
    fs::create_directories(out_dir / "street");
    fs::create_directories(out_dir / "sat");
  } catch (const fs::filesystem_error& e) {
    throw std::runtime_error("emit_dataset: cannot create output directory " + out_dir.string() + ": " + e.what());
  }
  DatasetManifest manifest;
  manifest.root = out_dir;
  for (std::int64_t i = 0; i < cfg.n_samples; ++i) {
    const Sample s = make_sample(cfg, plan, i);
    write_ppm(s.street, out_dir / s.record.street);
    write_ppm(s.sat, out_dir / s.record.sat);
    manifest.records.push_back(s.record);
  }
  write_manifest(manifest, out_dir / "manifest.jsonl");
  return manifest;
}

void DatasetManifest::validate(bool check_files) const {
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (!seen.insert(r.id).second) throw std::invalid_argument("manifest: duplicate id " + r.id);
    if (r.damage < 0 || r.damage > 2) {
      throw std::invalid_argument("manifest: record " + r.id + " has damage " + std::to_string(r.damage));
    }
    if (check_files) {
      for (const auto& rel : {r.street, r.sat}) {
        if (!fs::exists(root / rel)) throw std::invalid_argument("manifest: missing file " + (root / rel).string());
      }
    }
  }
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_manifest: cannot open " + path.string());
  for (const auto& r : manifest.records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["street"] = r.street;
    j["sat"] = r.sat;
    j["lon"] = r.lon;
    j["lat"] = r.lat;
    j["heading_deg"] = r.heading_deg;
    j["damage"] = r.damage;
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write_manifest: write failed for " + path.string());
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_manifest: cannot open " + path.string());
  static const std::set<std::string> kKeys{"id", "street", "sat", "lon", "lat", "heading_deg", "damage"};
  DatasetManifest manifest;
  manifest.root = path.parent_path();
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::invalid_argument("read_manifest: " + where + ": " + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument("read_manifest: " + where + ": record is not an object");
    for (const auto& [key, value] : j.items()) {
      if (!kKeys.count(key)) throw std::invalid_argument("read_manifest: " + where + ": unknown key " + key);
    }
    for (const auto& key : kKeys) {
      if (!j.contains(key)) throw std::invalid_argument("read_manifest: " + where + ": missing key " + key);
    }
    try {
      manifest.records.push_back({j.at("id").get<std::string>(), j.at("street").get<std::string>(),
                                  j.at("sat").get<std::string>(), j.at("lon").get<double>(), j.at("lat").get<double>(),
                                  j.at("heading_deg").get<double>(), j.at("damage").get<int>()});
    } catch (const nlohmann::json::type_error& e) {
      throw std::invalid_argument("read_manifest: " + where + ": " + e.what());
    }
  }
  manifest.validate(false);
  return manifest;
}

}  // namespace cvd

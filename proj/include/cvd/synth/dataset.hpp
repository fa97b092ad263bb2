#pragma once

#include "cvd/synth/scene.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace cvd {

struct SynthConfig {
  int n_samples = 300;
  std::uint64_t seed = 0;
  int pano_width = 128;
  int pano_height = 64;
  int overhead_size = 64;
  double extent_m = 64.0;
  /// Equal class counts (within one); otherwise each label is drawn uniformly.
  bool class_balance = true;
  LonLat origin{-89.025, 30.375};
  /// Side of the lon/lat window holding the scene centers, in degrees.
  double window_deg = 0.05;

  void validate() const;
};

struct ManifestRecord {
  std::string id;
  std::string street;  // path relative to the manifest directory
  std::string sat;
  double lon = 0;
  double lat = 0;
  double heading_deg = 0;
  int damage = 0;
  bool operator==(const ManifestRecord&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  /// Directory the record paths are relative to.
  std::filesystem::path root;

  void validate(bool check_files = true) const;
};

/// One generated pair held in memory.
struct Sample {
  ManifestRecord record;
  Scene scene;
  Image street;
  Image sat;
};

std::string sample_id(std::int64_t index);
std::uint64_t sample_seed(std::uint64_t seed, std::int64_t index);

/// Damage labels and scene centers for the whole dataset.
struct SamplePlan {
  std::vector<Damage> damage;
  std::vector<LonLat> centers;
};
SamplePlan plan_samples(const SynthConfig& cfg);

/// Generates and renders sample `index` of the dataset described by cfg.
Sample make_sample(const SynthConfig& cfg, const SamplePlan& plan, std::int64_t index);
std::vector<Sample> make_dataset(const SynthConfig& cfg);

/// Writes street/<id>.ppm, sat/<id>.ppm and manifest.jsonl under out_dir.
DatasetManifest emit_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir);

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
/// Parses a manifest; record paths resolve against the file's directory.
DatasetManifest read_manifest(const std::filesystem::path& path);

}  // namespace cvd

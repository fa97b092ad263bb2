#pragma once

#include "cvd/loss/contrastive.hpp"
#include "cvd/models/convnext.hpp"
#include "cvd/models/gcvit.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace cvd {

enum class Task { geoloc, damage };
enum class ViewMode { cross, street, sat };

std::string task_name(Task t);
std::string view_mode_name(ViewMode m);

/// "a:b" with a, b positive integers.
struct SplitRatio {
  int train = 5;
  int test = 5;

  static SplitRatio parse(const std::string& text);
  std::string str() const;
  double train_fraction() const { return static_cast<double>(train) / (train + test); }
};

struct AugmentConfig {
  bool sync_flip = true;
  bool sync_rotate = true;
  bool grid_dropout = false;
  int grid_cell = 8;
  double grid_ratio = 0.5;
  bool coarse_dropout = false;
  int coarse_max_holes = 4;
  int coarse_max_size = 8;
  /// 0 disables color jitter.
  double color_jitter = 0.0;
};

struct TrainConfig {
  Task task = Task::geoloc;
  int epochs = 40;
  int batch_size = 16;
  double base_lr = 1e-4;
  /// Damage task: take the full-scale (20M-parameter) learning rate instead of the
  /// micro-scaled default.
  bool full_scale_lr = false;
  double weight_decay = 0.01;
  int warmup_epochs = 1;
  double label_smoothing = 0.1;
  double temperature = 0.07;
  bool learnable_temperature = false;
  double margin = 0.5;
  SplitRatio split;
  std::uint64_t seed = 0;
  AugmentConfig augment;
  /// Overhead side H; panoramas are H x 2H.
  int input_size = 64;
  double crop_frac = 0.125;
  ViewMode mode = ViewMode::cross;
  /// Damage task, cross mode: per training sample, probability of zeroing
  /// one randomly chosen view's pooled feature.
  double view_dropout = 0.0;
  /// Evaluate on the test split every this many epochs (the last epoch is
  /// always evaluated).
  int eval_every = 1;
  std::string dtype = "f32";
  std::filesystem::path manifest;
  ConvNeXtConfig convnext;
  GCViTConfig gcvit;

  /// Task defaults (learning rate, decay, warmup, epochs).
  static TrainConfig defaults(Task task);
  void validate() const;
  LossConfig loss() const;
};

/// Reads a JSON object whose keys mirror TrainConfig; unknown keys are
/// rejected. Missing keys keep the task defaults.
TrainConfig config_from_json(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const TrainConfig& cfg);

/// Full-scale damage-model learning rate and the micro-scale rule applied to it.
inline constexpr double kFullScaleDamageLr = 0.03;
inline constexpr double kFullScaleDamageParams = 20e6;
double micro_scaled_lr(std::int64_t param_count);
std::int64_t cgcvit_param_count(const GCViTConfig& g);

}  // namespace cvd

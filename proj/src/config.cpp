#include "cvd/pipeline/config.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace cvd {

using nlohmann::json;

std::string task_name(Task t) { return t == Task::geoloc ? "geoloc" : "damage"; }

std::string view_mode_name(ViewMode m) {
  switch (m) {
    case ViewMode::cross: return "cross";
    case ViewMode::street: return "street";
    case ViewMode::sat: return "sat";
  }
  return "cross";
}

SplitRatio SplitRatio::parse(const std::string& text) {
  const auto colon = text.find(':');
  auto bad = [&] { return std::invalid_argument("split ratio must look like a:b with positive integers, got '" + text + "'"); };
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) throw bad();
  auto number = [&](const std::string& part) {
    if (part.find_first_not_of("0123456789") != std::string::npos || part.size() > 6) throw bad();
    return std::stoi(part);
  };
  SplitRatio r{number(text.substr(0, colon)), number(text.substr(colon + 1))};
  if (r.train < 1 || r.test < 1) throw bad();
  return r;
}

std::string SplitRatio::str() const { return std::to_string(train) + ":" + std::to_string(test); }

double micro_scaled_lr(std::int64_t param_count) {
  return kFullScaleDamageLr * std::sqrt(static_cast<double>(param_count) / kFullScaleDamageParams);
}

std::int64_t cgcvit_param_count(const GCViTConfig& g) {
  const auto p = init_cgcvit<float>(g, 0);
  return p.branch_s.scalar_count() + p.branch_a.scalar_count() + p.head.scalar_count();
}

namespace {

class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw std::invalid_argument(where_ + ": expected a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw std::invalid_argument(where_ + "." + key + ": " + e.what());
    }
  }

  template <std::size_t N>
  void get(const char* key, std::array<Index, N>& out) {
    std::vector<Index> v(out.begin(), out.end());
    get(key, v);
    if (v.size() != N) throw std::invalid_argument(where_ + "." + key + ": expected " + std::to_string(N) + " entries");
    std::copy(v.begin(), v.end(), out.begin());
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw std::invalid_argument(where_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace

TrainConfig TrainConfig::defaults(Task task) {
  TrainConfig c;
  c.task = task;
  if (task == Task::damage) {
    c.epochs = 60;
    c.batch_size = 16;
    c.weight_decay = 0.05;
    c.warmup_epochs = 10;
    c.base_lr = micro_scaled_lr(cgcvit_param_count(c.gcvit));
  }
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("config: epochs must be positive");
  if (batch_size < 2) throw std::invalid_argument("config: batch_size must be at least 2");
  if (!(base_lr > 0)) throw std::invalid_argument("config: base_lr must be positive");
  if (!(weight_decay >= 0)) throw std::invalid_argument("config: weight_decay must be non-negative");
  if (warmup_epochs < 0 || warmup_epochs >= epochs) {
    throw std::invalid_argument("config: warmup_epochs must satisfy 0 <= warmup_epochs < epochs");
  }
  if (split.train < 1 || split.test < 1) throw std::invalid_argument("config: split ratio parts must be positive");
  if (input_size < 32 || input_size % 32 != 0) throw std::invalid_argument("config: input_size must be a multiple of 32");
  if (!(crop_frac >= 0 && crop_frac < 0.5)) throw std::invalid_argument("config: crop_frac must lie in [0, 0.5)");
  if (!(view_dropout >= 0 && view_dropout <= 1)) throw std::invalid_argument("config: view_dropout must lie in [0,1]");
  if (eval_every < 1) throw std::invalid_argument("config: eval_every must be positive");
  if (dtype != "f32" && dtype != "f64") throw std::invalid_argument("config: dtype must be f32 or f64");
  if (augment.grid_cell < 1 || augment.grid_ratio < 0 || augment.grid_ratio > 1) {
    throw std::invalid_argument("config: grid dropout needs cell >= 1 and ratio in [0,1]");
  }
  if (augment.coarse_max_holes < 0 || augment.coarse_max_size < 1) {
    throw std::invalid_argument("config: coarse dropout needs max_holes >= 0 and max_size >= 1");
  }
  if (!(augment.color_jitter >= 0 && augment.color_jitter < 1)) {
    throw std::invalid_argument("config: color_jitter must lie in [0,1)");
  }
  loss().validate();
  if (task == Task::geoloc) {
    convnext.validate();
  } else {
    gcvit.validate();
    if (gcvit.image_size != input_size) {
      throw std::invalid_argument("config: gcvit.image_size must equal input_size");
    }
  }
}

LossConfig TrainConfig::loss() const {
  LossConfig l;
  l.temperature = temperature;
  l.learnable_temperature = learnable_temperature;
  l.label_smoothing = label_smoothing;
  l.margin = margin;
  return l;
}

TrainConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  Reader top(j, "config");
  std::string task = "geoloc";
  top.get("task", task);
  if (task != "geoloc" && task != "damage") throw std::invalid_argument("config.task: expected geoloc or damage");
  TrainConfig c = TrainConfig::defaults(task == "geoloc" ? Task::geoloc : Task::damage);
  top.get("epochs", c.epochs);
  top.get("batch_size", c.batch_size);
  top.get("full_scale_lr", c.full_scale_lr);
  top.get("weight_decay", c.weight_decay);
  top.get("warmup_epochs", c.warmup_epochs);
  top.get("label_smoothing", c.label_smoothing);
  top.get("temperature", c.temperature);
  top.get("learnable_temperature", c.learnable_temperature);
  top.get("margin", c.margin);
  std::string split = c.split.str();
  top.get("split_ratio", split);
  c.split = SplitRatio::parse(split);
  top.get("seed", c.seed);
  top.get("input_size", c.input_size);
  top.get("crop_frac", c.crop_frac);
  top.get("view_dropout", c.view_dropout);
  std::string mode = view_mode_name(c.mode);
  top.get("mode", mode);
  if (mode == "cross") c.mode = ViewMode::cross;
  else if (mode == "street") c.mode = ViewMode::street;
  else if (mode == "sat") c.mode = ViewMode::sat;
  else throw std::invalid_argument("config.mode: expected cross, street or sat");
  top.get("eval_every", c.eval_every);
  top.get("dtype", c.dtype);
  std::string manifest;
  top.get("manifest", manifest);
  c.manifest = manifest;
  if (top.has("augment")) {
    Reader a(top.at("augment"), "config.augment");
    a.get("sync_flip", c.augment.sync_flip);
    a.get("sync_rotate", c.augment.sync_rotate);
    a.get("grid_dropout", c.augment.grid_dropout);
    a.get("grid_cell", c.augment.grid_cell);
    a.get("grid_ratio", c.augment.grid_ratio);
    a.get("coarse_dropout", c.augment.coarse_dropout);
    a.get("coarse_max_holes", c.augment.coarse_max_holes);
    a.get("coarse_max_size", c.augment.coarse_max_size);
    a.get("color_jitter", c.augment.color_jitter);
    a.finish();
  }
  if (top.has("convnext")) {
    Reader m(top.at("convnext"), "config.convnext");
    m.get("stage_blocks", c.convnext.stage_blocks);
    m.get("stage_channels", c.convnext.stage_channels);
    m.get("patch_size", c.convnext.patch_size);
    m.get("dw_kernel", c.convnext.dw_kernel);
    m.get("expansion", c.convnext.expansion);
    m.get("embed_dim", c.convnext.embed_dim);
    m.finish();
  }
  c.gcvit.image_size = c.input_size;
  if (top.has("gcvit")) {
    Reader m(top.at("gcvit"), "config.gcvit");
    m.get("stage_depths", c.gcvit.stage_depths);
    m.get("window", c.gcvit.window);
    m.get("heads", c.gcvit.heads);
    m.get("stage_channels", c.gcvit.stage_channels);
    m.get("mlp_expansion", c.gcvit.mlp_expansion);
    m.get("num_classes", c.gcvit.num_classes);
    m.get("image_size", c.gcvit.image_size);
    m.finish();
  }
  if (top.has("base_lr")) {
    top.get("base_lr", c.base_lr);
  } else if (c.task == Task::damage) {
    c.base_lr = c.full_scale_lr ? kFullScaleDamageLr : micro_scaled_lr(cgcvit_param_count(c.gcvit));
  }
  top.finish();
  c.validate();
  return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

std::string config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["task"] = task_name(c.task);
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["base_lr"] = c.base_lr;
  j["full_scale_lr"] = c.full_scale_lr;
  j["weight_decay"] = c.weight_decay;
  j["warmup_epochs"] = c.warmup_epochs;
  j["label_smoothing"] = c.label_smoothing;
  j["temperature"] = c.temperature;
  j["learnable_temperature"] = c.learnable_temperature;
  j["margin"] = c.margin;
  j["split_ratio"] = c.split.str();
  j["seed"] = c.seed;
  j["input_size"] = c.input_size;
  j["crop_frac"] = c.crop_frac;
  j["mode"] = view_mode_name(c.mode);
  j["view_dropout"] = c.view_dropout;
  j["eval_every"] = c.eval_every;
  j["dtype"] = c.dtype;
  j["manifest"] = c.manifest.string();
  const auto& a = c.augment;
  j["augment"] = {{"sync_flip", a.sync_flip},         {"sync_rotate", a.sync_rotate},
                  {"grid_dropout", a.grid_dropout},   {"grid_cell", a.grid_cell},
                  {"grid_ratio", a.grid_ratio},       {"coarse_dropout", a.coarse_dropout},
                  {"coarse_max_holes", a.coarse_max_holes}, {"coarse_max_size", a.coarse_max_size},
                  {"color_jitter", a.color_jitter}};
  j["convnext"] = {{"stage_blocks", c.convnext.stage_blocks}, {"stage_channels", c.convnext.stage_channels},
                   {"patch_size", c.convnext.patch_size},     {"dw_kernel", c.convnext.dw_kernel},
                   {"expansion", c.convnext.expansion},       {"embed_dim", c.convnext.embed_dim}};
  j["gcvit"] = {{"stage_depths", c.gcvit.stage_depths}, {"window", c.gcvit.window},
                {"heads", c.gcvit.heads},               {"stage_channels", c.gcvit.stage_channels},
                {"mlp_expansion", c.gcvit.mlp_expansion}, {"num_classes", c.gcvit.num_classes},
                {"image_size", c.gcvit.image_size}};
  return j.dump(2);
}

}  // namespace cvd

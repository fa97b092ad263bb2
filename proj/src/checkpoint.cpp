#include "cvd/pipeline/checkpoint.hpp"

#include "cvd/pipeline/train.hpp"

namespace cvd::detail {

std::map<std::string, Shape> expected_shapes(const TrainConfig& cfg) {
  const auto params = cfg.task == Task::geoloc ? init_geoloc_params<float>(cfg)
                                               : merge_cgcvit(init_cgcvit<float>(cfg.gcvit, cfg.seed));
  std::map<std::string, Shape> out;
  for (const auto& [name, t] : params) out.emplace(name, t.shape());
  return out;
}

}  // namespace cvd::detail

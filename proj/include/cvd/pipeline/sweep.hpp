#pragma once

#include "cvd/pipeline/reports.hpp"
#include "cvd/pipeline/train.hpp"

namespace cvd {

/// Trains one geolocalization model per (ratio, seed) on the same data and
/// records its final held-out recalls. Rows follow ratio-major order.
template <typename Scalar>
std::vector<SweepRow> run_ratio_sweep(const TrainConfig& base, const PairData& data,
                                      const std::vector<SplitRatio>& ratios, const std::vector<std::uint64_t>& seeds,
                                      const ProgressFn& progress = {}) {
  if (ratios.empty() || seeds.empty()) throw std::invalid_argument("run_ratio_sweep: empty ratio or seed list");
  std::vector<SweepRow> rows;
  for (const auto& ratio : ratios)
    for (auto seed : seeds) {
      auto cfg = base;
      cfg.task = Task::geoloc;
      cfg.split = ratio;
      cfg.seed = seed;
      const auto run = train_geoloc<Scalar>(cfg, data);
      rows.push_back({ratio.str(), seed, run.report});
      if (progress) {
        progress("ratio " + ratio.str() + " seed " + std::to_string(seed) + " R@1 " + std::to_string(run.report.r_at_1));
      }
    }
  return rows;
}

}  // namespace cvd

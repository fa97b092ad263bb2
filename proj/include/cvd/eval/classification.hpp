#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace cvd {

inline constexpr int kNumDamageClasses = 3;
inline const std::array<std::string, 3> kDamageNames{"light", "medium", "heavy"};

/// Rows are ground truth, columns predictions.
using Confusion = std::array<std::array<std::int64_t, 3>, 3>;

Confusion confusion_matrix(const std::vector<int>& pred, const std::vector<int>& gt);

struct ClassMetrics {
  double precision = 0, recall = 0, f1 = 0;
};

enum class Averaging { macro, weighted };

struct ClassificationReport {
  Confusion confusion{};
  std::array<ClassMetrics, 3> per_class{};
  double macro_p = 0, macro_r = 0, macro_f1 = 0;
  double oa = 0;
  std::int64_t total = 0;
};

/// Zero denominators give 0. `averaging` selects unweighted class means or
/// support-weighted means for the overall P/R/F1.
ClassificationReport classification_report(const Confusion& confusion, Averaging averaging = Averaging::macro);

}  // namespace cvd

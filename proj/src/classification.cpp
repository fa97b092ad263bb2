#include "cvd/eval/classification.hpp"

#include <stdexcept>

namespace cvd {

Confusion confusion_matrix(const std::vector<int>& pred, const std::vector<int>& gt) {
  if (pred.size() != gt.size()) {
    throw std::invalid_argument("confusion_matrix: " + std::to_string(pred.size()) + " predictions for " +
                                std::to_string(gt.size()) + " labels");
  }
  Confusion c{};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || pred[i] >= kNumDamageClasses || gt[i] < 0 || gt[i] >= kNumDamageClasses) {
      throw std::out_of_range("confusion_matrix: class out of range at sample " + std::to_string(i));
    }
    ++c[static_cast<std::size_t>(gt[i])][static_cast<std::size_t>(pred[i])];
  }
  return c;
}

namespace {
double ratio(std::int64_t num, std::int64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace

ClassificationReport classification_report(const Confusion& confusion, Averaging averaging) {
  ClassificationReport r;
  r.confusion = confusion;
  std::int64_t trace = 0;
  std::array<std::int64_t, 3> support{}, predicted{};
  for (std::size_t g = 0; g < 3; ++g)
    for (std::size_t p = 0; p < 3; ++p) {
      if (confusion[g][p] < 0) throw std::invalid_argument("classification_report: negative count");
      r.total += confusion[g][p];
      support[g] += confusion[g][p];
      predicted[p] += confusion[g][p];
      if (g == p) trace += confusion[g][p];
    }
  for (std::size_t k = 0; k < 3; ++k) {
    auto& m = r.per_class[k];
    m.precision = ratio(confusion[k][k], predicted[k]);
    m.recall = ratio(confusion[k][k], support[k]);
    m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  }
  for (std::size_t k = 0; k < 3; ++k) {
    const double w = averaging == Averaging::macro ? 1.0 : ratio(support[k], r.total);
    r.macro_p += w * r.per_class[k].precision;
    r.macro_r += w * r.per_class[k].recall;
    r.macro_f1 += w * r.per_class[k].f1;
  }
  if (averaging == Averaging::macro) {
    r.macro_p /= 3.0;
    r.macro_r /= 3.0;
    r.macro_f1 /= 3.0;
  }
  r.oa = ratio(trace, r.total);
  return r;
}

}  // namespace cvd

#include "cvd/pipeline/data.hpp"

#include "cvd/core/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cvd {

std::vector<int> PairData::labels() const {
  std::vector<int> out;
  for (const auto& r : records) out.push_back(r.damage);
  return out;
}

std::vector<LonLat> PairData::coords() const {
  std::vector<LonLat> out;
  for (const auto& r : records) out.push_back({r.lon, r.lat});
  return out;
}

std::vector<std::string> PairData::ids(const std::vector<Index>& rows) const {
  std::vector<std::string> out;
  for (Index i : rows) out.push_back(records.at(static_cast<std::size_t>(i)).id);
  return out;
}

std::vector<LonLat> PairData::coords(const std::vector<Index>& rows) const {
  std::vector<LonLat> out;
  for (Index i : rows) {
    const auto& r = records.at(static_cast<std::size_t>(i));
    out.push_back({r.lon, r.lat});
  }
  return out;
}

PairData load_pairs(const DatasetManifest& manifest) {
  manifest.validate(false);
  PairData data;
  for (const auto& r : manifest.records) {
    const auto street = manifest.root / r.street, sat = manifest.root / r.sat;
    try {
      data.street.push_back(read_ppm(street));
    } catch (const std::exception& e) {
      throw std::runtime_error("cannot decode street raster " + street.string() + ": " + e.what());
    }
    try {
      data.sat.push_back(read_ppm(sat));
    } catch (const std::exception& e) {
      throw std::runtime_error("cannot decode overhead raster " + sat.string() + ": " + e.what());
    }
    data.records.push_back(r);
  }
  return data;
}

PairData pairs_from_samples(const std::vector<Sample>& samples) {
  PairData data;
  for (const auto& s : samples) {
    data.records.push_back(s.record);
    data.street.push_back(s.street);
    data.sat.push_back(s.sat);
  }
  return data;
}

DataSplit split_dataset(const std::vector<int>& labels, SplitRatio ratio, std::uint64_t seed) {
  if (ratio.train < 1 || ratio.test < 1) throw std::invalid_argument("split_dataset: ratio parts must be positive");
  std::vector<std::vector<Index>> strata(3);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] > 2) throw std::invalid_argument("split_dataset: label outside {0,1,2}");
    strata[static_cast<std::size_t>(labels[i])].push_back(static_cast<Index>(i));
  }
  for (std::size_t c = 0; c < 3; ++c) {
    if (strata[c].empty()) throw std::invalid_argument("split_dataset: class " + std::to_string(c) + " has no samples");
  }
  const double frac = ratio.train_fraction();
  const auto n = static_cast<std::int64_t>(labels.size());
  const auto total = static_cast<std::int64_t>(std::floor(static_cast<double>(n) * frac + 0.5));
  std::vector<std::int64_t> take(3);
  std::vector<std::pair<double, std::size_t>> remainder;
  std::int64_t assigned = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    const double quota = static_cast<double>(strata[c].size()) * frac;
    take[c] = static_cast<std::int64_t>(std::floor(quota));
    assigned += take[c];
    remainder.emplace_back(-(quota - std::floor(quota)), c);
  }
  std::sort(remainder.begin(), remainder.end());
  for (std::size_t k = 0; assigned < total && k < remainder.size(); ++k, ++assigned) ++take[remainder[k].second];

  DataSplit out;
  for (std::size_t c = 0; c < 3; ++c) {
    const auto& s = strata[c];
    const auto order = seeded_permutation(static_cast<Index>(s.size()), mix_seed(seed ^ (0xC1A55ULL + c)));
    for (std::size_t k = 0; k < order.size(); ++k) {
      (static_cast<std::int64_t>(k) < take[c] ? out.train : out.test).push_back(s[static_cast<std::size_t>(order[k])]);
    }
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

IdSplit split_dataset(const DatasetManifest& manifest, SplitRatio ratio, std::uint64_t seed) {
  std::vector<int> labels;
  for (const auto& r : manifest.records) labels.push_back(r.damage);
  const DataSplit s = split_dataset(labels, ratio, seed);
  IdSplit out;
  for (Index i : s.train) out.train.push_back(manifest.records[static_cast<std::size_t>(i)].id);
  for (Index i : s.test) out.test.push_back(manifest.records[static_cast<std::size_t>(i)].id);
  return out;
}

}  // namespace cvd

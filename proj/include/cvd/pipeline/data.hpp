#pragma once

#include "cvd/pipeline/config.hpp"
#include "cvd/synth/dataset.hpp"

#include <vector>

namespace cvd {

/// Decoded street/overhead pairs with their manifest records.
struct PairData {
  std::vector<ManifestRecord> records;
  std::vector<Image> street;
  std::vector<Image> sat;

  Index size() const { return static_cast<Index>(records.size()); }
  std::vector<int> labels() const;
  std::vector<LonLat> coords() const;
  std::vector<std::string> ids(const std::vector<Index>& rows) const;
  std::vector<LonLat> coords(const std::vector<Index>& rows) const;
};

/// Reads every raster named by the manifest; errors name the file.
PairData load_pairs(const DatasetManifest& manifest);
PairData pairs_from_samples(const std::vector<Sample>& samples);

/// Row indices of the train and test partitions, each ascending.
struct DataSplit {
  std::vector<Index> train;
  std::vector<Index> test;
};

/// Stratified by damage class: round(n * a / (a + b)) train rows in total,
/// apportioned to classes by largest remainder, each class shuffled with
/// its own seeded permutation.
DataSplit split_dataset(const std::vector<int>& labels, SplitRatio ratio, std::uint64_t seed);

struct IdSplit {
  std::vector<std::string> train;
  std::vector<std::string> test;
};
IdSplit split_dataset(const DatasetManifest& manifest, SplitRatio ratio, std::uint64_t seed);

}  // namespace cvd

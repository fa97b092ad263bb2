#pragma once

#include "cvd/core/tensor.hpp"

#include <cstdint>
#include <vector>

namespace cvd {

struct LonLat {
  double lon = 0.0;
  double lat = 0.0;
  bool operator==(const LonLat&) const = default;
};

inline constexpr double kEarthRadiusM = 6371000.0;

/// Great-circle distance in meters between two (lon, lat) points in degrees.
double haversine(LonLat a, LonLat b);

/// Ordered groups of sample indices; together they cover every index once.
struct BatchPlan {
  std::vector<std::vector<Index>> batches;

  Index total() const;
  /// True when the groups partition [0, n) with sizes <= batch_size and at
  /// most one short group.
  bool is_partition(Index n, Index batch_size) const;
};

/// Anchors in seeded random order; each unassigned anchor takes its nearest
/// unassigned neighbours (haversine, ties by index) until the batch is full.
BatchPlan gps_group_batches(const std::vector<LonLat>& coords, Index batch_size, std::uint64_t seed);

/// As above with overhead-embedding similarity in place of distance: an
/// anchor's co-batch members are its most similar unassigned rows of E_a
/// (ties by ascending index). E_s is accepted for symmetry and unused.
BatchPlan similarity_mine_batches(const TensorD& street, const TensorD& sat, Index batch_size, std::uint64_t seed);

/// Uniformly shuffled consecutive groups.
BatchPlan random_batches(Index n, Index batch_size, std::uint64_t seed);

/// Seeded permutation of [0, n); stable across platforms.
std::vector<Index> seeded_permutation(Index n, std::uint64_t seed);

}  // namespace cvd

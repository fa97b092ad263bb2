#include "cvd/loss/batching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace cvd {

namespace {

constexpr double kDegToRad = 3.14159265358979323846 / 180.0;

void check_batch_size(Index batch_size) {
  if (batch_size < 2) throw std::invalid_argument("batch_size must be at least 2, got " + std::to_string(batch_size));
}

// Greedy assembly shared by both planners. `score(anchor, j)` orders
// candidates: lower is closer.
template <typename Score>
BatchPlan greedy_plan(Index n, Index batch_size, std::uint64_t seed, Score score) {
  check_batch_size(batch_size);
  BatchPlan plan;
  std::vector<char> used(static_cast<std::size_t>(n), 0);
  std::vector<std::pair<double, Index>> cand;
  for (Index anchor : seeded_permutation(n, seed)) {
    if (used[static_cast<std::size_t>(anchor)]) continue;
    used[static_cast<std::size_t>(anchor)] = 1;
    cand.clear();
    for (Index j = 0; j < n; ++j) {
      if (!used[static_cast<std::size_t>(j)]) cand.emplace_back(score(anchor, j), j);
    }
    const auto take = std::min<std::size_t>(cand.size(), static_cast<std::size_t>(batch_size - 1));
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end());
    std::vector<Index> group{anchor};
    for (std::size_t k = 0; k < take; ++k) {
      group.push_back(cand[k].second);
      used[static_cast<std::size_t>(cand[k].second)] = 1;
    }
    plan.batches.push_back(std::move(group));
  }
  return plan;
}

}  // namespace

double haversine(LonLat a, LonLat b) {
  const double phi1 = a.lat * kDegToRad, phi2 = b.lat * kDegToRad;
  const double dphi = (b.lat - a.lat) * kDegToRad;
  const double dlambda = (b.lon - a.lon) * kDegToRad;
  const double s1 = std::sin(dphi / 2), s2 = std::sin(dlambda / 2);
  const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(h)));
}

Index BatchPlan::total() const {
  Index n = 0;
  for (const auto& b : batches) n += static_cast<Index>(b.size());
  return n;
}

bool BatchPlan::is_partition(Index n, Index batch_size) const {
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  int short_groups = 0;
  for (const auto& b : batches) {
    if (b.empty() || static_cast<Index>(b.size()) > batch_size) return false;
    if (static_cast<Index>(b.size()) < batch_size) ++short_groups;
    for (Index i : b) {
      if (i < 0 || i >= n || seen[static_cast<std::size_t>(i)]) return false;
      seen[static_cast<std::size_t>(i)] = 1;
    }
  }
  return short_groups <= 1 && total() == n;
}

std::vector<Index> seeded_permutation(Index n, std::uint64_t seed) {
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(seed);
  // Fisher-Yates with rejection sampling so the result does not depend on
  // the standard library's distribution implementations.
  for (Index i = n - 1; i > 0; --i) {
    const auto bound = static_cast<std::uint64_t>(i + 1);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t r;
    do r = rng();
    while (r >= limit);
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(r % bound)]);
  }
  return order;
}

BatchPlan gps_group_batches(const std::vector<LonLat>& coords, Index batch_size, std::uint64_t seed) {
  return greedy_plan(static_cast<Index>(coords.size()), batch_size, seed, [&](Index a, Index j) {
    return haversine(coords[static_cast<std::size_t>(a)], coords[static_cast<std::size_t>(j)]);
  });
}

BatchPlan similarity_mine_batches(const TensorD& street, const TensorD& sat, Index batch_size, std::uint64_t seed) {
  if (sat.rank() != 2 || street.shape() != sat.shape()) {
    throw ShapeError("similarity_mine_batches: E_s and E_a must both be [N,D]");
  }
  const auto e = sat.matrix();
  const Eigen::MatrixXd sim = e * e.transpose();
  return greedy_plan(sat.dim(0), batch_size, seed, [&](Index a, Index j) { return -sim(a, j); });
}

BatchPlan random_batches(Index n, Index batch_size, std::uint64_t seed) {
  check_batch_size(batch_size);
  BatchPlan plan;
  const auto order = seeded_permutation(n, seed);
  for (Index i = 0; i < n; i += batch_size) {
    plan.batches.emplace_back(order.begin() + i, order.begin() + std::min(n, i + batch_size));
  }
  return plan;
}

}  // namespace cvd

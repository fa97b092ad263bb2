#include "cvd/eval/retrieval.hpp"

#include <algorithm>
#include <stdexcept>

namespace cvd {

EmbeddingIndex::EmbeddingIndex(const TensorD& embeddings, std::vector<std::string> ids, std::vector<LonLat> coords)
    : ids_(std::move(ids)), coords_(std::move(coords)) {
  if (embeddings.rank() != 2 || embeddings.dim(0) < 1) {
    throw ShapeError("build_index: embeddings must be [N,D] with N >= 1, got " + shape_string(embeddings.shape()));
  }
  const Index n = embeddings.dim(0);
  if (static_cast<Index>(ids_.size()) != n || static_cast<Index>(coords_.size()) != n) {
    throw std::invalid_argument("build_index: " + std::to_string(n) + " embeddings but " +
                                std::to_string(ids_.size()) + " ids and " + std::to_string(coords_.size()) + " coords");
  }
  for (Index i = 0; i < n; ++i) {
    if (!rows_.emplace(ids_[static_cast<std::size_t>(i)], i).second) {
      throw std::invalid_argument("build_index: duplicate id '" + ids_[static_cast<std::size_t>(i)] + "'");
    }
  }
  gallery_ = embeddings.matrix();
  for (Index i = 0; i < n; ++i) {
    const double norm = gallery_.row(i).norm();
    if (norm > 0) gallery_.row(i) /= norm;
  }
}

Index EmbeddingIndex::find(const std::string& id) const {
  auto it = rows_.find(id);
  return it == rows_.end() ? -1 : it->second;
}

EmbeddingIndex build_index(const TensorD& embeddings, std::vector<std::string> ids, std::vector<LonLat> coords) {
  return EmbeddingIndex(embeddings, std::move(ids), std::move(coords));
}

namespace {

Eigen::VectorXd scores_for(const EmbeddingIndex& index, const Eigen::VectorXd& q) {
  if (q.size() != index.dim()) {
    throw ShapeError("query dimension " + std::to_string(q.size()) + " does not match index dimension " +
                     std::to_string(index.dim()));
  }
  return index.gallery() * q;
}

}  // namespace

std::vector<Match> query_topk(const EmbeddingIndex& index, const Eigen::VectorXd& q, Index k) {
  const Index n = index.size();
  if (k < 1 || k > n) throw std::out_of_range("query_topk: k=" + std::to_string(k) + " outside [1," + std::to_string(n) + "]");
  const Eigen::VectorXd s = scores_for(index, q);
  const auto& ids = index.ids();
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  auto better = [&](Index a, Index b) {
    if (s[a] != s[b]) return s[a] > s[b];
    return ids[static_cast<std::size_t>(a)] < ids[static_cast<std::size_t>(b)];
  };
  std::partial_sort(order.begin(), order.begin() + k, order.end(), better);
  std::vector<Match> out;
  out.reserve(static_cast<std::size_t>(k));
  for (Index i = 0; i < k; ++i) {
    const Index r = order[static_cast<std::size_t>(i)];
    out.push_back({ids[static_cast<std::size_t>(r)], s[r], r});
  }
  return out;
}

Index true_rank(const EmbeddingIndex& index, const Eigen::VectorXd& q, Index row) {
  const Eigen::VectorXd s = scores_for(index, q);
  const auto& ids = index.ids();
  const double target = s[row];
  const auto& target_id = ids[static_cast<std::size_t>(row)];
  Index rank = 1;
  for (Index j = 0; j < index.size(); ++j) {
    if (s[j] > target || (s[j] == target && ids[static_cast<std::size_t>(j)] < target_id)) ++rank;
  }
  return rank;
}

double recall_at_k(const std::vector<Index>& ranks, Index k) {
  if (ranks.empty()) throw std::invalid_argument("recall_at_k: empty query set");
  Index hits = 0;
  for (Index r : ranks) {
    if (r < 1) throw std::invalid_argument("recall_at_k: ranks must be >= 1");
    if (r <= k) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(ranks.size());
}

Index top1pct_k(Index n_gallery) {
  if (n_gallery < 1) throw std::invalid_argument("top1pct_k: gallery must be nonempty");
  return std::max<Index>(1, (n_gallery + 99) / 100);
}

RetrievalReport evaluate_retrieval(const TensorD& queries, const EmbeddingIndex& index,
                                   const std::vector<std::string>& pair_ids, std::vector<Index>& ranks) {
  if (queries.rank() != 2 || queries.dim(1) != index.dim()) {
    throw ShapeError("evaluate_retrieval: queries must be [Q," + std::to_string(index.dim()) + "], got " +
                     shape_string(queries.shape()));
  }
  const Index nq = queries.dim(0);
  if (static_cast<Index>(pair_ids.size()) != nq) throw std::invalid_argument("evaluate_retrieval: pair_ids length");
  ranks.assign(static_cast<std::size_t>(nq), 0);
  const auto m = queries.matrix();
  for (Index i = 0; i < nq; ++i) {
    const auto& id = pair_ids[static_cast<std::size_t>(i)];
    const Index row = index.find(id);
    if (row < 0) {
      throw std::invalid_argument("evaluate_retrieval: query " + std::to_string(i) + " has true id '" + id +
                                  "' missing from the index");
    }
    ranks[static_cast<std::size_t>(i)] = true_rank(index, m.row(i).transpose(), row);
  }
  RetrievalReport r;
  r.n_queries = nq;
  r.n_gallery = index.size();
  r.r_at_1 = recall_at_k(ranks, 1);
  r.r_at_5 = recall_at_k(ranks, 5);
  r.r_at_10 = recall_at_k(ranks, 10);
  r.r_at_top1pct = recall_at_k(ranks, top1pct_k(index.size()));
  return r;
}

RetrievalReport evaluate_retrieval(const TensorD& queries, const EmbeddingIndex& index,
                                   const std::vector<std::string>& pair_ids) {
  std::vector<Index> ranks;
  return evaluate_retrieval(queries, index, pair_ids, ranks);
}

GeoFix geolocalize_embedding(const Eigen::VectorXd& q, const EmbeddingIndex& index) {
  const auto top = query_topk(index, q, 1).front();
  const auto& c = index.coords()[static_cast<std::size_t>(top.row)];
  return {c.lon, c.lat, top.id, top.score};
}

}  // namespace cvd

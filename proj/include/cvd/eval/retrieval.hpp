#pragma once

#include "cvd/core/tensor.hpp"
#include "cvd/loss/batching.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace cvd {

/// Immutable overhead gallery: unit rows, unique ids, coordinates.
class EmbeddingIndex {
 public:
  EmbeddingIndex(const TensorD& embeddings, std::vector<std::string> ids, std::vector<LonLat> coords);

  Index size() const { return static_cast<Index>(ids_.size()); }
  Index dim() const { return gallery_.cols(); }
  const Eigen::MatrixXd& gallery() const { return gallery_; }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<LonLat>& coords() const { return coords_; }
  /// Row of `id`, or -1.
  Index find(const std::string& id) const;

 private:
  Eigen::MatrixXd gallery_;
  std::vector<std::string> ids_;
  std::vector<LonLat> coords_;
  std::unordered_map<std::string, Index> rows_;
};

EmbeddingIndex build_index(const TensorD& embeddings, std::vector<std::string> ids, std::vector<LonLat> coords);

struct Match {
  std::string id;
  double score = 0.0;
  Index row = -1;
};

/// Exact top-k by dot product, descending; ties by ascending id.
std::vector<Match> query_topk(const EmbeddingIndex& index, const Eigen::VectorXd& q, Index k);

/// 1-based rank of gallery row `row` under the query_topk ordering.
Index true_rank(const EmbeddingIndex& index, const Eigen::VectorXd& q, Index row);

double recall_at_k(const std::vector<Index>& ranks, Index k);
Index top1pct_k(Index n_gallery);

struct RetrievalReport {
  double r_at_1 = 0, r_at_5 = 0, r_at_10 = 0, r_at_top1pct = 0;
  Index n_queries = 0, n_gallery = 0;
};

/// Row i of `queries` is the street embedding whose true match is pair_ids[i].
RetrievalReport evaluate_retrieval(const TensorD& queries, const EmbeddingIndex& index,
                                   const std::vector<std::string>& pair_ids);
/// Same, also returning each query's true rank.
RetrievalReport evaluate_retrieval(const TensorD& queries, const EmbeddingIndex& index,
                                   const std::vector<std::string>& pair_ids, std::vector<Index>& ranks);

struct GeoFix {
  double lon = 0, lat = 0;
  std::string id;
  double score = 0;
};

/// Coordinates of the top-1 gallery match of a query embedding.
GeoFix geolocalize_embedding(const Eigen::VectorXd& q, const EmbeddingIndex& index);

}  // namespace cvd

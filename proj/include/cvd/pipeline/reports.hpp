#pragma once

#include "cvd/eval/classification.hpp"
#include "cvd/eval/retrieval.hpp"
#include "cvd/pipeline/train.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace cvd {

std::string retrieval_csv(const RetrievalReport& r);
std::string classification_csv(const ClassificationReport& r);
std::string step_log_csv(const TrainLog& log);
std::string epoch_log_csv(const TrainLog& log);

struct SweepRow {
  std::string ratio;
  std::uint64_t seed = 0;
  RetrievalReport report;
};
std::string sweep_csv(const std::vector<SweepRow>& rows);

/// Binary PGM (P5) of an [N, M] matrix with values in [-1, 1] mapped to
/// 0..255.
void write_similarity_pgm(const Eigen::MatrixXd& sim, const std::filesystem::path& path);

/// Writes text to path, replacing any existing file.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace cvd

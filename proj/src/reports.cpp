#include "cvd/pipeline/reports.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace cvd {

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string retrieval_csv(const RetrievalReport& r) {
  return "r_at_1,r_at_5,r_at_10,r_at_top1pct,n_queries,n_gallery\n" + num(r.r_at_1) + "," + num(r.r_at_5) + "," +
         num(r.r_at_10) + "," + num(r.r_at_top1pct) + "," + std::to_string(r.n_queries) + "," +
         std::to_string(r.n_gallery) + "\n";
}

std::string classification_csv(const ClassificationReport& r) {
  std::string out = "row,pred_light,pred_medium,pred_heavy,precision,recall,f1,support,oa\n";
  for (std::size_t k = 0; k < 3; ++k) {
    std::int64_t support = 0;
    for (auto v : r.confusion[k]) support += v;
    out += std::string(kDamageNames[k]) + "," + std::to_string(r.confusion[k][0]) + "," +
           std::to_string(r.confusion[k][1]) + "," + std::to_string(r.confusion[k][2]) + "," +
           num(r.per_class[k].precision) + "," + num(r.per_class[k].recall) + "," + num(r.per_class[k].f1) + "," +
           std::to_string(support) + ",\n";
  }
  out += "macro,,,," + num(r.macro_p) + "," + num(r.macro_r) + "," + num(r.macro_f1) + "," + std::to_string(r.total) +
         "," + num(r.oa) + "\n";
  return out;
}

std::string step_log_csv(const TrainLog& log) {
  std::string out = "step,epoch,lr,loss\n";
  for (const auto& s : log.steps) {
    out += std::to_string(s.step) + "," + std::to_string(s.epoch) + "," + num(s.lr) + "," + num(s.loss) + "\n";
  }
  return out;
}

std::string epoch_log_csv(const TrainLog& log) {
  std::string out = "epoch,mean_loss,r_at_1,r_at_5,r_at_10,r_at_top1pct,train_oa,test_oa,test_macro_f1\n";
  for (const auto& e : log.epochs) {
    out += std::to_string(e.epoch) + "," + num(e.mean_loss) + ",";
    if (e.retrieval) {
      out += num(e.retrieval->r_at_1) + "," + num(e.retrieval->r_at_5) + "," + num(e.retrieval->r_at_10) + "," +
             num(e.retrieval->r_at_top1pct) + ",";
    } else {
      out += ",,,,";
    }
    out += (e.train_accuracy ? num(*e.train_accuracy) : "") + ",";
    out += e.classification ? num(e.classification->oa) + "," + num(e.classification->macro_f1) : ",";
    out += "\n";
  }
  return out;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "ratio,seed,r_at_1,r_at_5,r_at_10,r_at_top1pct\n";
  for (const auto& r : rows) {
    out += r.ratio + "," + std::to_string(r.seed) + "," + num(r.report.r_at_1) + "," + num(r.report.r_at_5) + "," +
           num(r.report.r_at_10) + "," + num(r.report.r_at_top1pct) + "\n";
  }
  return out;
}

void write_similarity_pgm(const Eigen::MatrixXd& sim, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << sim.cols() << " " << sim.rows() << "\n255\n";
  for (Eigen::Index r = 0; r < sim.rows(); ++r)
    for (Eigen::Index c = 0; c < sim.cols(); ++c) {
      const double v = std::clamp((sim(r, c) + 1.0) * 127.5, 0.0, 255.0);
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v))));
    }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace cvd

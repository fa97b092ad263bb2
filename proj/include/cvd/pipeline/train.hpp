#pragma once

#include "cvd/core/random.hpp"
#include "cvd/eval/classification.hpp"
#include "cvd/eval/retrieval.hpp"
#include "cvd/loss/batching.hpp"
#include "cvd/loss/contrastive.hpp"
#include "cvd/models/convnext.hpp"
#include "cvd/models/gcvit.hpp"
#include "cvd/pipeline/augment.hpp"
#include "cvd/pipeline/data.hpp"
#include "cvd/pipeline/optim.hpp"
#include "cvd/pipeline/preprocess.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace cvd {

struct StepRecord {
  std::int64_t step = 0;
  int epoch = 0;
  double lr = 0;
  double loss = 0;
};

struct EpochSummary {
  int epoch = 0;
  double mean_loss = 0;
  std::optional<RetrievalReport> retrieval;
  std::optional<ClassificationReport> classification;
  /// Damage task: accuracy on the (unaugmented) train split, as a fraction.
  std::optional<double> train_accuracy;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EpochSummary> epochs;
  std::vector<std::string> notes;

  bool steps_increasing() const {
    for (std::size_t i = 1; i < steps.size(); ++i)
      if (steps[i].step <= steps[i - 1].step) return false;
    return true;
  }
};

using ProgressFn = std::function<void(const std::string&)>;

inline const std::string kLogTauName = "loss.log_tau";

namespace detail {

inline std::uint64_t step_seed(std::uint64_t seed, std::int64_t step, Index item) {
  return mix_seed(mix_seed(seed ^ 0x5EEDA0C0FFEEULL) + static_cast<std::uint64_t>(step) * 0x100000001B3ULL +
                  static_cast<std::uint64_t>(item));
}

inline std::int64_t steps_per_epoch(Index n_train, Index batch_size) { return (n_train + batch_size - 1) / batch_size; }

inline void check_split(const DataSplit& split) {
  if (split.train.empty() || split.test.empty()) {
    throw std::invalid_argument("training needs nonempty train and test splits (got " +
                                std::to_string(split.train.size()) + "/" + std::to_string(split.test.size()) + ")");
  }
}

inline void check_rasters(const PairData& data, const TrainConfig& cfg) {
  if (data.size() == 0) throw std::invalid_argument("training needs a nonempty dataset");
  for (Index i = 0; i < data.size(); ++i) {
    const auto& st = data.street[static_cast<std::size_t>(i)];
    const auto& sa = data.sat[static_cast<std::size_t>(i)];
    const auto& id = data.records[static_cast<std::size_t>(i)].id;
    if (st.width < 4 || st.width % 4 != 0 || st.height < 2) {
      throw std::invalid_argument("sample " + id + ": panorama width must be a positive multiple of 4");
    }
    if (sa.width != sa.height) throw std::invalid_argument("sample " + id + ": overhead raster must be square");
  }
  (void)cfg;
}

}  // namespace detail

/// Unaugmented model inputs for a set of rows.
template <typename Scalar>
struct InputCache {
  std::vector<Tensor<Scalar>> street;
  std::vector<Tensor<Scalar>> sat;

  InputCache(const PairData& data, const std::vector<Index>& rows, int size, double crop_frac) {
    for (Index i : rows) {
      auto [s, a] = preprocess_pair<Scalar>(data.street[static_cast<std::size_t>(i)],
                                            data.sat[static_cast<std::size_t>(i)], size, crop_frac);
      street.push_back(std::move(s));
      sat.push_back(std::move(a));
    }
  }
};

// ---------------------------------------------------------------------------
// Geolocalization.

/// Embeddings of each input as rows of an [N, D] binary64 matrix.
template <typename Scalar>
TensorD embed_all(const std::vector<Tensor<Scalar>>& inputs, const ConvNeXtConfig& cfg, const ParamSet<Scalar>& params) {
  TensorD out({static_cast<Index>(inputs.size()), cfg.embed_dim});
  auto m = out.matrix();
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tape<Scalar> tape;
    BoundParams<Scalar> p(tape, params);
    const auto e = convnext_encode(tape.constant(inputs[i]), cfg, p).value();
    m.row(static_cast<Index>(i)) = e.values().template cast<double>().transpose();
  }
  return out;
}

template <typename Scalar>
RetrievalReport evaluate_geoloc(const InputCache<Scalar>& inputs, const std::vector<std::string>& ids,
                                const std::vector<LonLat>& coords, const ConvNeXtConfig& cfg,
                                const ParamSet<Scalar>& params) {
  const auto index = build_index(embed_all(inputs.sat, cfg, params), ids, coords);
  return evaluate_retrieval(embed_all(inputs.street, cfg, params), index, ids);
}

template <typename Scalar>
ParamSet<Scalar> init_geoloc_params(const TrainConfig& cfg) {
  auto params = init_convnext<Scalar>(cfg.convnext, cfg.seed);
  if (cfg.learnable_temperature) {
    params.add(kLogTauName, Tensor<Scalar>({1}, static_cast<Scalar>(std::log(cfg.temperature))));
  }
  return params;
}

template <typename Scalar>
struct GeolocRun {
  ParamSet<Scalar> params;
  TrainLog log;
  DataSplit split;
  RetrievalReport report;
};

/// One optimizer step's loss and parameter gradients for a batch of rows.
/// Every image gets its own tape; the contrastive loss is taken over the
/// stacked embeddings and its row gradients are pushed back through each
/// image tape.
template <typename Scalar>
double geoloc_batch_gradients(const TrainConfig& cfg, const PairData& data, const std::vector<Index>& rows,
                              const ParamSet<Scalar>& params, std::int64_t step, ParamSet<Scalar>& grads) {
  const auto b = static_cast<Index>(rows.size());
  const Index d = cfg.convnext.embed_dim;
  struct View {
    std::unique_ptr<Tape<Scalar>> tape;
    std::unique_ptr<BoundParams<Scalar>> bound;
    Var<Scalar> emb;
  };
  std::vector<View> street(static_cast<std::size_t>(b)), sat(static_cast<std::size_t>(b));
  Tensor<Scalar> es({b, d}), ea({b, d});
  auto encode = [&](View& v, const Tensor<Scalar>& x, Tensor<Scalar>& out, Index row) {
    v.tape = std::make_unique<Tape<Scalar>>();
    v.bound = std::make_unique<BoundParams<Scalar>>(*v.tape, params);
    v.emb = convnext_encode(v.tape->constant(x), cfg.convnext, *v.bound);
    out.matrix().row(row) = v.emb.value().values().transpose();
  };
  for (Index k = 0; k < b; ++k) {
    const Index i = rows[static_cast<std::size_t>(k)];
    std::mt19937_64 rng(detail::step_seed(cfg.seed, step, i));
    const auto [st, sa] = augment_pair(data.street[static_cast<std::size_t>(i)], data.sat[static_cast<std::size_t>(i)],
                                       cfg.augment, rng);
    const auto [xs, xa] = preprocess_pair<Scalar>(st, sa, cfg.input_size, cfg.crop_frac);
    encode(street[static_cast<std::size_t>(k)], xs, es, k);
    encode(sat[static_cast<std::size_t>(k)], xa, ea, k);
  }

  Tape<Scalar> lt;
  EmbeddingBatch<Scalar> batch{lt.leaf(es), lt.leaf(ea), rows};
  std::optional<Var<Scalar>> log_tau;
  if (cfg.learnable_temperature) log_tau = lt.leaf(params.at(kLogTauName));
  const auto loss = infonce_loss(batch, cfg.loss(), log_tau);
  const auto g = lt.backward(loss);
  if (log_tau) grads.at(kLogTauName).values() += g[*log_tau].values();
  const auto ges = g[batch.street], gea = g[batch.sat];
  auto push_back = [&](View& v, const Tensor<Scalar>& rows_grad, Index k) {
    Tensor<Scalar> seed({d});
    seed.values() = rows_grad.matrix().row(k).transpose();
    accumulate(grads, v.bound->gradients(v.tape->backward(v.emb, seed)));
  };
  for (Index k = 0; k < b; ++k) {
    push_back(street[static_cast<std::size_t>(k)], ges, k);
    push_back(sat[static_cast<std::size_t>(k)], gea, k);
  }
  return static_cast<double>(loss.value()[0]);
}

/// Siamese ConvNeXt with symmetric InfoNCE. Epoch 1 uses GPS-grouped
/// batches, later epochs batches mined from the current overhead embeddings.
template <typename Scalar>
GeolocRun<Scalar> train_geoloc(const TrainConfig& cfg, const PairData& data, const ProgressFn& progress = {}) {
  if (cfg.task != Task::geoloc) throw std::invalid_argument("train_geoloc: config task is not geoloc");
  cfg.validate();
  detail::check_rasters(data, cfg);
  GeolocRun<Scalar> run;
  run.split = split_dataset(data.labels(), cfg.split, cfg.seed);
  detail::check_split(run.split);
  const auto& train = run.split.train;
  const InputCache<Scalar> train_inputs(data, train, cfg.input_size, cfg.crop_frac);
  const InputCache<Scalar> test_inputs(data, run.split.test, cfg.input_size, cfg.crop_frac);
  const auto test_ids = data.ids(run.split.test);
  const auto test_coords = data.coords(run.split.test);
  const auto train_coords = data.coords(train);

  run.params = init_geoloc_params<Scalar>(cfg);
  auto state = AdamState<Scalar>::zeros(run.params);
  const auto n = static_cast<Index>(train.size());
  const Index bs = std::min<Index>(cfg.batch_size, std::max<Index>(n, 2));
  const std::int64_t per_epoch = detail::steps_per_epoch(n, bs);
  const std::int64_t total = per_epoch * cfg.epochs, warmup = per_epoch * cfg.warmup_epochs;
  std::int64_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const std::uint64_t plan_seed = mix_seed(cfg.seed ^ (0xBA7C4ULL + static_cast<std::uint64_t>(epoch)));
    BatchPlan plan;
    if (epoch == 1) {
      plan = gps_group_batches(train_coords, bs, plan_seed);
    } else {
      const auto es = embed_all(train_inputs.street, cfg.convnext, run.params);
      const auto ea = embed_all(train_inputs.sat, cfg.convnext, run.params);
      plan = similarity_mine_batches(es, ea, bs, plan_seed);
    }
    double epoch_loss = 0;
    for (const auto& local : plan.batches) {
      ++step;
      std::vector<Index> rows;
      for (Index j : local) rows.push_back(train[static_cast<std::size_t>(j)]);
      auto grads = zeros_like(run.params);
      const double loss = geoloc_batch_gradients(cfg, data, rows, run.params, step, grads);
      const double lr = lr_schedule(step, warmup, total, cfg.base_lr);
      adamw_step(run.params, grads, state, {.lr = lr, .weight_decay = cfg.weight_decay});
      run.log.steps.push_back({step, epoch, lr, loss});
      epoch_loss += loss;
    }
    EpochSummary summary{epoch, epoch_loss / static_cast<double>(plan.batches.size()), {}, {}, {}};
    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
      summary.retrieval = evaluate_geoloc(test_inputs, test_ids, test_coords, cfg.convnext, run.params);
    }
    if (progress) {
      std::string line = "epoch " + std::to_string(epoch) + " loss " + std::to_string(summary.mean_loss);
      if (summary.retrieval) {
        line += " R@1 " + std::to_string(summary.retrieval->r_at_1) + " R@5 " + std::to_string(summary.retrieval->r_at_5);
      }
      progress(line);
    }
    run.log.epochs.push_back(summary);
  }
  run.report = *run.log.epochs.back().retrieval;
  return run;
}

// ---------------------------------------------------------------------------
// Damage classification.

template <typename Scalar>
ParamSet<Scalar> merge_cgcvit(const CGCViTParams<Scalar>& p) {
  ParamSet<Scalar> out;
  for (const auto* part : {&p.branch_s, &p.branch_a, &p.head})
    for (const auto& [name, t] : *part) out.add(name, t);
  return out;
}

template <typename Scalar>
CGCViTParams<Scalar> split_cgcvit(const ParamSet<Scalar>& merged) {
  CGCViTParams<Scalar> out;
  for (const auto& [name, t] : merged) {
    if (name.rfind(kStreetPrefix, 0) == 0) out.branch_s.add(name, t);
    else if (name.rfind(kSatPrefix, 0) == 0) out.branch_a.add(name, t);
    else out.head.add(name, t);
  }
  return out;
}

/// CGCViT logits under a view mode. Single-view modes skip the unused
/// branch and feed zeros in place of its pooled feature, so the head only
/// sees one view.
template <typename Scalar>
Var<Scalar> damage_forward(Tape<Scalar>& tape, const Tensor<Scalar>& street, const Tensor<Scalar>& sat,
                           ViewMode mode, const TrainConfig& cfg, const BoundParams<Scalar>& p) {
  if (mode == ViewMode::cross) return cgcvit_forward(tape.constant(street), tape.constant(sat), cfg.gcvit, p, p, p).logits;
  const Index c = cfg.gcvit.stage_channels[3];
  auto fs = mode == ViewMode::street ? gcvit_encode(tape.constant(street), cfg.gcvit, p, kStreetPrefix)
                                         : tape.constant(Tensor<Scalar>({c}, Scalar(0)));
  auto fa = mode == ViewMode::sat ? gcvit_encode(tape.constant(sat), cfg.gcvit, p, kSatPrefix)
                                      : tape.constant(Tensor<Scalar>({c}, Scalar(0)));
  auto fused = concat<Scalar>({fs, fa}, 0);
  return reshape(dense(p, "head.linear", reshape(fused, {1, fused.size()})), {cfg.gcvit.num_classes});
}

template <typename Scalar>
Tensor<Scalar> damage_logits(const Tensor<Scalar>& street, const Tensor<Scalar>& sat, const TrainConfig& cfg,
                             const ParamSet<Scalar>& params) {
  Tape<Scalar> tape;
  BoundParams<Scalar> p(tape, params);
  return damage_forward(tape, street, sat, cfg.mode, cfg, p).value();
}

template <typename Scalar>
int argmax3(const Tensor<Scalar>& logits) {
  int best = 0;
  for (int k = 1; k < logits.size(); ++k)
    if (logits[k] > logits[best]) best = k;
  return best;
}

template <typename Scalar>
std::vector<int> predict_damage(const InputCache<Scalar>& inputs, const TrainConfig& cfg, const ParamSet<Scalar>& params) {
  std::vector<int> out;
  for (std::size_t i = 0; i < inputs.street.size(); ++i) {
    out.push_back(argmax3(damage_logits(inputs.street[i], inputs.sat[i], cfg, params)));
  }
  return out;
}

template <typename Scalar>
struct DamageRun {
  ParamSet<Scalar> params;
  TrainLog log;
  DataSplit split;
  ClassificationReport report;
  double train_accuracy = 0;
};

namespace detail {

/// View mode for one training sample after view dropout.
inline ViewMode training_view(const TrainConfig& cfg, std::int64_t step, Index row) {
  if (cfg.mode != ViewMode::cross || cfg.view_dropout <= 0) return cfg.mode;
  std::mt19937_64 rng(mix_seed(step_seed(cfg.seed, step, row) ^ 0x7D20ULL));
  if (uniform01(rng) >= cfg.view_dropout) return ViewMode::cross;
  return uniform01(rng) < 0.5 ? ViewMode::street : ViewMode::sat;
}

}  // namespace detail

/// Mean label-smoothed cross-entropy of a batch and its parameter gradients.
template <typename Scalar>
double damage_batch_gradients(const TrainConfig& cfg, const PairData& data, const std::vector<Index>& rows,
                              const ParamSet<Scalar>& params, std::int64_t step, ParamSet<Scalar>& grads) {
  const auto inv_b = static_cast<Scalar>(1.0 / static_cast<double>(rows.size()));
  double total = 0;
  for (Index i : rows) {
    std::mt19937_64 rng(detail::step_seed(cfg.seed, step, i));
    const auto [st, sa] = augment_pair(data.street[static_cast<std::size_t>(i)], data.sat[static_cast<std::size_t>(i)],
                                       cfg.augment, rng);
    const auto [xs, xa] = preprocess_pair<Scalar>(st, sa, cfg.input_size, cfg.crop_frac);
    Tape<Scalar> tape;
    BoundParams<Scalar> p(tape, params);
    const auto logits = damage_forward(tape, xs, xa, detail::training_view(cfg, step, i), cfg, p);
    const auto loss = label_smoothed_ce(logits, data.records[static_cast<std::size_t>(i)].damage, cfg.label_smoothing);
    total += static_cast<double>(loss.value()[0]);
    accumulate(grads, p.gradients(tape.backward(loss, Tensor<Scalar>(loss.shape(), inv_b))));
  }
  return total / static_cast<double>(rows.size());
}

/// CGCViT with label-smoothed cross-entropy; ViewMode street/sat zeroes
/// the other view's pathway into the head.
template <typename Scalar>
DamageRun<Scalar> train_damage(const TrainConfig& cfg, const PairData& data, const ProgressFn& progress = {}) {
  if (cfg.task != Task::damage) throw std::invalid_argument("train_damage: config task is not damage");
  cfg.validate();
  detail::check_rasters(data, cfg);
  DamageRun<Scalar> run;
  run.split = split_dataset(data.labels(), cfg.split, cfg.seed);
  detail::check_split(run.split);
  const auto& train = run.split.train;
  const InputCache<Scalar> train_inputs(data, train, cfg.input_size, cfg.crop_frac);
  const InputCache<Scalar> test_inputs(data, run.split.test, cfg.input_size, cfg.crop_frac);
  std::vector<int> train_labels, test_labels;
  for (Index i : train) train_labels.push_back(data.records[static_cast<std::size_t>(i)].damage);
  for (Index i : run.split.test) test_labels.push_back(data.records[static_cast<std::size_t>(i)].damage);

  run.params = merge_cgcvit(init_cgcvit<Scalar>(cfg.gcvit, cfg.seed));
  run.log.notes.push_back("base_lr " + std::to_string(cfg.base_lr) + (cfg.full_scale_lr ? " (full-scale value)" : "") +
                          "; full-scale value " + std::to_string(kFullScaleDamageLr) + ", micro-scaled default " +
                          std::to_string(micro_scaled_lr(run.params.scalar_count())));
  auto state = AdamState<Scalar>::zeros(run.params);
  const auto n = static_cast<Index>(train.size());
  const Index bs = std::min<Index>(cfg.batch_size, std::max<Index>(n, 2));
  const std::int64_t per_epoch = detail::steps_per_epoch(n, bs);
  const std::int64_t total = per_epoch * cfg.epochs, warmup = per_epoch * cfg.warmup_epochs;
  std::int64_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto plan = random_batches(n, bs, mix_seed(cfg.seed ^ (0xDA3A6EULL + static_cast<std::uint64_t>(epoch))));
    double epoch_loss = 0;
    for (const auto& local : plan.batches) {
      ++step;
      std::vector<Index> rows;
      for (Index j : local) rows.push_back(train[static_cast<std::size_t>(j)]);
      auto grads = zeros_like(run.params);
      const double loss = damage_batch_gradients(cfg, data, rows, run.params, step, grads);
      const double lr = lr_schedule(step, warmup, total, cfg.base_lr);
      adamw_step(run.params, grads, state, {.lr = lr, .weight_decay = cfg.weight_decay});
      run.log.steps.push_back({step, epoch, lr, loss});
      epoch_loss += loss;
    }
    EpochSummary summary{epoch, epoch_loss / static_cast<double>(plan.batches.size()), {}, {}, {}};
    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
      summary.classification =
          classification_report(confusion_matrix(predict_damage(test_inputs, cfg, run.params), test_labels));
      summary.train_accuracy =
          classification_report(confusion_matrix(predict_damage(train_inputs, cfg, run.params), train_labels)).oa;
    }
    if (progress) {
      std::string line = "epoch " + std::to_string(epoch) + " loss " + std::to_string(summary.mean_loss);
      if (summary.classification) {
        line += " train OA " + std::to_string(*summary.train_accuracy) + " test OA " +
                std::to_string(summary.classification->oa);
      }
      progress(line);
    }
    run.log.epochs.push_back(summary);
  }
  run.report = *run.log.epochs.back().classification;
  run.train_accuracy = *run.log.epochs.back().train_accuracy;
  return run;
}

}  // namespace cvd

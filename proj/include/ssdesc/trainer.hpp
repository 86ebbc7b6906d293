#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ssdesc/config.hpp"
#include "ssdesc/losses.hpp"
#include "ssdesc/matching.hpp"
#include "ssdesc/model.hpp"
#include "ssdesc/nn/sgd.hpp"
#include "ssdesc/rng.hpp"
#include "ssdesc/runtime.hpp"
#include "ssdesc/triplets.hpp"

namespace ssdesc {

struct TrainConfig {
  std::size_t batch_size = 128;
  double lr = 0.001;
  double momentum = 0.9;
  double margin = 1.0;
  LossKind loss = LossKind::kHardNet;
  int epochs = 50;
  std::uint64_t seed = 1;
  std::string checkpoint_path;  ///< empty: no checkpoint files
  std::string log_path;         ///< empty: no CSV log
  double val_fraction = 0.1;
  bool holdout_by_frame = false;
  bool lr_decay = false;  ///< linear decay to zero over the run
  int validate_every = 1;  ///< epochs between validations; the last epoch is always validated
  double pe = kDefaultProjectionError;
  bool deterministic = false;  ///< wall-clock column written as 0

  void check() const {
    if (batch_size < 2) throw ParameterError("batch_size must be >= 2");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ParameterError("val_fraction must lie in (0, 1)");
    if (epochs < 0) throw ParameterError("epochs must be >= 0");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ParameterError("lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("momentum must lie in [0, 1)");
    if (validate_every < 1) throw ParameterError("validate_every must be >= 1");
  }

  /// Unknown keys are ignored; malformed values raise ParseError naming the key.
  static TrainConfig from_config(const KeyValueConfig& kv) {
    TrainConfig c;
    const long long batch = kv.get_int("batch_size", static_cast<long long>(c.batch_size));
    if (batch < 2) throw ParameterError("batch_size must be >= 2");
    c.batch_size = static_cast<std::size_t>(batch);
    c.lr = kv.get_double("lr", c.lr);
    c.momentum = kv.get_double("momentum", c.momentum);
    c.margin = kv.get_double("margin", c.margin);
    c.loss = parse_loss_kind(kv.get_string("loss", to_string(c.loss)));
    c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
    c.checkpoint_path = kv.get_string("checkpoint", c.checkpoint_path);
    c.log_path = kv.get_string("log", c.log_path);
    c.val_fraction = kv.get_double("val_fraction", c.val_fraction);
    c.holdout_by_frame = kv.get_bool("holdout_by_frame", c.holdout_by_frame);
    c.lr_decay = kv.get_bool("lr_decay", c.lr_decay);
    c.validate_every = static_cast<int>(kv.get_int("validate_every", c.validate_every));
    c.pe = kv.get_double("pe", c.pe);
    c.deterministic = kv.get_bool("deterministic", c.deterministic);
    c.check();
    return c;
  }

  std::string describe() const {
    auto num = [](double v) { return detail::format_double(v); };
    return "batch_size = " + std::to_string(batch_size) + "\ndeterministic = " + (deterministic ? "true" : "false") +
           "\nepochs = " + std::to_string(epochs) + "\nholdout_by_frame = " + (holdout_by_frame ? "true" : "false") +
           "\nloss = " + to_string(loss) + "\nlr = " + num(lr) + "\nlr_decay = " + (lr_decay ? "true" : "false") +
           "\nmargin = " + num(margin) + "\nmomentum = " + num(momentum) + "\npe = " + num(pe) +
           "\nseed = " + std::to_string(seed) + "\nval_fraction = " + num(val_fraction) +
           "\nvalidate_every = " + std::to_string(validate_every) + "\n";
  }
};

/// One row per training batch, plus one per epoch with batch = batches per epoch
/// carrying the epoch's validation result.
struct TrainLogRecord {
  int epoch = 0;  ///< 1-based
  int batch = 0;  ///< 0-based within the epoch
  double loss = 0.0;
  double epoch_mean_loss = 0.0;  ///< running mean over the epoch so far
  double val_precision = std::numeric_limits<double>::quiet_NaN();
  double val_matching_score = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
};

inline constexpr const char* kTrainLogHeader = "epoch,batch,loss,epoch_mean_loss,val_precision,val_matching_score,seconds";

inline std::string format_log_record(const TrainLogRecord& r) {
  auto num = [](double v) { return std::isnan(v) ? std::string("nan") : detail::format_double(v); };
  return std::to_string(r.epoch) + "," + std::to_string(r.batch) + "," + num(r.loss) + "," + num(r.epoch_mean_loss) +
         "," + num(r.val_precision) + "," + num(r.val_matching_score) + "," + num(r.seconds);
}

inline std::vector<TrainLogRecord> read_train_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open training log '" + path + "'");
  std::string line;
  std::size_t n = 0;
  std::vector<TrainLogRecord> out;
  while (std::getline(in, line)) {
    ++n;
    if (n == 1) {
      if (line != kTrainLogHeader) throw ParseError("unexpected training log header", n);
      continue;
    }
    if (line.empty()) continue;
    const auto f = detail::split_commas(line);
    if (f.size() != 7) throw ParseError("expected 7 fields", n);
    auto num = [&](std::string_view s, const char* what) {
      return s == "nan" ? std::numeric_limits<double>::quiet_NaN() : detail::parse_double(s, n, what);
    };
    TrainLogRecord r;
    r.epoch = static_cast<int>(num(f[0], "epoch"));
    r.batch = static_cast<int>(num(f[1], "batch"));
    r.loss = num(f[2], "loss");
    r.epoch_mean_loss = num(f[3], "epoch_mean_loss");
    r.val_precision = num(f[4], "val_precision");
    r.val_matching_score = num(f[5], "val_matching_score");
    r.seconds = num(f[6], "seconds");
    out.push_back(r);
  }
  return out;
}

/// Indices of the training and validation pairs.
struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Seeded shuffle then a val_fraction cut, or, with holdout_by_frame, a seeded
/// choice of whole frames so no validation key-point shares a frame with training.
inline DataSplit split_dataset(const PairDataset& ds, const TrainConfig& cfg) {
  DataSplit s;
  const std::size_t n = ds.pairs.size();
  Rng rng = derive_rng(cfg.seed, 1);
  if (cfg.holdout_by_frame) {
    std::set<std::uint32_t> ids;
    for (const auto& p : ds.pairs) ids.insert(p.frame_id);
    if (ids.size() < 2) throw DataError("hold-out by frame needs pairs from at least two frames");
    std::vector<std::uint32_t> frames(ids.begin(), ids.end());
    shuffle(std::span<std::uint32_t>(frames), rng);
    const auto n_val = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::ceil(cfg.val_fraction * static_cast<double>(frames.size()))), 1, frames.size() - 1);
    const std::set<std::uint32_t> val_frames(frames.begin(), frames.begin() + static_cast<std::ptrdiff_t>(n_val));
    for (std::size_t i = 0; i < n; ++i) (val_frames.count(ds.pairs[i].frame_id) ? s.val : s.train).push_back(i);
    return s;
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  shuffle(std::span<std::size_t>(order), rng);
  const auto n_val = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(cfg.val_fraction * static_cast<double>(n))),
                                             n > 1 ? 1 : 0, n > 1 ? n - 1 : 0);
  s.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

/// Standardized (B x 1 x 128 x 128) stacks of the selected anchors or positives.
inline Tensor<float> assemble_batch(const PairDataset& ds, std::span<const std::size_t> indices, bool positives) {
  Tensor<float> out({indices.size(), 1, kPatchSize, kPatchSize});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& pair = ds.pairs.at(indices[b]);
    const auto patch = preprocess_patch(dequantize_patch(positives ? pair.positive : pair.anchor));
    std::copy(patch.begin(), patch.end(), out.data() + b * kPatchPixels);
  }
  return out;
}

inline EvalReport validate(const DescriptorNet<float>& net, const PairDataset& ds, std::span<const std::size_t> indices,
                           double pe = kDefaultProjectionError) {
  std::vector<PatchPair> subset;
  subset.reserve(indices.size());
  for (std::size_t i : indices) subset.push_back(ds.pairs.at(i));
  return validate(net, std::span<const PatchPair>(subset), pe);
}

struct TrainResult {
  DescriptorNet<float> net;
  std::vector<TrainLogRecord> log;
  DataSplit split;
};

using TrainProgress = std::function<void(const TrainLogRecord&)>;

/// SGD with momentum over fixed-size shuffled batches (remainder dropped);
/// validation in eval mode after each epoch; checkpoint written after every epoch.
inline TrainResult train(const PairDataset& ds, const TrainConfig& cfg, const TrainProgress& progress = {}) {
  cfg.check();
  retain_large_allocations();
  TrainResult result;
  result.split = split_dataset(ds, cfg);
  const auto& train_idx = result.split.train;
  if (train_idx.size() < cfg.batch_size) {
    throw ParameterError("training split has " + std::to_string(train_idx.size()) + " pairs, fewer than batch_size " +
                         std::to_string(cfg.batch_size));
  }
  result.net = DescriptorNet<float>::initialize(cfg.seed);
  DescriptorNet<float>& net = result.net;
  nn::SgdMomentum<float> opt(static_cast<float>(cfg.lr), static_cast<float>(cfg.momentum));
  Rng loss_rng = derive_rng(cfg.seed, 2);

  std::ofstream log_file;
  if (!cfg.log_path.empty()) {
    log_file.open(cfg.log_path, std::ios::binary | std::ios::trunc);
    if (!log_file) throw IoError("cannot write training log '" + cfg.log_path + "'");
    log_file << kTrainLogHeader << "\n";
  }
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    if (cfg.deterministic) return 0.0;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  auto emit = [&](const TrainLogRecord& r) {
    result.log.push_back(r);
    if (log_file.is_open()) log_file << format_log_record(r) << "\n" << std::flush;
    if (progress) progress(r);
  };
  auto save = [&] {
    if (!cfg.checkpoint_path.empty()) save_checkpoint(net, cfg.checkpoint_path);
  };
  save();

  const std::size_t n_batches = train_idx.size() / cfg.batch_size;
  double val_precision = std::numeric_limits<double>::quiet_NaN();
  double val_score = std::numeric_limits<double>::quiet_NaN();
  auto params = net.parameters();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.lr_decay) opt.set_learning_rate(static_cast<float>(cfg.lr * (1.0 - (epoch - 1.0) / cfg.epochs)));
    std::vector<std::size_t> order = train_idx;
    Rng shuffle_rng = derive_rng(cfg.seed, 100 + static_cast<std::uint64_t>(epoch));
    shuffle(std::span<std::size_t>(order), shuffle_rng);
    double sum = 0.0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::span<const std::size_t> idx(order.data() + b * cfg.batch_size, cfg.batch_size);
      const Tensor<float> xa = assemble_batch(ds, idx, false);
      const Tensor<float> xp = assemble_batch(ds, idx, true);

      net.zero_grad();
      DescriptorNet<float>::Trace ta, tp;
      const Tensor<float> da = net.forward(xa, Mode::kTrain, &ta);
      const Tensor<float> dp = net.forward(xp, Mode::kTrain, &tp);
      LossResult<float> loss;
      switch (cfg.loss) {
        case LossKind::kHardNet: loss = hardnet_loss(da, dp, static_cast<float>(cfg.margin)); break;
        case LossKind::kTriplet: loss = triplet_loss(da, dp, static_cast<float>(cfg.margin), loss_rng); break;
        case LossKind::kAdaptive: loss = adaptive_margin_triplet_loss(da, dp, loss_rng); break;
      }
      if (!std::isfinite(loss.value)) {
        std::string ids;
        for (std::size_t i : idx) ids += (ids.empty() ? "" : " ") + std::to_string(i);
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + " batch " + std::to_string(b) +
                             "; pair indices: " + ids);
      }
      net.backward(ta, loss.grads.anchors);
      net.backward(tp, loss.grads.positives);
      opt.step(params);

      sum += loss.value;
      TrainLogRecord r;
      r.epoch = epoch;
      r.batch = static_cast<int>(b);
      r.loss = loss.value;
      r.epoch_mean_loss = sum / static_cast<double>(b + 1);
      r.val_precision = val_precision;
      r.val_matching_score = val_score;
      r.seconds = elapsed();
      emit(r);
    }
    if (epoch % cfg.validate_every == 0 || epoch == cfg.epochs) {
      const EvalReport rep = validate(net, ds, result.split.val, cfg.pe);
      val_precision = rep.precision;
      val_score = rep.matching_score;
    }
    TrainLogRecord r;
    r.epoch = epoch;
    r.batch = static_cast<int>(n_batches);
    r.loss = n_batches ? sum / static_cast<double>(n_batches) : 0.0;
    r.epoch_mean_loss = r.loss;
    r.val_precision = val_precision;
    r.val_matching_score = val_score;
    r.seconds = elapsed();
    emit(r);
    save();
  }
  return result;
}

}  // namespace ssdesc

// Copyright 2026 The fsrnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fsrnn/architectures.hpp"
#include "fsrnn/data.hpp"
#include "fsrnn/ops.hpp"
#include "fsrnn/rng.hpp"

namespace fsrnn {

/// Nats to bits.
double bpc(double loss_nats);

struct ClipResult {
  double norm = 0.0;   // global norm before clipping
  double scale = 1.0;  // factor applied to every gradient
};

/// Rescales all gradients to global Euclidean norm `max_norm` when they
/// exceed it. Throws NumericError on a non-finite gradient, leaving the
/// gradients untouched.
ClipResult clip_gradients(std::span<Tensor> params, double max_norm = 1.0);

double global_grad_norm(std::span<const Tensor> params);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  AdamConfig hyper;
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static OptimizerState for_params(std::span<const Tensor> params, AdamConfig hyper);
};

/// Bias-corrected Adam update using the gradients stored on `params`.
void adam_step(OptimizerState& opt, std::span<Tensor> params);

enum class ScheduleKind { constant, ptb_last20, plateau_div10 };

std::string to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(std::string_view text);

/// Learning-rate schedule driven by end-of-epoch validation results.
///
/// ptb_last20: lr0 for epochs [0, E − 20), lr0/10 afterwards.
/// plateau_div10: divide by 10 once validation BPC has failed to improve on
/// its best for 2 consecutive epochs, then restart the count.
class LrSchedule {
 public:
  LrSchedule() = default;
  LrSchedule(ScheduleKind kind, double lr0, std::size_t epochs);

  // Learning rate for a (0-based) epoch.
  double lr_for_epoch(std::size_t epoch) const;
  // Records the validation BPC of a finished epoch.
  void observe(double valid_bpc);

  ScheduleKind kind() const { return kind_; }
  double lr0() const { return lr0_; }
  double current() const { return current_; }
  double best() const { return best_; }
  std::size_t bad_epochs() const { return bad_epochs_; }
  void restore(double current, bool has_best, double best, std::size_t bad_epochs);

 private:
  ScheduleKind kind_ = ScheduleKind::constant;
  double lr0_ = 1e-3;
  std::size_t epochs_ = 1;
  double current_ = 1e-3;
  double best_ = 0.0;
  bool has_best_ = false;
  std::size_t bad_epochs_ = 0;
};

/// Learning rate of `epoch` given the validation history of the epochs
/// before it.
double lr_schedule(ScheduleKind kind, double lr0, std::size_t epochs,
                   std::size_t epoch, std::span<const double> valid_history);

struct TrainConfig {
  std::size_t batch = 128;
  std::size_t window = 150;
  std::size_t epochs = 20;
  double lr = 1e-3;
  ScheduleKind schedule = ScheduleKind::constant;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;
  std::uint64_t seed = 1;
  std::size_t eval_every = 0;   // extra validation every N windows; 0 = per epoch
  std::size_t log_every = 50;   // train metric row every N windows
  std::size_t valid_batch = 0;  // 0 = same as batch
  std::size_t max_steps = 0;    // stop after this many updates; 0 = no cap

  void validate() const;
  AdamConfig adam() const { return {lr, beta1, beta2, adam_eps}; }
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Everything needed to continue training bit-for-bit.
struct TrainingProgress {
  std::size_t epoch = 0;
  std::size_t window = 0;  // next window within the epoch
  std::size_t step = 0;    // applied updates
  std::size_t skipped = 0;
  std::size_t consecutive_skips = 0;
  double best_valid_bpc = 0.0;
  bool has_best = false;
  double lr = 0.0;
  double schedule_best = 0.0;
  std::size_t schedule_bad_epochs = 0;
  // Running sums for the next metrics row.
  double interval_loss = 0.0;
  double interval_grad_norm = 0.0;
  std::size_t interval_count = 0;
  double max_post_clip_norm = 0.0;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ArchitectureSpec spec;
  TrainConfig config;
  TokenMode mode = TokenMode::enwik8_bytes;
  Vocab vocab;
  ModelParams params;
  std::optional<ModelParams> best_params;
  OptimizerState optimizer;
  std::string dropout_rng;
  std::string zoneout_rng;
  std::optional<ModelState> carried;
  TrainingProgress progress;
};

/// Evaluation-mode stepping of a frozen model over B lanes.
class Evaluator {
 public:
  Evaluator(const ArchitectureSpec& spec, const ModelParams& params, std::size_t lanes);

  // Logits for the given tokens; advances the carried state.
  Tensor step(std::span<const int> tokens);
  void reset();
  ModelState& state() { return state_; }

 private:
  const ArchitectureSpec& spec_;
  const ModelParams& params_;
  std::size_t lanes_;
  ModelState state_;
};

/// Negative log-likelihood (nats) of every predicted position, lane-major:
/// lanes of ⌊N/B⌋ tokens with state carried from zero through each lane.
std::vector<double> token_nll(const ArchitectureSpec& spec, const ModelParams& params,
                              std::span<const int> tokens, std::size_t lanes = 1);

/// Mean BPC over all predicted positions of a token range.
double evaluate(const ArchitectureSpec& spec, const ModelParams& params,
                std::span<const int> tokens, std::size_t lanes = 1);

/// Checkpoint evaluation. The corpus must be encoded with the checkpoint's
/// vocabulary (see encode_with).
double evaluate(const Checkpoint& checkpoint, const Corpus& corpus, Split split,
                std::size_t lanes = 1);

struct MetricsRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::string split;
  double bpc = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  double seconds = 0.0;
};

/// Writes the metrics CSV header and rows.
class MetricsLog {
 public:
  explicit MetricsLog(std::ostream* out);
  void write(const MetricsRow& row);
  const std::vector<MetricsRow>& rows() const { return rows_; }

 private:
  std::ostream* out_;
  std::vector<MetricsRow> rows_;
};

/// Mean cross-entropy (nats) over a window, recorded on the active graph if
/// any. Advances `state` past the last step.
Tensor window_loss(const ArchitectureSpec& spec, const ModelParams& params,
                   ModelState& state, const BatchStream::Window& window,
                   const StepContext& ctx);

struct StepStats {
  double loss = 0.0;           // mean nats over the window
  double grad_norm = 0.0;      // before clipping
  double post_clip_norm = 0.0;
  bool skipped = false;
};

/// TBPTT training loop: windows of `window` steps over `batch` lanes, mean
/// loss, backward, global-norm clipping, Adam, and detached state carried to
/// the next window. State restarts from zero at every epoch.
class Trainer {
 public:
  Trainer(const ArchitectureSpec& spec, const TrainConfig& config, const Corpus& corpus);
  // Continues from a checkpoint taken by checkpoint().
  Trainer(const Checkpoint& checkpoint, const Corpus& corpus);

  void set_metrics(MetricsLog* log) { metrics_ = log; }
  // Called after every validation with the current trainer.
  void set_on_validation(std::function<void(const Trainer&)> fn) {
    on_validation_ = std::move(fn);
  }

  bool done() const;
  StepStats step();
  // Finishes the current epoch (validation and schedule included).
  void run_epoch();
  // Trains to completion and returns the best checkpoint.
  Checkpoint train();

  double validate() const;

  Checkpoint checkpoint() const;
  Checkpoint best_checkpoint() const;

  const ArchitectureSpec& spec() const { return spec_; }
  const ModelParams& params() const { return params_; }
  const TrainingProgress& progress() const { return progress_; }
  double lr() const { return optimizer_.hyper.lr; }

 private:
  void start_epoch();
  void end_epoch();
  void log_interval();

  ArchitectureSpec spec_;
  TrainConfig config_;
  const Corpus& corpus_;
  ModelParams params_;
  std::optional<ModelParams> best_;
  OptimizerState optimizer_;
  LrSchedule schedule_;
  Rng dropout_rng_;
  Rng zoneout_rng_;
  ModelState carried_;
  BatchStream stream_;
  TrainingProgress progress_;
  MetricsLog* metrics_ = nullptr;
  std::function<void(const Trainer&)> on_validation_;
  double started_;
};

ModelParams copy_params(const ModelParams& params);

}  // namespace fsrnn

// Copyright 2026 The fsrnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fsrnn/architectures.hpp"
#include "fsrnn/data.hpp"
#include "fsrnn/training.hpp"

namespace fsrnn {

/// A frozen model to analyze.
struct ModelRef {
  std::string name;
  const ArchitectureSpec* spec = nullptr;
  const ModelParams* params = nullptr;
};

ModelRef model_ref(const Checkpoint& checkpoint, std::string name);

/// Cells reported by the analyses: every cell except that a sequential model
/// contributes only its first cell.
std::vector<std::size_t> analyzed_cells(const ArchitectureSpec& spec);

/// Gradients of the summed last-step loss Σ_l L_t(l) with respect to the
/// output cell state of every cell at every step of a window.
///
/// `inputs` is [lanes × steps] lane-major and `targets` holds the token each
/// lane must predict after the last step. Evaluation mode, zero initial
/// state. Result is [cell][step], each [lanes × width].
std::vector<std::vector<Tensor>> cell_state_gradients(const ArchitectureSpec& spec,
                                                      const ModelParams& params,
                                                      std::span<const int> inputs,
                                                      std::span<const int> targets,
                                                      std::size_t lanes);

struct ProbeOptions {
  std::size_t window = 150;
  std::size_t max_lag = 100;
  std::size_t samples = 1000;
  std::uint64_t seed = 1;
  std::size_t lanes = 32;  // anchors evaluated per batch
};

struct ProbeReport {
  std::vector<std::string> layers;
  std::size_t max_lag = 0;
  std::size_t samples = 0;
  std::size_t window = 0;
  std::vector<std::size_t> anchors;
  // [layer][lag] mean over anchors of ‖∂L_t/∂c_{t−lag}‖.
  std::vector<std::vector<double>> mean_norm;
  // [layer][lag][anchor]
  std::vector<std::vector<std::vector<double>>> norms;

  std::size_t layer_index(const std::string& label) const;
  void write_csv(std::ostream& out) const;
};

/// Mean ‖∂L_t/∂c_{t−k}‖ per layer for k ∈ [0, max_lag], averaged over
/// `samples` anchors spaced uniformly (with a seeded offset) over `tokens`.
ProbeReport gradient_probe(const ArchitectureSpec& spec, const ModelParams& params,
                           std::span<const int> tokens, const ProbeOptions& options);

/// Fraction of bootstrap resamples of the anchors in which layer `high` has
/// a larger mean norm at `lag` than every layer in `lows`.
double bootstrap_dominance(const ProbeReport& report, std::size_t lag,
                           const std::string& high, const std::vector<std::string>& lows,
                           std::size_t resamples, std::uint64_t seed);

/// (1/n) Σ_i (c_{t,i} − c_{t−1,i})² averaged over consecutive pairs.
double change_rate_of_trace(const std::vector<std::vector<double>>& trace);

struct ChangeRate {
  std::string layer;
  double value = 0.0;
};

/// Runs the first `steps` tokens in evaluation mode (one lane, zero initial
/// state) and reports the mean squared per-step cell-state change per layer.
std::vector<ChangeRate> cell_change_rate(const ArchitectureSpec& spec,
                                         const ModelParams& params,
                                         std::span<const int> tokens, std::size_t steps);

void write_change_rate_csv(std::ostream& out, const std::vector<ChangeRate>& rates);

struct Word {
  std::size_t start = 0;
  std::size_t length = 0;
};

/// Runs of at least two a–z characters with a space immediately before and
/// after.
std::vector<Word> find_words(std::span<const Symbol> symbols);

struct PositionBpcReport {
  std::vector<std::string> models;
  std::size_t max_pos = 0;
  // [model][position − 1]
  std::vector<std::vector<double>> bpc;
  std::vector<std::size_t> count;  // [position − 1], shared by all models
  // (model − reference) / reference, reference = models[0]
  std::vector<std::vector<double>> relative_loss;

  void write_csv(std::ostream& out) const;
};

/// Average BPC at each in-word character position. `symbols` and `tokens`
/// are the same split, as symbols and as ids.
PositionBpcReport position_bpc(const std::vector<ModelRef>& models,
                               std::span<const Symbol> symbols,
                               std::span<const int> tokens, std::size_t max_pos);

struct EnsembleResult {
  double bpc = 0.0;
  double max_sum_drift = 0.0;  // |Σ p − 1| of the averaged vectors
};

/// Arithmetic average of the members' next-character distributions, scored
/// with one lane and state carried over the whole range.
EnsembleResult ensemble_eval(const std::vector<ModelRef>& models,
                             std::span<const int> tokens);

void write_ensemble_csv(std::ostream& out, const std::vector<std::string>& models,
                        double bpc);

/// Spearman rank correlation (average ranks for ties).
double spearman(std::span<const double> x, std::span<const double> y);

/// Worker cap from FSRNN_THREADS, else the hardware concurrency.
std::size_t worker_threads();

}  // namespace fsrnn

// Copyright 2026 The fsrnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "fsrnn/rng.hpp"
#include "fsrnn/tensor.hpp"

namespace fsrnn {

struct LayerNormConfig {
  bool gates = true;   // normalize each gate's preactivation slice
  bool cell = true;    // normalize c on its way into tanh for h
  // Store the normalized cell as the recurrent c instead of the raw one.
  bool normalize_stored_cell = false;
  double eps = 1e-5;
};

struct RegularizerConfig {
  double dropout_keep = 1.0;
  double zoneout_c = 0.0;
  double zoneout_h = 0.0;
  bool training = false;

  void validate() const;
  RegularizerConfig evaluation() const {
    RegularizerConfig copy = *this;
    copy.training = false;
    return copy;
  }
};

using NamedTensor = std::pair<std::string, Tensor>;

// Gate blocks are stacked in this order along the 4n preactivation axis.
enum class Gate : std::size_t { forget = 0, input = 1, output = 2, candidate = 3 };

struct LstmParams {
  std::size_t n_in = 0;   // 0 for cells without an additional input
  std::size_t n_out = 0;
  Tensor w_h;             // [4n_out × n_out]
  Tensor w_x;             // [4n_out × n_in], undefined when n_in == 0
  Tensor bias;            // [4n_out]
  std::array<Tensor, 4> gate_gain;  // per gate, undefined when gate LN is off
  std::array<Tensor, 4> gate_bias;
  Tensor cell_gain;                 // undefined when cell LN is off
  Tensor cell_bias;
  LayerNormConfig ln;

  /// Orthogonal weights, forget bias 1, other biases 0, LN gain 1 / bias 0.
  static LstmParams create(std::size_t n_in, std::size_t n_out,
                           const LayerNormConfig& ln, Rng& rng);

  std::vector<NamedTensor> named(const std::string& prefix) const;
  std::size_t parameter_count() const;
};

struct LstmState {
  Tensor h;
  Tensor c;

  static LstmState zeros(std::size_t lanes, std::size_t width);
  LstmState detach() const { return {h.detach(), c.detach()}; }
};

/// One LSTM update without regularization: preactivations, per-gate layer
/// norm, the cell update and the normalized-cell output. Recorded as a single
/// op with a hand-written backward. Returns (h_new, c_new).
LstmState lstm_cell(const LstmParams& params, const LstmState& state,
                    const Tensor& x);

/// lstm_cell followed by zoneout on c and h. `x` is undefined for cells
/// without an additional input. `rng` is required in training mode.
LstmState lstm_step(const LstmParams& params, const LstmState& state,
                    const Tensor& x, const RegularizerConfig& reg, Rng* rng);

/// Training: per-unit Bernoulli(rate) mask m, m ⊙ prev + (1 − m) ⊙ next.
/// Evaluation: rate · prev + (1 − rate) · next.
Tensor zoneout_apply(const Tensor& prev, const Tensor& next, double rate,
                     bool training, Rng* rng);

/// Inverted dropout mask: 0 with probability 1 − keep, else 1/keep. All ones
/// outside training.
Tensor dropout_mask(const Shape& shape, double keep, bool training, Rng& rng);

/// x ⊙ dropout_mask(x.shape(), ...); returns x itself when nothing drops.
Tensor dropout(const Tensor& x, double keep, bool training, Rng* rng);

}  // namespace fsrnn

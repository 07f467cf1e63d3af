// Copyright 2026 The fsrnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fsrnn/cells.hpp"
#include "fsrnn/rng.hpp"
#include "fsrnn/tensor.hpp"

namespace fsrnn {

enum class ArchKind { fast_slow, stacked, sequential };

std::string to_string(ArchKind kind);
ArchKind parse_arch_kind(std::string_view text);

struct ArchitectureSpec {
  ArchKind kind = ArchKind::fast_slow;
  std::size_t k = 2;          // Fast cells for fast_slow, cells otherwise
  std::size_t fast_size = 0;  // fast_slow only
  std::size_t slow_size = 0;  // fast_slow only
  std::size_t cell_size = 0;  // stacked / sequential
  std::size_t vocab = 0;
  std::size_t embed_dim = 0;
  RegularizerConfig reg;
  LayerNormConfig ln;
  // Dropout on h^{F1} as it enters the Slow cell.
  bool dropout_slow_input = true;

  void validate() const;
  std::size_t top_width() const;
  std::size_t cell_count() const;
  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&);
};

/// Cell layout: fast_slow stores F1..Fk at indices 0..k-1 and the Slow cell
/// at index k; the other kinds store cells bottom to top.
struct ModelParams {
  Tensor embedding;  // [V × embed_dim]
  std::vector<LstmParams> cells;
  Tensor out_w;      // [V × top_width]
  Tensor out_b;      // [V]

  static ModelParams create(const ArchitectureSpec& spec, Rng& rng);

  std::vector<NamedTensor> named() const;
  std::vector<Tensor> tensors() const;
  std::size_t parameter_count() const;
  void zero_grad();
};

/// Carried recurrent state. fast_slow: [0] the shared Fast state, [1] Slow.
/// stacked: one state per layer. sequential: the single threaded state.
struct ModelState {
  std::vector<LstmState> states;

  static ModelState zeros(const ArchitectureSpec& spec, std::size_t lanes);
  ModelState detach() const;
  std::size_t lanes() const;
};

// Called with (cell index, output state) after every cell update; may
// replace the state, which is how probes read or perturb c_t.
using CellObserver = std::function<void(std::size_t, LstmState&)>;

struct StepContext {
  bool training = false;
  Rng* dropout_rng = nullptr;
  Rng* zoneout_rng = nullptr;
  CellObserver observer;
};

/// One FS-RNN time step: F1 ← (carried Fast state, embed(x)); S ← (Slow
/// state, h^{F1}); F2 ← (F1 state, h^S); F3..Fk chain without input. Logits
/// are an affine map of h^{Fk}, and Fk's state becomes the carried Fast state.
Tensor fs_step(const ArchitectureSpec& spec, const ModelParams& params,
               ModelState& state, std::span<const int> tokens,
               const StepContext& ctx);

/// Layer i consumes its own previous state and h of layer i − 1.
Tensor stacked_step(const ArchitectureSpec& spec, const ModelParams& params,
                    ModelState& state, std::span<const int> tokens,
                    const StepContext& ctx);

/// One (h, c) threaded through cells 1..k within the step; only cell 1 sees
/// the input.
Tensor sequential_step(const ArchitectureSpec& spec, const ModelParams& params,
                       ModelState& state, std::span<const int> tokens,
                       const StepContext& ctx);

Tensor model_step(const ArchitectureSpec& spec, const ModelParams& params,
                  ModelState& state, std::span<const int> tokens,
                  const StepContext& ctx);

/// Exact learnable-scalar count, from the spec alone.
std::size_t param_count(const ArchitectureSpec& spec);

/// Display label per cell index ("F1", "Slow", "Stacked-3", ...).
std::vector<std::string> cell_labels(const ArchitectureSpec& spec);

/// Op tag used for cell i on the recorded graph ("F1", "S", "L3", "C2").
std::string cell_tag(const ArchitectureSpec& spec, std::size_t cell);

}  // namespace fsrnn

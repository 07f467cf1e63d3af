// Copyright 2026 The fsrnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "fsrnn/graph.hpp"
#include "fsrnn/tensor.hpp"

namespace fsrnn {

// Differentiable primitives. Each op records a backward rule on the active
// graph when one of its inputs requires a gradient; otherwise it is a plain
// forward computation.

/// out = x Wᵀ + b for x of shape [n] or [B×n] and W of shape [m×n]. `b` may
/// be undefined (no bias) or a length-m vector broadcast over lanes.
Tensor affine(const Tensor& w, const Tensor& x, const Tensor& b);

enum class Elementwise { sigmoid, tanh, mul, add, sub };

Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b = {});
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);

/// Per-lane layer normalization over the last dimension with population
/// variance: gain ⊙ (x − mean) / sqrt(var + eps) + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

struct SoftmaxXent {
  Tensor loss;               // scalar, mean negative log-likelihood in nats
  Tensor probs;              // [B×V], not differentiable
  std::vector<double> nll;   // per-lane negative log-likelihood in nats
};

/// Max-subtracted softmax with cross-entropy against integer targets.
SoftmaxXent softmax_xent(const Tensor& logits, std::span<const int> targets);

/// m ⊙ prev + (1 − m) ⊙ next with a constant mask m.
Tensor blend(const Tensor& prev, const Tensor& next, const Tensor& mask);

/// Rows of `table` ([V×e]) selected by ids; out is [B×e].
Tensor embedding(const Tensor& table, std::span<const int> ids);

/// Columns [begin, end) of a matrix.
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);

Tensor sum(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor identity(const Tensor& a);

}  // namespace fsrnn

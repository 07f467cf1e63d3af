// Copyright 2026 The fsrnn Authors
// SPDX-License-Identifier: Apache-2.0

// Scalar-loop reference implementations and finite-difference helpers
// shared by the unit and acceptance tests. Nothing here touches the graph
// or Eigen; every quantity is recomputed with plain loops from raw buffers.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "fsrnn/architectures.hpp"
#include "fsrnn/cells.hpp"
#include "fsrnn/graph.hpp"
#include "fsrnn/rng.hpp"
#include "fsrnn/tensor.hpp"

namespace oracle {

using Vec = std::vector<double>;

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

inline Vec row(const fsrnn::Tensor& t, std::size_t r) {
  const std::size_t cols = t.cols();
  Vec out(cols);
  for (std::size_t j = 0; j < cols; ++j) out[j] = t.data()[r * cols + j];
  return out;
}

inline Vec matvec(const fsrnn::Tensor& w, const Vec& x) {
  const std::size_t rows = w.shape()[0];
  const std::size_t cols = w.shape()[1];
  Vec out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < cols; ++j) acc += w.data()[r * cols + j] * x[j];
    out[r] = acc;
  }
  return out;
}

inline Vec layer_norm(const Vec& x, const fsrnn::Tensor& gain, const fsrnn::Tensor& bias,
                      double eps) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  Vec out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    out[j] = gain.data()[j] * (x[j] - mean) / std::sqrt(var + eps) + bias.data()[j];
  }
  return out;
}

struct Cell {
  Vec h, c;
};

/// One LSTM cell update (no zoneout) on a single lane.
inline Cell lstm(const fsrnn::LstmParams& p, const Cell& prev, const Vec* x) {
  const std::size_t n = p.n_out;
  Vec a = matvec(p.w_h, prev.h);
  if (p.n_in > 0) {
    const Vec ax = matvec(p.w_x, *x);
    for (std::size_t j = 0; j < 4 * n; ++j) a[j] += ax[j];
  }
  for (std::size_t j = 0; j < 4 * n; ++j) a[j] += p.bias.data()[j];
  Vec gate[4];
  for (std::size_t q = 0; q < 4; ++q) {
    gate[q].assign(a.begin() + static_cast<std::ptrdiff_t>(q * n),
                   a.begin() + static_cast<std::ptrdiff_t>((q + 1) * n));
    if (p.ln.gates) gate[q] = layer_norm(gate[q], p.gate_gain[q], p.gate_bias[q], p.ln.eps);
  }
  Cell out{Vec(n), Vec(n)};
  for (std::size_t j = 0; j < n; ++j) {
    out.c[j] = sigmoid(gate[0][j]) * prev.c[j] + sigmoid(gate[1][j]) * std::tanh(gate[3][j]);
  }
  const Vec chat = p.ln.cell ? layer_norm(out.c, p.cell_gain, p.cell_bias, p.ln.eps) : out.c;
  for (std::size_t j = 0; j < n; ++j) out.h[j] = sigmoid(gate[2][j]) * std::tanh(chat[j]);
  if (p.ln.normalize_stored_cell) out.c = chat;
  return out;
}

/// Evaluation-mode zoneout: rate·prev + (1 − rate)·next.
inline Cell zoneout_eval(const Cell& prev, Cell next, double zc, double zh) {
  for (std::size_t j = 0; j < next.c.size(); ++j) {
    next.c[j] = zc * prev.c[j] + (1.0 - zc) * next.c[j];
    next.h[j] = zh * prev.h[j] + (1.0 - zh) * next.h[j];
  }
  return next;
}

inline Cell cell_step(const fsrnn::ArchitectureSpec& spec, const fsrnn::LstmParams& p,
                      const Cell& prev, const Vec* x) {
  return zoneout_eval(prev, lstm(p, prev, x), spec.reg.zoneout_c, spec.reg.zoneout_h);
}

/// Per-lane model state: fast_slow {Fast, Slow}; stacked one per layer;
/// sequential one.
using State = std::vector<Cell>;

inline State zero_state(const fsrnn::ArchitectureSpec& spec) {
  using fsrnn::ArchKind;
  if (spec.kind == ArchKind::fast_slow) {
    return {Cell{Vec(spec.fast_size, 0.0), Vec(spec.fast_size, 0.0)},
            Cell{Vec(spec.slow_size, 0.0), Vec(spec.slow_size, 0.0)}};
  }
  const std::size_t count = spec.kind == ArchKind::stacked ? spec.k : 1;
  return State(count, Cell{Vec(spec.cell_size, 0.0), Vec(spec.cell_size, 0.0)});
}

/// Evaluation-mode step of one lane; returns the logits. `cells` receives
/// every cell's output in storage order when non-null.
inline Vec model_step(const fsrnn::ArchitectureSpec& spec, const fsrnn::ModelParams& mp,
                      State& state, int token, std::vector<Cell>* cells = nullptr) {
  using fsrnn::ArchKind;
  const Vec e = row(mp.embedding, static_cast<std::size_t>(token));
  std::vector<Cell> out(spec.cell_count());
  Vec top;
  if (spec.kind == ArchKind::fast_slow) {
    const std::size_t k = spec.k;
    Cell f = cell_step(spec, mp.cells[0], state[0], &e);
    out[0] = f;
    const Cell s = cell_step(spec, mp.cells[k], state[1], &f.h);
    out[k] = s;
    f = cell_step(spec, mp.cells[1], f, &s.h);
    out[1] = f;
    for (std::size_t i = 2; i < k; ++i) {
      f = cell_step(spec, mp.cells[i], f, nullptr);
      out[i] = f;
    }
    state[0] = f;
    state[1] = s;
    top = f.h;
  } else if (spec.kind == ArchKind::stacked) {
    Vec input = e;
    for (std::size_t i = 0; i < spec.k; ++i) {
      state[i] = cell_step(spec, mp.cells[i], state[i], &input);
      out[i] = state[i];
      input = state[i].h;
    }
    top = input;
  } else {
    Cell s = cell_step(spec, mp.cells[0], state[0], &e);
    out[0] = s;
    for (std::size_t i = 1; i < spec.k; ++i) {
      s = cell_step(spec, mp.cells[i], s, nullptr);
      out[i] = s;
    }
    state[0] = s;
    top = s.h;
  }
  Vec logits = matvec(mp.out_w, top);
  for (std::size_t v = 0; v < logits.size(); ++v) logits[v] += mp.out_b.data()[v];
  if (cells) *cells = std::move(out);
  return logits;
}

inline double log_softmax_at(const Vec& logits, int target) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  return logits[static_cast<std::size_t>(target)] - mx - std::log(z);
}

/// Five-point central difference of f at `x[i]`.
inline double central_difference(const std::function<double()>& f, double& x, double h) {
  const double saved = x;
  auto at = [&](double d) {
    x = saved + d;
    return f();
  };
  const double d = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
  x = saved;
  return d;
}

inline double relative_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Fills every tensor with values from N(0, sd).
inline void randomize(std::vector<fsrnn::Tensor> tensors, fsrnn::Rng& rng, double sd) {
  for (auto& t : tensors)
    for (double& v : t.data()) v = rng.normal() * sd;
}

/// Largest relative error between tape gradients of `loss()` and five-point
/// central differences, over every coordinate of `inputs` (or every
/// `stride`-th one).
inline double gradient_error(const std::function<fsrnn::Tensor()>& loss,
                             std::vector<fsrnn::Tensor> inputs, std::size_t stride = 1,
                             double h = 1e-3, double floor = 1e-4) {
  for (auto& t : inputs) t.set_requires_grad().zero_grad();
  fsrnn::Graph graph;
  fsrnn::Tensor out;
  {
    fsrnn::GraphScope scope(graph);
    out = loss();
  }
  graph.backward(out);
  const std::function<double()> f = [&] { return loss().item(); };
  double worst = 0.0;
  std::size_t index = 0;
  for (auto& t : inputs) {
    auto grad = t.grad();
    auto data = t.data();
    for (std::size_t i = 0; i < data.size(); ++i, ++index) {
      if (index % stride != 0) continue;
      worst = std::max(worst, relative_error(grad[i], central_difference(f, data[i], h), floor));
    }
  }
  return worst;
}

}  // namespace oracle

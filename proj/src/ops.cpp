// Copyright 2026 The fsrnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsrnn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "fsrnn/errors.hpp"

namespace fsrnn {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;

ConstMapMat as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMapMat(t.data().data(), static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
}

MapMat as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MapMat(t.data().data(), static_cast<Eigen::Index>(rows),
                static_cast<Eigen::Index>(cols));
}

MapMat grad_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return MapMat(t.grad().data(), static_cast<Eigen::Index>(rows),
                static_cast<Eigen::Index>(cols));
}

double sigmoid_scalar(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

Tensor affine(const Tensor& w, const Tensor& x, const Tensor& b) {
  if (w.ndim() != 2) {
    throw DimensionError("affine: weight must be a matrix, got " +
                         shape_string(w.shape()));
  }
  const std::size_t m = w.shape()[0];
  const std::size_t n = w.shape()[1];
  const bool batched = x.ndim() == 2;
  if ((x.ndim() != 1 && !batched) || x.cols() != n) {
    throw DimensionError("affine: weight " + shape_string(w.shape()) +
                         " does not match input " + shape_string(x.shape()));
  }
  if (b.defined() && (b.ndim() != 1 || b.size() != m)) {
    throw DimensionError("affine: bias " + shape_string(b.shape()) +
                         " does not match weight " + shape_string(w.shape()));
  }
  const std::size_t lanes = batched ? x.shape()[0] : 1;
  Tensor out(batched ? Shape{lanes, m} : Shape{m});
  {
    auto o = as_matrix(out, lanes, m);
    o.noalias() = as_matrix(x, lanes, n) * as_matrix(w, m, n).transpose();
    if (b.defined()) {
      Eigen::Map<const Eigen::RowVectorXd> bias(b.data().data(),
                                                static_cast<Eigen::Index>(m));
      o.rowwise() += bias;
    }
  }
  if (should_record({&w, &x, &b})) {
    active_graph()->record(
        "affine", {w, x, b}, {out}, [w, x, b, out, lanes, m, n]() mutable {
          ConstMapMat dout(out.grad().data(), static_cast<Eigen::Index>(lanes),
                           static_cast<Eigen::Index>(m));
          if (w.requires_grad()) {
            grad_matrix(w, m, n).noalias() +=
                dout.transpose() * as_matrix(x, lanes, n);
          }
          if (x.requires_grad()) {
            grad_matrix(x, lanes, n).noalias() +=
                dout * as_matrix(w, m, n);
          }
          if (b.defined() && b.requires_grad()) {
            Eigen::Map<Eigen::RowVectorXd> db(b.grad().data(),
                                              static_cast<Eigen::Index>(m));
            db += dout.colwise().sum();
          }
        });
  }
  return out;
}

Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b) {
  const bool binary =
      op == Elementwise::mul || op == Elementwise::add || op == Elementwise::sub;
  if (binary) {
    if (!b.defined()) throw DimensionError("elementwise: binary op needs two inputs");
    require_same_shape(a, b, "elementwise");
  }
  Tensor out(a.shape());
  auto av = a.data();
  auto ov = out.data();
  const std::size_t n = av.size();
  switch (op) {
    case Elementwise::sigmoid:
      for (std::size_t i = 0; i < n; ++i) ov[i] = sigmoid_scalar(av[i]);
      break;
    case Elementwise::tanh:
      for (std::size_t i = 0; i < n; ++i) ov[i] = std::tanh(av[i]);
      break;
    case Elementwise::mul: {
      auto bv = b.data();
      for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i];
      break;
    }
    case Elementwise::add: {
      auto bv = b.data();
      for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
      break;
    }
    case Elementwise::sub: {
      auto bv = b.data();
      for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] - bv[i];
      break;
    }
  }
  if (should_record({&a, binary ? &b : nullptr})) {
    static constexpr const char* names[] = {"sigmoid", "tanh", "mul", "add", "sub"};
    std::vector<Tensor> inputs{a};
    if (binary) inputs.push_back(b);
    active_graph()->record(
        names[static_cast<int>(op)], std::move(inputs), {out},
        [op, a, b, out, n]() mutable {
          auto g = std::as_const(out).grad();
          auto o = std::as_const(out).data();
          if (a.requires_grad()) {
            auto ga = a.grad();
            switch (op) {
              case Elementwise::sigmoid:
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * o[i] * (1.0 - o[i]);
                break;
              case Elementwise::tanh:
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * (1.0 - o[i] * o[i]);
                break;
              case Elementwise::mul: {
                auto bv = std::as_const(b).data();
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bv[i];
                break;
              }
              case Elementwise::add:
              case Elementwise::sub:
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
                break;
            }
          }
          if (b.defined() && b.requires_grad()) {
            auto gb = b.grad();
            switch (op) {
              case Elementwise::mul: {
                auto av2 = std::as_const(a).data();
                for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * av2[i];
                break;
              }
              case Elementwise::add:
                for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
                break;
              case Elementwise::sub:
                for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
                break;
              default:
                break;
            }
          }
        });
  }
  return out;
}

Tensor sigmoid(const Tensor& a) { return elementwise(Elementwise::sigmoid, a); }
Tensor tanh(const Tensor& a) { return elementwise(Elementwise::tanh, a); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::mul, a, b); }
Tensor add(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::sub, a, b); }

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  if (x.size() == 0 || x.cols() == 0) {
    throw DimensionError("layer_norm: empty input");
  }
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  const std::size_t n = x.cols();
  const std::size_t lanes = x.size() / n;
  if (gain.size() != n || bias.size() != n) {
    throw DimensionError("layer_norm: gain " + shape_string(gain.shape()) +
                         " / bias " + shape_string(bias.shape()) +
                         " do not match input " + shape_string(x.shape()));
  }
  Tensor out(x.shape());
  Buffer xhat(x.size());
  Buffer inv_std(lanes);
  {
    auto xv = x.data();
    auto gv = gain.data();
    auto bv = bias.data();
    auto ov = out.data();
    for (std::size_t l = 0; l < lanes; ++l) {
      const double* row = xv.data() + l * n;
      double mean = 0.0;
      for (std::size_t j = 0; j < n; ++j) mean += row[j];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double d = row[j] - mean;
        var += d * d;
      }
      var /= static_cast<double>(n);
      const double inv = 1.0 / std::sqrt(var + eps);
      inv_std[l] = inv;
      for (std::size_t j = 0; j < n; ++j) {
        const double h = (row[j] - mean) * inv;
        xhat[l * n + j] = h;
        ov[l * n + j] = gv[j] * h + bv[j];
      }
    }
  }
  if (should_record({&x, &gain, &bias})) {
    active_graph()->record(
        "layer_norm", {x, gain, bias}, {out},
        [x, gain, bias, out, xhat = std::move(xhat),
         inv_std = std::move(inv_std), n, lanes]() mutable {
          auto g = std::as_const(out).grad();
          auto gv = std::as_const(gain).data();
          if (gain.requires_grad()) {
            auto gg = gain.grad();
            for (std::size_t l = 0; l < lanes; ++l)
              for (std::size_t j = 0; j < n; ++j) gg[j] += g[l * n + j] * xhat[l * n + j];
          }
          if (bias.requires_grad()) {
            auto gb = bias.grad();
            for (std::size_t l = 0; l < lanes; ++l)
              for (std::size_t j = 0; j < n; ++j) gb[j] += g[l * n + j];
          }
          if (x.requires_grad()) {
            auto gx = x.grad();
            for (std::size_t l = 0; l < lanes; ++l) {
              double mean_d = 0.0;
              double mean_dx = 0.0;
              for (std::size_t j = 0; j < n; ++j) {
                const double d = g[l * n + j] * gv[j];
                mean_d += d;
                mean_dx += d * xhat[l * n + j];
              }
              mean_d /= static_cast<double>(n);
              mean_dx /= static_cast<double>(n);
              for (std::size_t j = 0; j < n; ++j) {
                const double d = g[l * n + j] * gv[j];
                gx[l * n + j] +=
                    inv_std[l] * (d - mean_d - xhat[l * n + j] * mean_dx);
              }
            }
          }
        });
  }
  return out;
}

SoftmaxXent softmax_xent(const Tensor& logits, std::span<const int> targets) {
  const std::size_t vocab = logits.cols();
  const std::size_t lanes = logits.size() / vocab;
  if (targets.size() != lanes) {
    throw DimensionError("softmax_xent: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_string(logits.shape()));
  }
  SoftmaxXent result;
  result.probs = Tensor(Shape{lanes, vocab});
  result.nll.resize(lanes);
  auto lv = logits.data();
  auto pv = result.probs.data();
  double total = 0.0;
  for (std::size_t l = 0; l < lanes; ++l) {
    const int target = targets[l];
    if (target < 0 || static_cast<std::size_t>(target) >= vocab) {
      throw IndexError("softmax_xent: target " + std::to_string(target) +
                       " outside [0, " + std::to_string(vocab) + ")");
    }
    const double* row = lv.data() + l * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      const double e = std::exp(row[j] - mx);
      pv[l * vocab + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < vocab; ++j) pv[l * vocab + j] /= z;
    const double nll = std::log(z) - (row[target] - mx);
    result.nll[l] = nll;
    total += nll;
  }
  result.loss = Tensor::scalar(total / static_cast<double>(lanes));
  if (should_record({&logits})) {
    std::vector<int> tgt(targets.begin(), targets.end());
    Tensor probs = result.probs;
    Tensor loss = result.loss;
    active_graph()->record(
        "softmax_xent", {logits}, {loss},
        [logits, probs, loss, tgt = std::move(tgt), lanes, vocab]() mutable {
          const double g = std::as_const(loss).grad()[0] / static_cast<double>(lanes);
          auto gl = logits.grad();
          auto p = std::as_const(probs).data();
          for (std::size_t l = 0; l < lanes; ++l) {
            for (std::size_t j = 0; j < vocab; ++j) gl[l * vocab + j] += g * p[l * vocab + j];
            gl[l * vocab + static_cast<std::size_t>(tgt[l])] -= g;
          }
        });
  }
  return result;
}

Tensor blend(const Tensor& prev, const Tensor& next, const Tensor& mask) {
  require_same_shape(prev, next, "blend");
  require_same_shape(prev, mask, "blend mask");
  Tensor out(prev.shape());
  const std::size_t n = out.size();
  {
    auto p = prev.data();
    auto q = next.data();
    auto m = mask.data();
    auto o = out.data();
    for (std::size_t i = 0; i < n; ++i) o[i] = m[i] * p[i] + (1.0 - m[i]) * q[i];
  }
  if (should_record({&prev, &next})) {
    active_graph()->record("blend", {prev, next, mask}, {out},
                           [prev, next, mask, out, n]() mutable {
                             auto g = std::as_const(out).grad();
                             auto m = mask.data();
                             if (prev.requires_grad()) {
                               auto gp = prev.grad();
                               for (std::size_t i = 0; i < n; ++i) gp[i] += m[i] * g[i];
                             }
                             if (next.requires_grad()) {
                               auto gq = next.grad();
                               for (std::size_t i = 0; i < n; ++i) gq[i] += (1.0 - m[i]) * g[i];
                             }
                           });
  }
  return out;
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  if (table.ndim() != 2) {
    throw DimensionError("embedding: table must be a matrix, got " +
                         shape_string(table.shape()));
  }
  const std::size_t vocab = table.shape()[0];
  const std::size_t dim = table.shape()[1];
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError("embedding: id " + std::to_string(id) + " outside [0, " +
                       std::to_string(vocab) + ")");
    }
  }
  const std::size_t lanes = ids.size();
  Tensor out(Shape{lanes, dim});
  auto tv = table.data();
  auto ov = out.data();
  for (std::size_t l = 0; l < lanes; ++l) {
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[l]) * dim, dim,
                ov.data() + l * dim);
  }
  if (should_record({&table})) {
    std::vector<int> idv(ids.begin(), ids.end());
    active_graph()->record("embedding", {table}, {out},
                           [table, out, idv = std::move(idv), dim]() mutable {
                             auto g = std::as_const(out).grad();
                             auto gt = table.grad();
                             for (std::size_t l = 0; l < idv.size(); ++l) {
                               const std::size_t base = static_cast<std::size_t>(idv[l]) * dim;
                               for (std::size_t j = 0; j < dim; ++j) gt[base + j] += g[l * dim + j];
                             }
                           });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  const std::size_t cols = x.cols();
  if (begin >= end || end > cols) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") invalid for " +
                         shape_string(x.shape()));
  }
  const std::size_t rows = x.size() / cols;
  const std::size_t width = end - begin;
  Tensor out(x.ndim() == 2 ? Shape{rows, width} : Shape{width});
  auto xv = x.data();
  auto ov = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xv.data() + r * cols + begin, width, ov.data() + r * width);
  }
  if (should_record({&x})) {
    active_graph()->record("slice_cols", {x}, {out},
                           [x, out, rows, cols, begin, width]() mutable {
                             auto g = std::as_const(out).grad();
                             auto gx = x.grad();
                             for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t j = 0; j < width; ++j)
                                 gx[r * cols + begin + j] += g[r * width + j];
                           });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  Tensor out = Tensor::scalar(total);
  if (should_record({&a})) {
    active_graph()->record("sum", {a}, {out}, [a, out]() mutable {
      const double g = std::as_const(out).grad()[0];
      for (double& v : a.grad()) v += g;
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out(a.shape());
  auto av = a.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * factor;
  if (should_record({&a})) {
    active_graph()->record("scale", {a}, {out}, [a, out, factor]() mutable {
      auto g = std::as_const(out).grad();
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

Tensor identity(const Tensor& a) { return scale(a, 1.0); }

}  // namespace fsrnn

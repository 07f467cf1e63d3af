// Copyright 2026 The fsrnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsrnn/cells.hpp"

#include <Eigen/Core>
#include <cmath>

#include "fsrnn/errors.hpp"
#include "fsrnn/graph.hpp"
#include "fsrnn/init.hpp"
#include "fsrnn/ops.hpp"

namespace fsrnn {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

ConstMapMat view(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMapMat(t.data().data(), static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
}

MapMat grad_view(const Tensor& t, std::size_t rows, std::size_t cols) {
  return MapMat(t.grad().data(), static_cast<Eigen::Index>(rows),
                static_cast<Eigen::Index>(cols));
}

bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

// In-place normalization of `n` values; writes x̂ and returns 1/σ.
double normalize(const double* in, double* xhat, std::size_t n, double eps) {
  double mean = 0.0;
  for (std::size_t j = 0; j < n; ++j) mean += in[j];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double d = in[j] - mean;
    var += d * d;
  }
  var /= static_cast<double>(n);
  const double inv = 1.0 / std::sqrt(var + eps);
  for (std::size_t j = 0; j < n; ++j) xhat[j] = (in[j] - mean) * inv;
  return inv;
}

// Backward of y = γ x̂ + β for one lane. `dy` is overwritten by dx.
void normalize_backward(double* dy, const double* xhat, double inv,
                        const double* gain, double* dgain, double* dbias,
                        std::size_t n) {
  double mean_d = 0.0;
  double mean_dx = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (dgain) dgain[j] += dy[j] * xhat[j];
    if (dbias) dbias[j] += dy[j];
    dy[j] *= gain[j];
    mean_d += dy[j];
    mean_dx += dy[j] * xhat[j];
  }
  mean_d /= static_cast<double>(n);
  mean_dx /= static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j) {
    dy[j] = inv * (dy[j] - mean_d - xhat[j] * mean_dx);
  }
}

void check_lane_matrix(const Tensor& t, std::size_t width, const char* name) {
  if (t.ndim() != 2 || t.shape()[1] != width) {
    throw DimensionError(std::string("lstm_step: ") + name + " has shape " +
                         shape_string(t.shape()) + ", expected [B×" +
                         std::to_string(width) + "]");
  }
}

}  // namespace

void RegularizerConfig::validate() const {
  if (!(dropout_keep > 0.0 && dropout_keep <= 1.0)) {
    throw ConfigError("dropout keep probability must be in (0, 1], got " +
                      std::to_string(dropout_keep));
  }
  if (!is_probability(zoneout_c) || !is_probability(zoneout_h)) {
    throw ConfigError("zoneout rates must be in [0, 1]");
  }
}

LstmParams LstmParams::create(std::size_t n_in, std::size_t n_out,
                              const LayerNormConfig& ln, Rng& rng) {
  if (n_out == 0) throw ConfigError("LSTM width must be positive");
  LstmParams p;
  p.n_in = n_in;
  p.n_out = n_out;
  p.ln = ln;
  p.w_h = orthogonal_init(4 * n_out, n_out, rng).set_requires_grad();
  if (n_in > 0) p.w_x = orthogonal_init(4 * n_out, n_in, rng).set_requires_grad();
  p.bias = Tensor(Shape{4 * n_out});
  for (std::size_t j = 0; j < n_out; ++j) p.bias[j] = 1.0;  // forget slice
  p.bias.set_requires_grad();
  if (ln.gates) {
    for (std::size_t q = 0; q < 4; ++q) {
      p.gate_gain[q] = Tensor(Shape{n_out}, 1.0).set_requires_grad();
      p.gate_bias[q] = Tensor(Shape{n_out}, 0.0).set_requires_grad();
    }
  }
  if (ln.cell) {
    p.cell_gain = Tensor(Shape{n_out}, 1.0).set_requires_grad();
    p.cell_bias = Tensor(Shape{n_out}, 0.0).set_requires_grad();
  }
  return p;
}

std::vector<NamedTensor> LstmParams::named(const std::string& prefix) const {
  static constexpr const char* gate_names[] = {"f", "i", "o", "g"};
  std::vector<NamedTensor> out;
  out.emplace_back(prefix + ".w_h", w_h);
  if (w_x.defined()) out.emplace_back(prefix + ".w_x", w_x);
  out.emplace_back(prefix + ".b", bias);
  for (std::size_t q = 0; q < 4; ++q) {
    if (gate_gain[q].defined()) {
      out.emplace_back(prefix + ".ln_" + gate_names[q] + ".gain", gate_gain[q]);
      out.emplace_back(prefix + ".ln_" + gate_names[q] + ".bias", gate_bias[q]);
    }
  }
  if (cell_gain.defined()) {
    out.emplace_back(prefix + ".ln_cell.gain", cell_gain);
    out.emplace_back(prefix + ".ln_cell.bias", cell_bias);
  }
  return out;
}

std::size_t LstmParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named("")) n += t.size();
  return n;
}

LstmState LstmState::zeros(std::size_t lanes, std::size_t width) {
  return {Tensor(Shape{lanes, width}), Tensor(Shape{lanes, width})};
}

LstmState lstm_cell(const LstmParams& params, const LstmState& state,
                    const Tensor& x) {
  const std::size_t n = params.n_out;
  const std::size_t gw = 4 * n;
  check_lane_matrix(state.h, n, "h");
  check_lane_matrix(state.c, n, "c");
  const std::size_t lanes = state.h.shape()[0];
  if (state.c.shape()[0] != lanes) {
    throw DimensionError("lstm_step: h " + shape_string(state.h.shape()) +
                         " and c " + shape_string(state.c.shape()) + " differ");
  }
  if (params.n_in > 0) {
    if (!x.defined()) throw DimensionError("lstm_step: missing input x");
    check_lane_matrix(x, params.n_in, "x");
    if (x.shape()[0] != lanes) {
      throw DimensionError("lstm_step: x " + shape_string(x.shape()) +
                           " has a different lane count than h " +
                           shape_string(state.h.shape()));
    }
  } else if (x.defined()) {
    throw DimensionError("lstm_step: cell takes no input but x " +
                         shape_string(x.shape()) + " was given");
  }
  const LayerNormConfig& ln = params.ln;

  // Preactivations.
  Buffer pre(lanes * gw);
  {
    MapMat a(pre.data(), static_cast<Eigen::Index>(lanes),
             static_cast<Eigen::Index>(gw));
    a.noalias() = view(state.h, lanes, n) * view(params.w_h, gw, n).transpose();
    if (params.n_in > 0) {
      a.noalias() += view(x, lanes, params.n_in) *
                     view(params.w_x, gw, params.n_in).transpose();
    }
    Eigen::Map<const Eigen::RowVectorXd> b(params.bias.data().data(),
                                           static_cast<Eigen::Index>(gw));
    a.rowwise() += b;
  }

  Buffer gate_xhat;   // [B×4n] when gate LN is on
  Buffer gate_inv;    // [B×4]
  Buffer act(lanes * gw);
  Buffer cell_xhat;   // [B×n] when cell LN is on
  Buffer cell_inv;    // [B]
  Buffer tc(lanes * n);
  Tensor h_new(Shape{lanes, n});
  Tensor c_new(Shape{lanes, n});
  if (ln.gates) {
    gate_xhat.resize(lanes * gw);
    gate_inv.resize(lanes * 4);
  }
  if (ln.cell) {
    cell_xhat.resize(lanes * n);
    cell_inv.resize(lanes);
  }
  using RowArr = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto rows = static_cast<Eigen::Index>(lanes);
  const auto ni = static_cast<Eigen::Index>(n);
  if (ln.gates) {
    for (std::size_t l = 0; l < lanes; ++l) {
      double* a = pre.data() + l * gw;
      for (std::size_t q = 0; q < 4; ++q) {
        double* xh = gate_xhat.data() + l * gw + q * n;
        gate_inv[l * 4 + q] = normalize(a + q * n, xh, n, ln.eps);
        auto g = params.gate_gain[q].data();
        auto b = params.gate_bias[q].data();
        for (std::size_t j = 0; j < n; ++j) a[q * n + j] = g[j] * xh[j] + b[j];
      }
    }
  }
  {
    Eigen::Map<const RowArr> a(pre.data(), rows, 4 * ni);
    Eigen::Map<RowArr> s(act.data(), rows, 4 * ni);
    s.leftCols(3 * ni) = 1.0 / (1.0 + (-a.leftCols(3 * ni)).exp());
    s.rightCols(ni) = 1.0 - 2.0 / ((2.0 * a.rightCols(ni)).exp() + 1.0);
  }
  Buffer chat(lanes * n);
  {
    auto cp = state.c.data();
    auto cv = c_new.data();
    for (std::size_t l = 0; l < lanes; ++l) {
      const double* s = act.data() + l * gw;
      const double* sf = s;
      const double* si = s + n;
      const double* tg = s + 3 * n;
      double* c_out = cv.data() + l * n;
      double* ch = chat.data() + l * n;
      for (std::size_t j = 0; j < n; ++j) {
        c_out[j] = sf[j] * cp[l * n + j] + si[j] * tg[j];
      }
      if (ln.cell) {
        double* xh = cell_xhat.data() + l * n;
        cell_inv[l] = normalize(c_out, xh, n, ln.eps);
        auto g = params.cell_gain.data();
        auto b = params.cell_bias.data();
        for (std::size_t j = 0; j < n; ++j) ch[j] = g[j] * xh[j] + b[j];
      } else {
        std::copy_n(c_out, n, ch);
      }
    }
    Eigen::Map<const RowArr> c_hat(chat.data(), rows, ni);
    Eigen::Map<RowArr> t(tc.data(), rows, ni);
    t = 1.0 - 2.0 / ((2.0 * c_hat).exp() + 1.0);
    Eigen::Map<const RowArr, 0, Eigen::OuterStride<>> so(act.data() + 2 * n, rows, ni,
                                                         Eigen::OuterStride<>(4 * ni));
    Eigen::Map<RowArr>(h_new.data().data(), rows, ni) = so * t;
    if (ln.normalize_stored_cell) std::copy(chat.begin(), chat.end(), cv.begin());
  }

  std::vector<const Tensor*> inputs{&params.w_h, &params.bias, &state.h, &state.c};
  if (params.n_in > 0) inputs.push_back(&params.w_x);
  if (params.n_in > 0) inputs.push_back(&x);
  bool record = false;
  if (active_graph() != nullptr) {
    for (const Tensor* t : inputs) record = record || t->requires_grad();
    for (std::size_t q = 0; q < 4 && ln.gates; ++q)
      record = record || params.gate_gain[q].requires_grad() ||
               params.gate_bias[q].requires_grad();
    if (ln.cell)
      record = record || params.cell_gain.requires_grad() ||
               params.cell_bias.requires_grad();
  }
  if (!record) return {h_new, c_new};

  std::vector<Tensor> in_list{params.w_h, params.bias, state.h, state.c};
  if (params.n_in > 0) {
    in_list.push_back(params.w_x);
    in_list.push_back(x);
  }
  for (std::size_t q = 0; q < 4 && ln.gates; ++q) {
    in_list.push_back(params.gate_gain[q]);
    in_list.push_back(params.gate_bias[q]);
  }
  if (ln.cell) {
    in_list.push_back(params.cell_gain);
    in_list.push_back(params.cell_bias);
  }

  active_graph()->record(
      "lstm_cell", in_list, {h_new, c_new},
      [params, h_prev = state.h, c_prev = state.c, x, h_new, c_new, lanes, n,
       gw, gate_xhat = std::move(gate_xhat), gate_inv = std::move(gate_inv),
       act = std::move(act), cell_xhat = std::move(cell_xhat),
       cell_inv = std::move(cell_inv), tc = std::move(tc)]() mutable {
        const LayerNormConfig& ln = params.ln;
        const bool has_dh = h_new.has_grad();
        const bool has_dc = c_new.has_grad();
        std::span<const double> dh;
        std::span<const double> dcs;
        if (has_dh) dh = std::as_const(h_new).grad();
        if (has_dc) dcs = std::as_const(c_new).grad();
        auto cp = std::as_const(c_prev).data();

        Buffer da(lanes * gw);
        Buffer dchat(n);
        Buffer dcn(n);
        double* dcg = ln.cell && params.cell_gain.requires_grad()
                          ? params.cell_gain.grad().data() : nullptr;
        double* dcb = ln.cell && params.cell_bias.requires_grad()
                          ? params.cell_bias.grad().data() : nullptr;
        double* dcp = c_prev.requires_grad() ? c_prev.grad().data() : nullptr;

        for (std::size_t l = 0; l < lanes; ++l) {
          const double* s = act.data() + l * gw;
          const double* sf = s;
          const double* si = s + n;
          const double* so = s + 2 * n;
          const double* tg = s + 3 * n;
          double* d = da.data() + l * gw;
          for (std::size_t j = 0; j < n; ++j) {
            const double t = tc[l * n + j];
            const double g = has_dh ? dh[l * n + j] : 0.0;
            dchat[j] = g * so[j] * (1.0 - t * t);
            d[2 * n + j] = g * t * so[j] * (1.0 - so[j]);  // output gate
          }
          if (ln.normalize_stored_cell && has_dc) {
            for (std::size_t j = 0; j < n; ++j) dchat[j] += dcs[l * n + j];
          }
          if (ln.cell) {
            normalize_backward(dchat.data(), cell_xhat.data() + l * n,
                               cell_inv[l], params.cell_gain.data().data(),
                               dcg, dcb, n);
          }
          for (std::size_t j = 0; j < n; ++j) {
            dcn[j] = dchat[j];
            if (!ln.normalize_stored_cell && has_dc) dcn[j] += dcs[l * n + j];
          }
          for (std::size_t j = 0; j < n; ++j) {
            const double g = dcn[j];
            d[j] = g * cp[l * n + j] * sf[j] * (1.0 - sf[j]);
            d[n + j] = g * tg[j] * si[j] * (1.0 - si[j]);
            d[3 * n + j] = g * si[j] * (1.0 - tg[j] * tg[j]);
            if (dcp) dcp[l * n + j] += g * sf[j];
          }
          if (ln.gates) {
            for (std::size_t q = 0; q < 4; ++q) {
              double* dgg = params.gate_gain[q].requires_grad()
                                ? params.gate_gain[q].grad().data() : nullptr;
              double* dgb = params.gate_bias[q].requires_grad()
                                ? params.gate_bias[q].grad().data() : nullptr;
              normalize_backward(d + q * n, gate_xhat.data() + l * gw + q * n,
                                 gate_inv[l * 4 + q],
                                 params.gate_gain[q].data().data(), dgg, dgb, n);
            }
          }
        }

        ConstMapMat dA(da.data(), static_cast<Eigen::Index>(lanes),
                       static_cast<Eigen::Index>(gw));
        if (params.w_h.requires_grad()) {
          Tensor w = params.w_h;
          grad_view(w, gw, n).noalias() += dA.transpose() * view(h_prev, lanes, n);
        }
        if (h_prev.requires_grad()) {
          grad_view(h_prev, lanes, n).noalias() += dA * view(params.w_h, gw, n);
        }
        if (params.n_in > 0) {
          if (params.w_x.requires_grad()) {
            Tensor w = params.w_x;
            grad_view(w, gw, params.n_in).noalias() +=
                dA.transpose() * view(x, lanes, params.n_in);
          }
          if (x.requires_grad()) {
            grad_view(x, lanes, params.n_in).noalias() +=
                dA * view(params.w_x, gw, params.n_in);
          }
        }
        if (params.bias.requires_grad()) {
          Tensor b = params.bias;
          Eigen::Map<Eigen::RowVectorXd> db(b.grad().data(),
                                            static_cast<Eigen::Index>(gw));
          db += dA.colwise().sum();
        }
      });
  return {h_new, c_new};
}

LstmState lstm_step(const LstmParams& params, const LstmState& state,
                    const Tensor& x, const RegularizerConfig& reg, Rng* rng) {
  LstmState next = lstm_cell(params, state, x);
  next.c = zoneout_apply(state.c, next.c, reg.zoneout_c, reg.training, rng);
  next.h = zoneout_apply(state.h, next.h, reg.zoneout_h, reg.training, rng);
  return next;
}

Tensor zoneout_apply(const Tensor& prev, const Tensor& next, double rate,
                     bool training, Rng* rng) {
  require_same_shape(prev, next, "zoneout");
  if (!is_probability(rate)) {
    throw ConfigError("zoneout rate must be in [0, 1], got " + std::to_string(rate));
  }
  if (rate == 0.0) return next;
  Tensor mask(prev.shape());
  auto m = mask.data();
  if (training) {
    if (rng == nullptr) throw ConfigError("zoneout in training mode needs an RNG");
    for (double& v : m) v = rng->bernoulli(rate) ? 1.0 : 0.0;
  } else {
    for (double& v : m) v = rate;
  }
  return blend(prev, next, mask);
}

Tensor dropout_mask(const Shape& shape, double keep, bool training, Rng& rng) {
  if (!(keep > 0.0 && keep <= 1.0)) {
    throw ConfigError("dropout keep probability must be in (0, 1], got " +
                      std::to_string(keep));
  }
  Tensor mask(shape, 1.0);
  if (!training || keep == 1.0) return mask;
  const double scale = 1.0 / keep;
  for (double& v : mask.data()) v = rng.bernoulli(keep) ? scale : 0.0;
  return mask;
}

Tensor dropout(const Tensor& x, double keep, bool training, Rng* rng) {
  if (!(keep > 0.0 && keep <= 1.0)) {
    throw ConfigError("dropout keep probability must be in (0, 1], got " +
                      std::to_string(keep));
  }
  if (!training || keep == 1.0) return x;
  if (rng == nullptr) throw ConfigError("dropout in training mode needs an RNG");
  return mul(x, dropout_mask(x.shape(), keep, training, *rng));
}

}  // namespace fsrnn

// Copyright 2026 The fsrnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsrnn/architectures.hpp"

#include "fsrnn/errors.hpp"
#include "fsrnn/graph.hpp"
#include "fsrnn/init.hpp"
#include "fsrnn/ops.hpp"

namespace fsrnn {

std::string to_string(ArchKind kind) {
  switch (kind) {
    case ArchKind::fast_slow: return "fast_slow";
    case ArchKind::stacked: return "stacked";
    case ArchKind::sequential: return "sequential";
  }
  return "?";
}

ArchKind parse_arch_kind(std::string_view text) {
  if (text == "fast_slow") return ArchKind::fast_slow;
  if (text == "stacked") return ArchKind::stacked;
  if (text == "sequential") return ArchKind::sequential;
  throw ConfigError("unknown architecture kind '" + std::string(text) + "'");
}

void ArchitectureSpec::validate() const {
  if (vocab == 0) throw ConfigError("vocabulary size must be positive");
  if (embed_dim == 0) throw ConfigError("embedding size must be positive");
  if (kind == ArchKind::fast_slow) {
    if (k < 2) {
      throw ConfigError("fast_slow needs at least 2 Fast cells, got k=" +
                        std::to_string(k));
    }
    if (fast_size == 0 || slow_size == 0) {
      throw ConfigError("fast_slow needs positive fast_size and slow_size");
    }
  } else {
    if (k < 1) throw ConfigError("at least one cell is required");
    if (cell_size == 0) throw ConfigError("cell_size must be positive");
  }
  reg.validate();
  if (!(ln.eps > 0.0)) throw ConfigError("layer norm eps must be positive");
}

std::size_t ArchitectureSpec::top_width() const {
  return kind == ArchKind::fast_slow ? fast_size : cell_size;
}

std::size_t ArchitectureSpec::cell_count() const {
  return kind == ArchKind::fast_slow ? k + 1 : k;
}

bool operator==(const ArchitectureSpec& a, const ArchitectureSpec& b) {
  return a.kind == b.kind && a.k == b.k && a.fast_size == b.fast_size &&
         a.slow_size == b.slow_size && a.cell_size == b.cell_size &&
         a.vocab == b.vocab && a.embed_dim == b.embed_dim &&
         a.reg.dropout_keep == b.reg.dropout_keep &&
         a.reg.zoneout_c == b.reg.zoneout_c &&
         a.reg.zoneout_h == b.reg.zoneout_h && a.ln.gates == b.ln.gates &&
         a.ln.cell == b.ln.cell &&
         a.ln.normalize_stored_cell == b.ln.normalize_stored_cell &&
         a.ln.eps == b.ln.eps && a.dropout_slow_input == b.dropout_slow_input;
}

namespace {

// (n_in, n_out) for every cell in storage order.
std::vector<std::pair<std::size_t, std::size_t>> cell_shapes(
    const ArchitectureSpec& spec) {
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  switch (spec.kind) {
    case ArchKind::fast_slow:
      shapes.emplace_back(spec.embed_dim, spec.fast_size);   // F1
      shapes.emplace_back(spec.slow_size, spec.fast_size);   // F2 ← h^S
      for (std::size_t i = 2; i < spec.k; ++i) shapes.emplace_back(0, spec.fast_size);
      shapes.emplace_back(spec.fast_size, spec.slow_size);   // S ← h^{F1}
      break;
    case ArchKind::stacked:
      for (std::size_t i = 0; i < spec.k; ++i)
        shapes.emplace_back(i == 0 ? spec.embed_dim : spec.cell_size, spec.cell_size);
      break;
    case ArchKind::sequential:
      for (std::size_t i = 0; i < spec.k; ++i)
        shapes.emplace_back(i == 0 ? spec.embed_dim : 0, spec.cell_size);
      break;
  }
  return shapes;
}

LstmState run_cell(const ArchitectureSpec& spec, const ModelParams& params,
                   std::size_t cell, const LstmState& state, const Tensor& x,
                   const StepContext& ctx) {
  RegularizerConfig reg = spec.reg;
  reg.training = ctx.training;
  LstmState out = lstm_step(params.cells[cell], state, x, reg, ctx.zoneout_rng);
  if (ctx.observer) ctx.observer(cell, out);
  return out;
}

Tensor drop(const ArchitectureSpec& spec, const Tensor& x, const StepContext& ctx) {
  return dropout(x, spec.reg.dropout_keep, ctx.training, ctx.dropout_rng);
}

Tensor embed(const ModelParams& params, std::span<const int> tokens) {
  TagScope tag("embed");
  return embedding(params.embedding, tokens);
}

Tensor project(const ArchitectureSpec& spec, const ModelParams& params,
               const Tensor& top, const StepContext& ctx) {
  TagScope tag("out");
  return affine(params.out_w, drop(spec, top, ctx), params.out_b);
}

void check_state(const ArchitectureSpec& spec, const ModelState& state,
                 std::size_t lanes) {
  const std::size_t expected = spec.kind == ArchKind::fast_slow ? 2
                               : spec.kind == ArchKind::stacked ? spec.k
                                                                : 1;
  if (state.states.size() != expected) {
    throw DimensionError("model state holds " + std::to_string(state.states.size()) +
                         " cell states, architecture needs " + std::to_string(expected));
  }
  if (state.lanes() != lanes) {
    throw DimensionError("model state has " + std::to_string(state.lanes()) +
                         " lanes but " + std::to_string(lanes) + " tokens were given");
  }
}

}  // namespace

ModelParams ModelParams::create(const ArchitectureSpec& spec, Rng& rng) {
  spec.validate();
  ModelParams p;
  p.embedding = orthogonal_init(spec.vocab, spec.embed_dim, rng).set_requires_grad();
  for (auto [n_in, n_out] : cell_shapes(spec)) {
    p.cells.push_back(LstmParams::create(n_in, n_out, spec.ln, rng));
  }
  p.out_w = orthogonal_init(spec.vocab, spec.top_width(), rng).set_requires_grad();
  p.out_b = Tensor(Shape{spec.vocab}).set_requires_grad();
  return p;
}

std::vector<NamedTensor> ModelParams::named() const {
  std::vector<NamedTensor> out;
  out.emplace_back("embedding", embedding);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    auto cell = cells[i].named("cell" + std::to_string(i));
    out.insert(out.end(), cell.begin(), cell.end());
  }
  out.emplace_back("output.w", out_w);
  out.emplace_back("output.b", out_b);
  return out;
}

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named()) n += t.size();
  return n;
}

void ModelParams::zero_grad() {
  for (auto& t : tensors()) t.zero_grad();
}

ModelState ModelState::zeros(const ArchitectureSpec& spec, std::size_t lanes) {
  ModelState s;
  switch (spec.kind) {
    case ArchKind::fast_slow:
      s.states.push_back(LstmState::zeros(lanes, spec.fast_size));
      s.states.push_back(LstmState::zeros(lanes, spec.slow_size));
      break;
    case ArchKind::stacked:
      for (std::size_t i = 0; i < spec.k; ++i)
        s.states.push_back(LstmState::zeros(lanes, spec.cell_size));
      break;
    case ArchKind::sequential:
      s.states.push_back(LstmState::zeros(lanes, spec.cell_size));
      break;
  }
  return s;
}

ModelState ModelState::detach() const {
  ModelState s;
  for (const auto& st : states) s.states.push_back(st.detach());
  return s;
}

std::size_t ModelState::lanes() const {
  return states.empty() ? 0 : states.front().h.shape()[0];
}

Tensor fs_step(const ArchitectureSpec& spec, const ModelParams& params,
               ModelState& state, std::span<const int> tokens,
               const StepContext& ctx) {
  if (spec.kind != ArchKind::fast_slow || spec.k < 2) {
    throw ConfigError("fs_step needs a fast_slow spec with k >= 2");
  }
  check_state(spec, state, tokens.size());
  const std::size_t slow = spec.k;
  const Tensor x = embed(params, tokens);

  LstmState fast;
  Tensor h_f1;
  {
    TagScope tag(cell_tag(spec, 0));
    fast = run_cell(spec, params, 0, state.states[0], drop(spec, x, ctx), ctx);
    h_f1 = fast.h;
  }
  {
    TagScope tag(cell_tag(spec, slow));
    Tensor in = spec.dropout_slow_input ? drop(spec, h_f1, ctx) : h_f1;
    state.states[1] = run_cell(spec, params, slow, state.states[1], in, ctx);
  }
  {
    TagScope tag(cell_tag(spec, 1));
    fast = run_cell(spec, params, 1, fast, drop(spec, state.states[1].h, ctx), ctx);
  }
  for (std::size_t i = 2; i < spec.k; ++i) {
    TagScope tag(cell_tag(spec, i));
    fast = run_cell(spec, params, i, fast, Tensor{}, ctx);
  }
  state.states[0] = fast;
  return project(spec, params, fast.h, ctx);
}

Tensor stacked_step(const ArchitectureSpec& spec, const ModelParams& params,
                    ModelState& state, std::span<const int> tokens,
                    const StepContext& ctx) {
  if (spec.kind != ArchKind::stacked) throw ConfigError("stacked_step needs a stacked spec");
  check_state(spec, state, tokens.size());
  Tensor below = embed(params, tokens);
  for (std::size_t i = 0; i < spec.k; ++i) {
    TagScope tag(cell_tag(spec, i));
    state.states[i] = run_cell(spec, params, i, state.states[i], drop(spec, below, ctx), ctx);
    below = state.states[i].h;
  }
  return project(spec, params, below, ctx);
}

Tensor sequential_step(const ArchitectureSpec& spec, const ModelParams& params,
                       ModelState& state, std::span<const int> tokens,
                       const StepContext& ctx) {
  if (spec.kind != ArchKind::sequential) {
    throw ConfigError("sequential_step needs a sequential spec");
  }
  check_state(spec, state, tokens.size());
  const Tensor x = embed(params, tokens);
  LstmState s = state.states[0];
  for (std::size_t i = 0; i < spec.k; ++i) {
    TagScope tag(cell_tag(spec, i));
    s = run_cell(spec, params, i, s, i == 0 ? drop(spec, x, ctx) : Tensor{}, ctx);
  }
  state.states[0] = s;
  return project(spec, params, s.h, ctx);
}

Tensor model_step(const ArchitectureSpec& spec, const ModelParams& params,
                  ModelState& state, std::span<const int> tokens,
                  const StepContext& ctx) {
  switch (spec.kind) {
    case ArchKind::fast_slow: return fs_step(spec, params, state, tokens, ctx);
    case ArchKind::stacked: return stacked_step(spec, params, state, tokens, ctx);
    case ArchKind::sequential: return sequential_step(spec, params, state, tokens, ctx);
  }
  throw ConfigError("unknown architecture");
}

std::size_t param_count(const ArchitectureSpec& spec) {
  spec.validate();
  std::size_t total = spec.vocab * spec.embed_dim;
  const std::size_t ln_per_width =
      (spec.ln.gates ? 8 : 0) + (spec.ln.cell ? 2 : 0);
  for (auto [n_in, n_out] : cell_shapes(spec)) {
    total += 4 * n_out * n_out + 4 * n_out * n_in + 4 * n_out + ln_per_width * n_out;
  }
  total += spec.vocab * spec.top_width() + spec.vocab;
  return total;
}

std::vector<std::string> cell_labels(const ArchitectureSpec& spec) {
  std::vector<std::string> labels;
  switch (spec.kind) {
    case ArchKind::fast_slow:
      for (std::size_t i = 0; i < spec.k; ++i) labels.push_back("F" + std::to_string(i + 1));
      labels.push_back("Slow");
      break;
    case ArchKind::stacked:
      for (std::size_t i = 0; i < spec.k; ++i)
        labels.push_back("Stacked-" + std::to_string(i + 1));
      break;
    case ArchKind::sequential:
      for (std::size_t i = 0; i < spec.k; ++i)
        labels.push_back("Sequential-" + std::to_string(i + 1));
      break;
  }
  return labels;
}

std::string cell_tag(const ArchitectureSpec& spec, std::size_t cell) {
  switch (spec.kind) {
    case ArchKind::fast_slow:
      return cell == spec.k ? "S" : "F" + std::to_string(cell + 1);
    case ArchKind::stacked: return "L" + std::to_string(cell + 1);
    case ArchKind::sequential: return "C" + std::to_string(cell + 1);
  }
  return "?";
}

}  // namespace fsrnn

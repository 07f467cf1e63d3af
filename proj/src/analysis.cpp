// Copyright 2026 The fsrnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsrnn/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <mutex>
#include <thread>

#include "fsrnn/errors.hpp"
#include "fsrnn/graph.hpp"
#include "fsrnn/ops.hpp"

namespace fsrnn {

namespace {

ModelParams frozen_copy(const ModelParams& params) {
  ModelParams out = copy_params(params);
  for (Tensor& t : out.tensors()) t.set_requires_grad(false);
  return out;
}

// Runs fn(i) for i in [0, n) on up to worker_threads() threads.
template <typename Fn>
void parallel_for(std::size_t n, Fn fn) {
  const std::size_t workers = std::min(n, worker_threads());
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mutex;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

void check_model(const ModelRef& m) {
  if (m.spec == nullptr || m.params == nullptr) {
    throw ConfigError("model '" + m.name + "' is not loaded");
  }
}

}  // namespace

ModelRef model_ref(const Checkpoint& checkpoint, std::string name) {
  return ModelRef{std::move(name), &checkpoint.spec, &checkpoint.params};
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("FSRNN_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<std::size_t> analyzed_cells(const ArchitectureSpec& spec) {
  if (spec.kind == ArchKind::sequential) return {0};
  std::vector<std::size_t> cells(spec.cell_count());
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = i;
  return cells;
}

std::vector<std::vector<Tensor>> cell_state_gradients(const ArchitectureSpec& spec,
                                                      const ModelParams& params,
                                                      std::span<const int> inputs,
                                                      std::span<const int> targets,
                                                      std::size_t lanes) {
  if (lanes == 0 || inputs.size() % lanes != 0 || targets.size() != lanes) {
    throw DimensionError("cell_state_gradients: inputs/targets do not match lane count");
  }
  const std::size_t steps = inputs.size() / lanes;
  if (steps == 0) throw DimensionError("cell_state_gradients: empty window");
  const ModelParams frozen = frozen_copy(params);
  ModelState state = ModelState::zeros(spec, lanes);
  for (auto& s : state.states) {
    s.h.set_requires_grad();
    s.c.set_requires_grad();
  }
  std::vector<std::vector<Tensor>> cells(spec.cell_count(), std::vector<Tensor>(steps));
  Graph graph;
  SoftmaxXent last;
  {
    GraphScope scope(graph);
    std::size_t step = 0;
    StepContext ctx;
    ctx.observer = [&](std::size_t cell, LstmState& out) { cells[cell][step] = out.c; };
    std::vector<int> column(lanes);
    Tensor logits;
    for (; step < steps; ++step) {
      for (std::size_t l = 0; l < lanes; ++l) column[l] = inputs[l * steps + step];
      logits = model_step(spec, frozen, state, column, ctx);
    }
    last = softmax_xent(logits, targets);
  }
  // The loss is a lane mean; seeding with B turns it into the per-lane sum.
  const double seed = static_cast<double>(lanes);
  graph.backward(last.loss, std::span<const double>(&seed, 1));
  std::vector<std::vector<Tensor>> grads(spec.cell_count());
  for (std::size_t c = 0; c < cells.size(); ++c) {
    for (std::size_t s = 0; s < steps; ++s) {
      const Tensor& t = cells[c][s];
      Tensor g(t.shape());
      if (t.has_grad()) {
        auto src = t.grad();
        std::copy(src.begin(), src.end(), g.data().begin());
      }
      grads[c].push_back(g);
    }
  }
  return grads;
}

std::size_t ProbeReport::layer_index(const std::string& label) const {
  auto it = std::find(layers.begin(), layers.end(), label);
  if (it == layers.end()) throw IndexError("probe report has no layer '" + label + "'");
  return static_cast<std::size_t>(it - layers.begin());
}

void ProbeReport::write_csv(std::ostream& out) const {
  out << "layer,lag,mean_norm,samples\n";
  out << std::setprecision(12);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (std::size_t k = 0; k <= max_lag; ++k) {
      out << layers[l] << ',' << k << ',' << mean_norm[l][k] << ',' << samples << '\n';
    }
  }
}

ProbeReport gradient_probe(const ArchitectureSpec& spec, const ModelParams& params,
                           std::span<const int> tokens, const ProbeOptions& options) {
  if (options.window <= options.max_lag) {
    throw ConfigError("probe window (" + std::to_string(options.window) +
                      ") must exceed max lag (" + std::to_string(options.max_lag) + ")");
  }
  if (options.samples == 0 || options.lanes == 0) {
    throw ConfigError("probe needs at least one sample and one lane");
  }
  if (tokens.size() < options.window + 1) {
    throw DataError("probe window " + std::to_string(options.window) +
                    " is too long for a split of " + std::to_string(tokens.size()) +
                    " tokens");
  }
  ProbeReport report;
  report.max_lag = options.max_lag;
  report.samples = options.samples;
  report.window = options.window;
  const auto cells = analyzed_cells(spec);
  const auto labels = cell_labels(spec);
  for (std::size_t c : cells) report.layers.push_back(labels[c]);

  // Anchor t predicts token t + 1 from inputs [t − window + 1, t].
  const std::size_t first = options.window - 1;
  const std::size_t span = tokens.size() - options.window;  // anchors available
  const double spacing = static_cast<double>(span) / static_cast<double>(options.samples);
  Rng rng(options.seed, RngStream::probe);
  const double offset = rng.uniform() * spacing;
  for (std::size_t j = 0; j < options.samples; ++j) {
    auto a = first + static_cast<std::size_t>(offset + spacing * static_cast<double>(j));
    report.anchors.push_back(std::min(a, tokens.size() - 2));
  }

  report.norms.assign(cells.size(), std::vector<std::vector<double>>(
                                        options.max_lag + 1,
                                        std::vector<double>(options.samples, 0.0)));
  const std::size_t w = options.window;
  for (std::size_t begin = 0; begin < options.samples; begin += options.lanes) {
    const std::size_t lanes = std::min(options.lanes, options.samples - begin);
    std::vector<int> inputs(lanes * w);
    std::vector<int> targets(lanes);
    for (std::size_t l = 0; l < lanes; ++l) {
      const std::size_t anchor = report.anchors[begin + l];
      for (std::size_t s = 0; s < w; ++s) inputs[l * w + s] = tokens[anchor + 1 - w + s];
      targets[l] = tokens[anchor + 1];
    }
    const auto grads = cell_state_gradients(spec, params, inputs, targets, lanes);
    for (std::size_t ci = 0; ci < cells.size(); ++ci) {
      for (std::size_t k = 0; k <= options.max_lag; ++k) {
        const Tensor& g = grads[cells[ci]][w - 1 - k];
        const std::size_t width = g.cols();
        for (std::size_t l = 0; l < lanes; ++l) {
          double sq = 0.0;
          for (std::size_t j = 0; j < width; ++j) sq += g[l * width + j] * g[l * width + j];
          report.norms[ci][k][begin + l] = std::sqrt(sq);
        }
      }
    }
  }
  report.mean_norm.assign(cells.size(), std::vector<double>(options.max_lag + 1, 0.0));
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    for (std::size_t k = 0; k <= options.max_lag; ++k) {
      double total = 0.0;
      for (double v : report.norms[ci][k]) total += v;
      report.mean_norm[ci][k] = total / static_cast<double>(options.samples);
    }
  }
  return report;
}

double bootstrap_dominance(const ProbeReport& report, std::size_t lag,
                           const std::string& high, const std::vector<std::string>& lows,
                           std::size_t resamples, std::uint64_t seed) {
  if (lag > report.max_lag) throw IndexError("lag beyond the probe's max lag");
  if (resamples == 0) throw ConfigError("bootstrap needs at least one resample");
  const std::size_t hi = report.layer_index(high);
  std::vector<std::size_t> lo;
  for (const auto& name : lows) lo.push_back(report.layer_index(name));
  const std::size_t n = report.samples;
  Rng rng(seed, RngStream::probe);
  std::size_t wins = 0;
  std::vector<std::size_t> pick(n);
  for (std::size_t r = 0; r < resamples; ++r) {
    for (auto& p : pick) p = rng.below(n);
    auto mean = [&](std::size_t layer) {
      double total = 0.0;
      for (std::size_t p : pick) total += report.norms[layer][lag][p];
      return total / static_cast<double>(n);
    };
    const double h = mean(hi);
    bool win = true;
    for (std::size_t l : lo) win = win && h > mean(l);
    if (win) ++wins;
  }
  return static_cast<double>(wins) / static_cast<double>(resamples);
}

double change_rate_of_trace(const std::vector<std::vector<double>>& trace) {
  if (trace.size() < 2) throw ConfigError("change rate needs at least 2 steps");
  double total = 0.0;
  for (std::size_t t = 1; t < trace.size(); ++t) {
    const auto& a = trace[t - 1];
    const auto& b = trace[t];
    if (a.size() != b.size() || a.empty()) {
      throw DimensionError("change rate trace has inconsistent widths");
    }
    double sq = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sq += (b[i] - a[i]) * (b[i] - a[i]);
    total += sq / static_cast<double>(a.size());
  }
  return total / static_cast<double>(trace.size() - 1);
}

std::vector<ChangeRate> cell_change_rate(const ArchitectureSpec& spec,
                                         const ModelParams& params,
                                         std::span<const int> tokens, std::size_t steps) {
  if (steps < 2) throw ConfigError("change rate needs at least 2 steps");
  if (tokens.size() < steps) {
    throw DataError("change rate over " + std::to_string(steps) +
                    " steps needs that many tokens, split has " +
                    std::to_string(tokens.size()));
  }
  const auto cells = analyzed_cells(spec);
  std::vector<std::vector<std::vector<double>>> traces(spec.cell_count());
  ModelState state = ModelState::zeros(spec, 1);
  StepContext ctx;
  ctx.observer = [&](std::size_t cell, LstmState& out) {
    auto v = out.c.data();
    traces[cell].emplace_back(v.begin(), v.end());
  };
  for (std::size_t t = 0; t < steps; ++t) {
    const int token = tokens[t];
    model_step(spec, params, state, std::span<const int>(&token, 1), ctx);
  }
  const auto labels = cell_labels(spec);
  std::vector<ChangeRate> out;
  for (std::size_t c : cells) out.push_back({labels[c], change_rate_of_trace(traces[c])});
  return out;
}

void write_change_rate_csv(std::ostream& out, const std::vector<ChangeRate>& rates) {
  out << "layer,value\n" << std::setprecision(12);
  for (const auto& r : rates) out << r.layer << ',' << r.value << '\n';
}

std::vector<Word> find_words(std::span<const Symbol> symbols) {
  std::vector<Word> words;
  const std::size_t n = symbols.size();
  std::size_t i = 0;
  while (i < n) {
    if (symbols[i] < 'a' || symbols[i] > 'z') {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && symbols[j] >= 'a' && symbols[j] <= 'z') ++j;
    const bool space_before = i > 0 && symbols[i - 1] == ' ';
    const bool space_after = j < n && symbols[j] == ' ';
    if (space_before && space_after && j - i >= 2) words.push_back({i, j - i});
    i = j;
  }
  return words;
}

void PositionBpcReport::write_csv(std::ostream& out) const {
  out << "model,position,bpc,count,relative_loss\n" << std::setprecision(12);
  for (std::size_t m = 0; m < models.size(); ++m) {
    for (std::size_t p = 0; p < max_pos; ++p) {
      out << models[m] << ',' << p + 1 << ',' << bpc[m][p] << ',' << count[p] << ','
          << relative_loss[m][p] << '\n';
    }
  }
}

PositionBpcReport position_bpc(const std::vector<ModelRef>& models,
                               std::span<const Symbol> symbols,
                               std::span<const int> tokens, std::size_t max_pos) {
  if (models.empty()) throw ConfigError("position_bpc needs at least one model");
  if (max_pos == 0) throw ConfigError("max_pos must be positive");
  if (symbols.size() != tokens.size()) {
    throw DimensionError("position_bpc: symbols and tokens differ in length");
  }
  for (const auto& m : models) check_model(m);
  const std::vector<Word> words = find_words(symbols);
  if (words.empty()) throw DataError("no words found in the evaluation split");

  std::vector<std::vector<double>> nll(models.size());
  parallel_for(models.size(), [&](std::size_t i) {
    nll[i] = token_nll(*models[i].spec, *models[i].params, tokens, 1);
  });

  PositionBpcReport report;
  report.max_pos = max_pos;
  report.count.assign(max_pos, 0);
  for (const auto& m : models) report.models.push_back(m.name);
  report.bpc.assign(models.size(), std::vector<double>(max_pos, 0.0));
  for (const Word& w : words) {
    for (std::size_t p = 0; p < std::min(w.length, max_pos); ++p) {
      const std::size_t index = w.start + p;  // index ≥ 1: words follow a space
      ++report.count[p];
      for (std::size_t m = 0; m < models.size(); ++m) report.bpc[m][p] += nll[m][index - 1];
    }
  }
  report.relative_loss.assign(models.size(), std::vector<double>(max_pos, 0.0));
  for (std::size_t p = 0; p < max_pos; ++p) {
    for (std::size_t m = 0; m < models.size(); ++m) {
      report.bpc[m][p] = report.count[p] == 0
                             ? 0.0
                             : bpc(report.bpc[m][p] / static_cast<double>(report.count[p]));
    }
    const double ref = report.bpc[0][p];
    for (std::size_t m = 0; m < models.size(); ++m) {
      report.relative_loss[m][p] = ref > 0.0 ? (report.bpc[m][p] - ref) / ref : 0.0;
    }
  }
  return report;
}

EnsembleResult ensemble_eval(const std::vector<ModelRef>& models,
                             std::span<const int> tokens) {
  if (models.empty()) throw ConfigError("ensemble needs at least one model");
  for (const auto& m : models) check_model(m);
  const std::size_t vocab = models.front().spec->vocab;
  for (const auto& m : models) {
    if (m.spec->vocab != vocab) {
      throw DataError("vocab mismatch between ensemble members '" + models.front().name +
                      "' and '" + m.name + "'");
    }
  }
  if (tokens.size() < 2) throw DataError("ensemble evaluation needs at least 2 tokens");
  constexpr std::size_t kChunk = 512;
  std::vector<Evaluator> evaluators;
  evaluators.reserve(models.size());
  for (const auto& m : models) evaluators.emplace_back(*m.spec, *m.params, 1);
  std::vector<std::vector<double>> probs(models.size());

  EnsembleResult result;
  double total_bits = 0.0;
  const std::size_t predictions = tokens.size() - 1;
  std::vector<double> avg(vocab);
  for (std::size_t begin = 0; begin < predictions; begin += kChunk) {
    const std::size_t len = std::min(kChunk, predictions - begin);
    parallel_for(models.size(), [&](std::size_t i) {
      probs[i].resize(len * vocab);
      for (std::size_t t = 0; t < len; ++t) {
        const int token = tokens[begin + t];
        const int target = tokens[begin + t + 1];
        const SoftmaxXent out =
            softmax_xent(evaluators[i].step(std::span<const int>(&token, 1)),
                         std::span<const int>(&target, 1));
        auto p = out.probs.data();
        std::copy(p.begin(), p.end(), probs[i].begin() + static_cast<std::ptrdiff_t>(t * vocab));
      }
    });
    for (std::size_t t = 0; t < len; ++t) {
      std::fill(avg.begin(), avg.end(), 0.0);
      for (const auto& p : probs)
        for (std::size_t j = 0; j < vocab; ++j) avg[j] += p[t * vocab + j];
      double sum = 0.0;
      for (double& v : avg) sum += (v /= static_cast<double>(models.size()));
      result.max_sum_drift = std::max(result.max_sum_drift, std::abs(sum - 1.0));
      const auto target = static_cast<std::size_t>(tokens[begin + t + 1]);
      total_bits -= std::log2(avg[target] / sum);
    }
  }
  result.bpc = total_bits / static_cast<double>(predictions);
  return result;
}

void write_ensemble_csv(std::ostream& out, const std::vector<std::string>& models,
                        double bpc_value) {
  out << "models,bpc\n";
  for (std::size_t i = 0; i < models.size(); ++i) out << (i ? "+" : "") << models[i];
  out << ',' << std::setprecision(12) << bpc_value << '\n';
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw DimensionError("spearman needs two equal-length series of at least 2 values");
  }
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
      std::size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace fsrnn

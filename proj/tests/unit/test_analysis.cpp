// Copyright 2026 The fsrnn Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <sstream>

#include "fsrnn/analysis.hpp"
#include "fsrnn/errors.hpp"
#include "oracles.hpp"

using namespace fsrnn;

namespace {

ArchitectureSpec small(ArchKind kind, std::size_t vocab) {
  ArchitectureSpec s;
  s.kind = kind;
  s.k = kind == ArchKind::fast_slow ? 2 : 3;
  s.fast_size = 5;
  s.slow_size = 4;
  s.cell_size = 4;
  s.vocab = vocab;
  s.embed_dim = 3;
  s.ln.gates = false;
  return s;
}

std::size_t line_count(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

// −log p of every next token under the scalar oracle, one lane.
std::vector<double> oracle_nll(const ArchitectureSpec& spec, const ModelParams& p,
                               std::span<const int> tokens) {
  oracle::State state = oracle::zero_state(spec);
  std::vector<double> out;
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
    const oracle::Vec logits = oracle::model_step(spec, p, state, tokens[t]);
    out.push_back(-oracle::log_softmax_at(logits, tokens[t + 1]));
  }
  return out;
}

}  // namespace

TEST_CASE("change rate of a hand trace") {
  CHECK(change_rate_of_trace({{0.0, 0.0}, {1.0, -1.0}}) == 1.0);
  // Pairs contribute (4+0)/2 = 2 and (0+1)/2 = 0.5.
  CHECK(change_rate_of_trace({{0.0, 0.0}, {2.0, 0.0}, {2.0, 1.0}}) == doctest::Approx(1.25));
  CHECK(change_rate_of_trace({{3.0}, {3.0}, {3.0}}) == 0.0);
}

TEST_CASE("word finder") {
  const std::string text = " the cat a to x.y bee";
  std::vector<Symbol> syms(text.begin(), text.end());
  syms.push_back(' ');
  const auto words = find_words(syms);
  std::vector<std::string> found;
  for (const Word& w : words) found.push_back(text.substr(w.start, w.length));
  CHECK(found == std::vector<std::string>{"the", "cat", "to", "bee"});
  const std::string caps = " The cat's dog ";
  const std::vector<Symbol> cs(caps.begin(), caps.end());
  CHECK(find_words(cs).size() == 1);
}

TEST_CASE("analyzed cells and labels") {
  CHECK(analyzed_cells(small(ArchKind::sequential, 5)) == std::vector<std::size_t>{0});
  CHECK(analyzed_cells(small(ArchKind::stacked, 5)).size() == 3);
  CHECK(analyzed_cells(small(ArchKind::fast_slow, 5)).size() == 3);
}

TEST_CASE("spearman rank correlation") {
  const std::vector<double> x{1, 2, 3, 4, 5};
  const std::vector<double> y{2, 4, 6, 8, 100};
  const std::vector<double> z{5, 4, 3, 2, 1};
  CHECK(spearman(x, y) == doctest::Approx(1.0));
  CHECK(spearman(x, z) == doctest::Approx(-1.0));
  // Ties take average ranks: ranks of w are 1, 2.5, 2.5, 4, 5.
  const std::vector<double> w{1, 2, 2, 3, 4};
  CHECK(spearman(x, w) == doctest::Approx(0.9746794344808963));
}

TEST_CASE("cell-state gradients match finite differences through the observer") {
  for (ArchKind kind : {ArchKind::fast_slow, ArchKind::stacked, ArchKind::sequential}) {
    const ArchitectureSpec spec = small(kind, 6);
    Rng rng(1);
    ModelParams p = ModelParams::create(spec, rng);
    oracle::randomize(p.tensors(), rng, 0.5);
    const std::size_t lanes = 2, steps = 4;
    std::vector<int> inputs(lanes * steps);
    for (int& t : inputs) t = static_cast<int>(rng.below(6));
    const std::vector<int> targets{2, 5};
    const auto grads = cell_state_gradients(spec, p, inputs, targets, lanes);
    REQUIRE(grads.size() == spec.cell_count());

    // Loss with c of (cell, step, lane, unit) shifted by delta after it is produced.
    const auto loss = [&](std::size_t cell, std::size_t step, std::size_t index, double delta) {
      ModelState state = ModelState::zeros(spec, lanes);
      std::size_t t = 0;
      StepContext ctx;
      ctx.observer = [&](std::size_t i, LstmState& s) {
        if (i != cell || t != step) return;
        Tensor c = s.c.clone();
        c[index] += delta;
        s.c = c;
      };
      Tensor logits;
      for (t = 0; t < steps; ++t) {
        std::vector<int> tokens(lanes);
        for (std::size_t l = 0; l < lanes; ++l) tokens[l] = inputs[l * steps + t];
        logits = model_step(spec, p, state, tokens, ctx);
      }
      double total = 0.0;
      for (std::size_t l = 0; l < lanes; ++l) {
        const oracle::Vec row = oracle::row(logits, l);
        total -= oracle::log_softmax_at(row, targets[l]);
      }
      return total;
    };
    double worst = 0.0;
    for (std::size_t cell = 0; cell < grads.size(); ++cell) {
      for (std::size_t step = 0; step < steps; ++step) {
        const Tensor& g = grads[cell][step];
        for (std::size_t i = 0; i < g.size(); ++i) {
          double x = 0.0;
          const double fd = oracle::central_difference(
              [&] { return loss(cell, step, i, x); }, x, 1e-4);
          worst = std::max(worst, oracle::relative_error(g[i], fd, 1e-5));
        }
      }
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("gradient probe shape, anchors and errors") {
  const ArchitectureSpec spec = small(ArchKind::fast_slow, 6);
  Rng rng(2);
  const ModelParams p = ModelParams::create(spec, rng);
  std::vector<int> tokens(300);
  for (int& t : tokens) t = static_cast<int>(rng.below(6));
  ProbeOptions o;
  o.window = 12;
  o.max_lag = 8;
  o.samples = 10;
  o.lanes = 4;
  const ProbeReport r = gradient_probe(spec, p, tokens, o);
  CHECK(r.layers == std::vector<std::string>{"F1", "F2", "Slow"});
  CHECK(r.anchors.size() == 10);
  for (std::size_t a : r.anchors) {
    CHECK(a >= o.window - 1);
    CHECK(a + 1 < tokens.size());
  }
  CHECK(std::is_sorted(r.anchors.begin(), r.anchors.end()));
  REQUIRE(r.mean_norm.size() == 3);
  CHECK(r.mean_norm[0].size() == 9);
  for (std::size_t l = 0; l < 3; ++l) {
    for (std::size_t k = 0; k <= 8; ++k) {
      double mean = 0.0;
      for (double v : r.norms[l][k]) mean += v;
      CHECK(r.mean_norm[l][k] == doctest::Approx(mean / 10));
    }
  }
  std::ostringstream csv;
  r.write_csv(csv);
  CHECK(line_count(csv.str()) == 1 + 3 * 9);
  CHECK(r.layer_index("Slow") == 2);

  // Lane batching does not change the result.
  o.lanes = 3;
  const ProbeReport r3 = gradient_probe(spec, p, tokens, o);
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t k = 0; k <= 8; ++k)
      CHECK(r3.mean_norm[l][k] == doctest::Approx(r.mean_norm[l][k]).epsilon(1e-12));

  ProbeOptions bad = o;
  bad.window = 8;
  CHECK_THROWS_AS(gradient_probe(spec, p, tokens, bad), ConfigError);
  CHECK_THROWS_AS(gradient_probe(spec, p, std::span(tokens).subspan(0, 12), o), DataError);

  const double d = bootstrap_dominance(r, 2, "Slow", {"F1", "F2"}, 200, 3);
  CHECK(d >= 0.0);
  CHECK(d <= 1.0);
  CHECK(bootstrap_dominance(r, 2, "Slow", {"F1", "F2"}, 200, 3) == d);
}

TEST_CASE("change rate against a direct trace") {
  const ArchitectureSpec spec = small(ArchKind::stacked, 6);
  Rng rng(3);
  ModelParams p = ModelParams::create(spec, rng);
  oracle::randomize(p.tensors(), rng, 0.5);
  std::vector<int> tokens(40);
  for (int& t : tokens) t = static_cast<int>(rng.below(6));
  const auto rates = cell_change_rate(spec, p, tokens, 30);
  REQUIRE(rates.size() == 3);
  CHECK(rates[0].layer == "Stacked-1");

  oracle::State state = oracle::zero_state(spec);
  std::vector<std::vector<std::vector<double>>> trace(3);
  for (std::size_t t = 0; t < 30; ++t) {
    std::vector<oracle::Cell> cells;
    oracle::model_step(spec, p, state, tokens[t], &cells);
    for (std::size_t i = 0; i < 3; ++i) trace[i].push_back(cells[i].c);
  }
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(rates[i].value == doctest::Approx(change_rate_of_trace(trace[i])).epsilon(1e-10));
  std::ostringstream csv;
  write_change_rate_csv(csv, rates);
  CHECK(line_count(csv.str()) == 4);
}

TEST_CASE("position bpc against a hand computation") {
  const std::string text = "x the cat saw a big dog by the sea ok";
  Corpus c = split(ingest_text(text, TokenMode::enwik8_bytes), {});
  const ArchitectureSpec s1 = small(ArchKind::fast_slow, c.vocab.size());
  const ArchitectureSpec s2 = small(ArchKind::stacked, c.vocab.size());
  Rng rng(4);
  ModelParams p1 = ModelParams::create(s1, rng), p2 = ModelParams::create(s2, rng);
  oracle::randomize(p1.tensors(), rng, 0.5);
  oracle::randomize(p2.tensors(), rng, 0.5);
  const auto symbols = std::span<const Symbol>(c.symbols);
  const auto tokens = c.tokens(Split::train);
  const PositionBpcReport r =
      position_bpc({{"a", &s1, &p1}, {"b", &s2, &p2}}, symbols, tokens, 3);

  // Words: the cat saw big dog by the sea; "ok" has no trailing space.
  CHECK(r.count == std::vector<std::size_t>{8, 8, 7});
  const auto n1 = oracle_nll(s1, p1, tokens), n2 = oracle_nll(s2, p2, tokens);
  const std::vector<std::pair<std::size_t, std::size_t>> words{
      {2, 3}, {6, 3}, {10, 3}, {16, 3}, {20, 3}, {24, 2}, {27, 3}, {31, 3}};
  for (std::size_t pos = 0; pos < 3; ++pos) {
    double a = 0, b = 0, n = 0;
    for (auto [start, length] : words) {
      if (pos >= length) continue;
      a += n1[start + pos - 1];
      b += n2[start + pos - 1];
      ++n;
    }
    const double ba = a / n / std::log(2.0), bb = b / n / std::log(2.0);
    CHECK(r.bpc[0][pos] == doctest::Approx(ba).epsilon(1e-10));
    CHECK(r.bpc[1][pos] == doctest::Approx(bb).epsilon(1e-10));
    CHECK(r.relative_loss[1][pos] == doctest::Approx((bb - ba) / ba).epsilon(1e-10));
    CHECK(r.relative_loss[0][pos] == 0.0);
  }
  std::ostringstream csv;
  r.write_csv(csv);
  CHECK(line_count(csv.str()) == 1 + 2 * 3);
}

TEST_CASE("ensemble averages member distributions") {
  const std::string text = "abracadabra cabbage";
  Corpus c = split(ingest_text(text, TokenMode::enwik8_bytes), {});
  const ArchitectureSpec s1 = small(ArchKind::fast_slow, c.vocab.size());
  const ArchitectureSpec s2 = small(ArchKind::sequential, c.vocab.size());
  Rng rng(5);
  ModelParams p1 = ModelParams::create(s1, rng), p2 = ModelParams::create(s2, rng);
  oracle::randomize(p1.tensors(), rng, 0.7);
  oracle::randomize(p2.tensors(), rng, 0.7);
  const auto tokens = c.tokens(Split::train);

  oracle::State a = oracle::zero_state(s1), b = oracle::zero_state(s2);
  double bits = 0.0;
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
    const auto la = oracle::model_step(s1, p1, a, tokens[t]);
    const auto lb = oracle::model_step(s2, p2, b, tokens[t]);
    const double pa = std::exp(oracle::log_softmax_at(la, tokens[t + 1]));
    const double pb = std::exp(oracle::log_softmax_at(lb, tokens[t + 1]));
    bits -= std::log2(0.5 * (pa + pb));
  }
  const double want = bits / static_cast<double>(tokens.size() - 1);
  const EnsembleResult r = ensemble_eval({{"a", &s1, &p1}, {"b", &s2, &p2}}, tokens);
  CHECK(r.bpc == doctest::Approx(want).epsilon(1e-12));
  CHECK(r.max_sum_drift < 1e-12);

  const EnsembleResult single = ensemble_eval({{"a", &s1, &p1}}, tokens);
  CHECK(single.bpc == doctest::Approx(evaluate(s1, p1, tokens, 1)).epsilon(1e-12));
  std::ostringstream csv;
  write_ensemble_csv(csv, {"a", "b"}, r.bpc);
  CHECK(csv.str().find("a+b") != std::string::npos);

  ArchitectureSpec other = s2;
  other.vocab += 1;
  Rng r2(6);
  const ModelParams p3 = ModelParams::create(other, r2);
  CHECK_THROWS(ensemble_eval({{"a", &s1, &p1}, {"c", &other, &p3}}, tokens));
}

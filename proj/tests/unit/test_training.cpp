// Copyright 2026 The fsrnn Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "fsrnn/errors.hpp"
#include "fsrnn/training.hpp"
#include "oracles.hpp"

using namespace fsrnn;

namespace {

ArchitectureSpec tiny_fs(std::size_t vocab) {
  ArchitectureSpec s;
  s.kind = ArchKind::fast_slow;
  s.k = 2;
  s.fast_size = 8;
  s.slow_size = 6;
  s.vocab = vocab;
  s.embed_dim = 4;
  s.reg.dropout_keep = 0.8;
  s.reg.zoneout_c = 0.3;
  s.reg.zoneout_h = 0.1;
  return s;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.batch = 3;
  c.window = 7;
  c.epochs = 2;
  c.lr = 0.01;
  c.seed = 5;
  c.log_every = 4;
  return c;
}

Corpus tiny_corpus() {
  Corpus c = ingest_text(synthetic_corpus(1500, 2), TokenMode::enwik8_bytes);
  return split(c, proportional_split(c.symbols.size(), 0.1, 0.1));
}

bool same_params(const ModelParams& a, const ModelParams& b) {
  const auto ta = a.tensors(), tb = b.tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) {
    const auto da = ta[i].data(), db = tb[i].data();
    if (!std::equal(da.begin(), da.end(), db.begin())) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("bits per character") {
  CHECK(bpc(std::numbers::ln2) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(bpc(std::log(50.0)) == doctest::Approx(std::log2(50.0)).epsilon(1e-15));
}

TEST_CASE("gradient clipping rescales to the global norm") {
  Tensor a = Tensor::vector({3.0, 0.0}), b = Tensor::vector({4.0});
  a.set_requires_grad();
  b.set_requires_grad();
  a.grad()[0] = 3.0;
  b.grad()[0] = 4.0;
  std::vector<Tensor> params{a, b};
  CHECK(global_grad_norm(params) == doctest::Approx(5.0));
  const ClipResult r = clip_gradients(params, 1.0);
  CHECK(r.norm == doctest::Approx(5.0));
  CHECK(r.scale == doctest::Approx(0.2));
  CHECK(a.grad()[0] == doctest::Approx(0.6));
  CHECK(global_grad_norm(params) == doctest::Approx(1.0).epsilon(1e-14));
  // Below the threshold the gradients stay as they are.
  CHECK(clip_gradients(params, 2.0).scale == 1.0);
  b.grad()[0] = NAN;
  CHECK_THROWS_AS(clip_gradients(params, 1.0), NumericError);
  CHECK(a.grad()[0] == doctest::Approx(0.6));
}

TEST_CASE("clipping bounds the norm (property)") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Tensor> params;
    for (std::size_t i = 0, n = 1 + rng.below(4); i < n; ++i) {
      Tensor t(Shape{1 + rng.below(10)});
      t.set_requires_grad();
      const double sd = std::exp(6.0 * rng.uniform() - 3.0);
      for (double& g : t.grad()) g = rng.normal() * sd;
      params.push_back(t);
    }
    const double before = global_grad_norm(params);
    const double max_norm = 0.1 + rng.uniform();
    clip_gradients(params, max_norm);
    CHECK(global_grad_norm(params) <= max_norm * (1 + 1e-12));
    if (before <= max_norm) CHECK(global_grad_norm(params) == doctest::Approx(before));
  }
}

TEST_CASE("adam matches a scalar reference") {
  Tensor w = Tensor::vector({0.5, -1.0});
  w.set_requires_grad();
  std::vector<Tensor> params{w};
  OptimizerState opt = OptimizerState::for_params(params, AdamConfig{});
  w.grad()[0] = 0.01;
  w.grad()[1] = -2.0;
  adam_step(opt, params);
  // First step moves every coordinate by about lr against the gradient sign.
  CHECK(w[0] - 0.5 == doctest::Approx(-0.001 * 0.01 / (0.01 + 1e-8)).epsilon(1e-12));
  CHECK(w[0] - 0.5 == doctest::Approx(-0.000999999).epsilon(1e-6));
  CHECK(w[1] + 1.0 == doctest::Approx(0.001).epsilon(1e-6));

  double x = 0.5 - 0.001 * 0.01 / (0.01 + 1e-8), m = 0.001, v = 1e-7;
  const double grads[] = {0.3, -0.2, 0.05};
  for (int t = 2; t <= 4; ++t) {
    const double g = grads[t - 2];
    w.grad()[0] = g;
    w.grad()[1] = 0.0;
    adam_step(opt, params);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    x -= 0.001 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(w[0] == doctest::Approx(x).epsilon(1e-13));
  }
  CHECK(opt.t == 4);
}

TEST_CASE("learning-rate schedules") {
  for (std::size_t e : {0ul, 100ul, 179ul})
    CHECK(lr_schedule(ScheduleKind::ptb_last20, 0.002, 200, e, {}) == 0.002);
  for (std::size_t e : {180ul, 199ul})
    CHECK(lr_schedule(ScheduleKind::ptb_last20, 0.002, 200, e, {}) == doctest::Approx(0.0002));
  CHECK(lr_schedule(ScheduleKind::constant, 0.1, 5, 4, {}) == 0.1);

  const std::vector<double> history{1.5, 1.4, 1.41, 1.42, 1.43, 1.39, 1.45, 1.46};
  const auto plateau = [&](std::size_t epoch) {
    return lr_schedule(ScheduleKind::plateau_div10, 0.001, 50, epoch,
                       std::span(history).subspan(0, epoch));
  };
  CHECK(plateau(0) == 0.001);
  CHECK(plateau(3) == 0.001);
  CHECK(plateau(4) == doctest::Approx(1e-4));
  // The count restarts after a division.
  CHECK(plateau(5) == doctest::Approx(1e-4));
  CHECK(plateau(6) == doctest::Approx(1e-4));
  CHECK(plateau(8) == doctest::Approx(1e-5));

  LrSchedule s(ScheduleKind::plateau_div10, 0.001, 50);
  for (double h : {1.5, 1.4, 1.41}) s.observe(h);
  CHECK(s.bad_epochs() == 1);
  CHECK(s.best() == 1.4);
  CHECK(parse_schedule_kind("plateau_div10") == ScheduleKind::plateau_div10);
  CHECK_THROWS_AS(parse_schedule_kind("cosine"), ConfigError);
}

TEST_CASE("metrics log header and rows") {
  std::ostringstream out;
  MetricsLog log(&out);
  log.write({1, 20, "valid", 1.25, 0.002, 0.5, 3.0});
  const std::string text = out.str();
  CHECK(text.rfind("epoch,step,split,bpc,lr,grad_norm,seconds\n", 0) == 0);
  CHECK(text.find("\n1,20,valid,1.25") != std::string::npos);
  CHECK(log.rows().size() == 1);
}

TEST_CASE("token_nll shape and a uniform model") {
  ArchitectureSpec spec = tiny_fs(5);
  Rng rng(2);
  ModelParams p = ModelParams::create(spec, rng);
  for (double& v : p.out_w.data()) v = 0.0;
  const std::vector<int> tokens{0, 1, 2, 3, 4, 0, 1, 2, 3, 4, 1};
  const auto nll = token_nll(spec, p, tokens, 2);
  CHECK(nll.size() == 2 * (11 / 2 - 1));
  for (double v : nll) CHECK(v == doctest::Approx(std::log(5.0)).epsilon(1e-14));
  CHECK(evaluate(spec, p, tokens, 2) == doctest::Approx(std::log2(5.0)).epsilon(1e-14));
  CHECK_THROWS_AS(token_nll(spec, p, std::span(tokens).subspan(0, 3), 2), DataError);
}

TEST_CASE("token_nll matches the scalar model oracle") {
  const ArchitectureSpec spec = tiny_fs(6);
  Rng rng(3);
  ModelParams p = ModelParams::create(spec, rng);
  oracle::randomize(p.tensors(), rng, 0.4);
  std::vector<int> tokens(13);
  for (int& t : tokens) t = static_cast<int>(rng.below(6));
  const auto nll = token_nll(spec, p, tokens, 2);
  const std::size_t len = tokens.size() / 2;
  double worst = 0.0;
  for (std::size_t l = 0; l < 2; ++l) {
    oracle::State state = oracle::zero_state(spec);
    for (std::size_t t = 0; t + 1 < len; ++t) {
      const oracle::Vec logits = oracle::model_step(spec, p, state, tokens[l * len + t]);
      const double want = -oracle::log_softmax_at(logits, tokens[l * len + t + 1]);
      worst = std::max(worst, std::abs(nll[l * (len - 1) + t] - want));
    }
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("trainer runs are deterministic and resume bit-for-bit") {
  const Corpus corpus = tiny_corpus();
  const ArchitectureSpec spec = tiny_fs(corpus.vocab.size());
  const TrainConfig config = tiny_config();
  Trainer a(spec, config, corpus), b(spec, config, corpus);
  for (int i = 0; i < 5; ++i) {
    const StepStats sa = a.step(), sb = b.step();
    CHECK(sa.loss == sb.loss);
    CHECK(sa.grad_norm == sb.grad_norm);
    CHECK(sa.post_clip_norm <= config.clip_norm * (1 + 1e-12));
  }
  CHECK(same_params(a.params(), b.params()));

  Trainer resumed(a.checkpoint(), corpus);
  while (!a.done()) {
    const StepStats sa = a.step(), sr = resumed.step();
    CHECK(sa.loss == sr.loss);
  }
  CHECK(resumed.done());
  CHECK(same_params(a.params(), resumed.params()));
  CHECK(a.progress().epoch == config.epochs);
}

TEST_CASE("training lowers validation loss and tracks the best model") {
  const Corpus corpus = tiny_corpus();
  ArchitectureSpec spec = tiny_fs(corpus.vocab.size());
  TrainConfig config = tiny_config();
  config.epochs = 4;
  std::ostringstream out;
  MetricsLog log(&out);
  Trainer trainer(spec, config, corpus);
  trainer.set_metrics(&log);
  int validations = 0;
  trainer.set_on_validation([&](const Trainer&) { ++validations; });
  const double before = trainer.validate();
  const Checkpoint best = trainer.train();
  CHECK(validations == 4);
  CHECK(best.progress.best_valid_bpc < before);
  const auto valid = corpus.tokens(Split::valid);
  const std::size_t lanes = std::min<std::size_t>(config.batch, valid.size() / 64);
  CHECK(evaluate(best.spec, best.params, valid, lanes) ==
        doctest::Approx(best.progress.best_valid_bpc).epsilon(1e-12));
  std::size_t valid_rows = 0;
  for (const auto& row : log.rows()) valid_rows += row.split == "valid";
  CHECK(valid_rows == 4);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  c.batch = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lr = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.clip_norm = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

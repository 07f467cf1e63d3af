// Copyright 2026 The fsrnn Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <set>

#include "fsrnn/cells.hpp"
#include "fsrnn/errors.hpp"
#include "fsrnn/init.hpp"
#include "fsrnn/ops.hpp"
#include "oracles.hpp"

using namespace fsrnn;

TEST_CASE("rng streams are reproducible and distinct") {
  Rng a(7, RngStream::dropout), b(7, RngStream::dropout), c(7, RngStream::zoneout);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs = differs || x != c.next_u64();
  }
  CHECK(differs);
  const Rng restored = Rng::deserialize(a.serialize());
  CHECK(restored == a);
  Rng r = restored;
  CHECK(r.next_u64() == a.next_u64());
  CHECK_THROWS_AS(Rng::deserialize("not a state"), FormatError);
}

TEST_CASE("rng distributions (property)") {
  Rng rng(3);
  double mean = 0, sq = 0, umin = 1, umax = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    mean += z;
    sq += z * z;
    const double u = rng.uniform();
    umin = std::min(umin, u);
    umax = std::max(umax, u);
  }
  mean /= n;
  CHECK(std::abs(mean) < 4.0 / std::sqrt(n));
  CHECK(sq / n == doctest::Approx(1.0).epsilon(0.02));
  CHECK(umin >= 0.0);
  CHECK(umax < 1.0);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[rng.below(7)];
  for (int k : counts) CHECK(std::abs(k - 10000) < 500);
}

TEST_CASE("orthogonal init (property over random shapes)") {
  Rng gen(11);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t rows = 1 + gen.below(30), cols = 1 + gen.below(30);
    Rng rng(100 + trial);
    const Tensor w = orthogonal_init(rows, cols, rng);
    REQUIRE(w.shape() == Shape{rows, cols});
    const bool wide = rows <= cols;
    const std::size_t m = wide ? rows : cols;
    double worst = 0.0;
    for (std::size_t a = 0; a < m; ++a) {
      for (std::size_t b = 0; b < m; ++b) {
        double dot = 0.0;
        if (wide) {
          for (std::size_t j = 0; j < cols; ++j) dot += w[a * cols + j] * w[b * cols + j];
        } else {
          for (std::size_t i = 0; i < rows; ++i) dot += w[i * cols + a] * w[i * cols + b];
        }
        worst = std::max(worst, std::abs(dot - (a == b ? 1.0 : 0.0)));
      }
    }
    CHECK(worst <= 1e-6);
  }
  Rng r1(5), r2(5);
  const Tensor a = orthogonal_init(6, 4, r1), b = orthogonal_init(6, 4, r2);
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST_CASE("lstm params layout and initial values") {
  Rng rng(1);
  const LstmParams p = LstmParams::create(3, 4, LayerNormConfig{}, rng);
  CHECK(p.w_h.shape() == Shape{16, 4});
  CHECK(p.w_x.shape() == Shape{16, 3});
  for (std::size_t j = 0; j < 16; ++j) CHECK(p.bias[j] == (j < 4 ? 1.0 : 0.0));
  for (std::size_t q = 0; q < 4; ++q) {
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(p.gate_gain[q][j] == 1.0);
      CHECK(p.gate_bias[q][j] == 0.0);
    }
  }
  // 4n² + 4n·n_in + 4n + 8n (gate LN) + 2n (cell LN)
  CHECK(p.parameter_count() == 64 + 48 + 16 + 32 + 8);
  std::set<std::string> names;
  for (const auto& [name, t] : p.named("cell0")) names.insert(name);
  CHECK(names.count("cell0.w_h"));
  CHECK(names.count("cell0.ln_f.gain"));
  CHECK(names.count("cell0.ln_cell.bias"));
  CHECK(names.size() == 13);

  LayerNormConfig off;
  off.gates = false;
  off.cell = false;
  const LstmParams q = LstmParams::create(0, 5, off, rng);
  CHECK_FALSE(q.w_x.defined());
  CHECK_FALSE(q.gate_gain[0].defined());
  CHECK(q.parameter_count() == 100 + 20);
}

TEST_CASE("zero parameters keep a zero state at the origin") {
  Rng rng(2);
  LayerNormConfig off;
  off.gates = false;
  off.cell = false;
  LstmParams p = LstmParams::create(3, 4, off, rng);
  for (double& v : p.w_h.data()) v = 0;
  for (double& v : p.w_x.data()) v = 0;
  LstmState s = LstmState::zeros(2, 4);
  const Tensor x(Shape{2, 3});
  for (int t = 0; t < 5; ++t) s = lstm_step(p, s, x, RegularizerConfig{}, nullptr);
  for (double v : s.h.data()) CHECK(v == 0.0);
  for (double v : s.c.data()) CHECK(v == 0.0);
}

TEST_CASE("forget bias decays c geometrically at zero weights") {
  Rng rng(3);
  LayerNormConfig off;
  off.gates = false;
  off.cell = false;
  LstmParams p = LstmParams::create(0, 3, off, rng);
  for (double& v : p.w_h.data()) v = 0;
  // Candidate preactivation 0 makes the input term vanish.
  LstmState s = LstmState::zeros(1, 3);
  for (double& v : s.c.data()) v = 2.0;
  const double f = 1.0 / (1.0 + std::exp(-1.0));
  for (int t = 1; t <= 10; ++t) {
    s = lstm_step(p, s, Tensor{}, RegularizerConfig{}, nullptr);
    for (double v : s.c.data()) CHECK(v == doctest::Approx(2.0 * std::pow(f, t)).epsilon(1e-13));
  }
}

TEST_CASE("lstm_step rejects mismatched shapes with a named tensor") {
  Rng rng(4);
  const LstmParams p = LstmParams::create(3, 4, LayerNormConfig{}, rng);
  const LstmState s = LstmState::zeros(2, 4);
  try {
    lstm_cell(p, s, Tensor(Shape{2, 5}));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("x") != std::string::npos);
  }
  CHECK_THROWS_AS(lstm_cell(p, LstmState::zeros(2, 5), Tensor(Shape{2, 3})), DimensionError);
  CHECK_THROWS_AS(lstm_cell(p, s, Tensor{}), DimensionError);
  const LstmParams q = LstmParams::create(0, 4, LayerNormConfig{}, rng);
  CHECK_THROWS_AS(lstm_cell(q, s, Tensor(Shape{2, 3})), DimensionError);
}

TEST_CASE("fused lstm gradients match finite differences in every layer-norm mode") {
  for (int variant = 0; variant < 4; ++variant) {
    Rng rng(10 + variant);
    LayerNormConfig ln;
    ln.gates = variant % 2 == 0;
    ln.cell = variant != 3;
    ln.normalize_stored_cell = variant == 2;
    LstmParams p = LstmParams::create(3, 5, ln, rng);
    std::vector<Tensor> inputs;
    for (auto& [name, t] : p.named("c")) {
      oracle::randomize({t}, rng, 0.5);
      inputs.push_back(t);
    }
    LstmState s = LstmState::zeros(2, 5);
    oracle::randomize({s.h, s.c}, rng, 0.8);
    Tensor x(Shape{2, 3});
    oracle::randomize({x}, rng, 1.0);
    Tensor ph(Shape{2, 5}), pc(Shape{2, 5});
    oracle::randomize({ph, pc}, rng, 1.0);
    inputs.insert(inputs.end(), {s.h, s.c, x});
    const double err = oracle::gradient_error(
        [&] {
          // Two steps, so gradients flow through a produced state too.
          const LstmState a = lstm_cell(p, s, x);
          const LstmState b = lstm_cell(p, a, x);
          return add(sum(mul(b.h, ph)), sum(mul(b.c, pc)));
        },
        inputs);
    CHECK(err < 1e-7);
  }
}

TEST_CASE("zoneout: rate 0 is exact, evaluation blends, training masks") {
  Rng rng(5);
  Tensor prev(Shape{3, 4}), next(Shape{3, 4});
  oracle::randomize({prev, next}, rng, 1.0);
  CHECK(zoneout_apply(prev, next, 0.0, true, &rng).same_storage(next));
  const Tensor eval = zoneout_apply(prev, next, 0.3, false, nullptr);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(eval[i] == doctest::Approx(0.3 * prev[i] + 0.7 * next[i]).epsilon(1e-15));
  }
  Rng z(6, RngStream::zoneout);
  const Tensor train = zoneout_apply(prev, next, 0.5, true, &z);
  for (std::size_t i = 0; i < 12; ++i) CHECK((train[i] == prev[i] || train[i] == next[i]));
  CHECK_THROWS_AS(zoneout_apply(prev, next, 0.5, true, nullptr), ConfigError);
  CHECK_THROWS_AS(zoneout_apply(prev, next, 1.5, false, nullptr), ConfigError);
}

TEST_CASE("dropout: identity in evaluation, inverted scaling in training") {
  Rng rng(7);
  Tensor x(Shape{200, 50}, 1.0);
  CHECK(dropout(x, 0.8, false, nullptr).same_storage(x));
  CHECK(dropout(x, 1.0, true, &rng).same_storage(x));
  const Tensor y = dropout(x, 0.8, true, &rng);
  double total = 0.0;
  for (double v : y.data()) {
    CHECK((v == 0.0 || v == doctest::Approx(1.25)));
    total += v;
  }
  const double n = 10000.0;
  // Mean of the inverted mask is 1 with sd sqrt((1-p)/p / n).
  CHECK(std::abs(total / n - 1.0) < 4.0 * std::sqrt(0.25 / n));
  CHECK_THROWS_AS(dropout(x, 0.0, true, &rng), ConfigError);
  CHECK_THROWS_AS(dropout(x, 0.5, true, nullptr), ConfigError);
}

TEST_CASE("lstm_step matches the scalar oracle with evaluation zoneout") {
  Rng rng(8);
  LstmParams p = LstmParams::create(2, 3, LayerNormConfig{}, rng);
  for (auto& [name, t] : p.named("c")) oracle::randomize({t}, rng, 0.6);
  RegularizerConfig reg;
  reg.zoneout_c = 0.4;
  reg.zoneout_h = 0.1;
  LstmState s = LstmState::zeros(1, 3);
  oracle::Cell ref{oracle::Vec(3, 0.0), oracle::Vec(3, 0.0)};
  for (int t = 0; t < 5; ++t) {
    Tensor x(Shape{1, 2});
    oracle::randomize({x}, rng, 1.0);
    s = lstm_step(p, s, x, reg, nullptr);
    const oracle::Vec xv = oracle::row(x, 0);
    ref = oracle::zoneout_eval(ref, oracle::lstm(p, ref, &xv), 0.4, 0.1);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(std::abs(s.h[j] - ref.h[j]) <= 1e-12);
      CHECK(std::abs(s.c[j] - ref.c[j]) <= 1e-12);
    }
  }
}

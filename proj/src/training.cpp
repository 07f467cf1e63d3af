// Copyright 2026 The fsrnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsrnn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <numbers>

#include "fsrnn/errors.hpp"
#include "fsrnn/graph.hpp"

namespace fsrnn {

namespace {

double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

constexpr std::size_t kMaxConsecutiveSkips = 10;

}  // namespace

double bpc(double loss_nats) { return loss_nats / std::numbers::ln2; }

double global_grad_norm(std::span<const Tensor> params) {
  double sq = 0.0;
  for (const Tensor& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

ClipResult clip_gradients(std::span<Tensor> params, double max_norm) {
  ClipResult r;
  r.norm = global_grad_norm(params);
  if (!std::isfinite(r.norm)) {
    throw NumericError("non-finite gradient norm; update skipped");
  }
  if (r.norm > max_norm) {
    r.scale = max_norm / r.norm;
    for (Tensor& p : params) {
      if (!p.has_grad()) continue;
      for (double& g : p.grad()) g *= r.scale;
    }
  }
  return r;
}

OptimizerState OptimizerState::for_params(std::span<const Tensor> params,
                                          AdamConfig hyper) {
  OptimizerState s;
  s.hyper = hyper;
  for (const Tensor& p : params) {
    s.m.emplace_back(p.size(), 0.0);
    s.v.emplace_back(p.size(), 0.0);
  }
  return s;
}

void adam_step(OptimizerState& opt, std::span<Tensor> params) {
  if (params.size() != opt.m.size()) {
    throw DimensionError("adam_step: optimizer tracks " + std::to_string(opt.m.size()) +
                         " tensors, got " + std::to_string(params.size()));
  }
  opt.t += 1;
  const AdamConfig& h = opt.hyper;
  const double t = static_cast<double>(opt.t);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    if (opt.m[k].size() != p.size()) {
      throw DimensionError("adam_step: moment size mismatch for tensor " + std::to_string(k));
    }
    if (!p.has_grad()) continue;
    auto g = std::as_const(p).grad();
    auto theta = p.data();
    auto& m = opt.m[k];
    auto& v = opt.v[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      theta[i] -= h.lr * m_hat / (std::sqrt(v_hat) + h.eps);
    }
  }
}

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::constant: return "constant";
    case ScheduleKind::ptb_last20: return "ptb_last20";
    case ScheduleKind::plateau_div10: return "plateau_div10";
  }
  return "?";
}

ScheduleKind parse_schedule_kind(std::string_view text) {
  if (text == "constant") return ScheduleKind::constant;
  if (text == "ptb_last20") return ScheduleKind::ptb_last20;
  if (text == "plateau_div10") return ScheduleKind::plateau_div10;
  throw ConfigError("unknown schedule '" + std::string(text) + "'");
}

LrSchedule::LrSchedule(ScheduleKind kind, double lr0, std::size_t epochs)
    : kind_(kind), lr0_(lr0), epochs_(epochs), current_(lr0) {}

double LrSchedule::lr_for_epoch(std::size_t epoch) const {
  switch (kind_) {
    case ScheduleKind::constant: return lr0_;
    case ScheduleKind::ptb_last20:
      return epoch + 20 < epochs_ ? lr0_ : lr0_ / 10.0;
    case ScheduleKind::plateau_div10: return current_;
  }
  return lr0_;
}

void LrSchedule::observe(double valid_bpc) {
  if (kind_ != ScheduleKind::plateau_div10) return;
  if (!has_best_ || valid_bpc < best_) {
    best_ = valid_bpc;
    has_best_ = true;
    bad_epochs_ = 0;
    return;
  }
  if (++bad_epochs_ >= 2) {
    current_ /= 10.0;
    bad_epochs_ = 0;
  }
}

void LrSchedule::restore(double current, bool has_best, double best,
                         std::size_t bad_epochs) {
  current_ = current;
  best_ = best;
  has_best_ = has_best;
  bad_epochs_ = bad_epochs;
}

double lr_schedule(ScheduleKind kind, double lr0, std::size_t epochs,
                   std::size_t epoch, std::span<const double> valid_history) {
  LrSchedule s(kind, lr0, epochs);
  for (double v : valid_history) s.observe(v);
  return s.lr_for_epoch(epoch);
}

void TrainConfig::validate() const {
  if (batch == 0 || window == 0 || epochs == 0) {
    throw ConfigError("batch, window and epochs must be positive");
  }
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must be in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("Adam eps must be positive");
  if (!(clip_norm > 0.0)) throw ConfigError("clip norm must be positive");
  if (log_every == 0) throw ConfigError("log_every must be positive");
}

ModelParams copy_params(const ModelParams& params) {
  ModelParams out = params;
  out.embedding = params.embedding.clone();
  for (auto& cell : out.cells) {
    cell.w_h = cell.w_h.clone();
    if (cell.w_x.defined()) cell.w_x = cell.w_x.clone();
    cell.bias = cell.bias.clone();
    for (auto& t : cell.gate_gain) if (t.defined()) t = t.clone();
    for (auto& t : cell.gate_bias) if (t.defined()) t = t.clone();
    if (cell.cell_gain.defined()) cell.cell_gain = cell.cell_gain.clone();
    if (cell.cell_bias.defined()) cell.cell_bias = cell.cell_bias.clone();
  }
  out.out_w = params.out_w.clone();
  out.out_b = params.out_b.clone();
  return out;
}

Evaluator::Evaluator(const ArchitectureSpec& spec, const ModelParams& params,
                     std::size_t lanes)
    : spec_(spec), params_(params), lanes_(lanes),
      state_(ModelState::zeros(spec, lanes)) {}

Tensor Evaluator::step(std::span<const int> tokens) {
  StepContext ctx;
  ctx.training = false;
  return model_step(spec_, params_, state_, tokens, ctx);
}

void Evaluator::reset() { state_ = ModelState::zeros(spec_, lanes_); }

std::vector<double> token_nll(const ArchitectureSpec& spec, const ModelParams& params,
                              std::span<const int> tokens, std::size_t lanes) {
  if (lanes == 0) throw ConfigError("evaluation needs at least one lane");
  if (tokens.size() < 2 * lanes) {
    throw DataError("evaluation split of " + std::to_string(tokens.size()) +
                    " tokens is too small for " + std::to_string(lanes) + " lanes");
  }
  const std::size_t len = tokens.size() / lanes;
  std::vector<double> nll(lanes * (len - 1));
  Evaluator ev(spec, params, lanes);
  std::vector<int> in(lanes);
  std::vector<int> tgt(lanes);
  for (std::size_t t = 0; t + 1 < len; ++t) {
    for (std::size_t l = 0; l < lanes; ++l) {
      in[l] = tokens[l * len + t];
      tgt[l] = tokens[l * len + t + 1];
    }
    const SoftmaxXent out = softmax_xent(ev.step(in), tgt);
    for (std::size_t l = 0; l < lanes; ++l) nll[l * (len - 1) + t] = out.nll[l];
  }
  return nll;
}

double evaluate(const ArchitectureSpec& spec, const ModelParams& params,
                std::span<const int> tokens, std::size_t lanes) {
  const std::vector<double> nll = token_nll(spec, params, tokens, lanes);
  double total = 0.0;
  for (double v : nll) total += v;
  return bpc(total / static_cast<double>(nll.size()));
}

double evaluate(const Checkpoint& checkpoint, const Corpus& corpus, Split split,
                std::size_t lanes) {
  if (!(corpus.vocab == checkpoint.vocab) || checkpoint.vocab.size() != checkpoint.spec.vocab) {
    throw DataError("vocab mismatch between checkpoint (" +
                    std::to_string(checkpoint.vocab.size()) + " ids) and corpus (" +
                    std::to_string(corpus.vocab.size()) + " ids)");
  }
  return evaluate(checkpoint.spec, checkpoint.params, corpus.tokens(split), lanes);
}

MetricsLog::MetricsLog(std::ostream* out) : out_(out) {
  if (out_) *out_ << "epoch,step,split,bpc,lr,grad_norm,seconds\n";
}

void MetricsLog::write(const MetricsRow& row) {
  rows_.push_back(row);
  if (!out_) return;
  *out_ << row.epoch << ',' << row.step << ',' << row.split << ','
        << std::setprecision(12) << row.bpc << ',' << row.lr << ','
        << row.grad_norm << ',' << std::setprecision(6) << std::fixed
        << row.seconds << std::defaultfloat << '\n';
  out_->flush();
}

Trainer::Trainer(const ArchitectureSpec& spec, const TrainConfig& config,
                 const Corpus& corpus)
    : spec_(spec),
      config_(config),
      corpus_(corpus),
      dropout_rng_(config.seed, RngStream::dropout),
      zoneout_rng_(config.seed, RngStream::zoneout),
      stream_(corpus.tokens(Split::train), config.batch, config.window),
      started_(now_seconds()) {
  spec_.validate();
  config_.validate();
  if (spec_.vocab != corpus.vocab.size()) {
    throw ConfigError("model vocabulary " + std::to_string(spec_.vocab) +
                      " does not match corpus vocabulary " +
                      std::to_string(corpus.vocab.size()));
  }
  Rng init_rng(config.seed, RngStream::init);
  params_ = ModelParams::create(spec_, init_rng);
  const auto tensors = params_.tensors();
  optimizer_ = OptimizerState::for_params(tensors, config_.adam());
  schedule_ = LrSchedule(config_.schedule, config_.lr, config_.epochs);
  progress_.lr = schedule_.lr_for_epoch(0);
  optimizer_.hyper.lr = progress_.lr;
  carried_ = ModelState::zeros(spec_, config_.batch);
}

Trainer::Trainer(const Checkpoint& ck, const Corpus& corpus)
    : spec_(ck.spec),
      config_(ck.config),
      corpus_(corpus),
      params_(copy_params(ck.params)),
      optimizer_(ck.optimizer),
      dropout_rng_(Rng::deserialize(ck.dropout_rng)),
      zoneout_rng_(Rng::deserialize(ck.zoneout_rng)),
      stream_(corpus.tokens(Split::train), ck.config.batch, ck.config.window),
      progress_(ck.progress),
      started_(now_seconds()) {
  if (!(corpus.vocab == ck.vocab)) {
    throw DataError("vocab mismatch between checkpoint and corpus");
  }
  if (ck.best_params) best_ = copy_params(*ck.best_params);
  schedule_ = LrSchedule(config_.schedule, config_.lr, config_.epochs);
  schedule_.restore(progress_.lr, progress_.has_best, progress_.schedule_best,
                    progress_.schedule_bad_epochs);
  optimizer_.hyper.lr = progress_.lr;
  carried_ = ck.carried ? ck.carried->detach() : ModelState::zeros(spec_, config_.batch);
  stream_.seek(progress_.window);
}

bool Trainer::done() const {
  if (config_.max_steps > 0 && progress_.step >= config_.max_steps) return true;
  return progress_.epoch >= config_.epochs;
}

Tensor window_loss(const ArchitectureSpec& spec, const ModelParams& params,
                   ModelState& state, const BatchStream::Window& window,
                   const StepContext& ctx) {
  Tensor total;
  for (std::size_t t = 0; t < window.length; ++t) {
    const std::vector<int> in = window.inputs_at(t);
    const std::vector<int> tgt = window.targets_at(t);
    Tensor logits = model_step(spec, params, state, in, ctx);
    Tensor step_loss = softmax_xent(logits, tgt).loss;
    total = total.defined() ? add(total, step_loss) : step_loss;
  }
  return scale(total, 1.0 / static_cast<double>(window.length));
}

StepStats Trainer::step() {
  if (done()) return {};
  if (progress_.window == 0) start_epoch();

  const BatchStream::Window w = stream_.next();
  progress_.window = stream_.cursor();
  auto tensors = params_.tensors();
  params_.zero_grad();

  StepStats stats;
  ModelState state = carried_;
  Tensor loss;
  {
    Graph graph;
    GraphScope scope(graph);
    StepContext ctx;
    ctx.training = true;
    ctx.dropout_rng = &dropout_rng_;
    ctx.zoneout_rng = &zoneout_rng_;
    loss = window_loss(spec_, params_, state, w, ctx);
    stats.loss = loss.item();
    if (std::isfinite(stats.loss)) graph.backward(loss);
  }

  bool finite = std::isfinite(stats.loss);
  if (finite) {
    try {
      const ClipResult clip = clip_gradients(tensors, config_.clip_norm);
      stats.grad_norm = clip.norm;
      stats.post_clip_norm = global_grad_norm(tensors);
    } catch (const NumericError&) {
      finite = false;
    }
  }
  if (!finite) {
    stats.skipped = true;
    ++progress_.skipped;
    std::cerr << "warning: non-finite loss or gradient at step " << progress_.step
              << "; update skipped\n";
    if (++progress_.consecutive_skips >= kMaxConsecutiveSkips) {
      throw NumericError("aborting after " + std::to_string(kMaxConsecutiveSkips) +
                         " consecutive non-finite updates");
    }
    carried_ = carried_.detach();
    return stats;
  }
  progress_.consecutive_skips = 0;
  adam_step(optimizer_, tensors);
  carried_ = state.detach();
  ++progress_.step;
  progress_.max_post_clip_norm = std::max(progress_.max_post_clip_norm, stats.post_clip_norm);
  progress_.interval_loss += stats.loss;
  progress_.interval_grad_norm += stats.grad_norm;
  ++progress_.interval_count;
  if (progress_.interval_count >= config_.log_every) log_interval();
  if (config_.eval_every > 0 && progress_.step % config_.eval_every == 0) {
    const double v = validate();
    if (metrics_) {
      metrics_->write({progress_.epoch, progress_.step, "valid", v, optimizer_.hyper.lr, 0.0,
                       now_seconds() - started_});
    }
  }
  if (!stream_.has_next()) end_epoch();
  return stats;
}

void Trainer::start_epoch() {
  carried_ = ModelState::zeros(spec_, config_.batch);
  progress_.lr = schedule_.lr_for_epoch(progress_.epoch);
  optimizer_.hyper.lr = progress_.lr;
}

void Trainer::log_interval() {
  if (progress_.interval_count == 0) return;
  const double n = static_cast<double>(progress_.interval_count);
  if (metrics_) {
    metrics_->write({progress_.epoch, progress_.step, "train", bpc(progress_.interval_loss / n),
                     optimizer_.hyper.lr, progress_.interval_grad_norm / n,
                     now_seconds() - started_});
  }
  progress_.interval_loss = 0.0;
  progress_.interval_grad_norm = 0.0;
  progress_.interval_count = 0;
}

void Trainer::end_epoch() {
  log_interval();
  const double v = validate();
  if (metrics_) {
    metrics_->write({progress_.epoch, progress_.step, "valid", v, optimizer_.hyper.lr, 0.0,
                     now_seconds() - started_});
  }
  if (!progress_.has_best || v < progress_.best_valid_bpc) {
    progress_.best_valid_bpc = v;
    progress_.has_best = true;
    best_ = copy_params(params_);
  }
  schedule_.observe(v);
  progress_.schedule_best = schedule_.best();
  progress_.schedule_bad_epochs = schedule_.bad_epochs();
  ++progress_.epoch;
  progress_.window = 0;
  stream_.reset();
  progress_.lr = schedule_.lr_for_epoch(progress_.epoch);
  optimizer_.hyper.lr = progress_.lr;
  if (on_validation_) on_validation_(*this);
}

void Trainer::run_epoch() {
  const std::size_t epoch = progress_.epoch;
  while (!done() && progress_.epoch == epoch) step();
}

Checkpoint Trainer::train() {
  while (!done()) step();
  if (!progress_.has_best) {
    // Stopped by max_steps before any epoch finished.
    end_epoch();
  }
  return best_checkpoint();
}

double Trainer::validate() const {
  std::span<const int> tokens = corpus_.tokens(Split::valid);
  if (tokens.size() < 2) tokens = corpus_.tokens(Split::train);
  std::size_t lanes = config_.valid_batch ? config_.valid_batch : config_.batch;
  lanes = std::max<std::size_t>(1, std::min(lanes, tokens.size() / 64));
  return evaluate(spec_, params_, tokens, lanes);
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.spec = spec_;
  ck.config = config_;
  ck.mode = corpus_.mode;
  ck.vocab = corpus_.vocab;
  ck.params = copy_params(params_);
  if (best_) ck.best_params = copy_params(*best_);
  ck.optimizer = optimizer_;
  ck.dropout_rng = dropout_rng_.serialize();
  ck.zoneout_rng = zoneout_rng_.serialize();
  ck.carried = carried_.detach();
  ck.progress = progress_;
  return ck;
}

Checkpoint Trainer::best_checkpoint() const {
  Checkpoint ck = checkpoint();
  if (best_) ck.params = copy_params(*best_);
  return ck;
}

}  // namespace fsrnn

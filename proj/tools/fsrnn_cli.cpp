// Copyright 2026 The fsrnn Authors
// SPDX-License-Identifier: Apache-2.0

// fsrnn: train, evaluate and analyze Fast-Slow RNN language models.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fsrnn/analysis.hpp"
#include "fsrnn/checkpoint.hpp"
#include "fsrnn/config.hpp"
#include "fsrnn/errors.hpp"
#include "fsrnn/training.hpp"

namespace fs = std::filesystem;
using namespace fsrnn;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct ExperimentFlags {
  std::string preset;
  std::string config;
  std::string data;
  double scale = 1.0;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_experiment_flags(CLI::App* app, ExperimentFlags& f) {
  app->add_option("--preset", f.preset, "Named preset")
      ->check(CLI::IsMember(preset_names()));
  app->add_option("--config", f.config, "Config file, overlaid on --preset");
  app->add_option("--data", f.data, "Text corpus");
  app->add_option("--scale", f.scale, "Width multiplier (rounded up)")
      ->check(CLI::PositiveNumber);
  app->add_option("--seed", f.seed, "Root seed");
  app->add_option("--out", f.out, "Output root directory");
}

ExperimentConfig resolve(const ExperimentFlags& f) {
  ExperimentConfig config;
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    if (!in) throw ConfigError("cannot read config file " + f.config);
    std::stringstream text;
    if (!f.preset.empty()) text << "preset = " << f.preset << '\n';
    text << in.rdbuf();
    config = parse_config(text.str());
  } else if (!f.preset.empty()) {
    config = preset(f.preset);
  }
  if (f.scale != 1.0) config = apply_scale(config, f.scale);
  if (f.seed) config.train.seed = *f.seed;
  if (!f.data.empty()) config.data.path = f.data;
  if (!f.out.empty()) config.output_dir = f.out;
  return config;
}

std::string fnv_hex(std::string_view text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path fresh_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !force) {
    throw ConfigError(dir.string() + " already exists (same configuration); pass --force");
  }
  fs::create_directories(dir);
  return dir;
}

int cmd_train(const ExperimentFlags& flags, bool force, bool quiet) {
  ExperimentConfig config = resolve(flags);
  config.train.validate();
  Corpus corpus = load_corpus(config.data);
  if (config.model.vocab == 0) config.model.vocab = corpus.vocab.size();
  config.model.validate();
  if (config.model.vocab != corpus.vocab.size()) {
    throw ConfigError("model vocab " + std::to_string(config.model.vocab) +
                      " does not match the data vocabulary of " +
                      std::to_string(corpus.vocab.size()));
  }
  const std::string name = config.preset.empty() ? "run" : config.preset;
  const fs::path dir = fresh_dir(fs::path(config.output_dir) / (name + "-" + config_hash(config)), force);
  {
    std::ofstream cfg(dir / "config.ini");
    cfg << dump_config(config);
  }
  std::ofstream metrics_file(dir / "metrics.csv");
  MetricsLog metrics(&metrics_file);
  Trainer trainer(config.model, config.train, corpus);
  trainer.set_metrics(&metrics);
  trainer.set_on_validation([&](const Trainer& t) {
    metrics_file.flush();
    save_checkpoint(t.checkpoint(), dir / "last.ckpt");
    if (!quiet) {
      std::cerr << "epoch " << t.progress().epoch << " best valid bpc "
                << t.progress().best_valid_bpc << '\n';
    }
  });
  const Checkpoint best = trainer.train();
  save_checkpoint(best, dir / "best.ckpt");
  save_checkpoint(trainer.checkpoint(), dir / "last.ckpt");
  std::cout << dir.string() << '\n';
  return 0;
}

struct EvalFlags {
  std::vector<std::string> checkpoints;
  ExperimentFlags data;
  std::string split = "test";
  std::size_t lanes = 1;
};

void add_eval_flags(CLI::App* app, EvalFlags& f, bool many) {
  if (many) {
    app->add_option("--checkpoint", f.checkpoints, "Checkpoint files (repeatable)")
        ->required();
  } else {
    app->add_option("--checkpoint", f.checkpoints, "Checkpoint file")
        ->required()
        ->expected(1);
  }
  app->add_option("--preset", f.data.preset, "Preset supplying the data split")
      ->check(CLI::IsMember(preset_names()));
  app->add_option("--config", f.data.config, "Config file supplying the data split");
  app->add_option("--data", f.data.data, "Text corpus")->required();
  app->add_option("--split", f.split, "train, valid or test")
      ->check(CLI::IsMember({"train", "valid", "test"}));
}

struct Loaded {
  std::vector<Checkpoint> checkpoints;
  Corpus corpus;
};

Loaded load_for_eval(const EvalFlags& f) {
  Loaded out;
  for (const auto& path : f.checkpoints) {
    if (!fs::exists(path)) throw ConfigError("no checkpoint at " + path);
    out.checkpoints.push_back(load_checkpoint(path));
  }
  const Checkpoint& first = out.checkpoints.front();
  for (const auto& c : out.checkpoints) {
    if (c.mode != first.mode || !(c.vocab == first.vocab)) {
      throw ConfigError("checkpoints disagree on tokenization or vocabulary");
    }
  }
  ExperimentConfig config = resolve(f.data);
  config.data.mode = first.mode;
  out.corpus = load_corpus(config.data);
  encode_with(out.corpus, first.vocab);
  return out;
}

// Output directory for an analysis: hash over the inputs and arguments.
fs::path analysis_dir(const std::string& root, const std::string& kind,
                      const EvalFlags& f, const std::string& args) {
  std::string key = kind + "\n" + args + "\n" + f.split + "\n" + f.data.data + "\n";
  for (const auto& c : f.checkpoints) key += fnv_hex(read_file(c)) + "\n";
  return fs::path(root.empty() ? "runs" : root) / (kind + "-" + fnv_hex(key));
}

int cmd_evaluate(const EvalFlags& f) {
  const Loaded loaded = load_for_eval(f);
  const double value =
      evaluate(loaded.checkpoints.front(), loaded.corpus, parse_split(f.split), f.lanes);
  std::printf("bpc=%.6f\n", value);
  return 0;
}

struct AnalyzeFlags {
  EvalFlags eval;
  std::string out;
  std::size_t max_lag = 100;
  std::size_t samples = 1000;
  std::size_t max_pos = 10;
  std::size_t window = 0;
  std::size_t steps = 10000;
  std::uint64_t seed = 1;
  bool force = false;
};

std::vector<ModelRef> refs(const Loaded& loaded, const std::vector<std::string>& paths) {
  std::vector<ModelRef> models;
  for (std::size_t i = 0; i < loaded.checkpoints.size(); ++i) {
    models.push_back(model_ref(loaded.checkpoints[i], fs::path(paths[i]).stem().string() +
                                                          (paths.size() > 1 ? "#" + std::to_string(i) : "")));
  }
  return models;
}

int cmd_analyze(const std::string& kind, const AnalyzeFlags& a) {
  const Loaded loaded = load_for_eval(a.eval);
  const std::span<const int> tokens = loaded.corpus.tokens(parse_split(a.eval.split));
  std::ostringstream args;
  args << a.max_lag << ' ' << a.samples << ' ' << a.max_pos << ' ' << a.window << ' '
       << a.steps << ' ' << a.seed;
  const fs::path dir = fresh_dir(analysis_dir(a.out, kind, a.eval, args.str()), a.force);
  const Checkpoint& ckpt = loaded.checkpoints.front();
  if (kind == "probe") {
    ProbeOptions options;
    options.max_lag = a.max_lag;
    options.samples = a.samples;
    options.seed = a.seed;
    options.window = a.window == 0 ? a.max_lag + 50 : a.window;
    const ProbeReport report = gradient_probe(ckpt.spec, ckpt.params, tokens, options);
    std::ofstream out(dir / "probe.csv");
    report.write_csv(out);
  } else if (kind == "change_rate") {
    const auto rates = cell_change_rate(ckpt.spec, ckpt.params, tokens,
                                        std::min(a.steps, tokens.size()));
    std::ofstream out(dir / "change_rate.csv");
    write_change_rate_csv(out, rates);
  } else {
    const auto split = parse_split(a.eval.split);
    const auto range = loaded.corpus.splits[static_cast<std::size_t>(split)];
    const std::span<const Symbol> symbols(loaded.corpus.symbols.data() + range.begin,
                                          range.size());
    const PositionBpcReport report =
        position_bpc(refs(loaded, a.eval.checkpoints), symbols, tokens, a.max_pos);
    std::ofstream out(dir / "position_bpc.csv");
    report.write_csv(out);
  }
  std::cout << dir.string() << '\n';
  return 0;
}

int cmd_ensemble(const AnalyzeFlags& a) {
  const Loaded loaded = load_for_eval(a.eval);
  const auto models = refs(loaded, a.eval.checkpoints);
  const EnsembleResult result =
      ensemble_eval(models, loaded.corpus.tokens(parse_split(a.eval.split)));
  const fs::path dir = fresh_dir(analysis_dir(a.out, "ensemble", a.eval, ""), a.force);
  std::vector<std::string> names;
  for (const auto& m : models) names.push_back(m.name);
  std::ofstream out(dir / "ensemble.csv");
  write_ensemble_csv(out, names, result.bpc);
  std::printf("bpc=%.6f\n", result.bpc);
  std::cout << dir.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fast-Slow RNN character language models"};
  app.require_subcommand(1);

  ExperimentFlags train_flags;
  bool force = false;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "Train a model");
  add_experiment_flags(train, train_flags);
  train->add_flag("--force", force, "Reuse an existing output directory");
  train->add_flag("--quiet", quiet, "No progress on stderr");

  EvalFlags eval_flags;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Print the BPC of a checkpoint");
  add_eval_flags(evaluate_cmd, eval_flags, false);
  evaluate_cmd->add_option("--lanes", eval_flags.lanes, "Parallel lanes")
      ->check(CLI::PositiveNumber);

  AnalyzeFlags analyze_flags;
  std::string kind;
  auto* analyze = app.add_subcommand("analyze", "Gradient probe, change rate, position BPC");
  analyze->add_option("kind", kind, "probe, change_rate or position_bpc")
      ->required()
      ->check(CLI::IsMember({"probe", "change_rate", "position_bpc"}));
  add_eval_flags(analyze, analyze_flags.eval, true);
  analyze->add_option("--out", analyze_flags.out, "Output root directory");
  analyze->add_option("--max-lag", analyze_flags.max_lag, "Largest probed lag");
  analyze->add_option("--samples", analyze_flags.samples, "Probe anchors");
  analyze->add_option("--window", analyze_flags.window,
                      "Probe window (default max-lag + 50)");
  analyze->add_option("--steps", analyze_flags.steps, "Change-rate steps");
  analyze->add_option("--max-pos", analyze_flags.max_pos, "Largest in-word position");
  analyze->add_option("--seed", analyze_flags.seed, "Anchor seed");
  analyze->add_flag("--force", analyze_flags.force, "Reuse an existing output directory");

  AnalyzeFlags ensemble_flags;
  auto* ensemble = app.add_subcommand("ensemble", "Score averaged predictions");
  add_eval_flags(ensemble, ensemble_flags.eval, true);
  ensemble->add_option("--out", ensemble_flags.out, "Output root directory");
  ensemble->add_flag("--force", ensemble_flags.force, "Reuse an existing output directory");

  ExperimentFlags dump_flags;
  auto* dump = app.add_subcommand("dump-config", "Print the effective configuration");
  add_experiment_flags(dump, dump_flags);

  std::size_t corpus_bytes = 5'000'000;
  std::uint64_t corpus_seed = 1;
  std::string corpus_out;
  auto* gen = app.add_subcommand("gen-corpus", "Write seeded synthetic English-like text");
  gen->add_option("--bytes", corpus_bytes, "Length in bytes");
  gen->add_option("--seed", corpus_seed, "Seed");
  gen->add_option("--out", corpus_out, "Output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) return cmd_train(train_flags, force, quiet);
    if (*evaluate_cmd) return cmd_evaluate(eval_flags);
    if (*analyze) return cmd_analyze(kind, analyze_flags);
    if (*ensemble) return cmd_ensemble(ensemble_flags);
    if (*dump) {
      std::cout << dump_config(resolve(dump_flags));
      return 0;
    }
    if (*gen) {
      std::ofstream out(corpus_out, std::ios::binary);
      if (!out) throw DataError("cannot write " + corpus_out);
      out << synthetic_corpus(corpus_bytes, corpus_seed);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const FormatError& e) {
    std::cerr << "incompatible checkpoint: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return 0;
}

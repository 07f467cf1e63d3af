// Copyright 2026 The fsrnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsrnn/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "fsrnn/errors.hpp"

namespace fsrnn {

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  return a.preset == b.preset && a.model == b.model && a.train == b.train &&
         a.data == b.data && a.output_dir == b.output_dir;
}

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

using Section = std::map<std::string, std::string>;

// Pulls typed values out of a section and rejects leftovers.
class Reader {
 public:
  Reader(const Section& kv, std::string name) : kv_(kv), name_(std::move(name)) {}

  template <typename T>
  void get(const char* key, T& out) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return;
    used_.insert(key);
    parse(it->second, out, key);
  }

  void finish() const {
    for (const auto& [key, value] : kv_) {
      if (!used_.count(key)) {
        throw ConfigError("unknown key '" + key + "' in [" + name_ + "]");
      }
    }
  }

 private:
  void fail(const std::string& value, const char* key) const {
    throw ConfigError("invalid value '" + value + "' for " + name_ + "." + key);
  }
  void parse(const std::string& v, std::string& out, const char*) { out = v; }
  void parse(const std::string& v, bool& out, const char* key) {
    if (v == "true") out = true;
    else if (v == "false") out = false;
    else fail(v, key);
  }
  void parse(const std::string& v, double& out, const char* key) {
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) fail(v, key);
  }
  template <typename U>
    requires std::is_unsigned_v<U>
  void parse(const std::string& v, U& out, const char* key) {
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) fail(v, key);
  }

  const Section& kv_;
  std::string name_;
  std::set<std::string> used_;
};

void put(std::string& out, const char* key, const std::string& value) {
  out += key;
  out += " = ";
  out += value;
  out += '\n';
}
void put(std::string& out, const char* key, const char* value) {
  put(out, key, std::string(value));
}
void put(std::string& out, const char* key, bool value) {
  put(out, key, value ? "true" : "false");
}
void put(std::string& out, const char* key, double value) {
  put(out, key, format_double(value));
}
void put(std::string& out, const char* key, std::size_t value) {
  put(out, key, std::to_string(value));
}

std::size_t scaled(std::size_t width, double factor) {
  if (width == 0) return 0;
  return static_cast<std::size_t>(std::ceil(static_cast<double>(width) * factor - 1e-9));
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

ConfigSections parse_sections(std::string_view text) {
  ConfigSections sections;
  sections[""];
  std::string current;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      }
      current = trim(std::string_view(line).substr(1, line.size() - 2));
      sections[current];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    if (!sections[current].emplace(key, value).second) {
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
  }
  return sections;
}

void write_model_section(std::string& out, const ArchitectureSpec& m) {
  out += "[model]\n";
  put(out, "kind", to_string(m.kind));
  put(out, "k", m.k);
  put(out, "fast_size", m.fast_size);
  put(out, "slow_size", m.slow_size);
  put(out, "cell_size", m.cell_size);
  put(out, "vocab", m.vocab);
  put(out, "embed_dim", m.embed_dim);
  put(out, "dropout_keep", m.reg.dropout_keep);
  put(out, "zoneout_c", m.reg.zoneout_c);
  put(out, "zoneout_h", m.reg.zoneout_h);
  put(out, "ln_gates", m.ln.gates);
  put(out, "ln_cell", m.ln.cell);
  put(out, "ln_stored_cell", m.ln.normalize_stored_cell);
  put(out, "ln_eps", m.ln.eps);
  put(out, "dropout_slow_input", m.dropout_slow_input);
}

void write_train_section(std::string& out, const TrainConfig& t) {
  out += "[train]\n";
  put(out, "batch", t.batch);
  put(out, "window", t.window);
  put(out, "epochs", t.epochs);
  put(out, "lr", t.lr);
  put(out, "schedule", to_string(t.schedule));
  put(out, "beta1", t.beta1);
  put(out, "beta2", t.beta2);
  put(out, "adam_eps", t.adam_eps);
  put(out, "clip_norm", t.clip_norm);
  put(out, "seed", std::to_string(t.seed));
  put(out, "eval_every", t.eval_every);
  put(out, "log_every", t.log_every);
  put(out, "valid_batch", t.valid_batch);
  put(out, "max_steps", t.max_steps);
}

ArchitectureSpec read_model_section(const Section& kv) {
  ArchitectureSpec m;
  Reader r(kv, "model");
  std::string kind = to_string(m.kind);
  r.get("kind", kind);
  m.kind = parse_arch_kind(kind);
  r.get("k", m.k);
  r.get("fast_size", m.fast_size);
  r.get("slow_size", m.slow_size);
  r.get("cell_size", m.cell_size);
  r.get("vocab", m.vocab);
  r.get("embed_dim", m.embed_dim);
  r.get("dropout_keep", m.reg.dropout_keep);
  r.get("zoneout_c", m.reg.zoneout_c);
  r.get("zoneout_h", m.reg.zoneout_h);
  r.get("ln_gates", m.ln.gates);
  r.get("ln_cell", m.ln.cell);
  r.get("ln_stored_cell", m.ln.normalize_stored_cell);
  r.get("ln_eps", m.ln.eps);
  r.get("dropout_slow_input", m.dropout_slow_input);
  r.finish();
  return m;
}

TrainConfig read_train_section(const Section& kv) {
  TrainConfig t;
  Reader r(kv, "train");
  r.get("batch", t.batch);
  r.get("window", t.window);
  r.get("epochs", t.epochs);
  r.get("lr", t.lr);
  std::string schedule = to_string(t.schedule);
  r.get("schedule", schedule);
  t.schedule = parse_schedule_kind(schedule);
  r.get("beta1", t.beta1);
  r.get("beta2", t.beta2);
  r.get("adam_eps", t.adam_eps);
  r.get("clip_norm", t.clip_norm);
  r.get("seed", t.seed);
  r.get("eval_every", t.eval_every);
  r.get("log_every", t.log_every);
  r.get("valid_batch", t.valid_batch);
  r.get("max_steps", t.max_steps);
  r.finish();
  return t;
}

std::string dump_config(const ExperimentConfig& c) {
  std::string out;
  if (!c.preset.empty()) put(out, "preset", c.preset);
  write_model_section(out, c.model);
  write_train_section(out, c.train);
  out += "[data]\n";
  put(out, "path", c.data.path);
  put(out, "mode", to_string(c.data.mode));
  put(out, "split", c.data.split);
  put(out, "valid_fraction", c.data.valid_fraction);
  put(out, "test_fraction", c.data.test_fraction);
  put(out, "train_size", c.data.sizes.train);
  put(out, "valid_size", c.data.sizes.valid);
  put(out, "test_size", c.data.sizes.test);
  put(out, "allow_unknown", c.data.allow_unknown);
  out += "[output]\n";
  put(out, "dir", c.output_dir);
  return out;
}

ExperimentConfig parse_config(std::string_view text) {
  const ConfigSections sections = parse_sections(text);
  ExperimentConfig c;
  for (const auto& [name, kv] : sections) {
    if (name.empty()) {
      Reader r(kv, "top level");
      r.get("preset", c.preset);
      r.finish();
      if (!c.preset.empty()) {
        // A preset provides defaults for everything not overridden below.
        const std::string chosen = c.preset;
        c = preset(chosen);
      }
    }
  }
  for (const auto& [name, kv] : sections) {
    if (name.empty()) continue;
    if (name == "model") {
      ArchitectureSpec base = c.model;
      // Re-read over the preset: unspecified keys keep preset values.
      Section merged;
      std::string scratch;
      write_model_section(scratch, base);
      merged = parse_sections(scratch)["model"];
      for (const auto& [k, v] : kv) {
        if (!merged.count(k)) throw ConfigError("unknown key '" + k + "' in [model]");
        merged[k] = v;
      }
      c.model = read_model_section(merged);
    } else if (name == "train") {
      std::string scratch;
      write_train_section(scratch, c.train);
      Section merged = parse_sections(scratch)["train"];
      for (const auto& [k, v] : kv) {
        if (!merged.count(k)) throw ConfigError("unknown key '" + k + "' in [train]");
        merged[k] = v;
      }
      c.train = read_train_section(merged);
    } else if (name == "data") {
      Reader r(kv, "data");
      r.get("path", c.data.path);
      std::string mode = to_string(c.data.mode);
      r.get("mode", mode);
      c.data.mode = parse_token_mode(mode);
      r.get("split", c.data.split);
      r.get("valid_fraction", c.data.valid_fraction);
      r.get("test_fraction", c.data.test_fraction);
      r.get("train_size", c.data.sizes.train);
      r.get("valid_size", c.data.sizes.valid);
      r.get("test_size", c.data.sizes.test);
      r.get("allow_unknown", c.data.allow_unknown);
      r.finish();
    } else if (name == "output") {
      Reader r(kv, "output");
      r.get("dir", c.output_dir);
      r.finish();
    } else {
      throw ConfigError("unknown section [" + name + "]");
    }
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::vector<std::string> preset_names() {
  return {"ptb-fs2",          "ptb-fs4",         "enwik8-fs2",
          "enwik8-fs4",       "enwik8-fs4-large", "compare-fs",
          "compare-stacked",  "compare-sequential"};
}

ExperimentConfig preset(std::string_view name) {
  ExperimentConfig c;
  c.preset = std::string(name);
  ArchitectureSpec& m = c.model;
  TrainConfig& t = c.train;
  m.kind = ArchKind::fast_slow;
  m.ln = LayerNormConfig{};
  t.batch = 128;
  t.window = 150;

  // Main-result columns. The dropout value is a drop rate; the model stores
  // the keep probability.
  auto main_results = [&](double drop, double zc, double zh, std::size_t fast,
                          std::size_t slow, std::size_t window, std::size_t embed,
                          double lr, std::size_t epochs, std::size_t k) {
    m.k = k;
    m.reg.dropout_keep = 1.0 - drop;
    m.reg.zoneout_c = zc;
    m.reg.zoneout_h = zh;
    m.fast_size = fast;
    m.slow_size = slow;
    m.embed_dim = embed;
    t.window = window;
    t.lr = lr;
    t.epochs = epochs;
  };
  if (name == "ptb-fs2" || name == "ptb-fs4") {
    main_results(0.35, 0.5, 0.1, name == "ptb-fs2" ? 700 : 500, 400, 150, 128, 0.002,
                 200, name == "ptb-fs2" ? 2 : 4);
    t.schedule = ScheduleKind::ptb_last20;
    c.data.mode = TokenMode::ptb_chars;
    c.data.split = "ptb";
  } else if (name == "enwik8-fs2" || name == "enwik8-fs4") {
    main_results(0.2, 0.3, 0.05, name == "enwik8-fs2" ? 900 : 730, 1500, 150, 256, 0.001,
                 35, name == "enwik8-fs2" ? 2 : 4);
    t.schedule = ScheduleKind::plateau_div10;
    c.data.split = "enwik8";
  } else if (name == "enwik8-fs4-large") {
    main_results(0.25, 0.3, 0.05, 1200, 1500, 100, 256, 0.001, 50, 4);
    t.schedule = ScheduleKind::plateau_div10;
    c.data.split = "enwik8";
  } else if (name == "compare-fs" || name == "compare-stacked" ||
             name == "compare-sequential") {
    // Network-dynamics comparison: no dropout or zoneout, layer norm on the
    // cell state only, 20 epochs of Adam.
    m.reg = RegularizerConfig{};
    m.ln.gates = false;
    m.ln.cell = true;
    m.embed_dim = 256;
    t.lr = 0.001;
    t.epochs = 20;
    t.schedule = ScheduleKind::constant;
    c.data.split = "enwik8";
    if (name == "compare-fs") {
      m.k = 4;
      m.fast_size = 450;
      m.slow_size = 450;
    } else if (name == "compare-stacked") {
      m.kind = ArchKind::stacked;
      m.k = 5;
      m.cell_size = 375;
    } else {
      m.kind = ArchKind::sequential;
      m.k = 5;
      m.cell_size = 500;
    }
  } else {
    throw ConfigError("unknown preset '" + std::string(name) + "'");
  }
  return c;
}

ExperimentConfig apply_scale(ExperimentConfig c, double factor) {
  if (!(factor > 0.0)) throw ConfigError("scale must be positive");
  c.model.fast_size = scaled(c.model.fast_size, factor);
  c.model.slow_size = scaled(c.model.slow_size, factor);
  c.model.cell_size = scaled(c.model.cell_size, factor);
  c.model.embed_dim = scaled(c.model.embed_dim, factor);
  return c;
}

std::string config_hash(const ExperimentConfig& config) {
  ExperimentConfig keyed = config;
  keyed.output_dir.clear();
  const std::string text = dump_config(keyed);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

SplitSizes resolve_split(const DataConfig& data, std::size_t length) {
  if (data.split == "enwik8" || data.split == "ptb") return preset_split(data.split);
  if (data.split == "fraction") {
    return proportional_split(length, data.valid_fraction, data.test_fraction);
  }
  if (data.split == "sizes") return data.sizes;
  throw ConfigError("unknown split rule '" + data.split + "'");
}

Corpus load_corpus(const DataConfig& data) {
  if (data.path.empty()) throw DataError("no data path configured");
  Corpus corpus = ingest(data.path, data.mode, data.allow_unknown);
  const SplitSizes sizes = resolve_split(data, corpus.symbols.size());
  return split(std::move(corpus), sizes);
}

}  // namespace fsrnn

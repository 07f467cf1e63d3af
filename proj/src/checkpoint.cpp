// Copyright 2026 The fsrnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsrnn/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "fsrnn/config.hpp"
#include "fsrnn/errors.hpp"

namespace fsrnn {

namespace {

constexpr char kMagic[8] = {'F', 'S', 'R', 'N', 'N', 'C', 'K', 'P'};

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
  return v;
}

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    out_.append(static_cast<const char*>(p), n);
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) {
    v = to_little(v);
    bytes(&v, 4);
  }
  void u64(std::uint64_t v) {
    v = to_little(v);
    bytes(&v, 8);
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str32(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void blob(const Tensor& t) {
    u32(static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d : t.shape()) u64(d);
    for (double v : t.data()) f64(v);
  }
  void values(const std::vector<double>& v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  void named(const std::vector<NamedTensor>& tensors) {
    u64(tensors.size());
    for (const auto& [name, t] : tensors) {
      str32(name);
      blob(t);
    }
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  void bytes(void* p, std::size_t n) {
    if (pos_ + n > in_.size()) throw FormatError("checkpoint is truncated");
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return to_little(v);
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, 8);
    return to_little(v);
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str32() {
    const std::uint32_t n = u32();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  Tensor blob() {
    const std::uint32_t ndim = u32();
    if (ndim > 8) throw FormatError("checkpoint tensor has implausible rank");
    Shape shape(ndim);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = u64();
      n *= d;
    }
    if (n * 8 > in_.size() - pos_) throw FormatError("checkpoint is truncated");
    std::vector<double> data(n);
    for (double& v : data) v = f64();
    return Tensor(std::move(shape), std::move(data));
  }
  std::vector<double> values() {
    const std::uint64_t n = u64();
    if (n * 8 > in_.size() - pos_) throw FormatError("checkpoint is truncated");
    std::vector<double> v(n);
    for (double& x : v) x = f64();
    return v;
  }
  std::vector<NamedTensor> named() {
    const std::uint64_t n = u64();
    std::vector<NamedTensor> out;
    for (std::uint64_t i = 0; i < n; ++i) {
      std::string name = str32();
      out.emplace_back(std::move(name), blob());
    }
    return out;
  }
  bool at_end() const { return pos_ == in_.size(); }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

void put(std::string& out, const char* key, const std::string& value) {
  out += key;
  out += " = ";
  out += value;
  out += '\n';
}

std::string header_text(const Checkpoint& ck) {
  std::string out;
  write_model_section(out, ck.spec);
  write_train_section(out, ck.config);
  out += "[data]\n";
  put(out, "mode", to_string(ck.mode));
  put(out, "has_unknown", ck.vocab.has_unknown ? "true" : "false");
  std::string symbols;
  for (std::size_t i = 0; i < ck.vocab.symbols.size(); ++i) {
    if (i) symbols += ',';
    symbols += std::to_string(ck.vocab.symbols[i]);
  }
  put(out, "symbols", symbols);
  const TrainingProgress& p = ck.progress;
  out += "[progress]\n";
  put(out, "epoch", std::to_string(p.epoch));
  put(out, "window", std::to_string(p.window));
  put(out, "step", std::to_string(p.step));
  put(out, "skipped", std::to_string(p.skipped));
  put(out, "consecutive_skips", std::to_string(p.consecutive_skips));
  put(out, "best_valid_bpc", format_double(p.best_valid_bpc));
  put(out, "has_best", p.has_best ? "true" : "false");
  put(out, "lr", format_double(p.lr));
  put(out, "schedule_best", format_double(p.schedule_best));
  put(out, "schedule_bad_epochs", std::to_string(p.schedule_bad_epochs));
  put(out, "interval_loss", format_double(p.interval_loss));
  put(out, "interval_grad_norm", format_double(p.interval_grad_norm));
  put(out, "interval_count", std::to_string(p.interval_count));
  put(out, "max_post_clip_norm", format_double(p.max_post_clip_norm));
  return out;
}

template <typename T>
T number(const std::map<std::string, std::string>& kv, const char* key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw FormatError(std::string("checkpoint header lacks ") + key);
  T v{};
  const std::string& s = it->second;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw FormatError(std::string("checkpoint header has a bad ") + key);
  }
  return v;
}

bool flag(const std::map<std::string, std::string>& kv, const char* key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw FormatError(std::string("checkpoint header lacks ") + key);
  return it->second == "true";
}

void fill_params(ModelParams& params, const std::vector<NamedTensor>& blobs) {
  auto named = params.named();
  if (named.size() != blobs.size()) {
    throw FormatError("checkpoint has " + std::to_string(blobs.size()) +
                      " parameter tensors, architecture needs " +
                      std::to_string(named.size()));
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    auto& [name, t] = named[i];
    const auto& [bname, b] = blobs[i];
    if (name != bname || t.shape() != b.shape()) {
      throw FormatError("checkpoint tensor '" + bname + "' " + shape_string(b.shape()) +
                        " does not match '" + name + "' " + shape_string(t.shape()));
    }
    std::copy(b.data().begin(), b.data().end(), t.data().begin());
  }
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(Checkpoint::kVersion);
  const std::string header = header_text(ck);
  w.u64(header.size());
  w.bytes(header.data(), header.size());

  w.named(ck.params.named());
  w.u8(ck.best_params ? 1 : 0);
  if (ck.best_params) w.named(ck.best_params->named());

  const OptimizerState& o = ck.optimizer;
  w.u64(o.t);
  w.f64(o.hyper.lr);
  w.f64(o.hyper.beta1);
  w.f64(o.hyper.beta2);
  w.f64(o.hyper.eps);
  w.u64(o.m.size());
  for (const auto& m : o.m) w.values(m);
  for (const auto& v : o.v) w.values(v);

  w.u8(ck.carried ? 1 : 0);
  if (ck.carried) {
    w.u64(ck.carried->states.size());
    for (const auto& s : ck.carried->states) {
      w.blob(s.h);
      w.blob(s.c);
    }
  }
  w.str32(ck.dropout_rng);
  w.str32(ck.zoneout_rng);
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw FormatError("not an fsrnn checkpoint");
  }
  const std::uint32_t version = r.u32();
  if (version != Checkpoint::kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint64_t header_len = r.u64();
  std::string header(header_len, '\0');
  r.bytes(header.data(), header_len);
  const ConfigSections sections = parse_sections(header);

  Checkpoint ck;
  try {
    ck.spec = read_model_section(sections.at("model"));
    ck.config = read_train_section(sections.at("train"));
  } catch (const std::out_of_range&) {
    throw FormatError("checkpoint header lacks a model or train section");
  }
  const auto& data = sections.count("data") ? sections.at("data") : sections.at("");
  ck.mode = parse_token_mode(data.count("mode") ? data.at("mode") : "");
  ck.vocab.has_unknown = flag(data, "has_unknown");
  {
    const std::string& list = data.count("symbols") ? data.at("symbols") : std::string();
    std::size_t start = 0;
    while (start < list.size()) {
      std::size_t end = list.find(',', start);
      if (end == std::string::npos) end = list.size();
      Symbol s = 0;
      auto [p, ec] = std::from_chars(list.data() + start, list.data() + end, s);
      if (ec != std::errc() || p != list.data() + end) {
        throw FormatError("checkpoint vocabulary is malformed");
      }
      ck.vocab.symbols.push_back(s);
      start = end + 1;
    }
  }
  if (!sections.count("progress")) throw FormatError("checkpoint header lacks progress");
  const auto& pg = sections.at("progress");
  TrainingProgress& p = ck.progress;
  p.epoch = number<std::size_t>(pg, "epoch");
  p.window = number<std::size_t>(pg, "window");
  p.step = number<std::size_t>(pg, "step");
  p.skipped = number<std::size_t>(pg, "skipped");
  p.consecutive_skips = number<std::size_t>(pg, "consecutive_skips");
  p.best_valid_bpc = number<double>(pg, "best_valid_bpc");
  p.has_best = flag(pg, "has_best");
  p.lr = number<double>(pg, "lr");
  p.schedule_best = number<double>(pg, "schedule_best");
  p.schedule_bad_epochs = number<std::size_t>(pg, "schedule_bad_epochs");
  p.interval_loss = number<double>(pg, "interval_loss");
  p.interval_grad_norm = number<double>(pg, "interval_grad_norm");
  p.interval_count = number<std::size_t>(pg, "interval_count");
  p.max_post_clip_norm = number<double>(pg, "max_post_clip_norm");

  Rng scratch(0);
  ck.params = ModelParams::create(ck.spec, scratch);
  fill_params(ck.params, r.named());
  if (r.u8()) {
    ModelParams best = ModelParams::create(ck.spec, scratch);
    fill_params(best, r.named());
    ck.best_params = std::move(best);
  }

  OptimizerState& o = ck.optimizer;
  o.t = r.u64();
  o.hyper.lr = r.f64();
  o.hyper.beta1 = r.f64();
  o.hyper.beta2 = r.f64();
  o.hyper.eps = r.f64();
  const std::uint64_t moments = r.u64();
  const auto tensors = ck.params.tensors();
  if (moments != tensors.size()) throw FormatError("optimizer state does not match parameters");
  for (std::uint64_t i = 0; i < moments; ++i) o.m.push_back(r.values());
  for (std::uint64_t i = 0; i < moments; ++i) o.v.push_back(r.values());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (o.m[i].size() != tensors[i].size() || o.v[i].size() != tensors[i].size()) {
      throw FormatError("optimizer moment size mismatch");
    }
  }

  if (r.u8()) {
    ModelState state;
    const std::uint64_t n = r.u64();
    for (std::uint64_t i = 0; i < n; ++i) {
      Tensor h = r.blob();
      Tensor c = r.blob();
      state.states.push_back({h, c});
    }
    ck.carried = std::move(state);
  }
  ck.dropout_rng = r.str32();
  ck.zoneout_rng = r.str32();
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint");
  return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(checkpoint);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace fsrnn

// Copyright 2026 The fsrnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsrnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>

#include "fsrnn/errors.hpp"
#include "fsrnn/rng.hpp"

namespace fsrnn {

std::string to_string(TokenMode mode) {
  return mode == TokenMode::ptb_chars ? "ptb_chars" : "enwik8_bytes";
}

TokenMode parse_token_mode(std::string_view text) {
  if (text == "ptb_chars") return TokenMode::ptb_chars;
  if (text == "enwik8_bytes") return TokenMode::enwik8_bytes;
  throw ConfigError("unknown token mode '" + std::string(text) + "'");
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "valid") return Split::valid;
  if (text == "test") return Split::test;
  throw ConfigError("unknown split '" + std::string(text) + "'");
}

namespace {

constexpr Symbol kRawByteBase = 0x110000;

// Length of a well-formed UTF-8 sequence starting at i, or 0.
std::size_t utf8_length(std::string_view s, std::size_t i, Symbol& cp) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  std::size_t len = 0;
  Symbol min = 0;
  if (b0 < 0x80) {
    cp = b0;
    return 1;
  } else if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
    min = 0x80;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
    min = 0x800;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
    min = 0x10000;
  } else {
    return 0;
  }
  if (i + len > s.size()) return 0;
  for (std::size_t k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(s[i + k]);
    if ((b & 0xC0) != 0x80) return 0;
    cp = (cp << 6) | (b & 0x3F);
  }
  if (cp < min || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return 0;
  return len;
}

void append_utf8(std::string& out, Symbol cp) {
  if (cp >= kRawByteBase) {
    out.push_back(static_cast<char>(cp - kRawByteBase));
  } else if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

Vocab build_vocab(std::span<const Symbol> train, bool allow_unknown) {
  std::vector<bool> seen_small(256, false);
  std::set<Symbol> large;
  for (Symbol s : train) {
    if (s < 256) {
      seen_small[s] = true;
    } else {
      large.insert(s);
    }
  }
  Vocab v;
  v.has_unknown = allow_unknown;
  for (Symbol s = 0; s < 256; ++s)
    if (seen_small[s]) v.symbols.push_back(s);
  v.symbols.insert(v.symbols.end(), large.begin(), large.end());
  return v;
}

}  // namespace

std::vector<Symbol> tokenize(std::string_view bytes, TokenMode mode) {
  std::vector<Symbol> out;
  out.reserve(bytes.size());
  if (mode == TokenMode::enwik8_bytes) {
    for (char c : bytes) out.push_back(static_cast<unsigned char>(c));
    return out;
  }
  for (std::size_t i = 0; i < bytes.size();) {
    Symbol cp = 0;
    const std::size_t len = utf8_length(bytes, i, cp);
    if (len == 0) {
      out.push_back(kRawByteBase + static_cast<unsigned char>(bytes[i]));
      ++i;
    } else {
      out.push_back(cp);
      i += len;
    }
  }
  return out;
}

std::string detokenize(std::span<const Symbol> symbols, TokenMode mode) {
  std::string out;
  out.reserve(symbols.size());
  for (Symbol s : symbols) {
    if (mode == TokenMode::enwik8_bytes) {
      out.push_back(static_cast<char>(s));
    } else {
      append_utf8(out, s);
    }
  }
  return out;
}

int Vocab::unknown_id() const {
  return has_unknown ? static_cast<int>(symbols.size()) : -1;
}

int Vocab::id_of(Symbol s) const {
  auto it = std::lower_bound(symbols.begin(), symbols.end(), s);
  if (it == symbols.end() || *it != s) return -1;
  return static_cast<int>(it - symbols.begin());
}

Symbol Vocab::symbol_of(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= symbols.size()) {
    throw IndexError("vocab id " + std::to_string(id) + " has no symbol");
  }
  return symbols[static_cast<std::size_t>(id)];
}

std::span<const int> Corpus::tokens(Split split) const {
  const SplitRange& r = splits[static_cast<std::size_t>(split)];
  return std::span<const int>(ids).subspan(r.begin, r.size());
}

std::string Corpus::text(Split split) const {
  const SplitRange& r = splits[static_cast<std::size_t>(split)];
  return detokenize(std::span<const Symbol>(symbols).subspan(r.begin, r.size()), mode);
}

Corpus ingest_text(std::string_view text, TokenMode mode, bool allow_unknown) {
  if (text.empty()) throw DataError("corpus is empty");
  Corpus c;
  c.mode = mode;
  c.symbols = tokenize(text, mode);
  c.vocab.has_unknown = allow_unknown;
  return split(std::move(c), SplitSizes{0, 0, 0});
}

Corpus ingest(const std::filesystem::path& path, TokenMode mode, bool allow_unknown) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty()) throw DataError("'" + path.string() + "' is empty");
  return ingest_text(bytes, mode, allow_unknown);
}

Corpus split(Corpus corpus, SplitSizes sizes) {
  const std::size_t n = corpus.symbols.size();
  if (sizes.train == 0 && sizes.valid == 0 && sizes.test == 0) sizes.train = n;
  if (sizes.train + sizes.valid + sizes.test > n) {
    throw DataError("split sizes " + std::to_string(sizes.train) + "/" +
                    std::to_string(sizes.valid) + "/" + std::to_string(sizes.test) +
                    " exceed corpus length " + std::to_string(n));
  }
  if (sizes.train == 0) throw DataError("training split is empty");
  corpus.splits[0] = {0, sizes.train};
  corpus.splits[1] = {sizes.train, sizes.train + sizes.valid};
  corpus.splits[2] = {sizes.train + sizes.valid, sizes.train + sizes.valid + sizes.test};
  const Vocab vocab = build_vocab(
      std::span<const Symbol>(corpus.symbols).subspan(0, sizes.train),
      corpus.vocab.has_unknown);
  encode_with(corpus, vocab);
  return corpus;
}

void encode_with(Corpus& corpus, const Vocab& vocab) {
  corpus.vocab = vocab;
  corpus.ids.resize(corpus.symbols.size());
  for (std::size_t i = 0; i < corpus.symbols.size(); ++i) {
    int id = vocab.id_of(corpus.symbols[i]);
    if (id < 0) {
      if (!vocab.has_unknown) {
        throw DataError("symbol " + std::to_string(corpus.symbols[i]) +
                        " at position " + std::to_string(i) +
                        " is outside the vocabulary (vocab mismatch)");
      }
      id = vocab.unknown_id();
    }
    corpus.ids[i] = id;
  }
}

SplitSizes preset_split(std::string_view name) {
  if (name == "ptb") return {5'100'000, 400'000, 450'000};
  if (name == "enwik8") return {90'000'000, 5'000'000, 5'000'000};
  throw ConfigError("unknown split preset '" + std::string(name) + "'");
}

SplitSizes proportional_split(std::size_t n, double valid_frac, double test_frac) {
  if (valid_frac < 0.0 || test_frac < 0.0 || valid_frac + test_frac >= 1.0) {
    throw ConfigError("split fractions must be non-negative and sum below 1");
  }
  SplitSizes s;
  s.valid = static_cast<std::size_t>(std::floor(valid_frac * static_cast<double>(n)));
  s.test = static_cast<std::size_t>(std::floor(test_frac * static_cast<double>(n)));
  s.train = n - s.valid - s.test;
  return s;
}

std::vector<int> BatchStream::Window::inputs_at(std::size_t t) const {
  std::vector<int> out(lanes);
  for (std::size_t l = 0; l < lanes; ++l) out[l] = inputs[l * length + t];
  return out;
}

std::vector<int> BatchStream::Window::targets_at(std::size_t t) const {
  std::vector<int> out(lanes);
  for (std::size_t l = 0; l < lanes; ++l) out[l] = targets[l * length + t];
  return out;
}

BatchStream::BatchStream(std::span<const int> tokens, std::size_t lanes,
                         std::size_t window)
    : tokens_(tokens), lanes_(lanes), window_(window) {
  if (lanes == 0 || window == 0) {
    throw ConfigError("batch lanes and window length must be positive");
  }
  if (tokens.size() < lanes * (window + 1)) {
    throw DataError("split of " + std::to_string(tokens.size()) +
                    " tokens is too small for " + std::to_string(lanes) +
                    " lanes of window " + std::to_string(window) +
                    "; need at least " + std::to_string(lanes * (window + 1)));
  }
  lane_length_ = tokens.size() / lanes;
  num_windows_ = (lane_length_ - 1) / window;
}

BatchStream::Window BatchStream::at(std::size_t index) const {
  if (index >= num_windows_) {
    throw IndexError("window " + std::to_string(index) + " of " +
                     std::to_string(num_windows_));
  }
  Window w;
  w.lanes = lanes_;
  w.length = window_;
  w.inputs.resize(lanes_ * window_);
  w.targets.resize(lanes_ * window_);
  for (std::size_t l = 0; l < lanes_; ++l) {
    const std::size_t base = l * lane_length_ + index * window_;
    for (std::size_t t = 0; t < window_; ++t) {
      w.inputs[l * window_ + t] = tokens_[base + t];
      w.targets[l * window_ + t] = tokens_[base + t + 1];
    }
  }
  return w;
}

BatchStream::Window BatchStream::next() { return at(cursor_++); }

void BatchStream::seek(std::size_t cursor) {
  if (cursor > num_windows_) throw IndexError("seek past the end of the stream");
  cursor_ = cursor;
}

namespace {

class Discrete {
 public:
  explicit Discrete(const std::vector<double>& weights) {
    double acc = 0.0;
    for (double w : weights) cumulative_.push_back(acc += w);
  }
  std::size_t sample(Rng& rng) const {
    const double u = rng.uniform() * cumulative_.back();
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()),
                                 cumulative_.size() - 1);
  }

 private:
  std::vector<double> cumulative_;
};

std::vector<double> zipf(std::size_t n, double exponent) {
  std::vector<double> w(n);
  for (std::size_t r = 0; r < n; ++r) w[r] = 1.0 / std::pow(static_cast<double>(r + 1), exponent);
  return w;
}

std::string make_word(Rng& rng, std::size_t syllables) {
  static constexpr std::string_view consonants = "bcdfghklmnprstvwz";
  static constexpr std::string_view vowels = "aeiouy";
  static constexpr std::string_view codas = "nrstlk";
  std::string w;
  for (std::size_t s = 0; s < syllables; ++s) {
    w.push_back(consonants[rng.below(consonants.size())]);
    w.push_back(vowels[rng.below(vowels.size())]);
  }
  if (rng.bernoulli(0.35)) w.push_back(codas[rng.below(codas.size())]);
  return w;
}

}  // namespace

std::string synthetic_corpus(std::size_t bytes, std::uint64_t seed) {
  Rng rng(seed, RngStream::corpus);
  constexpr std::size_t kLexicon = 1500;
  constexpr std::size_t kTopics = 8;
  constexpr std::size_t kTopicWords = 120;

  std::vector<std::string> lexicon;
  std::set<std::string> seen;
  // Short function words first so they receive the highest Zipf weight.
  while (lexicon.size() < 24) {
    std::string w = make_word(rng, 1);
    if (seen.insert(w).second) lexicon.push_back(w);
  }
  const Discrete syllable_count({0.25, 0.45, 0.3});
  while (lexicon.size() < kLexicon) {
    std::string w = make_word(rng, 1 + syllable_count.sample(rng));
    if (seen.insert(w).second) lexicon.push_back(w);
  }
  const Discrete global(zipf(kLexicon, 1.0));
  std::vector<std::vector<std::size_t>> topics(kTopics);
  for (auto& t : topics) {
    for (std::size_t i = 0; i < kTopicWords; ++i) t.push_back(24 + rng.below(kLexicon - 24));
  }
  const Discrete topic_pick(zipf(kTopicWords, 0.8));
  std::vector<std::array<std::size_t, 2>> successors(kLexicon);
  for (auto& s : successors) s = {global.sample(rng), global.sample(rng)};

  std::string out;
  out.reserve(bytes + 256);
  while (out.size() < bytes) {
    const auto& topic = topics[rng.below(kTopics)];
    std::string name = make_word(rng, 2 + rng.below(2));
    name[0] = static_cast<char>(name[0] - 'a' + 'A');
    const std::size_t sentences = 3 + rng.below(6);
    for (std::size_t s = 0; s < sentences; ++s) {
      const std::size_t words = 5 + rng.below(10);
      std::size_t prev = kLexicon;
      std::size_t close_paren_at = 0;
      for (std::size_t i = 0; i < words; ++i) {
        if (i > 0) out.push_back(' ');
        if (close_paren_at == 0 && i > 0 && i + 2 < words && rng.bernoulli(0.06)) {
          out.push_back('(');
          close_paren_at = i + 1 + rng.below(3);
        }
        const double u = rng.uniform();
        std::string_view word;
        if (prev < kLexicon && u < 0.3) {
          prev = successors[prev][rng.below(2)];
          word = lexicon[prev];
        } else if (u < 0.6) {
          prev = topic[topic_pick.sample(rng)];
          word = lexicon[prev];
        } else if (u < 0.66) {
          prev = kLexicon;
          word = name;
        } else {
          prev = global.sample(rng);
          word = lexicon[prev];
        }
        out.append(word);
        if (close_paren_at != 0 && (i == close_paren_at || i + 1 == words)) {
          out.push_back(')');
          close_paren_at = 0;
        } else if (i + 1 < words && rng.bernoulli(0.06)) {
          out.push_back(',');
        }
      }
      out.push_back('.');
      out.push_back(s + 1 == sentences ? '\n' : ' ');
    }
  }
  out.resize(bytes);
  return out;
}

}  // namespace fsrnn

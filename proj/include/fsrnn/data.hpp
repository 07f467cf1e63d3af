// Copyright 2026 The fsrnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fsrnn {

enum class TokenMode {
  ptb_chars,     // UTF-8 code points of preprocessed text
  enwik8_bytes,  // raw bytes
};

std::string to_string(TokenMode mode);
TokenMode parse_token_mode(std::string_view text);

using Symbol = std::uint32_t;

// Symbols (code points or bytes) of a text. Invalid UTF-8 bytes in
// ptb_chars mode become 0x110000 + byte so that detokenize() inverts it.
std::vector<Symbol> tokenize(std::string_view bytes, TokenMode mode);
std::string detokenize(std::span<const Symbol> symbols, TokenMode mode);

/// Sorted symbol table. When `has_unknown` is set, the id one past the last
/// symbol is reserved for symbols never seen in the training split.
struct Vocab {
  std::vector<Symbol> symbols;
  bool has_unknown = true;

  std::size_t size() const { return symbols.size() + (has_unknown ? 1 : 0); }
  std::size_t symbol_count() const { return symbols.size(); }
  int unknown_id() const;
  int id_of(Symbol s) const;  // -1 when absent
  Symbol symbol_of(int id) const;
  friend bool operator==(const Vocab&, const Vocab&) = default;
};

enum class Split { train = 0, valid = 1, test = 2 };

std::string to_string(Split split);
Split parse_split(std::string_view text);

struct SplitRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

struct SplitSizes {
  std::size_t train = 0;
  std::size_t valid = 0;
  std::size_t test = 0;
  friend bool operator==(const SplitSizes&, const SplitSizes&) = default;
};

struct Corpus {
  TokenMode mode = TokenMode::enwik8_bytes;
  std::vector<Symbol> symbols;
  std::vector<int> ids;  // symbols encoded against vocab
  Vocab vocab;
  std::array<SplitRange, 3> splits;

  std::span<const int> tokens(Split split) const;
  std::string text(Split split) const;
};

/// Reads a file; the whole file starts as the training split.
Corpus ingest(const std::filesystem::path& path, TokenMode mode,
              bool allow_unknown = true);
Corpus ingest_text(std::string_view text, TokenMode mode,
                   bool allow_unknown = true);

/// Contiguous train → valid → test prefix split. Rebuilds the vocabulary
/// from the training split only and re-encodes every token.
Corpus split(Corpus corpus, SplitSizes sizes);

/// Named split presets: "ptb" (5.1M/400K/450K) and "enwik8" (90M/5M/5M).
SplitSizes preset_split(std::string_view name);

/// floor(valid_frac·n) and floor(test_frac·n); the remainder goes to train.
SplitSizes proportional_split(std::size_t n, double valid_frac, double test_frac);

/// Re-encodes a corpus against an existing vocabulary (e.g. from a
/// checkpoint). Symbols outside it map to the unknown id, or raise a
/// DataError when the vocabulary has none.
void encode_with(Corpus& corpus, const Vocab& vocab);

/// Splits a token range into `lanes` contiguous lanes of ⌊N/B⌋ tokens
/// (tail dropped) and walks them in windows of `window` inputs. Targets are
/// the inputs shifted by one within the lane, so consecutive windows of a
/// lane are adjacent in the text.
class BatchStream {
 public:
  struct Window {
    std::size_t lanes = 0;
    std::size_t length = 0;
    std::vector<int> inputs;   // [lanes × length], lane-major
    std::vector<int> targets;  // [lanes × length]

    // Token ids of every lane at time t.
    std::vector<int> inputs_at(std::size_t t) const;
    std::vector<int> targets_at(std::size_t t) const;
  };

  BatchStream(std::span<const int> tokens, std::size_t lanes, std::size_t window);

  std::size_t lanes() const { return lanes_; }
  std::size_t window() const { return window_; }
  std::size_t lane_length() const { return lane_length_; }
  std::size_t num_windows() const { return num_windows_; }

  Window at(std::size_t index) const;

  bool has_next() const { return cursor_ < num_windows_; }
  Window next();
  void reset() { cursor_ = 0; }
  std::size_t cursor() const { return cursor_; }
  void seek(std::size_t cursor);

 private:
  std::span<const int> tokens_;
  std::size_t lanes_;
  std::size_t window_;
  std::size_t lane_length_;
  std::size_t num_windows_;
  std::size_t cursor_ = 0;
};

/// Seeded synthetic English-like text for tests and desk-scale runs.
///
/// Words come from a syllable lexicon. Each paragraph draws a topic that
/// skews word choice, and a capitalized name that recurs inside it; words
/// also have preferred successors. This gives structure at word, sentence
/// and paragraph range.
std::string synthetic_corpus(std::size_t bytes, std::uint64_t seed);

}  // namespace fsrnn

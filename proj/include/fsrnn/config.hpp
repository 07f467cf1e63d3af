// Copyright 2026 The fsrnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "fsrnn/architectures.hpp"
#include "fsrnn/data.hpp"
#include "fsrnn/training.hpp"

namespace fsrnn {

struct DataConfig {
  std::string path;
  TokenMode mode = TokenMode::enwik8_bytes;
  // "enwik8", "ptb", "fraction" or "sizes".
  std::string split = "fraction";
  double valid_fraction = 0.05;
  double test_fraction = 0.05;
  SplitSizes sizes;
  bool allow_unknown = true;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct ExperimentConfig {
  std::string preset;
  ArchitectureSpec model;  // model.vocab == 0 means "take it from the data"
  TrainConfig train;
  DataConfig data;
  std::string output_dir = "runs";

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&);
};

/// Sectioned key-value text:
///
///   preset = compare-fs
///   [model]
///   kind = fast_slow
///   ...
///
/// `#` starts a comment. Unknown sections or keys are rejected.
using ConfigSections = std::map<std::string, std::map<std::string, std::string>>;

ConfigSections parse_sections(std::string_view text);

std::string dump_config(const ExperimentConfig& config);
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Writers/readers for the [model] and [train] sections, shared with the
// checkpoint header.
void write_model_section(std::string& out, const ArchitectureSpec& spec);
void write_train_section(std::string& out, const TrainConfig& config);
ArchitectureSpec read_model_section(const std::map<std::string, std::string>& kv);
TrainConfig read_train_section(const std::map<std::string, std::string>& kv);

std::string format_double(double v);

std::vector<std::string> preset_names();
ExperimentConfig preset(std::string_view name);

/// Multiplies every width (fast, slow, cell, embedding) by `factor`,
/// rounding up; nothing else changes.
ExperimentConfig apply_scale(ExperimentConfig config, double factor);

/// 16 hex digits identifying the effective configuration.
std::string config_hash(const ExperimentConfig& config);

SplitSizes resolve_split(const DataConfig& data, std::size_t length);

/// Ingests and splits the configured data file.
Corpus load_corpus(const DataConfig& data);

}  // namespace fsrnn

// Copyright 2026 The fsrnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>

#include "fsrnn/training.hpp"

namespace fsrnn {

// File layout, all integers and reals little-endian:
//
//   "FSRNNCKP"  u32 version  u64 header_len  header text
//   params      u64 count, then named blobs
//   best        u8 present [u64 count, named blobs]
//   optimizer   u64 t, f64 lr β1 β2 ε, u64 count, m blobs, v blobs
//   carried     u8 present [u64 count, blobs]
//   rng         u32 len + dropout state, u32 len + zoneout state
//
// The header holds the [model], [train], [data] and [progress] sections in
// the config text format. A named blob is u32 name_len, name, u32 ndim,
// u64 dims..., then IEEE-754 doubles.
std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fsrnn

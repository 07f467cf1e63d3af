// Copyright 2026 The fsrnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

#include "fsrnn/rng.hpp"
#include "fsrnn/tensor.hpp"

namespace fsrnn {

/// Semi-orthogonal [rows×cols] matrix: orthonormal rows when rows ≤ cols,
/// orthonormal columns otherwise.
///
/// A Gaussian sample of the tall orientation is factored with Householder
/// QR; each column of the thin Q is multiplied by the sign of the matching
/// diagonal entry of R so that the result depends only on the sample.
Tensor orthogonal_init(std::size_t rows, std::size_t cols, Rng& rng);

}  // namespace fsrnn

// Copyright 2026 The fsrnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsrnn/init.hpp"

#include <Eigen/Dense>

#include "fsrnn/errors.hpp"

namespace fsrnn {

Tensor orthogonal_init(std::size_t rows, std::size_t cols, Rng& rng) {
  if (rows == 0 || cols == 0) {
    throw DimensionError("orthogonal_init: dimensions must be positive");
  }
  const bool wide = rows < cols;
  const auto tall = static_cast<Eigen::Index>(wide ? cols : rows);
  const auto thin = static_cast<Eigen::Index>(wide ? rows : cols);
  Eigen::MatrixXd sample(tall, thin);
  // Row-major fill order keeps the draw sequence independent of Eigen's
  // storage order.
  for (Eigen::Index i = 0; i < tall; ++i)
    for (Eigen::Index j = 0; j < thin; ++j) sample(i, j) = rng.normal();

  Eigen::HouseholderQR<Eigen::MatrixXd> qr(sample);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(tall, thin);
  const Eigen::MatrixXd& r = qr.matrixQR();
  for (Eigen::Index j = 0; j < thin; ++j) {
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  }

  Tensor out(Shape{rows, cols});
  auto v = out.data();
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const auto ii = static_cast<Eigen::Index>(i);
      const auto jj = static_cast<Eigen::Index>(j);
      v[i * cols + j] = wide ? q(jj, ii) : q(ii, jj);
    }
  }
  return out;
}

}  // namespace fsrnn

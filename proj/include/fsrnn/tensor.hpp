// Copyright 2026 The fsrnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fsrnn {

using Shape = std::vector<std::size_t>;

/// Allocator with a fixed 64-byte alignment. Vectorized kernels peel
/// differently depending on the address of their operands, so fixing the
/// alignment keeps results bit-reproducible across runs.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
  }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class Graph;

namespace detail {

struct TensorNode {
  Shape shape;
  Buffer data;
  Buffer grad;  // empty until the first accumulation
  bool requires_grad = false;
  const Graph* producer = nullptr;  // null for leaves
  std::string tag;                  // scope label of the producing op
};

}  // namespace detail

/// Dense row-major array of doubles with an optional gradient slot.
///
/// A Tensor is a shared handle: copies alias the same storage, which is what
/// lets a recorded graph write gradients back into parameters. Use clone()
/// or detach() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t ndim() const { return shape().size(); }
  // Rows/cols view: a 1-D tensor is a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data();
  std::span<const double> data() const;
  double& operator[](std::size_t i);
  double operator[](std::size_t i) const;
  double item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag = true);

  bool has_grad() const;
  // Allocates a zero gradient on first access. Gradients belong to the
  // shared node, so a const handle can still accumulate into them.
  std::span<double> grad() const;
  void zero_grad();

  // Fresh leaf with copied values and no gradient history.
  Tensor detach() const;
  // Fresh leaf with copied values, keeping requires_grad.
  Tensor clone() const;

  bool all_finite() const;
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  const Graph* producer() const;
  const std::string& tag() const;

  std::shared_ptr<detail::TensorNode> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::TensorNode> node)
      : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace fsrnn

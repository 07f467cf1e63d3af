// Copyright 2026 The fsrnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsrnn/graph.hpp"

#include <algorithm>

#include "fsrnn/errors.hpp"

namespace fsrnn {

namespace {

thread_local Graph* t_active_graph = nullptr;
thread_local std::string t_tag;

}  // namespace

void Graph::record(std::string op, std::vector<Tensor> inputs,
                   std::vector<Tensor> outputs, std::function<void()> backward) {
  for (Tensor& out : outputs) {
    auto node = out.node();
    node->producer = this;
    node->requires_grad = true;
    node->tag = t_tag;
  }
  records_.push_back(Record{std::move(op), t_tag, std::move(inputs),
                            std::move(outputs), std::move(backward)});
}

void Graph::backward(const Tensor& output) {
  if (output.size() != 1) {
    throw GraphError("backward() without a seed needs a scalar output, got " +
                     shape_string(output.shape()));
  }
  const double one = 1.0;
  backward(output, std::span<const double>(&one, 1));
}

void Graph::backward(const Tensor& output, std::span<const double> seed) {
  if (!output.defined() || output.producer() != this) {
    throw GraphError("backward() on a tensor not produced by this graph");
  }
  if (seed.size() != output.size()) {
    throw DimensionError("backward seed has " + std::to_string(seed.size()) +
                         " values for output " + shape_string(output.shape()));
  }
  // Intermediate gradients restart from zero on every pass so that repeated
  // calls accumulate only into leaves.
  for (Record& r : records_) {
    for (Tensor& out : r.outputs) out.zero_grad();
  }
  Tensor seeded = output;
  auto g = seeded.grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    const bool any = std::any_of(it->outputs.begin(), it->outputs.end(),
                                 [](const Tensor& t) { return t.has_grad(); });
    if (any) it->backward();
  }
}

void Graph::clear() { records_.clear(); }

void backward(Graph& graph, const Tensor& output) { graph.backward(output); }

Graph* active_graph() { return t_active_graph; }

GraphScope::GraphScope(Graph& graph) : previous_(t_active_graph) {
  t_active_graph = &graph;
}

GraphScope::~GraphScope() { t_active_graph = previous_; }

TagScope::TagScope(std::string tag) : previous_(std::move(t_tag)) {
  t_tag = std::move(tag);
}

TagScope::~TagScope() { t_tag = std::move(previous_); }

const std::string& current_tag() { return t_tag; }

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (t_active_graph == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) {
    return t != nullptr && t->defined() && t->requires_grad();
  });
}

}  // namespace fsrnn

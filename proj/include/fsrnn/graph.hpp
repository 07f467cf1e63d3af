// Copyright 2026 The fsrnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fsrnn/tensor.hpp"

namespace fsrnn {

/// Tape of differentiable operations executed while the graph is active.
///
/// Ops append a record when a graph is active on the calling thread (see
/// GraphScope) and at least one input requires a gradient. backward() walks
/// the records once, in reverse execution order. A graph is meant to live
/// for one TBPTT window and then be discarded.
class Graph {
 public:
  struct Record {
    std::string op;
    std::string tag;
    std::vector<Tensor> inputs;
    std::vector<Tensor> outputs;
    std::function<void()> backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  void record(std::string op, std::vector<Tensor> inputs,
              std::vector<Tensor> outputs, std::function<void()> backward);

  const std::vector<Record>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }

  // Seeds d(output)/d(output) = 1; output must be a single element.
  void backward(const Tensor& output);
  void backward(const Tensor& output, std::span<const double> seed);

  void clear();

 private:
  std::vector<Record> records_;
};

void backward(Graph& graph, const Tensor& output);

// Graph receiving ops on this thread, or null when recording is off.
Graph* active_graph();

class GraphScope {
 public:
  explicit GraphScope(Graph& graph);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph* previous_;
};

// Labels every op recorded while alive, e.g. "F1" or "S". Used to check
// architecture wiring on the recorded graph.
class TagScope {
 public:
  explicit TagScope(std::string tag);
  ~TagScope();
  TagScope(const TagScope&) = delete;
  TagScope& operator=(const TagScope&) = delete;

 private:
  std::string previous_;
};

const std::string& current_tag();

// True when an op over these inputs has to be recorded.
bool should_record(std::initializer_list<const Tensor*> inputs);

}  // namespace fsrnn

// Copyright 2026 The CVPT Lab Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "cvpt/tensor.hpp"

namespace cvpt {

/// Bucket a matmul's FLOPs are charged to. Set with RegionScope.
enum class Region : std::uint8_t { kMisc = 0, kEmbed, kSelfAttention, kCrossAttention, kMlp, kHead, kCount };

const char* region_name(Region r);

/// Per-graph instrumentation. matmul FLOPs are 2*p*q*r per forward product;
/// backward products are tallied separately. Elementwise kernels (softmax,
/// layer norm, GELU, adds, scales) count one "other" op per output element.
struct FlopCounter {
  std::array<std::uint64_t, static_cast<std::size_t>(Region::kCount)> matmul{};
  std::uint64_t backward_matmul = 0;
  std::uint64_t other = 0;

  std::uint64_t total_matmul() const;
  std::uint64_t in(Region r) const { return matmul[static_cast<std::size_t>(r)]; }
  void reset() { *this = FlopCounter{}; }
};

template <typename T>
class Graph;

/// Handle to a value recorded on a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* graph, std::size_t id) : graph_(graph), id_(id) {}

  bool valid() const { return graph_ != nullptr; }
  Graph<T>& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const BasicTensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Graph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered tape of executed operations. Each op stores its output and, when
/// any input requires a gradient, a backward closure. backward() walks the
/// tape in exact reverse order and accumulates input gradients additively.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const BasicTensor<T>& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf owning its value, never differentiated.
  Var<T> constant(BasicTensor<T> value);
  /// Leaf referencing caller-owned storage; the tensor must outlive the graph
  /// and stay unmodified while the graph is in use.
  Var<T> parameter(const BasicTensor<T>& value, bool requires_grad);

  /// Records an op output. Throws NumericError if the value is not finite.
  Var<T> record(const char* op, BasicTensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward);
  Var<T> record(const char* op, BasicTensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn backward);

  const BasicTensor<T>& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const char* op_name(std::size_t id) const { return nodes_[id].op; }
  std::size_t size() const { return nodes_.size(); }

  /// Zero-initialized gradient buffer for a node, allocated on first use.
  BasicTensor<T>& grad_buffer(const Var<T>& v);
  /// Gradient of the last backward() for v, or nullptr if none reached it.
  const BasicTensor<T>* grad(const Var<T>& v) const;

  /// Seeds d(loss)/d(loss) = 1 for a single-element loss and replays the tape.
  void backward(const Var<T>& loss);
  /// Node ids whose backward closure ran during the last backward(), in order.
  const std::vector<std::size_t>& backward_trace() const { return trace_; }

  FlopCounter& flops() { return flops_; }
  const FlopCounter& flops() const { return flops_; }
  Region region() const { return region_; }
  void set_region(Region r) { region_ = r; }

  /// Bytes held by op outputs (leaves excluded) retained on the tape.
  std::size_t activation_bytes() const;

 private:
  struct Node {
    const char* op = "leaf";
    BasicTensor<T> owned;
    const BasicTensor<T>* external = nullptr;
    BasicTensor<T> grad;
    bool requires_grad = false;
    bool is_leaf = true;
    BackwardFn backward;
  };

  Var<T> push(Node node);

  // deque keeps value() references valid while new nodes are recorded.
  std::deque<Node> nodes_;
  std::vector<std::size_t> trace_;
  FlopCounter flops_;
  Region region_ = Region::kMisc;
};

/// Charges matmuls executed in scope to a region; restores the previous one on exit.
template <typename T>
class RegionScope {
 public:
  RegionScope(Graph<T>& g, Region r) : graph_(g), saved_(g.region()) { g.set_region(r); }
  ~RegionScope() { graph_.set_region(saved_); }
  RegionScope(const RegionScope&) = delete;
  RegionScope& operator=(const RegionScope&) = delete;

 private:
  Graph<T>& graph_;
  Region saved_;
};

template <typename T>
const BasicTensor<T>& Var<T>::value() const {
  return graph_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return graph_->requires_grad(id_);
}

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace cvpt

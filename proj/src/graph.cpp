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

#include "cvpt/graph.hpp"

#include "cvpt/error.hpp"

namespace cvpt {

const char* region_name(Region r) {
  switch (r) {
    case Region::kMisc:
      return "misc";
    case Region::kEmbed:
      return "embed";
    case Region::kSelfAttention:
      return "self_attention";
    case Region::kCrossAttention:
      return "cross_attention";
    case Region::kMlp:
      return "mlp";
    case Region::kHead:
      return "head";
    case Region::kCount:
      break;
  }
  return "?";
}

std::uint64_t FlopCounter::total_matmul() const {
  std::uint64_t s = 0;
  for (auto v : matmul) s += v;
  return s;
}

template <typename T>
Var<T> Graph<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Graph<T>::constant(BasicTensor<T> value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::parameter(const BasicTensor<T>& value, bool requires_grad) {
  Node n;
  n.external = &value;
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::record(const char* op, BasicTensor<T> value, std::initializer_list<Var<T>> inputs,
                        BackwardFn backward) {
  return record(op, std::move(value), std::vector<Var<T>>(inputs), std::move(backward));
}

template <typename T>
Var<T> Graph<T>::record(const char* op, BasicTensor<T> value, const std::vector<Var<T>>& inputs,
                        BackwardFn backward) {
  bool needs = false;
  for (const auto& in : inputs) needs = needs || nodes_[in.id()].requires_grad;
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op + " (shape " +
                       shape_string(value.shape()) + ")");
  }
  Node n;
  n.op = op;
  n.owned = std::move(value);
  n.is_leaf = false;
  n.requires_grad = needs;
  if (needs) n.backward = std::move(backward);
  return push(std::move(n));
}

template <typename T>
const BasicTensor<T>& Graph<T>::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.owned;
}

template <typename T>
BasicTensor<T>& Graph<T>::grad_buffer(const Var<T>& v) {
  Node& n = nodes_[v.id()];
  if (n.grad.empty()) n.grad = BasicTensor<T>(value(v.id()).shape());
  return n.grad;
}

template <typename T>
const BasicTensor<T>* Graph<T>::grad(const Var<T>& v) const {
  const Node& n = nodes_[v.id()];
  return n.grad.empty() ? nullptr : &n.grad;
}

template <typename T>
void Graph<T>::backward(const Var<T>& loss) {
  if (loss.value().size() != 1) {
    throw DimensionError("backward() needs a single-element loss, got shape " + shape_string(loss.shape()));
  }
  trace_.clear();
  for (auto& n : nodes_) n.grad = BasicTensor<T>();
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss)[0] = T{1};
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    trace_.push_back(i);
    n.backward(*this, n.grad);
  }
}

template <typename T>
std::size_t Graph<T>::activation_bytes() const {
  std::size_t bytes = 0;
  for (const auto& n : nodes_) {
    if (!n.is_leaf) bytes += n.owned.size() * sizeof(T);
  }
  return bytes;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace cvpt

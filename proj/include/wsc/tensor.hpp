#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "wsc/common.hpp"

namespace wsc {

class Tape;

// Dense row-major 64-bit float array. Copies are shallow (shared buffer);
// ops never mutate their inputs. A tensor optionally references a node on
// the tape that produced it; tensors without a node are constants.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(count(shape_), 0.0)) {}

  Tensor(std::vector<int> shape, std::vector<double> values)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(std::move(values))) {
    if (static_cast<int>(data_->size()) != count(shape_))
      throw ValidationError("tensor: " + std::to_string(data_->size()) +
                            " values do not fill shape " + shape_str(shape_));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : *t.data_) x = v;
    return t;
  }

  bool defined() const { return data_ != nullptr; }
  const std::vector<int>& shape() const { return shape_; }
  int size() const { return data_ ? static_cast<int>(data_->size()) : 0; }

  const double* data() const { return data_->data(); }
  double* data() { return data_->data(); }
  double operator[](int i) const { return (*data_)[i]; }
  double& operator[](int i) { return (*data_)[i]; }

  double item() const {
    if (size() != 1)
      throw ValidationError("item: tensor of shape " + shape_str(shape_) +
                            " is not a scalar");
    return (*data_)[0];
  }

  // Same buffer and same tape node under a new shape; row-major order makes
  // the adjoint of a reshape the identity, so no node is recorded.
  Tensor reshape(std::vector<int> new_shape) const {
    if (count(new_shape) != size())
      throw ValidationError("reshape: " + shape_str(shape_) + " -> " +
                            shape_str(new_shape) + " changes element count");
    Tensor t = *this;
    t.shape_ = std::move(new_shape);
    return t;
  }

  // Same values, no tape reference.
  Tensor detached() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = -1;
    return t;
  }

  // Deep copy, no tape reference.
  Tensor clone() const { return Tensor(shape_, *data_); }

  Tape* tape() const { return tape_; }
  int node() const { return node_; }

  static int count(const std::vector<int>& shape) {
    int n = 1;
    for (int d : shape) {
      if (d <= 0) throw ValidationError("tensor: non-positive dim in " + shape_str(shape));
      n *= d;
    }
    return n;
  }

 private:
  friend class Tape;
  std::vector<int> shape_;
  std::shared_ptr<std::vector<double>> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

// Named parameter collection. std::map keeps a canonical iteration order,
// which serialization, optimizer updates and gradient reads all rely on.
using ParamSet = std::map<std::string, Tensor>;

inline int param_count(const ParamSet& params) {
  int n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

// Gradients of a loss with respect to every leaf, keyed by node id.
class GradTable {
 public:
  void put(int node, Tensor grad) { grads_.emplace(node, std::move(grad)); }

  bool contains(const Tensor& t) const {
    return t.node() >= 0 && grads_.count(t.node()) > 0;
  }

  const Tensor& at(const Tensor& t) const {
    auto it = t.node() >= 0 ? grads_.find(t.node()) : grads_.end();
    if (it == grads_.end())
      throw ValidationError("grad table: tensor is not a watched leaf");
    return it->second;
  }

  std::size_t size() const { return grads_.size(); }

 private:
  std::map<int, Tensor> grads_;
};

// Append-only record of one forward pass (define-by-run). Nodes hold the
// adjoint closure of the op that produced them; backward replays the tape in
// reverse insertion order exactly once per node, accumulating into per-node
// gradient buffers.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers `value` as a leaf. The returned tensor shares the buffer.
  Tensor watch(const Tensor& value) {
    Tensor t = value;
    t.tape_ = this;
    t.node_ = record(value.shape(), {}, nullptr);
    nodes_[t.node_].leaf = true;
    return t;
  }

  ParamSet watch_all(const ParamSet& params) {
    ParamSet out;
    for (const auto& [name, t] : params) out.emplace(name, watch(t));
    return out;
  }

  // Used by ops: creates a node and binds `out` to it.
  int record(std::vector<int> shape, std::vector<int> inputs,
             std::function<void(Tape&, int)> pull) {
    Node n;
    n.shape = std::move(shape);
    n.inputs = std::move(inputs);
    n.pull = std::move(pull);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  void bind(Tensor& t, int node) {
    t.tape_ = this;
    t.node_ = node;
  }

  std::size_t num_nodes() const { return nodes_.size(); }

  // Gradient of a scalar loss with respect to every leaf.
  GradTable backward(const Tensor& loss) {
    if (loss.tape() != this)
      throw ValidationError("backward: loss does not live on this tape");
    if (loss.size() != 1)
      throw ValidationError("backward: loss has shape " +
                            shape_str(loss.shape()) + ", expected a scalar");
    grads_.clear();
    grads_.resize(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      grads_[i].assign(Tensor::count(nodes_[i].shape), 0.0);
    grads_[loss.node()][0] = 1.0;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      if (nodes_[i].pull) nodes_[i].pull(*this, i);
    }
    GradTable table;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].leaf)
        table.put(static_cast<int>(i),
                  Tensor(nodes_[i].shape, grads_[i]));
    }
    return table;
  }

  // Accumulator for node `id`; valid during backward.
  std::vector<double>& grad_buf(int id) { return grads_[id]; }

 private:
  struct Node {
    std::vector<int> shape;
    std::vector<int> inputs;
    std::function<void(Tape&, int)> pull;
    bool leaf = false;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
};

}  // namespace wsc

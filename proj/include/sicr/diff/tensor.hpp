#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sicr/errors.hpp"

namespace sicr::diff {

using Shape = std::vector<std::size_t>;

std::size_t shape_volume(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename Real>
struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // allocated lazily; same length as value when present
  bool requires_grad = false;
  // Reads this node's grad and accumulates into the grads of `inputs`.
  std::function<void(Node&)> backward;
  std::vector<std::shared_ptr<Node>> inputs;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), Real(0));
  }
};

// Shared handle to a node of the differentiation graph. Copies alias the
// same storage; use clone() for a detached deep copy.
template <typename Real>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const Real> data() const { return node_->value; }
  std::span<Real> mutable_data() { return node_->value; }
  std::vector<Real>& values() { return node_->value; }
  const std::vector<Real>& values() const { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const Real> grad() const { return node_->grad; }
  std::span<Real> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  Real item() const;
  Real operator[](std::size_t i) const { return node_->value[i]; }

  // Detached copy with the same values; no graph history, requires_grad off.
  Tensor clone() const;
  // Same storage viewed with a different shape is not supported; reshape()
  // in ops.hpp records a differentiable copy instead.

  Node<Real>* node() const { return node_.get(); }
  const std::shared_ptr<Node<Real>>& node_ptr() const { return node_; }
  explicit Tensor(std::shared_ptr<Node<Real>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node<Real>> node_;
};

// Records differentiable operations in creation order. Construction makes the
// tape active on the current thread; destruction restores the previous one.
// Operations executed with no active tape (or with no grad-requiring input)
// are not recorded.
template <typename Real>
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  void record(std::shared_ptr<Node<Real>> node);
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and replays recorded nodes in reverse order.
  void backward(const Tensor<Real>& loss);

 private:
  template <typename>
  friend class NoGradGuard;

  std::vector<std::shared_ptr<Node<Real>>> nodes_;
  Tape* previous_ = nullptr;
  inline static thread_local Tape* active_ = nullptr;
};

// Suspends recording on this thread for its lifetime (inference paths).
template <typename Real>
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape<Real>* saved_;
};

// Creates the result node of an op. When any input requires grad and a tape
// is active, the node is marked differentiable, keeps its inputs alive, and is
// recorded; otherwise `backward` is dropped.
template <typename Real>
Tensor<Real> make_result(Shape shape, std::vector<Real> value,
                         std::vector<std::shared_ptr<Node<Real>>> inputs,
                         std::function<void(Node<Real>&)> backward);

}  // namespace sicr::diff

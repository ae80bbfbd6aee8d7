#pragma once

// Rank-4 tensors (batch, channel, height, width) with reverse-mode autodiff.
//
// A Tensor is a cheap handle onto a shared graph node. Operations in ops.hpp
// create new nodes whose parents are their inputs; backward() walks the
// resulting DAG in reverse topological order. Values are immutable once an op
// has produced them; only leaf parameters are mutated, and only between
// passes (optimizer steps, initialization).

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace convnorm {

struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t index(std::size_t in, std::size_t ic, std::size_t ih,
                    std::size_t iw) const {
    return ((in * c + ic) * h + ih) * w + iw;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // sized iff requires_grad
  bool requires_grad = false;
  bool grad_stale = false;  // interior grad holds a previous backward pass
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents that require grad.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using Node = detail::Node<T>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor scalar(T v, bool requires_grad = false) {
    return Tensor(Shape{}, std::vector<T>{v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->shape.numel(); }

  std::span<const T> values() const { return node_->value; }
  // Leaf mutation (parameter updates, initialization). Never call on a
  // tensor that has already been consumed by a recorded op of a live graph.
  std::span<T> mutable_values() { return node_->value; }

  T item() const;
  T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return node_->value[node_->shape.index(n, c, h, w)];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad; }
  void zero_grad();

  const std::string& op_name() const { return node_->op; }
  // Same values, no history.
  Tensor detach() const;

  const std::shared_ptr<Node>& node_ptr() const { return node_; }
  static Tensor from_node(std::shared_ptr<Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  std::shared_ptr<Node> node_;
};

// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Builds the result of an op. The node records `parents` and `backward` only
// when recording is enabled and some parent requires grad.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values,
                      std::vector<Tensor<T>> parents, std::string op,
                      std::function<void(detail::Node<T>&)> backward);

// Nodes reachable from a root through grad-requiring edges, parents before
// children.
template <typename T>
class Tape {
 public:
  explicit Tape(const Tensor<T>& root);

  std::size_t size() const { return order_.size(); }
  const std::vector<detail::Node<T>*>& order() const { return order_; }

  // Seeds the root gradient with one and propagates in reverse order. Interior
  // gradients are reset first, leaf gradients accumulate across calls.
  void run_backward();

 private:
  std::shared_ptr<detail::Node<T>> root_;
  std::vector<detail::Node<T>*> order_;
};

template <typename T>
void backward(const Tensor<T>& loss);

}  // namespace convnorm

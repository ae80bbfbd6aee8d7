#include "convnorm/tensor.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace convnorm {

std::string Shape::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " +
         std::to_string(h) + ", " + std::to_string(w) + ")";
}

namespace {

thread_local bool g_grad_enabled = true;

void check_shape(const Shape& s) {
  if (s.n == 0 || s.c == 0 || s.h == 0 || s.w == 0) {
    throw std::invalid_argument("tensor extents must be >= 1, got " + s.str());
  }
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  check_shape(shape);
  node_->shape = shape;
  node_->value.assign(shape.numel(), fill);
  set_requires_grad(requires_grad);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  check_shape(shape);
  if (values.size() != shape.numel()) {
    throw std::invalid_argument("value count " + std::to_string(values.size()) +
                                " does not match shape " + shape.str());
  }
  node_->shape = shape;
  node_->value = std::move(values);
  set_requires_grad(requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item() on non-scalar tensor of shape " +
                                shape().str());
  }
  return node_->value[0];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  node_->requires_grad = on;
  if (on) {
    node_->grad.assign(node_->value.size(), T(0));
  } else {
    node_->grad.clear();
  }
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->value, false);
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values,
                      std::vector<Tensor<T>> parents, std::string op,
                      std::function<void(detail::Node<T>&)> backward) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = shape;
  node->value = std::move(values);
  node->op = std::move(op);
  const bool track =
      g_grad_enabled &&
      std::any_of(parents.begin(), parents.end(),
                  [](const Tensor<T>& p) { return p.requires_grad(); });
  if (track) {
    node->requires_grad = true;
    node->grad.assign(node->value.size(), T(0));
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
Tape<T>::Tape(const Tensor<T>& root) : root_(root.node_ptr()) {
  if (!root_->requires_grad) return;
  // Iterative post-order DFS; emits each node once, after all its parents.
  std::unordered_set<const detail::Node<T>*> visited;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  stack.emplace_back(root_.get(), 0);
  visited.insert(root_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
}

template <typename T>
void Tape<T>::run_backward() {
  if (order_.empty()) return;
  for (auto* node : order_) {
    if (node->grad_stale) std::fill(node->grad.begin(), node->grad.end(), T(0));
  }
  for (auto& g : order_.back()->grad) g += T(1);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    detail::Node<T>* node = *it;
    if (node->backward) node->backward(*node);
    if (!node->is_leaf()) node->grad_stale = true;
  }
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward() requires a scalar loss, got shape " +
                                loss.shape().str());
  }
  Tape<T> tape(loss);
  tape.run_backward();
}

#define CONVNORM_INSTANTIATE(T)                                             \
  template class Tensor<T>;                                                 \
  template class Tape<T>;                                                   \
  template Tensor<T> make_result<T>(Shape, std::vector<T>,                  \
                                    std::vector<Tensor<T>>, std::string,    \
                                    std::function<void(detail::Node<T>&)>); \
  template void backward<T>(const Tensor<T>&);

CONVNORM_INSTANTIATE(float)
CONVNORM_INSTANTIATE(double)

#undef CONVNORM_INSTANTIATE

}  // namespace convnorm

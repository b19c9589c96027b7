#include "dfsq/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "dfsq/errors.hpp"

namespace dfsq {

namespace {

thread_local bool g_grad_enabled = true;
thread_local std::uint64_t g_next_id = 1;

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Mask Mask::ones(Shape shape) {
  Mask m;
  m.keep.assign(numel(shape), 1);
  m.shape = std::move(shape);
  return m;
}

template <typename T>
std::vector<T>& TensorNode<T>::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), T{0});
  return grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T{0}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  std::vector<T> data(dfsq::numel(shape), value);
  return from(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> data, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
  }
  if (dfsq::numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_string(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  node->id = g_next_id++;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on non-scalar tensor " + shape_string(shape()));
  return node_->data[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from(shape(), node_->data, false);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::vector<Tensor<T>> parents,
                      std::function<void(TensorNode<T>&)> backward) {
  auto out = Tensor<T>::from(std::move(shape), std::move(data), false);
  if (!g_grad_enabled) return out;
  const bool needs = std::any_of(parents.begin(), parents.end(),
                                 [](const Tensor<T>& p) { return p.requires_grad(); });
  if (!needs) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.parents.reserve(parents.size());
  for (auto& p : parents) node.parents.push_back(p.node());
  node.backward = std::move(backward);
  return out;
}

template <typename T>
std::vector<std::shared_ptr<TensorNode<T>>> build_tape(const Tensor<T>& loss) {
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  if (!loss.requires_grad()) return nodes;
  std::unordered_set<const TensorNode<T>*> seen;
  std::vector<std::shared_ptr<TensorNode<T>>> stack{loss.node()};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto n = std::move(stack.back());
    stack.pop_back();
    for (auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p);
    }
    nodes.push_back(std::move(n));
  }
  // Ids grow with creation order, and an op is created after its inputs.
  std::sort(nodes.begin(), nodes.end(), [](const auto& a, const auto& b) { return a->id < b->id; });
  return nodes;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw DimensionError("backward requires a scalar loss, got " +
                         (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
  }
  auto tape = build_tape(loss);
  if (tape.empty()) return;
  for (auto& n : tape) {
    if (!n->is_leaf()) n->grad.clear();
  }
  loss.node()->ensure_grad()[0] += T{1};
  for (auto it = tape.rbegin(); it != tape.rend(); ++it) {
    auto& n = **it;
    if (n.is_leaf() || !n.backward) continue;
    if (n.grad.empty()) continue;  // nothing flowed here
    n.backward(n);
    n.grad.clear();
    n.grad.shrink_to_fit();
  }
}

template struct TensorNode<float>;
template struct TensorNode<double>;
template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> make_result(Shape, std::vector<float>, std::vector<Tensor<float>>,
                                   std::function<void(TensorNode<float>&)>);
template Tensor<double> make_result(Shape, std::vector<double>, std::vector<Tensor<double>>,
                                    std::function<void(TensorNode<double>&)>);
template std::vector<std::shared_ptr<TensorNode<float>>> build_tape(const Tensor<float>&);
template std::vector<std::shared_ptr<TensorNode<double>>> build_tape(const Tensor<double>&);
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);
template struct TensorNode<long double>;
template class Tensor<long double>;
template Tensor<long double> make_result(Shape, std::vector<long double>,
                                         std::vector<Tensor<long double>>,
                                         std::function<void(TensorNode<long double>&)>);
template std::vector<std::shared_ptr<TensorNode<long double>>> build_tape(
    const Tensor<long double>&);
template void backward(const Tensor<long double>&);

}  // namespace dfsq

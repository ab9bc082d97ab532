#include "cdseg/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_set>

#include "cdseg/error.hpp"

namespace cdseg::ad {
namespace {

std::atomic<std::uint64_t> g_next_seq{1};
thread_local bool t_grad_enabled = true;

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> value,
                               bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  node->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
  return node;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.empty()) fail(ErrorKind::kShapeMismatch, "tensor shape must have rank >= 1");
  for (auto d : shape) {
    if (d == 0) fail(ErrorKind::kShapeMismatch, "zero extent in shape " + shape_str(shape));
  }
  if (numel(shape) != values.size()) {
    fail(ErrorKind::kShapeMismatch, "shape " + shape_str(shape) + " does not match " +
                                        std::to_string(values.size()) + " values");
  }
  node_ = new_node(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (size() != 1) fail(ErrorKind::kShapeMismatch, "item() on non-scalar " + shape_str(shape()));
  return node_->value[0];
}

void Tensor::zero_grad() {
  if (node_->grad.empty()) {
    node_->grad.assign(node_->value.size(), 0.0);
  } else {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }
}

Tensor Tensor::detach_copy(bool requires_grad) const {
  return Tensor(node_->shape, node_->value, requires_grad);
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

Tensor make_result(Shape shape, std::vector<double> value,
                   std::vector<Tensor> parents, std::string op,
                   std::function<void(Node&)> backward_fn) {
  const bool any_grad = t_grad_enabled && std::any_of(parents.begin(), parents.end(),
                                    [](const Tensor& t) { return t.requires_grad(); });
  auto node = new_node(std::move(shape), std::move(value), any_grad);
  node->op = std::move(op);
  if (any_grad) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    fail(ErrorKind::kShapeMismatch, "backward requires a scalar loss");
  }
  if (!loss.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{loss.node().get()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (auto& p : n->parents) {
      if (p->requires_grad) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->seq > b->seq; });

  for (Node* n : order) {
    if (n->is_leaf()) {
      if (n->grad.empty()) n->grad.assign(n->value.size(), 0.0);
    } else {
      n->grad.assign(n->value.size(), 0.0);
    }
  }
  loss.node()->grad[0] += 1.0;
  for (Node* n : order) {
    if (n->backward_fn) n->backward_fn(*n);
  }
}

}  // namespace cdseg::ad

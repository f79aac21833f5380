#include "mlt/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "mlt/errors.hpp"

namespace mlt {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::string& fault_slot() {
  static std::string op;
  return op;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data) {
  for (std::size_t extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (data.size() != shape_numel(shape)) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
  std::vector<double> data(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(data));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
  Tensor t(std::move(shape), std::move(data));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->data.size(); }

std::size_t Tensor::dim(int axis) const {
  const int r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape()));
  }
  return shape()[static_cast<std::size_t>(a)];
}

std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() needs a single element, shape is " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ShapeError("index rank does not match shape " + shape_str(shape()));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape()[axis]) throw ShapeError("index out of range for shape " + shape_str(shape()));
    flat = flat * shape()[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool value) { node_->requires_grad = value; }

std::span<const double> Tensor::grad() const { return node_->grad; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<double> Tensor::grad_accumulator() const {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::clone() const { return Tensor(shape(), node_->data); }

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
Tape::Scope::~Scope() { g_active_tape = previous_; }

Tape::~Tape() { clear(); }

Tape* Tape::active() { return g_active_tape; }

void Tape::clear() {
  for (Tensor& t : ops_) {
    t.node()->backward = nullptr;
  }
  ops_.clear();
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad() || !loss.node()->backward) {
    throw std::logic_error("loss was not produced by operations recorded on this tape");
  }
  loss.grad_accumulator()[0] += 1.0;
  const std::string& fault = fault_slot();
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    Node& node = *it->node();
    if (node.grad.empty() || !node.backward) continue;
    if (!fault.empty() && fault == node.op) {
      for (double& g : node.grad) g *= 1.5;
    }
    node.backward(node);
    // Every consumer has already run, so this gradient and the closure's
    // references are dead.
    node.backward = nullptr;
    if (&node != loss.node()) std::vector<double>().swap(node.grad);
  }
  for (Tensor& t : ops_) {
    Node& node = *t.node();
    node.backward = nullptr;
    if (&node != loss.node()) {
      node.grad.clear();
      node.grad.shrink_to_fit();
    }
  }
  ops_.clear();
}

Tensor make_op(const char* name, Shape shape, std::vector<double> data,
               std::span<const Tensor> inputs, BackwardFn backward) {
  Tensor out(std::move(shape), std::move(data));
  Tape* tape = g_active_tape;
  if (tape == nullptr) return out;
  const bool needs_grad = std::any_of(inputs.begin(), inputs.end(),
                                      [](const Tensor& t) { return t.requires_grad(); });
  if (!needs_grad) return out;
  Node& node = *out.node();
  node.requires_grad = true;
  node.op = name;
  node.backward = std::move(backward);
  tape->ops_.push_back(out);
  return out;
}

namespace debug {

void inject_gradient_fault(std::string op) { fault_slot() = std::move(op); }
void clear_gradient_fault() { fault_slot().clear(); }
const std::string& gradient_fault() { return fault_slot(); }

}  // namespace debug

}  // namespace mlt

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace mlt {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;
using BackwardFn = std::function<void(const Node&)>;

/// Storage behind a Tensor handle. `grad` stays empty until backward reaches
/// the node.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  BackwardFn backward;
};

/// Shared handle to a dense row-major array of doubles.
///
/// Copies alias the same storage; use `clone()` for a deep copy. Rank-0
/// tensors are scalars with one element.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  /// Leaf with requires_grad set.
  static Tensor parameter(Shape shape, std::vector<double> data);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  /// Extent of axis `axis`; negative values count from the back.
  std::size_t dim(int axis) const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  /// Empty span until a backward pass has reached this tensor.
  std::span<const double> grad() const;
  bool has_grad() const;
  /// Gradient buffer, zero-filled on first access.
  std::span<double> grad_accumulator() const;
  void zero_grad();

  /// Deep copy of the values, detached from any graph.
  Tensor clone() const;

  Node* node() const { return node_.get(); }

 private:
  std::shared_ptr<Node> node_;
};

/// Ordered record of differentiable operations.
///
/// Operations are recorded only while a scope from `record()` is alive on the
/// current thread and at least one input requires a gradient. `backward`
/// walks the record in reverse creation order, visiting each op once, and
/// then releases it: a tape is single use per recorded graph.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  class Scope {
   public:
    explicit Scope(Tape& tape);
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;
    ~Scope();

   private:
    Tape* previous_;
  };

  [[nodiscard]] Scope record() { return Scope(*this); }

  /// Accumulates d(loss)/d(leaf) into every reachable leaf that requires a
  /// gradient, then clears the tape.
  void backward(const Tensor& loss);

  std::size_t size() const { return ops_.size(); }
  void clear();

  static Tape* active();

 private:
  friend Tensor make_op(const char*, Shape, std::vector<double>,
                        std::span<const Tensor>, BackwardFn);
  std::vector<Tensor> ops_;
};

/// Builds the result of a primitive. When a tape is recording and any input
/// requires a gradient, the result joins the tape with `backward`, which must
/// accumulate into the inputs' `grad_accumulator()` given the result node.
Tensor make_op(const char* name, Shape shape, std::vector<double> data,
               std::span<const Tensor> inputs, BackwardFn backward);

inline Tensor make_op(const char* name, Shape shape, std::vector<double> data,
                      std::initializer_list<Tensor> inputs,
                      BackwardFn backward) {
  return make_op(name, std::move(shape), std::move(data),
                 std::span<const Tensor>(inputs.begin(), inputs.size()),
                 std::move(backward));
}

namespace debug {

/// Scales the upstream gradient of every op named `op` by 1.5 during
/// backward. Used to prove the gradient checker catches wrong gradients.
void inject_gradient_fault(std::string op);
void clear_gradient_fault();
const std::string& gradient_fault();

}  // namespace debug

}  // namespace mlt

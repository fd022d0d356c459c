#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "treeformer/common.hpp"

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class GradTape;

namespace detail {

struct Node {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  GradTape* tape = nullptr;
  std::size_t tape_index = 0;

  std::vector<Real>& grad_buffer() {
    if (grad.empty()) {
      grad.assign(data.size(), Real{0});
    }
    return grad;
  }
};

}  // namespace detail

// Dense row-major array. Copies share the underlying node; use clone() for a
// deep copy. Leading extents are treated as rows and the last extent as
// columns by every primitive.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, Real value);
  static Tensor from_data(Shape shape, std::vector<Real> data);
  static Tensor scalar(Real value);
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const { return data().size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const Real> data() const;
  // Writable view for leaves (parameters, inputs). Writing into a tensor that
  // an op has already consumed changes nothing recorded downstream.
  std::span<Real> mutable_data();
  std::span<const Real> row(std::size_t r) const;
  Real item() const;
  Real at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const Real> grad() const;
  std::span<Real> mutable_grad();
  void zero_grad();

  Tensor clone() const;
  bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Ordered record of the primitive operations executed while the tape is
// active on the current thread. Constructing a tape activates it; the
// destructor restores whatever tape was active before. Operations only record
// when a tape is active and at least one input requires a gradient, so code
// run without a tape is plain inference.
class GradTape {
 public:
  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active() noexcept;

  // Reverse traversal from `loss`. Each recorded op is visited once. A tape
  // can be traversed only once; a second call raises a contract error.
  void backward(const Tensor& loss);

  std::size_t size() const noexcept { return ops_.size(); }
  bool consumed() const noexcept { return consumed_; }

  void record(const std::shared_ptr<detail::Node>& node);

 private:
  std::vector<std::shared_ptr<detail::Node>> ops_;
  GradTape* previous_ = nullptr;
  bool consumed_ = false;
};

// Backpropagates through the tape that recorded `loss`.
void backward(const Tensor& loss);

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer

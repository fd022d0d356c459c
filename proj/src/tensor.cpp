#include "treeformer/tensor.hpp"

#include <sstream>

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

namespace {
thread_local GradTape* g_active_tape = nullptr;

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<Real> data) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  return node;
}
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) {
    n *= extent;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    out << (i ? "x" : "") << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), Real{0}); }

Tensor Tensor::full(Shape shape, Real value) {
  const std::size_t n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<Real>(n, value)));
}

Tensor Tensor::from_data(Shape shape, std::vector<Real> data) {
  require(shape_numel(shape) == data.size(), ErrorKind::dimension,
          "shape " + shape_string(shape) + " does not match " + std::to_string(data.size()) +
              " values");
  return Tensor(make_leaf(std::move(shape), std::move(data)));
}

Tensor Tensor::scalar(Real value) { return Tensor(make_leaf({}, {value})); }

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng) {
  std::vector<Real> data(shape_numel(shape));
  for (Real& x : data) {
    x = static_cast<Real>(rng.uniform(lo, hi));
  }
  return Tensor(make_leaf(std::move(shape), std::move(data)));
}

const Shape& Tensor::shape() const {
  require(defined(), ErrorKind::contract, "use of an undefined tensor");
  return node_->shape;
}

std::size_t Tensor::rows() const {
  const Shape& s = shape();
  if (s.empty()) {
    return 1;
  }
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    r *= s[i];
  }
  return r;
}

std::size_t Tensor::cols() const {
  const Shape& s = shape();
  return s.empty() ? 1 : s.back();
}

std::span<const Real> Tensor::data() const {
  require(defined(), ErrorKind::contract, "use of an undefined tensor");
  return node_->data;
}

std::span<Real> Tensor::mutable_data() {
  require(defined(), ErrorKind::contract, "use of an undefined tensor");
  return node_->data;
}

std::span<const Real> Tensor::row(std::size_t r) const {
  require(r < rows(), ErrorKind::index,
          "row " + std::to_string(r) + " out of range for shape " + shape_string(shape()));
  return data().subspan(r * cols(), cols());
}

Real Tensor::item() const {
  require(numel() == 1, ErrorKind::contract,
          "item() needs a single-element tensor, got " + shape_string(shape()));
  return node_->data[0];
}

Real Tensor::at(std::size_t r, std::size_t c) const {
  require(c < cols(), ErrorKind::index, "column out of range");
  return row(r)[c];
}

bool Tensor::requires_grad() const { return defined() && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  require(defined(), ErrorKind::contract, "use of an undefined tensor");
  require(is_leaf(), ErrorKind::contract, "requires_grad can only be changed on leaf tensors");
  node_->requires_grad = on;
  if (!on) {
    node_->grad.clear();
  }
  return *this;
}

bool Tensor::is_leaf() const { return defined() && !node_->backward; }

bool Tensor::has_grad() const { return defined() && !node_->grad.empty(); }

std::span<const Real> Tensor::grad() const {
  require(defined(), ErrorKind::contract, "use of an undefined tensor");
  return node_->grad;
}

std::span<Real> Tensor::mutable_grad() {
  require(requires_grad(), ErrorKind::contract, "tensor does not require a gradient");
  return node_->grad_buffer();
}

void Tensor::zero_grad() {
  if (has_grad()) {
    std::fill(node_->grad.begin(), node_->grad.end(), Real{0});
  }
}

Tensor Tensor::clone() const {
  Tensor copy(make_leaf(shape(), node_->data));
  copy.node_->requires_grad = false;
  return copy;
}

GradTape::GradTape() : previous_(g_active_tape) { g_active_tape = this; }

GradTape::~GradTape() {
  for (const auto& node : ops_) {
    node->tape = nullptr;
    node->inputs.clear();
    node->backward = nullptr;
  }
  g_active_tape = previous_;
}

GradTape* GradTape::active() noexcept { return g_active_tape; }

void GradTape::record(const std::shared_ptr<detail::Node>& node) {
  node->tape = this;
  node->tape_index = ops_.size();
  ops_.push_back(node);
}

void GradTape::backward(const Tensor& loss) {
  require(loss.defined(), ErrorKind::contract, "backward on an undefined tensor");
  require(loss.numel() == 1, ErrorKind::contract,
          "backward expects a scalar loss, got shape " + shape_string(loss.shape()));
  const auto& root = loss.node();
  require(root->tape == this, ErrorKind::contract, "loss was not recorded on this tape");
  require(!consumed_, ErrorKind::contract,
          "backward already ran on this tape; record a fresh forward pass before calling it again");
  consumed_ = true;
  root->grad_buffer()[0] += Real{1};
  for (std::size_t i = root->tape_index + 1; i-- > 0;) {
    detail::Node& node = *ops_[i];
    if (!node.grad.empty() && node.backward) {
      node.backward(node);
    }
  }
}

void backward(const Tensor& loss) {
  require(loss.defined(), ErrorKind::contract, "backward on an undefined tensor");
  GradTape* tape = loss.node()->tape;
  require(tape != nullptr, ErrorKind::contract, "loss is not on any live tape");
  tape->backward(loss);
}

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer

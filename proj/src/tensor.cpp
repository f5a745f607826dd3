#include "units/tensor.hpp"

#include <numeric>
#include <sstream>

namespace units {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << ")";
  return os.str();
}

Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index e : s) n *= e;
  return n;
}

Tensor::Tensor(Shape s, Eigen::VectorXd v) : shape(std::move(s)), value(std::move(v)) {
  for (Index e : shape) {
    if (e <= 0) throw DimensionError("non-positive extent in shape " + shape_str(shape));
  }
  if (shape_numel(shape) != value.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(value.size()) + " values");
  }
}

TensorPtr Tensor::create(Shape s, Eigen::VectorXd v) {
  return std::make_shared<Tensor>(std::move(s), std::move(v));
}

TensorPtr Tensor::zeros(const Shape& s) {
  return create(s, Eigen::VectorXd::Zero(shape_numel(s)));
}

TensorPtr Tensor::full(const Shape& s, double fill) {
  return create(s, Eigen::VectorXd::Constant(shape_numel(s), fill));
}

TensorPtr Tensor::scalar(double v) { return full({1}, v); }

TensorPtr Tensor::from_list(Shape s, std::initializer_list<double> v) {
  Eigen::VectorXd data(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) data[i++] = x;
  return create(std::move(s), std::move(data));
}

void Tensor::accum_grad(const Eigen::VectorXd& g) {
  if (g.size() != value.size()) {
    throw DimensionError("gradient size " + std::to_string(g.size()) + " vs values " +
                         std::to_string(value.size()));
  }
  if (!has_grad()) {
    grad = g;
  } else {
    grad += g;
  }
}

Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
Tensor::mat() const {
  if (rank() != 2) throw DimensionError("mat() on tensor of shape " + shape_str(shape));
  return {value.data(), shape[0], shape[1]};
}

void Tape::backward(const TensorPtr& loss) {
  if (loss->numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss->shape));
  }
  if (entries_.empty()) throw StateError("backward on an empty tape");
  if (consumed_) throw StateError("backward called twice without reset");
  consumed_ = true;
  loss->accum_grad(Eigen::VectorXd::Ones(1));
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = prev_; }

}  // namespace units

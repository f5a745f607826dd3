#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "units/common.hpp"

namespace units {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

std::string shape_str(const Shape& s);
Index shape_numel(const Shape& s);

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

/// Dense float64 tensor, row-major flat storage. Immutable after forward
/// creation except for gradient accumulation.
class Tensor {
 public:
  Shape shape;
  Eigen::VectorXd value;
  Eigen::VectorXd grad;  // empty until first accumulation
  bool requires_grad = false;

  Tensor(Shape s, Eigen::VectorXd v);

  static TensorPtr create(Shape s, Eigen::VectorXd v);
  static TensorPtr zeros(const Shape& s);
  static TensorPtr full(const Shape& s, double fill);
  static TensorPtr scalar(double v);
  static TensorPtr from_list(Shape s, std::initializer_list<double> v);

  Index numel() const { return value.size(); }
  Index rank() const { return static_cast<Index>(shape.size()); }

  bool has_grad() const { return grad.size() != 0; }
  void accum_grad(const Eigen::VectorXd& g);
  void zero_grad() { grad.resize(0); }

  /// Matrix view of a rank-2 tensor (row-major).
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
  mat() const;
};

/// Records backward rules during a forward pass; replays them in exact
/// reverse order. Single-threaded.
class Tape {
 public:
  void record(std::function<void()> fn) { entries_.push_back(std::move(fn)); }

  /// Populates grads of every requires_grad tensor reachable from loss.
  void backward(const TensorPtr& loss);

  void reset() {
    entries_.clear();
    consumed_ = false;
  }

  std::size_t size() const { return entries_.size(); }

  static Tape* active();

 private:
  friend class TapeScope;
  std::vector<std::function<void()>> entries_;
  bool consumed_ = false;
};

/// RAII activation of a tape for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

}  // namespace units

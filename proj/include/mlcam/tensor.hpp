#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mlcam/error.hpp"

namespace mlcam {

using Shape = std::vector<int>;

/// Dense row-major tensor of 64-bit floats. Rank 0 (empty shape) is a
/// scalar with one element. Plain value type; gradient tracking lives in
/// Var/Graph.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor full(Shape shape, double v);

  static std::size_t element_count(const Shape& shape);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  std::size_t size() const { return data_.size(); }
  bool defined() const { return !data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Row-major multi-index access; index count must equal the rank.
  template <class... I>
  double& at(I... idx) {
    return data_[offset(idx...)];
  }
  template <class... I>
  double at(I... idx) const {
    return data_[offset(idx...)];
  }

  template <class... I>
  std::size_t offset(I... idx) const {
    const int ids[] = {static_cast<int>(idx)...};
    std::size_t off = 0;
    for (std::size_t a = 0; a < sizeof...(idx); ++a) {
      off = off * static_cast<std::size_t>(shape_[a]) + static_cast<std::size_t>(ids[a]);
    }
    return off;
  }

  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Handle to a value plus its same-shape gradient buffer. Copies share the
/// underlying node; use detached() for an independent value.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value);

  bool defined() const { return node_ != nullptr; }

  const Tensor& value() const { return node_->value; }
  Tensor& value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& grad() { return node_->grad; }

  void zero_grad() { node_->grad.fill(0.0); }
  Tensor detached() const { return node_->value; }

  const void* id() const { return node_.get(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
  };
  std::shared_ptr<Node> node_;
};

/// Reverse-mode tape. Operations append records during the forward pass;
/// backward() replays them in reverse, accumulating gradients additively.
/// A Graph is rebuilt per forward pass and confined to one thread.
class Graph {
 public:
  struct Record {
    std::string op;
    std::vector<const void*> inputs;  // operand node ids
    const void* output = nullptr;
    std::function<void()> step;       // pulls output grad into operand grads
  };

  void add(Record record) { records_.push_back(std::move(record)); }

  std::size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. The loss
  // must be scalar. Gradients accumulate; callers zero them beforehand.
  void backward(const Var& loss);

 private:
  std::vector<Record> records_;
};

}  // namespace mlcam

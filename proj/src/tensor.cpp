#include "mlcam/tensor.hpp"

#include <cmath>
#include <utility>

namespace mlcam {

std::size_t Tensor::element_count(const Shape& shape) {
  std::size_t n = 1;
  for (const int d : shape) {
    if (d < 0) throw DimensionError("tensor: negative extent " + std::to_string(d));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape shape)
    : shape_(std::move(shape)), data_(element_count(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (element_count(shape_) != data_.size()) {
    throw DimensionError("tensor: shape requires " +
                         std::to_string(element_count(shape_)) +
                         " elements, got " + std::to_string(data_.size()));
  }
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
  for (const double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

Var::Var(Tensor value) : node_(std::make_shared<Node>()) {
  node_->grad = Tensor(value.shape());
  node_->value = std::move(value);
}

void Graph::backward(const Var& loss) {
  if (!loss.defined() || loss.value().size() != 1) {
    throw ContractError("backward: loss must be a defined scalar tensor");
  }
  Var seed = loss;  // shares the node
  seed.grad()[0] += 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    it->step();
  }
}

}  // namespace mlcam

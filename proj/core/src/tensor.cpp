#include "ctxst/tensor.hpp"

#include <cmath>
#include <numeric>

namespace ctxst {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

void check_finite(const std::vector<double>& v, const char* where) {
  for (double x : v)
    if (!std::isfinite(x)) fail(std::string("non-finite value in ") + where);
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill, bool requires_grad) {
  data_ = std::make_shared<TensorData>();
  data_->shape = std::move(shape);
  require(!data_->shape.empty(), "tensor needs at least one dimension");
  data_->values.assign(shape_product(data_->shape), fill);
  data_->requires_grad = requires_grad;
  if (requires_grad) data_->grad.assign(data_->values.size(), 0.0);
  require(std::isfinite(fill), "non-finite fill value");
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values, bool requires_grad) {
  data_ = std::make_shared<TensorData>();
  data_->shape = std::move(shape);
  require(!data_->shape.empty(), "tensor needs at least one dimension");
  require(shape_product(data_->shape) == values.size(),
          "tensor shape does not match value count");
  check_finite(values, "tensor construction");
  data_->values = std::move(values);
  data_->requires_grad = requires_grad;
  if (requires_grad) data_->grad.assign(data_->values.size(), 0.0);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor({1}, std::vector<double>{v}, requires_grad);
}

std::size_t Tensor::rows() const {
  return data_->shape.size() >= 2 ? data_->shape[0] : 1;
}

std::size_t Tensor::cols() const {
  return data_->shape.size() >= 2 ? data_->shape[1] : data_->shape[0];
}

double Tensor::value() const {
  require(size() == 1, "value() on a non-scalar tensor");
  return data_->values[0];
}

std::vector<double>& Tensor::grad() {
  require(data_->requires_grad, "grad() on a tensor without requires_grad");
  return data_->grad;
}

const std::vector<double>& Tensor::grad() const {
  require(data_->requires_grad, "grad() on a tensor without requires_grad");
  return data_->grad;
}

void Tensor::zero_grad() {
  if (data_->requires_grad) std::fill(data_->grad.begin(), data_->grad.end(), 0.0);
}

Tensor Tensor::detached_copy() const {
  return Tensor(data_->shape, data_->values, false);
}

void Tape::backward(Tensor& loss) {
  require(!backward_done_, "backward() called twice on the same tape");
  backward_done_ = true;
  require(loss.size() == 1, "backward() needs a scalar loss");
  require(loss.requires_grad(), "backward() on a loss that does not require grad");
  loss.grad()[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

}  // namespace ctxst

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ctxst/error.hpp"

namespace ctxst {

struct TensorData {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  std::vector<double> grad;  // same length as values when requires_grad
  bool requires_grad = false;
};

/// Dense 64-bit float tensor with shared storage. Most of the model works
/// with rank-2 tensors (rows x cols); rank-1 is used for bias/gain vectors
/// and {1} for scalar losses. Values are checked finite at op boundaries.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, double fill, bool requires_grad = false);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return data_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return data_->shape; }
  std::size_t rank() const { return data_->shape.size(); }
  std::size_t size() const { return data_->values.size(); }

  // Rank-2 accessors (a rank-1 tensor is treated as a single row).
  std::size_t rows() const;
  std::size_t cols() const;

  std::vector<double>& values() { return data_->values; }
  const std::vector<double>& values() const { return data_->values; }
  double value() const;  // scalar extract, errors unless size()==1

  bool requires_grad() const { return data_->requires_grad; }
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad();

  /// Deep copy of values only (no grad, requires_grad off).
  Tensor detached_copy() const;

  std::shared_ptr<TensorData> data() const { return data_; }

 private:
  std::shared_ptr<TensorData> data_;
};

/// Append-only op record list for one forward pass (define-by-run).
/// Records are pushed in construction order, which is a topological order,
/// and backward() replays them exactly once in reverse.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }
  std::size_t node_count() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and accumulates grads into every
  /// requires_grad tensor reachable from the recorded ops. A second call on
  /// the same tape is an error; graphs are rebuilt per forward pass.
  void backward(Tensor& loss);

 private:
  std::vector<std::function<void()>> nodes_;
  bool backward_done_ = false;
};

// ---- differentiable ops ---------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);           // same shape
Tensor add_row(Tape& tape, const Tensor& a, const Tensor& bias);    // bias[cols] broadcast over rows
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);           // elementwise
Tensor scale(Tape& tape, const Tensor& a, double c);
Tensor transpose(Tape& tape, const Tensor& a);
Tensor relu(Tape& tape, const Tensor& a);
Tensor softmax_rows(Tape& tape, const Tensor& a);
Tensor log_softmax(Tape& tape, const Tensor& a);  // last axis, max-stabilized
Tensor layer_norm_rows(Tape& tape, const Tensor& a, const Tensor& gain, const Tensor& bias);
Tensor embed(Tape& tape, const Tensor& table, const std::vector<int>& ids);
Tensor slice_cols(Tape& tape, const Tensor& a, std::size_t start, std::size_t n);
Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts);
Tensor sum(Tape& tape, const Tensor& a);

/// Mean negative log-likelihood over positions where mask is true.
/// Masked positions contribute exactly zero to the value and the gradient.
Tensor masked_cross_entropy(Tape& tape, const Tensor& logits, const std::vector<int>& targets,
                            const std::vector<char>& mask);

/// -log of the total probability of all blank-augmented alignments of
/// `target` under `log_probs` (T x (V+1), column 0 = blank, column k =
/// token id k-1). Forward algorithm in log space.
Tensor ctc_loss(Tape& tape, const Tensor& log_probs, const std::vector<int>& target);

/// Minimum number of frames a CTC alignment of `target` needs.
std::size_t ctc_min_frames(const std::vector<int>& target);

/// Max over coordinates of |analytic - central difference| /
/// (|analytic| + |numeric| + 1e-12) for a scalar-valued f.
double gradient_check(const std::function<Tensor(Tape&, Tensor&)>& f, const Tensor& x,
                      double h = 1e-5);

}  // namespace ctxst

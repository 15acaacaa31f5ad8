#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "trackcast/common.hpp"

namespace trackcast {

// Dense row-major float64 tensor. Copies share the underlying buffer;
// gradient buffers live next to the data and are keyed by that identity.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(std::vector<double> data, Shape shape, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int dim(int i) const;
  std::int64_t size() const { return static_cast<std::int64_t>(impl_->data.size()); }
  // 2-D helpers.
  int rows() const { return dim(0); }
  int cols() const { return dim(1); }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }
  double value() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  // Allocates (zero-filled) on first access. Gradients live on the shared
  // buffer, so a const handle may still accumulate into them.
  std::vector<double>& grad() const;
  const std::vector<double>* grad_if() const;
  void zero_grad() const;

  // Same values, detached from any tape, requires_grad = false.
  Tensor detach() const;

  const void* id() const { return impl_.get(); }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // empty until first use
  };
  std::shared_ptr<Impl> impl_;

  static Tensor make(Shape shape, std::vector<double> data, bool requires_grad);
  friend class Tape;
};

// Records ops in creation order (a valid topological order) and replays
// them backward. One tape per training stream; ops record themselves on
// the active tape only when some input requires a gradient.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  // RAII activation of a tape on the current thread.
  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  void record(std::function<void()> backward);
  void backward(const Tensor& loss);
  std::size_t node_count() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<std::function<void()>> nodes_;
};

// True when a tape is active and any input requires grad; used by every op
// to decide whether to record.
bool grad_enabled(std::initializer_list<const Tensor*> inputs);

// Elementwise, same shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor softplus(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// a: [m, k], b: [k, n] -> [m, n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x: [..., in], w: [in, out], b: [out] -> [..., out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Last-axis ops; x treated as [rows, last].
Tensor log_softmax(const Tensor& x);
Tensor logsumexp_rows(const Tensor& x);  // [m, n] -> [m]
Tensor logsumexp_cols(const Tensor& x);  // [m, n] -> [n]
Tensor add_rowvec(const Tensor& m, const Tensor& v);  // v added to every row
Tensor add_colvec(const Tensor& m, const Tensor& u);  // u added to every column

Tensor concat_last(const std::vector<Tensor>& parts);
Tensor slice_last(const Tensor& x, int offset, int length);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, int row0, int row1);
Tensor gather_rows(const Tensor& x, const std::vector<int>& rows);
Tensor reshape(const Tensor& x, Shape shape);

// Per-last-axis normalization with epsilon, then gain/bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Interleaved sin/cos encoding at geometric frequencies (base 10000) per
// input scalar, concatenated over the last axis and truncated to out_dim.
Tensor sinusoidal_pe(const Tensor& x, int out_dim);

// [m, n] -> [m+1, n+1] with the new row/column (and corner) filled from a
// scalar tensor; gradients from the border accumulate into the scalar.
Tensor pad_with_scalar(const Tensor& a, const Tensor& z);

}  // namespace trackcast

#include "trackcast/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace trackcast {

namespace {

thread_local Tape* g_tape = nullptr;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite value in output");
    }
  }
}

int last_dim(const Tensor& t, const char* op) {
  if (t.shape().empty()) throw ShapeError(std::string(op) + ": scalar has no last axis");
  return t.shape().back();
}

}  // namespace

Tensor Tensor::make(Shape shape, std::vector<double> data, bool requires_grad) {
  if (numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(data);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> d(static_cast<std::size_t>(numel(shape)), 0.0);
  return make(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> d(static_cast<std::size_t>(numel(shape)), value);
  return make(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::from(std::vector<double> data, Shape shape, bool requires_grad) {
  return make(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return make(Shape{}, {value}, requires_grad);
}

int Tensor::dim(int i) const {
  const auto& s = impl_->shape;
  int n = static_cast<int>(s.size());
  if (i < 0) i += n;
  if (i < 0 || i >= n) throw ShapeError("dim: axis out of range");
  return s[static_cast<std::size_t>(i)];
}

double Tensor::value() const {
  if (size() != 1) throw ShapeError("value: tensor has " + std::to_string(size()) + " elements");
  return impl_->data[0];
}

std::vector<double>& Tensor::grad() const {
  if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

const std::vector<double>* Tensor::grad_if() const {
  if (!impl_ || impl_->grad.size() != impl_->data.size()) return nullptr;
  return &impl_->grad;
}

void Tensor::zero_grad() const {
  if (impl_) impl_->grad.assign(impl_->data.size(), 0.0);
}

Tensor Tensor::detach() const {
  return make(impl_->shape, impl_->data, false);
}

Tape* Tape::current() { return g_tape; }

Tape::Scope::Scope(Tape& tape) : prev_(g_tape) { g_tape = &tape; }
Tape::Scope::~Scope() { g_tape = prev_; }

void Tape::record(std::function<void()> backward) {
  nodes_.push_back(std::move(backward));
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  loss.grad()[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

bool grad_enabled(std::initializer_list<const Tensor*> inputs) {
  if (!g_tape) return false;
  for (const Tensor* t : inputs) {
    if (t && t->requires_grad()) return true;
  }
  return false;
}

namespace {

// Shared body for elementwise binary ops.
template <class Fwd, class Bwd>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
  check_same_shape(a, b, name);
  const auto n = a.data().size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(a.data()[i], b.data()[i]);
  bool rg = grad_enabled({&a, &b});
  Tensor y = Tensor::from(std::move(out), a.shape(), rg);
  check_finite(y, name);
  if (rg) {
    Tape::current()->record([a, b, y, bwd]() mutable {
      const auto* gy = y.grad_if();
      if (!gy) return;
      for (std::size_t i = 0; i < gy->size(); ++i) {
        double ga, gb;
        bwd(a.data()[i], b.data()[i], (*gy)[i], ga, gb);
        if (a.requires_grad()) a.grad()[i] += ga;
        if (b.requires_grad()) b.grad()[i] += gb;
      }
    });
  }
  return y;
}

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& a, const char* name, Fwd fwd, Bwd bwd) {
  const auto n = a.data().size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(a.data()[i]);
  bool rg = grad_enabled({&a});
  Tensor y = Tensor::from(std::move(out), a.shape(), rg);
  check_finite(y, name);
  if (rg) {
    Tape::current()->record([a, y, bwd]() mutable {
      const auto* gy = y.grad_if();
      if (!gy) return;
      for (std::size_t i = 0; i < gy->size(); ++i) a.grad()[i] += bwd(a.data()[i]) * (*gy)[i];
    });
  }
  return y;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "add", [](double x, double y) { return x + y; },
                   [](double, double, double g, double& ga, double& gb) { ga = g; gb = g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "sub", [](double x, double y) { return x - y; },
                   [](double, double, double g, double& ga, double& gb) { ga = g; gb = -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "mul", [](double x, double y) { return x * y; },
                   [](double x, double y, double g, double& ga, double& gb) { ga = g * y; gb = g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "div", [](double x, double y) { return x / y; },
                   [](double x, double y, double g, double& ga, double& gb) {
                     ga = g / y;
                     gb = -g * x / (y * y);
                   });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary_op(a, "add_scalar", [c](double x) { return x + c; }, [](double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double c) {
  return unary_op(a, "mul_scalar", [c](double x) { return x * c; }, [c](double) { return c; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor relu(const Tensor& a) {
  return unary_op(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                  [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
  return unary_op(a, "exp", [](double x) { return std::exp(x); },
                  [](double x) { return std::exp(x); });
}

Tensor log(const Tensor& a) {
  return unary_op(a, "log", [](double x) { return std::log(x); },
                  [](double x) { return 1.0 / x; });
}

Tensor softplus(const Tensor& a) {
  return unary_op(a, "softplus",
                  [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
                  [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  bool rg = grad_enabled({&a});
  Tensor y = Tensor::scalar(s, rg);
  check_finite(y, "sum");
  if (rg) {
    Tape::current()->record([a, y]() mutable {
      const auto* gy = y.grad_if();
      if (!gy) return;
      for (auto& g : a.grad()) g += (*gy)[0];
    });
  }
  return y;
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const int m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double av = a.data()[static_cast<std::size_t>(i) * k + p];
      const double* brow = b.data().data() + static_cast<std::size_t>(p) * n;
      double* orow = out.data() + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  bool rg = grad_enabled({&a, &b});
  Tensor y = Tensor::from(std::move(out), {m, n}, rg);
  check_finite(y, "matmul");
  if (rg) {
    Tape::current()->record([a, b, y, m, k, n]() mutable {
      const auto* gy = y.grad_if();
      if (!gy) return;
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            const double g = (*gy)[static_cast<std::size_t>(i) * n + j];
            if (g == 0.0) continue;
            for (int p = 0; p < k; ++p)
              ga[static_cast<std::size_t>(i) * k + p] += g * b.data()[static_cast<std::size_t>(p) * n + j];
          }
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            const double av = a.data()[static_cast<std::size_t>(i) * k + p];
            if (av == 0.0) continue;
            for (int j = 0; j < n; ++j)
              gb[static_cast<std::size_t>(p) * n + j] += av * (*gy)[static_cast<std::size_t>(i) * n + j];
          }
      }
    });
  }
  return y;
}

Tensor transpose(const Tensor& a) {
  if (a.shape().size() != 2) throw ShapeError("transpose: expected 2-D, got " + shape_str(a.shape()));
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(a.data().size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j) * m + i] = a.data()[static_cast<std::size_t>(i) * n + j];
  bool rg = grad_enabled({&a});
  Tensor y = Tensor::from(std::move(out), {n, m}, rg);
  if (rg) {
    Tape::current()->record([a, y, m, n]() mutable {
      const auto* gy = y.grad_if();
      if (!gy) return;
      auto& ga = a.grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) ga[static_cast<std::size_t>(i) * n + j] += (*gy)[static_cast<std::size_t>(j) * m + i];
    });
  }
  return y;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const int in = last_dim(x, "linear");
  if (w.shape().size() != 2 || w.rows() != in) {
    throw ShapeError("linear: input width " + std::to_string(in) + " does not match weight " +
                     shape_str(w.shape()));
  }
  const int out = w.cols();
  if (b.shape() != Shape{out}) {
    throw ShapeError("linear: bias shape " + shape_str(b.shape()) + " does not match weight " +
                     shape_str(w.shape()));
  }
  const std::int64_t rows = x.size() / (in == 0 ? 1 : in);
  std::vector<double> y(static_cast<std::size_t>(rows) * out);
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * in;
    double* yr = y.data() + r * out;
    for (int j = 0; j < out; ++j) yr[j] = b.data()[static_cast<std::size_t>(j)];
    for (int p = 0; p < in; ++p) {
      const double xv = xr[p];
      const double* wrow = w.data().data() + static_cast<std::size_t>(p) * out;
      for (int j = 0; j < out; ++j) yr[j] += xv * wrow[j];
    }
  }
  Shape yshape = x.shape();
  yshape.back() = out;
  bool rg = grad_enabled({&x, &w, &b});
  Tensor yt = Tensor::from(std::move(y), std::move(yshape), rg);
  check_finite(yt, "linear");
  if (rg) {
    Tape::current()->record([x, w, b, yt, rows, in, out]() mutable {
      const auto* gy = yt.grad_if();
      if (!gy) return;
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* gyr = gy->data() + r * out;
        const double* xr = x.data().data() + r * in;
        if (x.requires_grad()) {
          double* gxr = x.grad().data() + r * in;
          for (int p = 0; p < in; ++p) {
            const double* wrow = w.data().data() + static_cast<std::size_t>(p) * out;
            double acc = 0.0;
            for (int j = 0; j < out; ++j) acc += gyr[j] * wrow[j];
            gxr[p] += acc;
          }
        }
        if (w.requires_grad()) {
          auto& gw = w.grad();
          for (int p = 0; p < in; ++p) {
            const double xv = xr[p];
            if (xv == 0.0) continue;
            double* gwrow = gw.data() + static_cast<std::size_t>(p) * out;
            for (int j = 0; j < out; ++j) gwrow[j] += xv * gyr[j];
          }
        }
        if (b.requires_grad()) {
          auto& gb = b.grad();
          for (int j = 0; j < out; ++j) gb[static_cast<std::size_t>(j)] += gyr[j];
        }
      }
    });
  }
  return yt;
}

Tensor log_softmax(const Tensor& x) {
  const int n = last_dim(x, "log_softmax");
  if (n < 1) throw ShapeError("log_softmax: last axis must have at least one element");
  const std::int64_t rows = x.size() / n;
  std::vector<double> out(x.data().size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * n;
    double mx = xr[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    double lse = 0.0;
    for (int j = 0; j < n; ++j) lse += std::exp(xr[j] - mx);
    lse = std::log(lse) + mx;
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(r * n + j)] = xr[j] - lse;
  }
  bool rg = grad_enabled({&x});
  Tensor y = Tensor::from(std::move(out), x.shape(), rg);
  check_finite(y, "log_softmax");
  if (rg) {
    Tape::current()->record([x, y, rows, n]() mutable {
      const auto* gy = y.grad_if();
      if (!gy) return;
      auto& gx = x.grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        double gsum = 0.0;
        for (int j = 0; j < n; ++j) gsum += (*gy)[static_cast<std::size_t>(r * n + j)];
        for (int j = 0; j < n; ++j) {
          const double sm = std::exp(y.data()[static_cast<std::size_t>(r * n + j)]);
          gx[static_cast<std::size_t>(r * n + j)] += (*gy)[static_cast<std::size_t>(r * n + j)] - sm * gsum;
        }
      }
    });
  }
  return y;
}

namespace {

Tensor logsumexp_axis(const Tensor& x, bool over_cols) {
  if (x.shape().size() != 2) throw ShapeError("logsumexp: expected 2-D, got " + shape_str(x.shape()));
  const int m = x.rows(), n = x.cols();
  const int outn = over_cols ? m : n;
  const int redn = over_cols ? n : m;
  if (redn < 1) throw ShapeError("logsumexp: reduced axis is empty");
  auto at = [&](int i, int j) { return x.data()[static_cast<std::size_t>(i) * n + j]; };
  std::vector<double> out(static_cast<std::size_t>(outn));
  for (int o = 0; o < outn; ++o) {
    double mx = over_cols ? at(o, 0) : at(0, o);
    for (int r = 1; r < redn; ++r) mx = std::max(mx, over_cols ? at(o, r) : at(r, o));
    double s = 0.0;
    for (int r = 0; r < redn; ++r) s += std::exp((over_cols ? at(o, r) : at(r, o)) - mx);
    out[static_cast<std::size_t>(o)] = std::log(s) + mx;
  }
  bool rg = grad_enabled({&x});
  Tensor y = Tensor::from(std::move(out), {outn}, rg);
  check_finite(y, "logsumexp");
  if (rg) {
    Tape::current()->record([x, y, m, n, over_cols]() mutable {
      const auto* gy = y.grad_if();
      if (!gy) return;
      auto& gx = x.grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          const int o = over_cols ? i : j;
          const double w = std::exp(x.data()[static_cast<std::size_t>(i) * n + j] - y.data()[static_cast<std::size_t>(o)]);
          gx[static_cast<std::size_t>(i) * n + j] += w * (*gy)[static_cast<std::size_t>(o)];
        }
    });
  }
  return y;
}

}  // namespace

Tensor logsumexp_rows(const Tensor& x) { return logsumexp_axis(x, true); }
Tensor logsumexp_cols(const Tensor& x) { return logsumexp_axis(x, false); }

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  if (m.shape().size() != 2 || v.shape() != Shape{m.cols()}) {
    throw ShapeError("add_rowvec: " + shape_str(m.shape()) + " + " + shape_str(v.shape()));
  }
  const int rows = m.rows(), n = m.cols();
  std::vector<double> out(m.data().size());
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i) * n + j] = m.data()[static_cast<std::size_t>(i) * n + j] + v.data()[static_cast<std::size_t>(j)];
  bool rg = grad_enabled({&m, &v});
  Tensor y = Tensor::from(std::move(out), m.shape(), rg);
  check_finite(y, "add_rowvec");
  if (rg) {
    Tape::current()->record([m, v, y, rows, n]() mutable {
      const auto* gy = y.grad_if();
      if (!gy) return;
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < n; ++j) {
          const double g = (*gy)[static_cast<std::size_t>(i) * n + j];
          if (m.requires_grad()) m.grad()[static_cast<std::size_t>(i) * n + j] += g;
          if (v.requires_grad()) v.grad()[static_cast<std::size_t>(j)] += g;
        }
    });
  }
  return y;
}

Tensor add_colvec(const Tensor& m, const Tensor& u) {
  if (m.shape().size() != 2 || u.shape() != Shape{m.rows()}) {
    throw ShapeError("add_colvec: " + shape_str(m.shape()) + " + " + shape_str(u.shape()));
  }
  const int rows = m.rows(), n = m.cols();
  std::vector<double> out(m.data().size());
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i) * n + j] = m.data()[static_cast<std::size_t>(i) * n + j] + u.data()[static_cast<std::size_t>(i)];
  bool rg = grad_enabled({&m, &u});
  Tensor y = Tensor::from(std::move(out), m.shape(), rg);
  check_finite(y, "add_colvec");
  if (rg) {
    Tape::current()->record([m, u, y, rows, n]() mutable {
      const auto* gy = y.grad_if();
      if (!gy) return;
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < n; ++j) {
          const double g = (*gy)[static_cast<std::size_t>(i) * n + j];
          if (m.requires_grad()) m.grad()[static_cast<std::size_t>(i) * n + j] += g;
          if (u.requires_grad()) u.grad()[static_cast<std::size_t>(i)] += g;
        }
    });
  }
  return y;
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_last: no parts");
  Shape lead = parts[0].shape();
  lead.pop_back();
  int total = 0;
  std::int64_t rows = 1;
  for (int d : lead) rows *= d;
  for (const auto& p : parts) {
    Shape pl = p.shape();
    if (pl.empty()) throw ShapeError("concat_last: scalar part");
    int w = pl.back();
    pl.pop_back();
    if (pl != lead) throw ShapeError("concat_last: leading dims differ");
    total += w;
  }
  std::vector<double> out(static_cast<std::size_t>(rows * total));
  int off = 0;
  for (const auto& p : parts) {
    const int w = p.shape().back();
    for (std::int64_t r = 0; r < rows; ++r)
      for (int j = 0; j < w; ++j)
        out[static_cast<std::size_t>(r * total + off + j)] = p.data()[static_cast<std::size_t>(r * w + j)];
    off += w;
  }
  bool rg = false;
  for (const auto& p : parts)
    if (grad_enabled({&p})) rg = true;
  Shape yshape = lead;
  yshape.push_back(total);
  Tensor y = Tensor::from(std::move(out), std::move(yshape), rg);
  if (rg) {
    auto ps = parts;
    Tape::current()->record([ps, y, rows, total]() mutable {
      const auto* gy = y.grad_if();
      if (!gy) return;
      int off2 = 0;
      for (auto& p : ps) {
        const int w = p.shape().back();
        if (p.requires_grad()) {
          auto& gp = p.grad();
          for (std::int64_t r = 0; r < rows; ++r)
            for (int j = 0; j < w; ++j)
              gp[static_cast<std::size_t>(r * w + j)] += (*gy)[static_cast<std::size_t>(r * total + off2 + j)];
        }
        off2 += w;
      }
    });
  }
  return y;
}

Tensor slice_last(const Tensor& x, int offset, int length) {
  const int n = last_dim(x, "slice_last");
  if (offset < 0 || length < 0 || offset + length > n) {
    throw ShapeError("slice_last: [" + std::to_string(offset) + ", " +
                     std::to_string(offset + length) + ") out of width " + std::to_string(n));
  }
  const std::int64_t rows = n == 0 ? 0 : x.size() / n;
  std::vector<double> out(static_cast<std::size_t>(rows * length));
  for (std::int64_t r = 0; r < rows; ++r)
    for (int j = 0; j < length; ++j)
      out[static_cast<std::size_t>(r * length + j)] = x.data()[static_cast<std::size_t>(r * n + offset + j)];
  Shape yshape = x.shape();
  yshape.back() = length;
  bool rg = grad_enabled({&x});
  Tensor y = Tensor::from(std::move(out), std::move(yshape), rg);
  if (rg) {
    Tape::current()->record([x, y, rows, n, offset, length]() mutable {
      const auto* gy = y.grad_if();
      if (!gy) return;
      auto& gx = x.grad();
      for (std::int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < length; ++j)
          gx[static_cast<std::size_t>(r * n + offset + j)] += (*gy)[static_cast<std::size_t>(r * length + j)];
    });
  }
  return y;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  const int n = parts[0].shape().size() == 2 ? parts[0].cols() : -1;
  if (n < 0) throw ShapeError("concat_rows: expected 2-D parts");
  int m = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != 2 || p.cols() != n) throw ShapeError("concat_rows: column mismatch");
    m += p.rows();
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m) * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  bool rg = false;
  for (const auto& p : parts)
    if (grad_enabled({&p})) rg = true;
  Tensor y = Tensor::from(std::move(out), {m, n}, rg);
  if (rg) {
    auto ps = parts;
    Tape::current()->record([ps, y, n]() mutable {
      const auto* gy = y.grad_if();
      if (!gy) return;
      std::size_t off = 0;
      for (auto& p : ps) {
        const std::size_t cnt = p.data().size();
        if (p.requires_grad()) {
          auto& gp = p.grad();
          for (std::size_t i = 0; i < cnt; ++i) gp[i] += (*gy)[off + i];
        }
        off += cnt;
      }
    });
  }
  return y;
}

Tensor slice_rows(const Tensor& x, int row0, int row1) {
  if (x.shape().size() != 2) throw ShapeError("slice_rows: expected 2-D");
  const int m = x.rows(), n = x.cols();
  if (row0 < 0 || row1 < row0 || row1 > m) throw ShapeError("slice_rows: bad range");
  std::vector<double> out(x.data().begin() + static_cast<std::size_t>(row0) * n,
                          x.data().begin() + static_cast<std::size_t>(row1) * n);
  bool rg = grad_enabled({&x});
  Tensor y = Tensor::from(std::move(out), {row1 - row0, n}, rg);
  if (rg) {
    Tape::current()->record([x, y, row0, n]() mutable {
      const auto* gy = y.grad_if();
      if (!gy) return;
      auto& gx = x.grad();
      for (std::size_t i = 0; i < gy->size(); ++i)
        gx[static_cast<std::size_t>(row0) * n + i] += (*gy)[i];
    });
  }
  return y;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
  if (x.shape().size() != 2) throw ShapeError("gather_rows: expected 2-D");
  const int m = x.rows(), n = x.cols();
  std::vector<double> out(rows.size() * static_cast<std::size_t>(n));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= m) throw ShapeError("gather_rows: index out of range");
    for (int j = 0; j < n; ++j)
      out[r * n + j] = x.data()[static_cast<std::size_t>(rows[r]) * n + j];
  }
  bool rg = grad_enabled({&x});
  Tensor y = Tensor::from(std::move(out), {static_cast<int>(rows.size()), n}, rg);
  if (rg) {
    auto idx = rows;
    Tape::current()->record([x, y, idx, n]() mutable {
      const auto* gy = y.grad_if();
      if (!gy) return;
      auto& gx = x.grad();
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (int j = 0; j < n; ++j)
          gx[static_cast<std::size_t>(idx[r]) * n + j] += (*gy)[r * n + j];
    });
  }
  return y;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  bool rg = grad_enabled({&x});
  Tensor y = Tensor::from(x.data(), std::move(shape), rg);
  if (rg) {
    Tape::current()->record([x, y]() mutable {
      const auto* gy = y.grad_if();
      if (!gy) return;
      auto& gx = x.grad();
      for (std::size_t i = 0; i < gy->size(); ++i) gx[i] += (*gy)[i];
    });
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const int d = last_dim(x, "layer_norm");
  if (d == 0) throw ShapeError("layer_norm: empty last axis");
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(d) + "]");
  }
  const std::int64_t rows = x.size() / d;
  std::vector<double> out(x.data().size());
  std::vector<double> inv_std(static_cast<std::size_t>(rows));
  std::vector<double> xhat(x.data().size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += xr[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(r)] = is;
    for (int j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * is;
      xhat[static_cast<std::size_t>(r * d + j)] = h;
      out[static_cast<std::size_t>(r * d + j)] = h * gain.data()[static_cast<std::size_t>(j)] + bias.data()[static_cast<std::size_t>(j)];
    }
  }
  bool rg = grad_enabled({&x, &gain, &bias});
  Tensor y = Tensor::from(std::move(out), x.shape(), rg);
  check_finite(y, "layer_norm");
  if (rg) {
    Tape::current()->record([x, gain, bias, y, rows, d, inv_std, xhat]() mutable {
      const auto* gy = y.grad_if();
      if (!gy) return;
      for (std::int64_t r = 0; r < rows; ++r) {
        const double is = inv_std[static_cast<std::size_t>(r)];
        double m1 = 0.0, m2 = 0.0;
        for (int j = 0; j < d; ++j) {
          const double dxh = (*gy)[static_cast<std::size_t>(r * d + j)] * gain.data()[static_cast<std::size_t>(j)];
          m1 += dxh;
          m2 += dxh * xhat[static_cast<std::size_t>(r * d + j)];
        }
        m1 /= d;
        m2 /= d;
        for (int j = 0; j < d; ++j) {
          const std::size_t idx = static_cast<std::size_t>(r * d + j);
          const double dxh = (*gy)[idx] * gain.data()[static_cast<std::size_t>(j)];
          if (x.requires_grad()) x.grad()[idx] += is * (dxh - m1 - xhat[idx] * m2);
          if (gain.requires_grad()) gain.grad()[static_cast<std::size_t>(j)] += (*gy)[idx] * xhat[idx];
          if (bias.requires_grad()) bias.grad()[static_cast<std::size_t>(j)] += (*gy)[idx];
        }
      }
    });
  }
  return y;
}

Tensor sinusoidal_pe(const Tensor& x, int out_dim) {
  if (out_dim <= 0 || out_dim % 2 != 0) {
    throw ConfigError("sinusoidal_pe: output width must be positive and even, got " +
                      std::to_string(out_dim));
  }
  const int k = last_dim(x, "sinusoidal_pe");
  if (k == 0) throw ShapeError("sinusoidal_pe: empty input axis");
  // Even per-scalar width, large enough that k of them cover out_dim.
  const int per = 2 * ((out_dim + 2 * k - 1) / (2 * k));
  const int bands = per / 2;
  std::vector<double> omega(static_cast<std::size_t>(bands));
  for (int i = 0; i < bands; ++i) omega[static_cast<std::size_t>(i)] = std::pow(10000.0, -2.0 * i / per);
  const std::int64_t rows = x.size() / k;
  std::vector<double> out(static_cast<std::size_t>(rows * out_dim));
  for (std::int64_t r = 0; r < rows; ++r) {
    for (int j = 0; j < k; ++j) {
      const double v = x.data()[static_cast<std::size_t>(r * k + j)];
      for (int i = 0; i < bands; ++i) {
        const int c0 = j * per + 2 * i;
        if (c0 >= out_dim) break;
        out[static_cast<std::size_t>(r * out_dim + c0)] = std::sin(omega[static_cast<std::size_t>(i)] * v);
        if (c0 + 1 < out_dim)
          out[static_cast<std::size_t>(r * out_dim + c0 + 1)] = std::cos(omega[static_cast<std::size_t>(i)] * v);
      }
    }
  }
  Shape yshape = x.shape();
  yshape.back() = out_dim;
  bool rg = grad_enabled({&x});
  Tensor y = Tensor::from(std::move(out), std::move(yshape), rg);
  check_finite(y, "sinusoidal_pe");
  if (rg) {
    Tape::current()->record([x, y, rows, k, per, bands, omega, out_dim]() mutable {
      const auto* gy = y.grad_if();
      if (!gy) return;
      auto& gx = x.grad();
      for (std::int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < k; ++j) {
          const double v = x.data()[static_cast<std::size_t>(r * k + j)];
          double acc = 0.0;
          for (int i = 0; i < bands; ++i) {
            const int c0 = j * per + 2 * i;
            if (c0 >= out_dim) break;
            const double w = omega[static_cast<std::size_t>(i)];
            acc += (*gy)[static_cast<std::size_t>(r * out_dim + c0)] * w * std::cos(w * v);
            if (c0 + 1 < out_dim)
              acc -= (*gy)[static_cast<std::size_t>(r * out_dim + c0 + 1)] * w * std::sin(w * v);
          }
          gx[static_cast<std::size_t>(r * k + j)] += acc;
        }
    });
  }
  return y;
}

Tensor pad_with_scalar(const Tensor& a, const Tensor& z) {
  if (a.shape().size() != 2) throw ShapeError("pad_with_scalar: expected 2-D");
  if (z.size() != 1) throw ShapeError("pad_with_scalar: z must be scalar");
  const int m = a.rows(), n = a.cols();
  const double zv = z.data()[0];
  std::vector<double> out(static_cast<std::size_t>(m + 1) * (n + 1), zv);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i) * (n + 1) + j] = a.data()[static_cast<std::size_t>(i) * n + j];
  bool rg = grad_enabled({&a, &z});
  Tensor y = Tensor::from(std::move(out), {m + 1, n + 1}, rg);
  check_finite(y, "pad_with_scalar");
  if (rg) {
    Tape::current()->record([a, z, y, m, n]() mutable {
      const auto* gy = y.grad_if();
      if (!gy) return;
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            ga[static_cast<std::size_t>(i) * n + j] += (*gy)[static_cast<std::size_t>(i) * (n + 1) + j];
      }
      if (z.requires_grad()) {
        double acc = 0.0;
        for (int i = 0; i <= m; ++i) acc += (*gy)[static_cast<std::size_t>(i) * (n + 1) + n];
        for (int j = 0; j < n; ++j) acc += (*gy)[static_cast<std::size_t>(m) * (n + 1) + j];
        z.grad()[0] += acc;
      }
    });
  }
  return y;
}

}  // namespace trackcast

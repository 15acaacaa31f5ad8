#pragma once

// Test-only oracles: finite differences, a naive attention evaluator, and
// small helpers. These stay independent of the library's forward paths.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "trackcast/tensor.hpp"

namespace oracles {

// Central finite difference of a scalar function w.r.t. one slot of a raw
// buffer. The function must re-run the forward pass from the buffer.
inline double fd_slot(const std::function<double()>& forward, double* slot, double eps = 1e-5) {
  const double saved = *slot;
  *slot = saved + eps;
  const double up = forward();
  *slot = saved - eps;
  const double down = forward();
  *slot = saved;
  return (up - down) / (2.0 * eps);
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
}

// Max relative error between tape gradients of `loss_fn` (evaluated once
// under a fresh tape) and central finite differences over every slot of
// every listed tensor.
inline double max_grad_rel_err(const std::function<trackcast::Tensor()>& loss_fn,
                               std::vector<trackcast::Tensor> wrt, double eps = 1e-5) {
  for (auto& t : wrt) t.zero_grad();
  trackcast::Tape tape;
  {
    trackcast::Tape::Scope scope(tape);
    trackcast::Tensor loss = loss_fn();
    tape.backward(loss);
  }
  auto forward_value = [&]() {
    trackcast::Tensor l = loss_fn();  // no tape active: plain forward
    return l.value();
  };
  double worst = 0.0;
  for (auto& t : wrt) {
    const auto* g = t.grad_if();
    for (std::int64_t i = 0; i < t.size(); ++i) {
      const double analytic = g ? (*g)[static_cast<std::size_t>(i)] : 0.0;
      const double numeric = fd_slot(forward_value, &t.data()[static_cast<std::size_t>(i)], eps);
      worst = std::max(worst, rel_err(analytic, numeric));
    }
  }
  return worst;
}

// Plain-loop multi-head attention over raw buffers; masked pairs get -1e9
// added to the score, rows with no allowed key return zeros.
inline std::vector<double> naive_mha(const std::vector<double>& q, int nq,
                                     const std::vector<double>& k, int nk,
                                     const std::vector<double>& v, int d, int heads,
                                     const std::vector<double>& wq, const std::vector<double>& bq,
                                     const std::vector<double>& wk, const std::vector<double>& bk,
                                     const std::vector<double>& wv, const std::vector<double>& bv,
                                     const std::vector<double>& wo, const std::vector<double>& bo,
                                     const std::vector<std::uint8_t>* mask = nullptr) {
  auto project = [d](const std::vector<double>& x, int n, const std::vector<double>& w,
                     const std::vector<double>& b) {
    std::vector<double> y(static_cast<std::size_t>(n) * d, 0.0);
    for (int r = 0; r < n; ++r)
      for (int j = 0; j < d; ++j) {
        double acc = b[static_cast<std::size_t>(j)];
        for (int p = 0; p < d; ++p)
          acc += x[static_cast<std::size_t>(r) * d + p] * w[static_cast<std::size_t>(p) * d + j];
        y[static_cast<std::size_t>(r) * d + j] = acc;
      }
    return y;
  };
  auto qp = project(q, nq, wq, bq);
  auto kp = project(k, nk, wk, bk);
  auto vp = project(v, nk, wv, bv);
  const int dh = d / heads;
  std::vector<double> concat(static_cast<std::size_t>(nq) * d, 0.0);
  for (int h = 0; h < heads; ++h) {
    for (int i = 0; i < nq; ++i) {
      std::vector<double> scores(static_cast<std::size_t>(nk));
      bool any = false;
      for (int j = 0; j < nk; ++j) {
        double s = 0.0;
        for (int p = 0; p < dh; ++p)
          s += qp[static_cast<std::size_t>(i) * d + h * dh + p] * kp[static_cast<std::size_t>(j) * d + h * dh + p];
        s /= std::sqrt(static_cast<double>(dh));
        if (mask && !(*mask)[static_cast<std::size_t>(i) * nk + j]) s += -1e9;
        else any = true;
        scores[static_cast<std::size_t>(j)] = s;
      }
      if (!mask) any = true;
      double mx = scores[0];
      for (double s : scores) mx = std::max(mx, s);
      double z = 0.0;
      for (double s : scores) z += std::exp(s - mx);
      for (int j = 0; j < nk; ++j) {
        const double w = std::exp(scores[static_cast<std::size_t>(j)] - mx) / z;
        for (int p = 0; p < dh; ++p)
          concat[static_cast<std::size_t>(i) * d + h * dh + p] += w * vp[static_cast<std::size_t>(j) * d + h * dh + p];
      }
      if (!any)
        for (int p = 0; p < dh; ++p) concat[static_cast<std::size_t>(i) * d + h * dh + p] = 0.0;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(nq) * d, 0.0);
  for (int i = 0; i < nq; ++i) {
    bool row_dead = false;
    if (mask) {
      row_dead = true;
      for (int j = 0; j < nk; ++j)
        if ((*mask)[static_cast<std::size_t>(i) * nk + j]) row_dead = false;
    }
    for (int j = 0; j < d; ++j) {
      double acc = bo[static_cast<std::size_t>(j)];
      for (int p = 0; p < d; ++p)
        acc += concat[static_cast<std::size_t>(i) * d + p] * wo[static_cast<std::size_t>(p) * d + j];
      out[static_cast<std::size_t>(i) * d + j] = row_dead ? 0.0 : acc;
    }
  }
  return out;
}

inline std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                                      double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> out(n);
  for (auto& v : out) v = dist(rng);
  return out;
}

// Plain-loop [rows x in] * [in x out] + bias.
inline std::vector<double> naive_linear(const std::vector<double>& x, int rows, int in, int out,
                                        const std::vector<double>& w, const std::vector<double>& b) {
  std::vector<double> y(static_cast<std::size_t>(rows) * out);
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < out; ++j) {
      double acc = b[static_cast<std::size_t>(j)];
      for (int p = 0; p < in; ++p)
        acc += x[static_cast<std::size_t>(r) * in + p] * w[static_cast<std::size_t>(p) * out + j];
      y[static_cast<std::size_t>(r) * out + j] = acc;
    }
  return y;
}

// Two affine layers with ReLU between them.
inline std::vector<double> naive_mlp2(const std::vector<double>& x, int rows, int in, int hidden,
                                      int out, const std::vector<double>& w0,
                                      const std::vector<double>& b0, const std::vector<double>& w1,
                                      const std::vector<double>& b1) {
  auto h = naive_linear(x, rows, in, hidden, w0, b0);
  for (auto& v : h) v = v > 0.0 ? v : 0.0;
  return naive_linear(h, rows, hidden, out, w1, b1);
}

// Interleaved sin/cos encoding matching the library's layout.
inline std::vector<double> naive_pe(const std::vector<double>& x, int rows, int k, int out_dim) {
  const int per = 2 * ((out_dim + 2 * k - 1) / (2 * k));
  std::vector<double> y(static_cast<std::size_t>(rows) * out_dim, 0.0);
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < k; ++j) {
      const double v = x[static_cast<std::size_t>(r) * k + j];
      for (int i = 0; i < per / 2; ++i) {
        const int c0 = j * per + 2 * i;
        if (c0 >= out_dim) break;
        const double w = std::pow(10000.0, -2.0 * i / per);
        y[static_cast<std::size_t>(r) * out_dim + c0] = std::sin(w * v);
        if (c0 + 1 < out_dim) y[static_cast<std::size_t>(r) * out_dim + c0 + 1] = std::cos(w * v);
      }
    }
  return y;
}

// Per-row layer norm with affine parameters.
inline std::vector<double> naive_layer_norm(const std::vector<double>& x, int rows, int d,
                                            const std::vector<double>& gain,
                                            const std::vector<double>& bias, double eps = 1e-5) {
  std::vector<double> y(x.size());
  for (int r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += x[static_cast<std::size_t>(r) * d + j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = x[static_cast<std::size_t>(r) * d + j] - mu;
      var += c * c;
    }
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < d; ++j)
      y[static_cast<std::size_t>(r) * d + j] =
          (x[static_cast<std::size_t>(r) * d + j] - mu) * is * gain[static_cast<std::size_t>(j)] +
          bias[static_cast<std::size_t>(j)];
  }
  return y;
}

}  // namespace oracles

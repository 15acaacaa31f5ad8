#include "trackcast/nn.hpp"

#include <cmath>

namespace trackcast {

ParamStore::ParamStore(std::uint64_t seed) : rng_(seed) {}

Tensor ParamStore::create(const std::string& name, Shape shape, Init init) {
  if (entries_.count(name)) throw ConfigError("parameter already exists: " + name);
  const std::int64_t n = numel(shape);
  std::vector<double> data(static_cast<std::size_t>(n), 0.0);
  if (init == Init::XavierUniform) {
    const int fan_out = shape.empty() ? 1 : shape.back();
    const int fan_in = shape.size() >= 2 ? shape[shape.size() - 2] : 1;
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    for (auto& v : data) v = dist(rng_);
  } else if (init == Init::One) {
    for (auto& v : data) v = 1.0;
  }
  Tensor t = Tensor::from(std::move(data), std::move(shape), true);
  Entry e;
  e.value = t;
  e.m.assign(static_cast<std::size_t>(n), 0.0);
  e.v.assign(static_cast<std::size_t>(n), 0.0);
  entries_.emplace(name, std::move(e));
  return t;
}

Tensor ParamStore::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second.value;
}

bool ParamStore::has(const std::string& name) const { return entries_.count(name) != 0; }

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [k, _] : entries_) out.push_back(k);
  return out;
}

std::int64_t ParamStore::total_values() const {
  std::int64_t n = 0;
  for (const auto& [_, e] : entries_) n += e.value.size();
  return n;
}

double ParamStore::checksum() const {
  double s = 0.0;
  for (const auto& [_, e] : entries_)
    for (double v : e.value.data()) s += std::abs(v);
  return s;
}

void ParamStore::zero_grad() {
  for (auto& [_, e] : entries_) e.value.zero_grad();
}

void ParamStore::adam_step(double lr, double beta1, double beta2, double eps) {
  ++adam_t_;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(adam_t_));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(adam_t_));
  for (auto& [_, e] : entries_) {
    const auto* g = e.value.grad_if();
    if (!g) continue;
    auto& x = e.value.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      e.m[i] = beta1 * e.m[i] + (1.0 - beta1) * (*g)[i];
      e.v[i] = beta2 * e.v[i] + (1.0 - beta2) * (*g)[i] * (*g)[i];
      x[i] -= lr * (e.m[i] / c1) / (std::sqrt(e.v[i] / c2) + eps);
    }
  }
}

nlohmann::json ParamStore::save_values() const {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [name, e] : entries_) {
    out[name] = {{"shape", e.value.shape()}, {"data", e.value.data()}};
  }
  return out;
}

void ParamStore::load_values(const nlohmann::json& params) {
  if (!params.is_object()) throw ConfigError("checkpoint: params must be an object");
  for (auto& [name, e] : entries_) {
    if (!params.contains(name)) throw ConfigError("checkpoint: missing parameter " + name);
    const auto& p = params.at(name);
    Shape shape = p.at("shape").get<Shape>();
    if (shape != e.value.shape()) {
      throw ConfigError("checkpoint: shape mismatch for " + name + ": file " + shape_str(shape) +
                        " vs model " + shape_str(e.value.shape()));
    }
    auto data = p.at("data").get<std::vector<double>>();
    if (static_cast<std::int64_t>(data.size()) != e.value.size())
      throw ConfigError("checkpoint: data length mismatch for " + name);
    e.value.data() = std::move(data);
  }
  for (auto it = params.begin(); it != params.end(); ++it) {
    if (!entries_.count(it.key()))
      throw ConfigError("checkpoint: unexpected parameter " + it.key());
  }
}

LinearLayer make_linear(ParamStore& ps, const std::string& prefix, int in, int out,
                        Init weight_init) {
  LinearLayer l;
  l.w = ps.create(prefix + ".w", {in, out}, weight_init);
  l.b = ps.create(prefix + ".b", {out}, Init::Zero);
  return l;
}

Tensor Mlp::apply(const Tensor& x) const {
  if (layers.empty()) throw ConfigError("mlp: no layers");
  const int want = layers.front().w.rows();
  const int got = x.shape().empty() ? -1 : x.shape().back();
  if (got != want) {
    throw ShapeError("mlp: input width " + shape_str(x.shape()) + " does not match first layer [" +
                     std::to_string(want) + ", " + std::to_string(layers.front().w.cols()) + "]");
  }
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].apply(h);
    if (i + 1 < layers.size()) h = relu(h);
  }
  return h;
}

Mlp make_mlp(ParamStore& ps, const std::string& prefix, const std::vector<int>& widths,
             bool final_zero) {
  if (widths.size() < 2) throw ConfigError("mlp: need at least input and output widths");
  Mlp m;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    m.layers.push_back(make_linear(ps, prefix + ".l" + std::to_string(i), widths[i], widths[i + 1],
                                   last && final_zero ? Init::Zero : Init::XavierUniform));
  }
  return m;
}

LayerNormParams make_layer_norm(ParamStore& ps, const std::string& prefix, int dim) {
  LayerNormParams ln;
  ln.gain = ps.create(prefix + ".gain", {dim}, Init::One);
  ln.bias = ps.create(prefix + ".bias", {dim}, Init::Zero);
  return ln;
}

Tensor Mha::apply(const Tensor& q, const Tensor& k, const Tensor& v, const AttnMask* mask) const {
  const int d = wq.rows();
  if (d % heads != 0) throw ConfigError("mha: dim " + std::to_string(d) + " not divisible by " +
                                        std::to_string(heads) + " heads");
  if (q.shape().size() != 2 || q.cols() != d) throw ShapeError("mha: bad query shape " + shape_str(q.shape()));
  const int nq = q.rows();
  const int nk = k.shape().size() == 2 ? k.rows() : 0;
  if (nq == 0) return Tensor::zeros({0, d});
  if (nk == 0) return Tensor::zeros({nq, d});
  if (k.cols() != d || v.shape() != k.shape()) throw ShapeError("mha: key/value shape mismatch");
  if (mask && (mask->nq != nq || mask->nk != nk)) throw ShapeError("mha: mask shape mismatch");

  Tensor qp = linear(q, wq, bq);
  Tensor kp = linear(k, wk, bk);
  Tensor vp = linear(v, wv, bv);

  Tensor bias_t;
  std::vector<int> dead_rows;
  if (mask) {
    std::vector<double> bias(static_cast<std::size_t>(nq) * nk, 0.0);
    for (int i = 0; i < nq; ++i) {
      bool any = false;
      for (int j = 0; j < nk; ++j) {
        if (mask->allowed(i, j)) {
          any = true;
        } else {
          bias[static_cast<std::size_t>(i) * nk + j] = -1e9;
        }
      }
      if (!any) dead_rows.push_back(i);
    }
    bias_t = Tensor::from(std::move(bias), {nq, nk});
  }

  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> head_outs;
  head_outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_last(qp, h * dh, dh);
    Tensor kh = slice_last(kp, h * dh, dh);
    Tensor vh = slice_last(vp, h * dh, dh);
    Tensor scores = mul_scalar(matmul(qh, transpose(kh)), scale);
    if (bias_t.defined()) scores = add(scores, bias_t);
    Tensor attn = exp(log_softmax(scores));
    head_outs.push_back(matmul(attn, vh));
  }
  Tensor out = linear(concat_last(head_outs), wo, bo);
  if (!dead_rows.empty()) {
    std::vector<double> keep(static_cast<std::size_t>(nq) * d, 1.0);
    for (int i : dead_rows)
      for (int j = 0; j < d; ++j) keep[static_cast<std::size_t>(i) * d + j] = 0.0;
    out = mul(out, Tensor::from(std::move(keep), {nq, d}));
  }
  return out;
}

Mha make_mha(ParamStore& ps, const std::string& prefix, int dim, int heads, bool value_zero_init) {
  if (dim % heads != 0)
    throw ConfigError("mha: dim " + std::to_string(dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  Mha m;
  m.heads = heads;
  auto lq = make_linear(ps, prefix + ".q", dim, dim);
  auto lk = make_linear(ps, prefix + ".k", dim, dim);
  auto lv = make_linear(ps, prefix + ".v", dim, dim,
                        value_zero_init ? Init::Zero : Init::XavierUniform);
  auto lo = make_linear(ps, prefix + ".o", dim, dim);
  m.wq = lq.w; m.bq = lq.b;
  m.wk = lk.w; m.bk = lk.b;
  m.wv = lv.w; m.bv = lv.b;
  m.wo = lo.w; m.bo = lo.b;
  return m;
}

}  // namespace trackcast

#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "trackcast/tensor.hpp"

namespace trackcast {

enum class Init { XavierUniform, Zero, One };

// Named parameter storage with Adam state. Creation order is fixed by the
// model constructor, which makes seeded initialization reproducible.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed);

  Tensor create(const std::string& name, Shape shape, Init init);
  Tensor get(const std::string& name) const;
  bool has(const std::string& name) const;
  std::vector<std::string> names() const;
  std::int64_t total_values() const;
  double checksum() const;

  void zero_grad();
  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  nlohmann::json save_values() const;
  // Shapes and names must match the constructed model exactly.
  void load_values(const nlohmann::json& params);

 private:
  struct Entry {
    Tensor value;
    std::vector<double> m, v;
  };
  std::map<std::string, Entry> entries_;
  std::mt19937_64 rng_;
  std::int64_t adam_t_ = 0;
};

struct LinearLayer {
  Tensor w, b;
  Tensor apply(const Tensor& x) const { return linear(x, w, b); }
};
LinearLayer make_linear(ParamStore& ps, const std::string& prefix, int in, int out,
                        Init weight_init = Init::XavierUniform);

// Affine layers with ReLU between them (none after the last).
struct Mlp {
  std::vector<LinearLayer> layers;
  Tensor apply(const Tensor& x) const;
};
// widths = {in, hidden..., out}; final_zero zero-initializes the last layer.
Mlp make_mlp(ParamStore& ps, const std::string& prefix, const std::vector<int>& widths,
             bool final_zero = false);

struct LayerNormParams {
  Tensor gain, bias;
  Tensor apply(const Tensor& x) const { return layer_norm(x, gain, bias); }
};
LayerNormParams make_layer_norm(ParamStore& ps, const std::string& prefix, int dim);

// Row-major [nq x nk]; true = attend allowed.
struct AttnMask {
  int nq = 0, nk = 0;
  std::vector<std::uint8_t> allow;
  bool allowed(int i, int j) const { return allow[static_cast<std::size_t>(i) * nk + j] != 0; }
};

struct Mha {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  int heads = 1;
  // q: [nq, d], k/v: [nk, d] -> [nq, d]. Rows with no allowed key (or an
  // empty key set) come back as zeros.
  Tensor apply(const Tensor& q, const Tensor& k, const Tensor& v,
               const AttnMask* mask = nullptr) const;
};
Mha make_mha(ParamStore& ps, const std::string& prefix, int dim, int heads,
             bool value_zero_init = false);

}  // namespace trackcast

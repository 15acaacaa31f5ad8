#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "trackcast/nn.hpp"

using namespace trackcast;

TEST_CASE("mlp: zero weights collapse to bias") {
  ParamStore ps(1);
  Mlp m = make_mlp(ps, "m", {2, 3}, /*final_zero=*/true);
  // final_zero leaves the (only) layer at zero; set the bias by hand.
  ps.get("m.l0.b").data() = {0.5, -1.0, 2.0};
  Tensor y = m.apply(Tensor::from({1.0, 2.0}, {1, 2}));
  CHECK(y.data() == std::vector<double>{0.5, -1.0, 2.0});
}

TEST_CASE("mlp: identity weights pass input through") {
  ParamStore ps(1);
  Mlp m = make_mlp(ps, "m", {2, 2});
  ps.get("m.l0.w").data() = {1.0, 0.0, 0.0, 1.0};
  ps.get("m.l0.b").data() = {0.0, 0.0};
  Tensor y = m.apply(Tensor::from({0.5, -0.5}, {1, 2}));
  CHECK(y.data()[0] == 0.5);
  CHECK(y.data()[1] == -0.5);
  // With a ReLU after it (two identity layers), negatives clamp.
  ParamStore ps2(1);
  Mlp m2 = make_mlp(ps2, "m", {2, 2, 2});
  ps2.get("m.l0.w").data() = {1.0, 0.0, 0.0, 1.0};
  ps2.get("m.l1.w").data() = {1.0, 0.0, 0.0, 1.0};
  Tensor y2 = m2.apply(Tensor::from({0.5, -0.5}, {1, 2}));
  CHECK(y2.data()[0] == 0.5);
  CHECK(y2.data()[1] == 0.0);
}

TEST_CASE("mlp: shape mismatch reports both shapes") {
  ParamStore ps(1);
  Mlp m = make_mlp(ps, "m", {3, 4});
  try {
    m.apply(Tensor::from({1.0, 2.0}, {1, 2}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2") != std::string::npos);
    CHECK(msg.find("3") != std::string::npos);
  }
}

TEST_CASE("mlp: gradient of sum(output) w.r.t. input matches finite differences") {
  ParamStore ps(11);
  Mlp m = make_mlp(ps, "m", {3, 8, 4});
  std::mt19937_64 rng(5);
  Tensor x = Tensor::from(oracles::random_vec(6, rng), {2, 3}, true);
  const double err = oracles::max_grad_rel_err([&] { return sum(m.apply(x)); },
                                               {x, ps.get("m.l0.w"), ps.get("m.l0.b"),
                                                ps.get("m.l1.w"), ps.get("m.l1.b")});
  CHECK(err <= 1e-6);
}

TEST_CASE("mha: single key returns projected value") {
  ParamStore ps(3);
  Mha attn = make_mha(ps, "a", 4, 2);
  std::mt19937_64 rng(17);
  Tensor q = Tensor::from(oracles::random_vec(12, rng), {3, 4});
  Tensor kv = Tensor::from(oracles::random_vec(4, rng), {1, 4});
  Tensor out = attn.apply(q, kv, kv);
  // Softmax over one key is 1 regardless of the query: every row equals
  // W_o(W_v kv + b_v) + b_o.
  Tensor vp = linear(kv, ps.get("a.v.w"), ps.get("a.v.b"));
  Tensor expect = linear(vp, ps.get("a.o.w"), ps.get("a.o.b"));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(out.data()[i * 4 + j] == doctest::Approx(expect.data()[j]).epsilon(1e-12));
}

TEST_CASE("mha: identical keys average distinct values") {
  ParamStore ps(4);
  Mha attn = make_mha(ps, "a", 4, 1);
  std::mt19937_64 rng(23);
  Tensor q = Tensor::from(oracles::random_vec(4, rng), {1, 4});
  std::vector<double> key = oracles::random_vec(4, rng);
  std::vector<double> keys;
  std::vector<double> vals = oracles::random_vec(12, rng);
  for (int r = 0; r < 3; ++r) keys.insert(keys.end(), key.begin(), key.end());
  Tensor out = attn.apply(q, Tensor::from(keys, {3, 4}), Tensor::from(vals, {3, 4}));
  std::vector<double> mean_v(4, 0.0);
  for (int r = 0; r < 3; ++r)
    for (int j = 0; j < 4; ++j) mean_v[j] += vals[r * 4 + j] / 3.0;
  Tensor vp = linear(Tensor::from(mean_v, {1, 4}), ps.get("a.v.w"), ps.get("a.v.b"));
  Tensor expect = linear(vp, ps.get("a.o.w"), ps.get("a.o.b"));
  for (int j = 0; j < 4; ++j)
    CHECK(out.data()[j] == doctest::Approx(expect.data()[j]).epsilon(1e-12));
}

TEST_CASE("mha: matches naive evaluator on a 3x3 case to 1e-12") {
  ParamStore ps(6);
  const int d = 8, heads = 2;
  Mha attn = make_mha(ps, "a", d, heads);
  std::mt19937_64 rng(31);
  std::vector<double> q = oracles::random_vec(3 * d, rng);
  std::vector<double> k = oracles::random_vec(3 * d, rng);
  std::vector<double> v = oracles::random_vec(3 * d, rng);
  std::vector<std::uint8_t> mask = {1, 1, 0, 0, 1, 1, 1, 1, 1};

  AttnMask am{3, 3, mask};
  Tensor out = attn.apply(Tensor::from(q, {3, d}), Tensor::from(k, {3, d}),
                          Tensor::from(v, {3, d}), &am);
  auto expect = oracles::naive_mha(q, 3, k, 3, v, d, heads,
                                   ps.get("a.q.w").data(), ps.get("a.q.b").data(),
                                   ps.get("a.k.w").data(), ps.get("a.k.b").data(),
                                   ps.get("a.v.w").data(), ps.get("a.v.b").data(),
                                   ps.get("a.o.w").data(), ps.get("a.o.b").data(), &mask);
  for (std::size_t i = 0; i < expect.size(); ++i)
    CHECK(out.data()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("mha: fully masked rows return zeros, empty key set returns zeros") {
  ParamStore ps(7);
  Mha attn = make_mha(ps, "a", 4, 1);
  std::mt19937_64 rng(37);
  Tensor q = Tensor::from(oracles::random_vec(8, rng), {2, 4});
  Tensor kv = Tensor::from(oracles::random_vec(8, rng), {2, 4});
  AttnMask am{2, 2, {0, 0, 1, 1}};
  Tensor out = attn.apply(q, kv, kv, &am);
  CHECK(out.data()[0] == 0.0);
  CHECK(out.data()[3] == 0.0);
  CHECK(out.data()[4] != 0.0);

  Tensor empty = attn.apply(q, Tensor::zeros({0, 4}), Tensor::zeros({0, 4}));
  CHECK(empty.shape() == Shape{2, 4});
  for (double x : empty.data()) CHECK(x == 0.0);
}

TEST_CASE("mha: rejects dim not divisible by heads") {
  ParamStore ps(8);
  CHECK_THROWS_AS(make_mha(ps, "a", 6, 4), ConfigError);
}

TEST_CASE("mha: rows are convex combinations under identity value/output maps") {
  ParamStore ps(9);
  Mha attn = make_mha(ps, "a", 4, 1);
  auto eye = [](int n) {
    std::vector<double> m(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) m[static_cast<std::size_t>(i) * n + i] = 1.0;
    return m;
  };
  ps.get("a.v.w").data() = eye(4);
  ps.get("a.o.w").data() = eye(4);
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor q = Tensor::from(oracles::random_vec(8, rng), {2, 4});
    Tensor k = Tensor::from(oracles::random_vec(12, rng), {3, 4});
    Tensor v = Tensor::from(oracles::random_vec(12, rng), {3, 4});
    Tensor out = attn.apply(q, k, v);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 4; ++j) {
        double lo = 1e300, hi = -1e300;
        for (int r = 0; r < 3; ++r) {
          lo = std::min(lo, v.data()[r * 4 + j]);
          hi = std::max(hi, v.data()[r * 4 + j]);
        }
        CHECK(out.data()[i * 4 + j] >= lo - 1e-12);
        CHECK(out.data()[i * 4 + j] <= hi + 1e-12);
      }
  }
}

TEST_CASE("mha gradients vs finite differences") {
  ParamStore ps(10);
  const int d = 4;
  Mha attn = make_mha(ps, "a", d, 2);
  std::mt19937_64 rng(43);
  Tensor q = Tensor::from(oracles::random_vec(2 * d, rng), {2, d}, true);
  Tensor k = Tensor::from(oracles::random_vec(3 * d, rng), {3, d}, true);
  Tensor v = Tensor::from(oracles::random_vec(3 * d, rng), {3, d}, true);
  const double err = oracles::max_grad_rel_err(
      [&] {
        Tensor out = attn.apply(q, k, v);
        return sum(mul(out, out));
      },
      {q, k, v, ps.get("a.q.w"), ps.get("a.k.w"), ps.get("a.v.w"), ps.get("a.o.w"),
       ps.get("a.o.b")});
  CHECK(err <= 1e-6);
}

TEST_CASE("param store: duplicate names rejected, seeded init deterministic") {
  ParamStore a(123), b(123), c(124);
  Tensor ta = a.create("x", {4, 4}, Init::XavierUniform);
  Tensor tb = b.create("x", {4, 4}, Init::XavierUniform);
  Tensor tc = c.create("x", {4, 4}, Init::XavierUniform);
  CHECK(ta.data() == tb.data());
  CHECK(ta.data() != tc.data());
  CHECK_THROWS_AS(a.create("x", {2}, Init::Zero), ConfigError);
}

TEST_CASE("param store: adam step moves parameters against the gradient") {
  ParamStore ps(5);
  Tensor w = ps.create("w", {2}, Init::Zero);
  Tape tape;
  {
    Tape::Scope scope(tape);
    Tensor loss = sum(mul(w, Tensor::from({1.0, -2.0}, {2})));
    tape.backward(loss);
  }
  ps.adam_step(0.1);
  CHECK(w.data()[0] < 0.0);
  CHECK(w.data()[1] > 0.0);
}

TEST_CASE("param store: checkpoint round-trips and validates") {
  ParamStore ps(77);
  ps.create("a.w", {2, 3}, Init::XavierUniform);
  ps.create("a.b", {3}, Init::Zero);
  nlohmann::json saved = ps.save_values();

  ParamStore ps2(78);
  ps2.create("a.w", {2, 3}, Init::XavierUniform);
  ps2.create("a.b", {3}, Init::Zero);
  ps2.load_values(saved);
  CHECK(ps2.get("a.w").data() == ps.get("a.w").data());

  nlohmann::json bad = saved;
  bad["a.w"]["shape"] = {3, 2};
  CHECK_THROWS_AS(ps2.load_values(bad), ConfigError);

  nlohmann::json extra = saved;
  extra["zzz"] = saved["a.b"];
  CHECK_THROWS_AS(ps2.load_values(extra), ConfigError);
}

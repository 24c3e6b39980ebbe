#include <cmath>

#include "doctest.h"
#include "rslab/grad_check.hpp"
#include "rslab/ops.hpp"
#include "rslab/param_set.hpp"
#include "test_util.hpp"

using namespace rslab;
using rstest::max_abs_diff;
using rstest::random_tensor;

TEST_CASE("matmul identity and annihilator") {
  Tensor a = Tensor::from_vector({2, 2}, {1, 2, 3, 4});
  Tensor eye = Tensor::from_vector({2, 2}, {1, 0, 0, 1});
  Tensor prod = matmul(a, eye);
  CHECK(max_abs_diff(prod.values(), a.values()) == 0.0);

  Tensor zero = Tensor::zeros({2, 3});
  Tensor z = matmul(a, zero);
  for (double v : z.values()) CHECK(v == 0.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Tensor a = random_tensor({3, 4}, seed);
    Tensor b = random_tensor({4, 2}, seed + 100);
    Tensor c = matmul(a, b);
    auto expect = rstest::matmul_triple_loop(
        {a.values().begin(), a.values().end()}, {b.values().begin(), b.values().end()}, 3, 4, 2);
    CHECK(max_abs_diff(c.values(), expect) < 1e-12);
  }
}

TEST_CASE("matmul rejects mismatched inner dims") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  CHECK_THROWS_AS(matmul(a, b), DimensionError);
}

TEST_CASE("conv2d identity 1x1 kernel") {
  Tensor x = random_tensor({1, 4, 5}, 7);
  Tensor k = Tensor::from_vector({1, 1, 1, 1}, {1.0});
  Tensor y = conv2d(x, k);
  CHECK(max_abs_diff(y.values(), x.values()) == 0.0);
}

TEST_CASE("conv2d zero kernel annihilates") {
  Tensor x = random_tensor({2, 4, 4}, 9);
  Tensor k = Tensor::zeros({3, 2, 3, 3});
  Tensor y = conv2d(x, k, Tensor(), 1, 1);
  for (double v : y.values()) CHECK(v == 0.0);
}

TEST_CASE("conv2d matches naive six-loop oracle") {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    Tensor x = random_tensor({2, 5, 5}, seed);
    Tensor k = random_tensor({3, 2, 3, 3}, seed + 50);
    for (int pad : {0, 1}) {
      Tensor y = conv2d(x, k, Tensor(), 1, pad);
      auto expect = rstest::conv_naive({x.values().begin(), x.values().end()},
                                       {k.values().begin(), k.values().end()}, 2, 5, 5, 3, 3, 1, pad);
      CHECK(max_abs_diff(y.values(), expect) < 1e-12);
    }
  }
}

TEST_CASE("conv2d rejects channel mismatch") {
  Tensor x = Tensor::zeros({2, 5, 5});
  Tensor k = Tensor::zeros({3, 4, 3, 3});
  CHECK_THROWS_AS(conv2d(x, k), DimensionError);
}

TEST_CASE("conv2d batched equals per-sample") {
  Tensor x = random_tensor({3, 2, 4, 6}, 21);
  Tensor k = random_tensor({5, 2, 3, 3}, 22);
  Tensor y = conv2d(x, k, Tensor(), 1, 1);
  for (int b = 0; b < 3; ++b) {
    std::vector<double> xb(x.values().begin() + b * 2 * 4 * 6, x.values().begin() + (b + 1) * 2 * 4 * 6);
    Tensor single = Tensor::from_vector({2, 4, 6}, xb);
    Tensor yb = conv2d(single, k, Tensor(), 1, 1);
    std::vector<double> got(y.values().begin() + b * 5 * 4 * 6, y.values().begin() + (b + 1) * 5 * 4 * 6);
    CHECK(max_abs_diff(got, yb.values()) == 0.0);
  }
}

TEST_CASE("softmax symmetry, analytic values, overflow safety") {
  Tensor u = Tensor::from_vector({4}, {2.5, 2.5, 2.5, 2.5});
  Tensor su = softmax(u, 0);
  for (double v : su.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

  Tensor x = Tensor::from_vector({2}, {0.0, std::log(2.0)});
  Tensor sx = softmax(x, 0);
  CHECK(sx.at(0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(sx.at(1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  Tensor big = Tensor::from_vector({2}, {1000.0, 1001.0});
  Tensor sb = softmax(big, 0);
  const double e = std::exp(1.0);
  CHECK(sb.at(0) == doctest::Approx(1.0 / (1.0 + e)).epsilon(1e-12));
  CHECK(sb.at(1) == doctest::Approx(e / (1.0 + e)).epsilon(1e-12));
}

TEST_CASE("softmax sums to one for large-magnitude inputs") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Tensor x = random_tensor({3, 7}, seed, 1e4);
    Tensor s = softmax(x, 1);
    for (int r = 0; r < 3; ++r) {
      double total = 0.0;
      for (int j = 0; j < 7; ++j) {
        const double v = s.at(r * 7 + j);
        CHECK(std::isfinite(v));
        CHECK(v >= 0.0);  // may underflow to exactly 0 when inputs span ~2e4
        CHECK(v <= 1.0);
        total += v;
      }
      CHECK(std::fabs(total - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("softmax middle axis matches manual lanes") {
  Tensor x = random_tensor({2, 3, 4}, 33);
  Tensor s = softmax(x, 1);
  for (int o = 0; o < 2; ++o)
    for (int in = 0; in < 4; ++in) {
      double total = 0.0;
      for (int a = 0; a < 3; ++a) total += s.at((o * 3 + a) * 4 + in);
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("lstm_cell with zero parameters") {
  const int h = 3, in = 2;
  Tensor w_ih = Tensor::zeros({4 * h, in});
  Tensor w_hh = Tensor::zeros({4 * h, h});
  Tensor b = Tensor::zeros({4 * h});
  Tensor x = random_tensor({in}, 5);
  Tensor h0 = random_tensor({h}, 6);

  SUBCASE("zero cell state stays zero") {
    Tensor c0 = Tensor::zeros({h});
    auto out = lstm_cell(x, h0, c0, w_ih, w_hh, b);
    for (double v : out.h.values()) CHECK(v == 0.0);
    for (double v : out.c.values()) CHECK(v == 0.0);
  }

  SUBCASE("arbitrary cell state halves and squashes") {
    Tensor c0 = Tensor::from_vector({h}, {0.4, -1.2, 2.0});
    auto out = lstm_cell(x, h0, c0, w_ih, w_hh, b);
    for (int i = 0; i < h; ++i) {
      const double c_expect = 0.5 * c0.at(i);
      CHECK(out.c.at(i) == doctest::Approx(c_expect).epsilon(1e-15));
      CHECK(out.h.at(i) == doctest::Approx(0.5 * std::tanh(c_expect)).epsilon(1e-15));
    }
  }
}

TEST_CASE("lstm_cell gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const int h = 3, in = 2;
    ParamSet params;
    Tensor w_ih = params.add_uniform("w_ih", {4 * h, in}, 0.6, seed);
    Tensor w_hh = params.add_uniform("w_hh", {4 * h, h}, 0.6, seed + 1);
    Tensor b = params.add_uniform("b", {4 * h}, 0.3, seed + 2);
    Tensor x = random_tensor({in}, seed + 3);
    Tensor h0 = random_tensor({h}, seed + 4, 0.5);
    Tensor c0 = random_tensor({h}, seed + 5, 0.5);
    auto f = [&] {
      auto out = lstm_cell(x, h0, c0, params.get("w_ih"), params.get("w_hh"), params.get("b"));
      return sum_all(out.h);
    };
    auto res = grad_check(f, params, {.eps = 1e-5, .samples_per_tensor = 8, .seed = seed});
    CHECK(res.max_rel_error < 1e-5);
  }
}

TEST_CASE("backward of sum(W x) has outer-product structure") {
  ParamSet params;
  Tensor w = params.add_uniform("W", {3, 4}, 1.0, 77);
  Tensor x = Tensor::from_vector({4, 1}, {0.5, -1.0, 2.0, 3.0});
  Tensor loss = sum_all(matmul(w, x));
  loss.backward();
  Tensor wt = params.get("W");
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) CHECK(wt.grad()[i * 4 + j] == doctest::Approx(x.at(j)).epsilon(1e-15));
}

TEST_CASE("parameters not reaching the loss keep zero grad") {
  ParamSet params;
  Tensor used = params.add_uniform("used", {3}, 1.0, 1);
  Tensor unused = params.add_uniform("unused", {3}, 1.0, 2);
  Tensor loss = sum_all(mul(used, used));
  loss.backward();
  Tensor u = params.get("unused");
  for (double g : u.grad_mut()) CHECK(g == 0.0);
}

TEST_CASE("repeated backward accumulates until reset") {
  ParamSet params;
  Tensor p = params.add_uniform("p", {2}, 1.0, 3);
  Tensor loss = sum_all(p);
  loss.backward();
  CHECK(params.get("p").grad()[0] == doctest::Approx(1.0));
  loss.backward();
  CHECK(params.get("p").grad()[0] == doctest::Approx(2.0));
  params.zero_grad();
  CHECK(params.get("p").grad()[0] == 0.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor p = Tensor::zeros({3}, true);
  Tensor y = relu(p);
  CHECK_THROWS_AS(y.backward(), ContractError);
}

TEST_CASE("grad_check on quadratic is near exact") {
  ParamSet params;
  params.add_uniform("p", {6}, 2.0, 11);
  auto f = [&] {
    Tensor p = params.get("p");
    return sum_all(mul(p, p));
  };
  auto res = grad_check(f, params);
  CHECK(res.max_rel_error < 1e-9);
}

TEST_CASE("grad_check on softmax cross-entropy layer") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ParamSet params;
    params.add_uniform("W", {5, 4}, 0.8, seed);
    params.add_uniform("b", {5}, 0.3, seed + 9);
    Tensor x = random_tensor({3, 4}, seed + 17);
    const std::vector<int> targets = {1, 4, 0};
    auto f = [&] {
      Tensor logits = linear(x, params.get("W"), params.get("b"));
      Tensor nll = nll_from_logits(logits, targets);
      return scale(sum_all(nll), 1.0 / 3.0);
    };
    auto res = grad_check(f, params, {.seed = seed});
    CHECK(res.max_rel_error < 1e-6);
  }
}

TEST_CASE("every differentiable op passes grad_check on random shapes") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ParamSet params;
    Tensor a = params.add_uniform("a", {3, 4}, 1.0, seed);
    Tensor b = params.add_uniform("b", {3, 4}, 1.0, seed + 1);
    Tensor m = params.add_uniform("m", {4, 3}, 1.0, seed + 2);
    Tensor bias = params.add_uniform("bias", {4}, 0.5, seed + 3);
    Tensor img = params.add_uniform("img", {2, 2, 4, 4}, 1.0, seed + 4);
    Tensor kern = params.add_uniform("kern", {3, 2, 3, 3}, 0.5, seed + 5);
    Tensor table = params.add_uniform("table", {5, 3}, 0.8, seed + 6);
    Tensor query = params.add_uniform("query", {2, 3}, 0.8, seed + 7);

    auto f = [&] {
      Tensor s1 = add(params.get("a"), params.get("b"));
      Tensor s2 = sub(s1, scale(params.get("b"), 0.5));
      Tensor s3 = mul(s2, sigmoid(params.get("a")));
      Tensor s4 = add_bias(tanh_act(s3), params.get("bias"));
      Tensor mm = matmul(s4, params.get("m"));            // [3,3]
      Tensor soft = softmax(mm, 1);
      Tensor conv = conv2d(params.get("img"), params.get("kern"), Tensor(), 1, 1);  // [2,3,4,4]
      Tensor pool = maxpool2x2(conv);                      // [2,3,2,2]
      Tensor emb = embedding(params.get("table"), {1, 3}); // [2,3]
      Tensor scores = attention_scores(add(emb, params.get("query")), pool);
      Tensor alpha = softmax(scores, 1);
      Tensor glimpse = attention_aggregate(alpha, pool);   // [2,3]
      Tensor cat = concat_cols(glimpse, emb);              // [2,6]
      Tensor sl = slice_cols(cat, 1, 5);
      Tensor flat = reshape(sl, {8});
      Tensor soft_flat = reshape(relu(soft), {9});
      Tensor weighted = weighted_sum(soft_flat, {0.3, -1.2, 2.0, 0.7, -0.4, 1.5, -2.2, 0.9, 0.1});
      return add(sum_all(flat), weighted);
    };
    auto res = grad_check(f, params, {.samples_per_tensor = 6, .seed = seed});
    INFO("worst param ", res.worst_param, " idx ", res.worst_index, " analytic ",
         res.worst_analytic, " numeric ", res.worst_numeric);
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("deterministic forward: same seed gives bit-identical outputs") {
  auto run = [] {
    Tensor x = random_tensor({4, 4}, 99);
    Tensor w = random_tensor({4, 4}, 100);
    Tensor y = softmax(matmul(x, w), 1);
    return std::vector<double>(y.values().begin(), y.values().end());
  };
  auto r1 = run();
  auto r2 = run();
  CHECK(r1 == r2);
}

TEST_CASE("debug validation mode flags non-finite values") {
  set_debug_checks(true);
  Tensor x = Tensor::from_vector({2}, {1.0, 1e308});
  CHECK_THROWS_AS((void)mul(x, x), NumericError);  // 1e308^2 overflows to inf
  set_debug_checks(false);
  Tensor y = mul(x, x);
  CHECK(std::isinf(y.at(1)));
}

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cognn/ops.hpp"
#include "cognn/optim.hpp"
#include "support/finite_diff.hpp"

using namespace cognn;
using cognn::testing::numeric_gradient;
using cognn::testing::random_tensor;
using cognn::testing::relative_error;
using cognn::testing::to_vector;

TEST_CASE("tensor_from builds tensors and rejects length mismatches", "[tensor]") {
  Tensor id = tensor_from({2, 2}, {1, 0, 0, 1});
  CHECK(id.shape() == Shape{2, 2});
  CHECK(to_vector(id) == std::vector<double>{1, 0, 0, 1});

  Tensor empty = tensor_from({0}, {});
  CHECK(empty.numel() == 0);

  CHECK_THROWS_AS(tensor_from({2, 3}, {1, 2, 3, 4, 5}), SizeError);
}

TEST_CASE("matmul", "[tensor]") {
  Rng rng(3);
  Tensor a = random_tensor({3, 3}, rng);
  CHECK(to_vector(matmul(a, Tensor::identity(3))) == to_vector(a));

  Tensor b = tensor_from({2, 2}, {1, 2, 3, 4});
  Tensor c = tensor_from({2, 1}, {5, 6});
  Tensor r = matmul(b, c);
  CHECK(r.shape() == Shape{2, 1});
  CHECK(to_vector(r) == std::vector<double>{17, 39});

  CHECK(to_vector(matmul(a, Tensor::zeros({3, 3}))) == std::vector<double>(9, 0.0));
  CHECK_THROWS_AS(matmul(a, Tensor::zeros({2, 3})), SizeError);
}

TEST_CASE("matmul gradients match finite differences", "[tensor][gradient]") {
  Rng rng(5);
  Tensor a = random_tensor({3, 4}, rng, -1, 1, true);
  Tensor b = random_tensor({4, 2}, rng, -1, 1, true);
  auto loss = [&] { return sum(mul(matmul(a, b), matmul(a, b))); };
  Gradients g = backward(loss());
  auto f = [&] { NoGradGuard ng; return loss().item(); };
  CHECK(relative_error(g.of(a), numeric_gradient(f, a)) < 1e-6);
  CHECK(relative_error(g.of(b), numeric_gradient(f, b)) < 1e-6);
}

TEST_CASE("elementwise ops and broadcasting", "[tensor]") {
  Rng rng(11);
  Tensor x = random_tensor({3, 4}, rng, -1, 1, true);
  CHECK(to_vector(add(x, Tensor::zeros({3, 4}))) == to_vector(x));
  CHECK(to_vector(sub(x, x)) == std::vector<double>(12, 0.0));

  SECTION("mul(x, x) has gradient 2x") {
    Gradients g = backward(sum(mul(x, x)));
    auto f = [&] { NoGradGuard ng; return sum(mul(x, x)).item(); };
    auto fd = numeric_gradient(f, x);
    std::vector<double> twice;
    for (double v : x.values()) twice.push_back(2 * v);
    CHECK(relative_error(g.of(x), fd) < 1e-6);
    CHECK(relative_error(g.of(x), twice) < 1e-12);
  }

  SECTION("bias row broadcasts over rows and accumulates its gradient") {
    Tensor bias = tensor_from({4}, {1, 2, 3, 4}, true);
    Tensor y = add(x, bias);
    CHECK(y.shape() == Shape{3, 4});
    CHECK(y.at(2, 3) == x.at(2, 3) + 4);
    Gradients g = backward(sum(y));
    CHECK(g.of(bias) == std::vector<double>(4, 3.0));
  }

  SECTION("column vectors broadcast across columns") {
    Tensor col = tensor_from({3, 1}, {2, 3, 4}, true);
    Tensor y = mul(x, col);
    CHECK(y.at(1, 2) == x.at(1, 2) * 3);
    Gradients g = backward(sum(y));
    auto f = [&] { NoGradGuard ng; return sum(mul(x, col)).item(); };
    CHECK(relative_error(g.of(col), numeric_gradient(f, col)) < 1e-8);
  }

  CHECK_THROWS_AS(add(x, Tensor::zeros({2, 4})), SizeError);
  CHECK_THROWS_AS(mul(x, Tensor::zeros({3, 3})), SizeError);
}

TEST_CASE("activations", "[tensor]") {
  CHECK(relu(tensor_from({1}, {-1}))[0] == 0.0);
  CHECK(softplus(tensor_from({1}, {0}))[0] == Catch::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(softplus(tensor_from({1}, {1000}))[0] == 1000.0);
  CHECK(std::isfinite(softplus(tensor_from({1}, {-1000}))[0]));
  CHECK(tanh(tensor_from({1}, {0}))[0] == 0.0);

  Rng rng(17);
  for (Activation kind : {Activation::relu, Activation::gelu, Activation::softplus, Activation::tanh}) {
    Tensor x = random_tensor({4, 5}, rng, -3, 3, true);
    Gradients g = backward(sum(mul(activation(kind, x), x)));
    auto f = [&] { NoGradGuard ng; return sum(mul(activation(kind, x), x)).item(); };
    INFO(to_string(kind));
    CHECK(relative_error(g.of(x), numeric_gradient(f, x)) < 1e-5);
  }
}

TEST_CASE("softmax and log_softmax", "[tensor]") {
  Tensor u = softmax(tensor_from({1, 4}, {0, 0, 0, 0}), 1);
  for (double p : u.values()) CHECK(p == 0.25);

  Tensor big = softmax(tensor_from({1, 2}, {1e3, 0}), 1);
  CHECK(big[0] == 1.0);
  CHECK(big[1] == Catch::Approx(0.0).margin(1e-300));
  CHECK(std::isfinite(big[1]));

  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t r = 1 + rng.uniform_int(0, 7), c = 1 + rng.uniform_int(0, 7);
    Tensor x = random_tensor({r, c}, rng, -20, 20);
    for (std::size_t axis : {0u, 1u}) {
      Tensor s = softmax(x, axis);
      Tensor ls = log_softmax(x, axis);
      for (std::size_t i = 0; i < s.numel(); ++i) {
        CHECK(s[i] > 0.0);
        CHECK(std::fabs(std::exp(ls[i]) - s[i]) <= 1e-12);
      }
      const std::size_t outer = axis == 1 ? r : c, len = axis == 1 ? c : r;
      for (std::size_t o = 0; o < outer; ++o) {
        double total = 0.0;
        for (std::size_t k = 0; k < len; ++k) total += axis == 1 ? s.at(o, k) : s.at(k, o);
        CHECK(std::fabs(total - 1.0) <= 1e-12);
      }
    }
  }

  Tensor x = random_tensor({3, 4}, rng, -2, 2, true);
  Tensor w = random_tensor({3, 4}, rng);
  for (std::size_t axis : {0u, 1u}) {
    Gradients g = backward(sum(mul(softmax(x, axis), w)));
    auto f = [&] { NoGradGuard ng; return sum(mul(softmax(x, axis), w)).item(); };
    CHECK(relative_error(g.of(x), numeric_gradient(f, x)) < 1e-6);
    Gradients g2 = backward(sum(mul(log_softmax(x, axis), w)));
    auto f2 = [&] { NoGradGuard ng; return sum(mul(log_softmax(x, axis), w)).item(); };
    CHECK(relative_error(g2.of(x), numeric_gradient(f2, x)) < 1e-6);
  }
  CHECK_THROWS_AS(softmax(x, 2), SizeError);
}

TEST_CASE("dropout", "[tensor]") {
  Rng rng(29);
  Tensor x = random_tensor({10, 10}, rng);
  Rng drop(1);
  CHECK(to_vector(dropout(x, 0.0, drop, true)) == to_vector(x));
  CHECK(to_vector(dropout(x, 0.7, drop, false)) == to_vector(x));
  CHECK_THROWS_AS(dropout(x, 1.0, drop, true), ParameterError);
  CHECK_THROWS_AS(dropout(x, -0.1, drop, true), ParameterError);

  Tensor ones = Tensor::filled({100000}, 1.0);
  Rng d1(99);
  Tensor y = dropout(ones, 0.5, d1, true);
  std::size_t survivors = 0;
  for (double v : y.values()) {
    CHECK((v == 0.0 || v == 2.0));
    survivors += v != 0.0;
  }
  CHECK(std::fabs(static_cast<double>(survivors) / 1e5 - 0.5) <= 0.01);

  Rng d2(99);
  CHECK(to_vector(dropout(ones, 0.5, d2, true)) == to_vector(y));
}

TEST_CASE("backward", "[tensor][gradient]") {
  Tensor x = tensor_from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Gradients g = backward(sum(x));
  CHECK(g.of(x) == std::vector<double>(6, 1.0));

  Tensor p = tensor_from({2}, {1, 2}, true);
  Tensor q = tensor_from({2}, {3, 4}, true);
  Gradients g2 = backward(sum(mul(q, q)));
  CHECK(g2.of(p) == std::vector<double>(2, 0.0));
  CHECK_FALSE(g2.reached(p));

  CHECK_THROWS_AS(backward(mul(x, x)), ContractError);
  CHECK_THROWS_AS(backward(sum(x.detach())), ContractError);

  SECTION("the tape is consumed by a backward pass") {
    Tensor loss = sum(mul(x, x));
    backward(loss);
    CHECK_THROWS_AS(backward(loss), ContractError);
  }

  SECTION("untracked inputs never receive gradients") {
    Tensor c = tensor_from({2, 3}, {1, 1, 1, 1, 1, 1});
    Gradients gc = backward(sum(mul(x, c)));
    CHECK_FALSE(gc.reached(c));
    CHECK(gc.size() == 1);
  }
}

TEST_CASE("two-layer MLP gradients match finite differences", "[tensor][gradient]") {
  Rng rng(31);
  Tensor x = random_tensor({5, 4}, rng);
  Tensor y = random_tensor({5, 3}, rng);
  Tensor w1 = random_tensor({4, 6}, rng, -1, 1, true);
  Tensor b1 = random_tensor({6}, rng, -0.5, 0.5, true);
  Tensor w2 = random_tensor({6, 3}, rng, -1, 1, true);
  Tensor b2 = random_tensor({3}, rng, -0.5, 0.5, true);
  auto loss = [&] {
    Tensor h = tanh(add(matmul(x, w1), b1));
    Tensor out = add(matmul(h, w2), b2);
    Tensor d = sub(out, y);
    return mean(mul(d, d));
  };
  Gradients g = backward(loss());
  auto f = [&] { NoGradGuard ng; return loss().item(); };
  for (Tensor* p : {&w1, &b1, &w2, &b2}) CHECK(relative_error(g.of(*p), numeric_gradient(f, *p)) < 1e-4);
}

TEST_CASE("random composites of ops pass the gradient check", "[tensor][gradient][property]") {
  Rng rng(37);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t m = 1 + rng.uniform_int(0, 7), k = 1 + rng.uniform_int(0, 7), n = 1 + rng.uniform_int(0, 7);
    Tensor a = random_tensor({m, k}, rng, -1, 1, true);
    Tensor b = random_tensor({k, n}, rng, -1, 1, true);
    Tensor bias = random_tensor({n}, rng, -1, 1, true);
    Tensor w = random_tensor({m, n}, rng);
    const auto act = static_cast<Activation>(rng.uniform_int(1, 4));
    auto loss = [&] {
      Tensor h = activation(act, add(matmul(a, b), bias));
      Tensor s = log_softmax(h, 1);
      return sum(mul(add(mul(h, w), s), tensor_from({1, 1}, {0.5})));
    };
    Gradients g = backward(loss());
    auto f = [&] { NoGradGuard ng; return loss().item(); };
    INFO("trial " << trial << " act " << to_string(act));
    for (Tensor* p : {&a, &b, &bias}) CHECK(relative_error(g.of(*p), numeric_gradient(f, *p)) < 1e-4);
  }
}

TEST_CASE("cross entropy and l1 loss gradients", "[tensor][gradient]") {
  Rng rng(41);
  Tensor logits = random_tensor({4, 3}, rng, -2, 2, true);
  std::vector<std::size_t> labels{0, 2, 1, 2};
  Gradients g = backward(cross_entropy(logits, labels));
  auto f = [&] { NoGradGuard ng; return cross_entropy(logits, labels).item(); };
  CHECK(relative_error(g.of(logits), numeric_gradient(f, logits)) < 1e-6);

  Tensor pred = random_tensor({3, 2}, rng, -1, 1, true);
  Tensor target = random_tensor({3, 2}, rng);
  Gradients g2 = backward(l1_loss(pred, target));
  auto f2 = [&] { NoGradGuard ng; return l1_loss(pred, target).item(); };
  CHECK(relative_error(g2.of(pred), numeric_gradient(f2, pred)) < 1e-6);
  CHECK_THROWS_AS(l1_loss(pred, Tensor::zeros({2, 3})), SizeError);
}

TEST_CASE("adam_step", "[tensor][adam]") {
  SECTION("zero gradient leaves parameters unchanged") {
    Tensor p = tensor_from({3}, {1, -2, 3}, true);
    std::vector<Tensor> params{p};
    Gradients g = backward(sum(mul(p, Tensor::zeros({3}))));
    AdamState st;
    adam_step(params, g, st);
    CHECK(to_vector(p) == std::vector<double>{1, -2, 3});
    CHECK(st.step == 1);
  }

  SECTION("first step with constant gradient moves each coordinate by lr") {
    // Closed form: mhat = g, vhat = g^2, so the step is lr * g / (|g| + eps).
    Tensor p = tensor_from({3}, {0.5, 0.5, 0.5}, true);
    Tensor c = tensor_from({3}, {2.0, -3.0, 0.25});
    std::vector<Tensor> params{p};
    AdamState st(AdamOptions{.lr = 0.01});
    adam_step(params, backward(sum(mul(p, c))), st);
    for (std::size_t i = 0; i < 3; ++i) {
      const double g = c[i];
      const double expected = 0.5 - 0.01 * g / (std::fabs(g) + 1e-8);
      CHECK(p[i] == Catch::Approx(expected).epsilon(1e-14));
      CHECK(std::fabs(p[i] - 0.5) == Catch::Approx(0.01).epsilon(1e-6));
    }
  }

  SECTION("identical runs give identical parameters") {
    auto run = [] {
      Rng rng(7);
      Tensor w = glorot_uniform_init(4, 3, rng);
      Tensor x = random_tensor({5, 4}, rng);
      std::vector<Tensor> params{w};
      AdamState st;
      for (int i = 0; i < 20; ++i) adam_step(params, backward(sum(tanh(matmul(x, w)))), st);
      return to_vector(w);
    };
    CHECK(run() == run());
  }

  SECTION("shape mismatch") {
    Tensor p = tensor_from({3}, {1, 2, 3}, true);
    std::vector<Tensor> params{p};
    AdamState st;
    adam_step(params, backward(sum(p)), st);
    std::vector<Tensor> more{p, tensor_from({1}, {0}, true)};
    CHECK_THROWS_AS(adam_step(more, backward(sum(p)), st), SizeError);
    st.m[0].resize(2);
    CHECK_THROWS_AS(adam_step(params, backward(sum(p)), st), SizeError);
  }
}

TEST_CASE("glorot_uniform_init", "[tensor][init]") {
  Rng rng(43);
  Tensor w = glorot_uniform_init(16, 16, rng);
  const double bound = std::sqrt(6.0 / 32.0);
  CHECK(bound == Catch::Approx(0.4330127).epsilon(1e-6));
  for (double v : w.values()) CHECK(std::fabs(v) <= bound);

  Rng big(47);
  Tensor many = glorot_uniform_init(400, 250, big);
  double total = 0.0;
  for (double v : many.values()) total += v;
  CHECK(std::fabs(total / 1e5) <= 0.01);

  Rng a(5), b(5);
  CHECK(to_vector(glorot_uniform_init(8, 3, a)) == to_vector(glorot_uniform_init(8, 3, b)));
  CHECK_THROWS_AS(glorot_uniform_init(0, 3, a), ParameterError);
}

TEST_CASE("rng sub-streams are reproducible and independent of parent usage", "[tensor][rng]") {
  Rng parent(123);
  Rng child1 = parent.split("gumbel");
  parent.next_u64();
  Rng child2 = parent.split("gumbel");
  CHECK(child1.next_u64() == child2.next_u64());
  CHECK(parent.split("dataset").next_u64() != parent.split("gumbel").next_u64());

  Rng r(9);
  for (int i = 0; i < 1000; ++i) {
    const auto k = r.uniform_int(3, 10);
    CHECK((k >= 3 && k <= 10));
    const double u = r.uniform();
    CHECK((u >= 0.0 && u < 1.0));
  }
}

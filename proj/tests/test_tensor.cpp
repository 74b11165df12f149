#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "skillnet/gradcheck.hpp"
#include "skillnet/tensor.hpp"

using namespace skillnet;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double stddev = 1.0) {
  return Tensor::randn(std::move(shape), rng, stddev);
}

// Backward gradient of scalar-valued f wrt `x`, where f rebuilds the graph
// from its argument.
std::vector<double> backward_grad(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
  Tensor arg = x.clone();
  arg.set_requires_grad(true);
  GradTape tape;
  TapeScope scope(tape);
  Tensor loss = f(arg);
  tape.backward(loss);
  return arg.grad();
}

double check_op(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
  const std::vector<double> analytic = backward_grad(f, x);
  const Tensor numeric = finite_diff_grad(
      [&](const Tensor& t) {
        Tensor loss = f(t);
        return loss.item();
      },
      x);
  return grad_rel_err(analytic, numeric.data());
}

}  // namespace

TEST_CASE("tensor shape and storage invariants") {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  REQUIRE(t.numel() == 6);
  REQUIRE(t.rank() == 2);
  REQUIRE_THROWS_AS(Tensor({2, 2}, {1.0}), ShapeError);

  Tensor c = t.clone();
  c.data()[0] = 99.0;
  REQUIRE(t.data()[0] == 1.0);  // clones share no storage

  Tensor alias = t;
  REQUIRE(alias.same_storage(t));
}

TEST_CASE("matmul known products") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor m({2, 2}, {1, 2, 3, 4});
  Tensor r = matmul(eye, m);
  REQUIRE(r.data() == std::vector<double>{1, 2, 3, 4});

  Tensor proj({2, 2}, {1, 0, 0, 0});
  Tensor b({2, 2}, {5, 6, 7, 8});
  REQUIRE(matmul(proj, b).data() == std::vector<double>{5, 6, 0, 0});
}

TEST_CASE("matmul shape error names both operand shapes") {
  Tensor a({2, 3});
  Tensor b({2, 3});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    REQUIRE(msg.find("[2,3]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches central differences") {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    const double err_a = check_op([&](const Tensor& t) { return sum_all(matmul(t, b)); }, a);
    const double err_b = check_op([&](const Tensor& t) { return sum_all(matmul(a, t)); }, b);
    REQUIRE(err_a <= 1e-6);
    REQUIRE(err_b <= 1e-6);
  }
}

TEST_CASE("softmax fixed points") {
  Tensor z({1, 2}, {0, 0});
  auto p = softmax_lastdim(z).data();
  REQUIRE(std::abs(p[0] - 0.5) <= 1e-12);
  REQUIRE(std::abs(p[1] - 0.5) <= 1e-12);

  Tensor big({1, 2}, {1000, 1000});
  auto pb = softmax_lastdim(big).data();
  REQUIRE(std::abs(pb[0] - 0.5) <= 1e-12);

  Tensor skew({1, 2}, {0.0, std::log(3.0)});
  auto ps = softmax_lastdim(skew).data();
  REQUIRE(std::abs(ps[0] - 0.25) <= 1e-12);
  REQUIRE(std::abs(ps[1] - 0.75) <= 1e-12);
}

TEST_CASE("softmax rows sum to one across magnitudes") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    Tensor x = random_tensor({4, 7}, rng, 1e4 / 3.0);
    Tensor s = softmax_lastdim(x);
    for (int64_t i = 0; i < 4; ++i) {
      double row = 0.0;
      for (int64_t j = 0; j < 7; ++j) row += s.data()[static_cast<size_t>(i * 7 + j)];
      REQUIRE(std::abs(row - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("softmax gradient") {
  Rng rng(11);
  Tensor x = random_tensor({3, 5}, rng);
  Tensor w = random_tensor({3, 5}, rng);  // weighting makes the loss non-constant
  const double err =
      check_op([&](const Tensor& t) { return sum_all(mul(softmax_lastdim(t), w)); }, x);
  REQUIRE(err <= 1e-6);
}

TEST_CASE("layer_norm fixed points and gradient") {
  Tensor gamma1 = Tensor::full({4}, 1.0);
  Tensor beta0 = Tensor::zeros({4});
  Tensor c({1, 4}, {5, 5, 5, 5});
  for (double v : layer_norm(c, gamma1, beta0).data()) REQUIRE(std::abs(v) <= 1e-6);

  Tensor gamma0 = Tensor::zeros({4});
  Tensor beta({4}, {1, 2, 3, 4});
  Rng rng(3);
  Tensor x = random_tensor({2, 4}, rng);
  auto out = layer_norm(x, gamma0, beta).data();
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < 4; ++j)
      REQUIRE(out[static_cast<size_t>(i * 4 + j)] == beta.data()[static_cast<size_t>(j)]);

  for (uint64_t seed = 1; seed <= 5; ++seed) {
    Rng r(seed);
    Tensor xx = random_tensor({3, 6}, r);
    Tensor g = random_tensor({6}, r);
    Tensor bb = random_tensor({6}, r);
    Tensor wmix = random_tensor({3, 6}, r);
    auto weighted = [&](const Tensor& y) { return sum_all(mul(y, wmix)); };
    REQUIRE(check_op([&](const Tensor& t) { return weighted(layer_norm(t, g, bb)); }, xx) <= 1e-5);
    REQUIRE(check_op([&](const Tensor& t) { return weighted(layer_norm(xx, t, bb)); }, g) <= 1e-5);
    REQUIRE(check_op([&](const Tensor& t) { return weighted(layer_norm(xx, g, t)); }, bb) <= 1e-5);
  }
}

TEST_CASE("cross_entropy values and errors") {
  Tensor uniform({1, 2}, {0, 0});
  REQUIRE(std::abs(cross_entropy(uniform, {0}).item() - std::log(2.0)) <= 1e-12);

  Tensor confident({1, 2}, {30, -30});
  REQUIRE(cross_entropy(confident, {0}).item() <= 1e-12);

  Tensor logits({2, 3});
  try {
    cross_entropy(logits, {0, 7});
    FAIL("expected LabelError");
  } catch (const LabelError& e) {
    REQUIRE(std::string(e.what()).find("1") != std::string::npos);  // offending batch index
  }
}

TEST_CASE("cross_entropy gradient") {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    Tensor logits = random_tensor({4, 3}, rng);
    const std::vector<int> targets = {0, 2, 1, 2};
    const double err =
        check_op([&](const Tensor& t) { return cross_entropy(t, targets); }, logits);
    REQUIRE(err <= 1e-6);
  }
}

TEST_CASE("backward writes expected leaf gradients") {
  // loss = sum(W x): dW[i][j] = x[j].
  Tensor w({2, 3}, {1, 1, 1, 1, 1, 1});
  w.set_requires_grad(true);
  Tensor x({3, 1}, {4, 5, 6});
  GradTape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum_all(matmul(w, x)));
  }
  REQUIRE(w.grad() == std::vector<double>{4, 5, 6, 4, 5, 6});
}

TEST_CASE("leaf not on tape has no gradient") {
  Tensor used = Tensor::full({2, 2}, 1.0);
  used.set_requires_grad(true);
  Tensor unused = Tensor::full({2, 2}, 1.0);
  unused.set_requires_grad(true);
  GradTape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum_all(scale(used, 2.0)));
  }
  REQUIRE(used.has_grad());
  REQUIRE_FALSE(unused.has_grad());
}

TEST_CASE("fan-out gradients accumulate additively") {
  Tensor w = Tensor::full({2, 2}, 3.0);
  w.set_requires_grad(true);
  GradTape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum_all(add(w, w)));
  }
  for (double g : w.grad()) REQUIRE(g == 2.0);
}

TEST_CASE("backward rejects non-scalar losses") {
  Tensor w = Tensor::full({2, 2}, 1.0);
  w.set_requires_grad(true);
  GradTape tape;
  TapeScope scope(tape);
  Tensor y = scale(w, 2.0);
  REQUIRE_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("backward is bitwise deterministic") {
  auto run = [] {
    Rng rng(17);
    Tensor x = Tensor::randn({4, 4}, rng);
    Tensor w = Tensor::randn({4, 4}, rng);
    w.set_requires_grad(true);
    GradTape tape;
    TapeScope scope(tape);
    tape.backward(sum_all(relu(matmul(x, w))));
    return w.grad();
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("no recording happens outside a tape scope") {
  Tensor w = Tensor::full({2, 2}, 1.0);
  w.set_requires_grad(true);
  Tensor y = matmul(w, w);  // no active tape
  REQUIRE(y.numel() == 4);

  GradTape tape;
  {
    TapeScope scope(tape);
    Tensor plain = Tensor::full({2, 2}, 1.0);  // requires_grad == false
    (void)matmul(plain, plain);
    REQUIRE(tape.size() == 0);
    (void)matmul(w, plain);
    REQUIRE(tape.size() == 1);
  }
}

TEST_CASE("finite difference oracle self-checks") {
  Rng rng(5);
  Tensor x = random_tensor({3, 3}, rng);
  Tensor ones = finite_diff_grad([](const Tensor& t) {
    double s = 0.0;
    for (double v : t.data()) s += v;
    return s;
  }, x);
  for (double v : ones.data()) REQUIRE(std::abs(v - 1.0) <= 1e-9);

  Tensor grad_sq = finite_diff_grad([](const Tensor& t) {
    double s = 0.0;
    for (double v : t.data()) s += 0.5 * v * v;
    return s;
  }, x);
  REQUIRE(grad_rel_err(grad_sq.data(), x.data()) <= 1e-8);
}

TEST_CASE("elementwise and reshaping op gradients") {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    Tensor x = random_tensor({3, 4}, rng);
    Tensor y = random_tensor({3, 4}, rng);
    Tensor w = random_tensor({3, 4}, rng);
    auto weighted = [&](const Tensor& t) { return sum_all(mul(t, w)); };

    REQUIRE(check_op([&](const Tensor& t) { return weighted(add(t, y)); }, x) <= 1e-6);
    REQUIRE(check_op([&](const Tensor& t) { return weighted(mul(t, y)); }, x) <= 1e-6);
    REQUIRE(check_op([&](const Tensor& t) { return weighted(scale(t, -2.5)); }, x) <= 1e-6);
    REQUIRE(check_op([&](const Tensor& t) { return weighted(transpose(transpose(t))); }, x) <= 1e-6);
    REQUIRE(check_op([&](const Tensor& t) { return sum_all(reshape(t, {12, 1})); }, x) <= 1e-6);

    // Keep relu inputs away from the kink.
    Tensor xr = x.clone();
    for (double& v : xr.data()) v += v >= 0.0 ? 0.25 : -0.25;
    REQUIRE(check_op([&](const Tensor& t) { return weighted(relu(t)); }, xr) <= 1e-6);
  }
}

TEST_CASE("linear with bias gradient") {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    Tensor x = random_tensor({4, 3}, rng);
    Tensor w = random_tensor({3, 2}, rng);
    Tensor b = random_tensor({2}, rng);
    REQUIRE(check_op([&](const Tensor& t) { return sum_all(linear(t, w, &b)); }, x) <= 1e-6);
    REQUIRE(check_op([&](const Tensor& t) { return sum_all(linear(x, t, &b)); }, w) <= 1e-6);
    REQUIRE(check_op([&](const Tensor& t) { return sum_all(linear(x, w, &t)); }, b) <= 1e-6);
  }
}

TEST_CASE("gather_rows accumulates over repeated ids") {
  Tensor table({3, 2}, {1, 2, 3, 4, 5, 6});
  table.set_requires_grad(true);
  GradTape tape;
  {
    TapeScope scope(tape);
    Tensor picked = gather_rows(table, {1, 1, 0});
    REQUIRE(picked.data() == std::vector<double>{3, 4, 3, 4, 1, 2});
    tape.backward(sum_all(picked));
  }
  REQUIRE(table.grad() == std::vector<double>{1, 1, 2, 2, 0, 0});

  Rng rng(9);
  Tensor t2 = Tensor::randn({4, 3}, rng);
  REQUIRE(check_op([&](const Tensor& t) { return sum_all(gather_rows(t, {0, 2, 2, 3})); }, t2) <=
          1e-6);
}

TEST_CASE("gather_pair_cols and mul_rows gradients") {
  Rng rng(21);
  Tensor x = random_tensor({4, 5}, rng);
  const std::vector<int> c0 = {0, 2, 4, 1};
  const std::vector<int> c1 = {3, 3, 0, 2};
  REQUIRE(check_op([&](const Tensor& t) { return sum_all(gather_pair_cols(t, c0, c1)); }, x) <=
          1e-6);

  Tensor rows = random_tensor({4, 5}, rng);
  Tensor wcol = random_tensor({4, 1}, rng);
  REQUIRE(check_op([&](const Tensor& t) { return sum_all(mul_rows(t, wcol)); }, rows) <= 1e-6);
  REQUIRE(check_op([&](const Tensor& t) { return sum_all(mul_rows(rows, t)); }, wcol) <= 1e-6);
}

TEST_CASE("stable_mean is bitwise invariant to operand order") {
  Rng rng(31);
  Tensor a = random_tensor({5, 3}, rng);
  Tensor b = random_tensor({5, 3}, rng);
  Tensor c = random_tensor({5, 3}, rng);
  const auto m1 = stable_mean({a, b, c}).data();
  const auto m2 = stable_mean({c, a, b}).data();
  const auto m3 = stable_mean({b, c, a}).data();
  REQUIRE(std::memcmp(m1.data(), m2.data(), m1.size() * sizeof(double)) == 0);
  REQUIRE(std::memcmp(m1.data(), m3.data(), m1.size() * sizeof(double)) == 0);

  REQUIRE(check_op([&](const Tensor& t) { return sum_all(stable_mean({t, b, c})); }, a) <= 1e-6);
}

TEST_CASE("attention gradients and exact padding exclusion") {
  const int64_t batch = 2, seq = 4, d = 6, heads = 2;
  Rng rng(41);
  Tensor q = random_tensor({batch * seq, d}, rng);
  Tensor k = random_tensor({batch * seq, d}, rng);
  Tensor v = random_tensor({batch * seq, d}, rng);
  std::vector<double> mask(static_cast<size_t>(batch * seq), 1.0);
  mask[3] = 0.0;  // pad the last position of the first sequence
  mask[7] = 0.0;

  auto att = [&](const Tensor& qq, const Tensor& kk, const Tensor& vv) {
    return attention_core(qq, kk, vv, batch, seq, heads, mask);
  };
  REQUIRE(check_op([&](const Tensor& t) { return sum_all(att(t, k, v)); }, q) <= 1e-5);
  REQUIRE(check_op([&](const Tensor& t) { return sum_all(att(q, t, v)); }, k) <= 1e-5);
  REQUIRE(check_op([&](const Tensor& t) { return sum_all(att(q, k, t)); }, v) <= 1e-5);

  // A padded key's value row must contribute exactly nothing.
  Tensor v2 = v.clone();
  for (int64_t j = 0; j < d; ++j) v2.data()[static_cast<size_t>(3 * d + j)] = 1e9;
  const auto out1 = att(q, k, v).data();
  const auto out2 = att(q, k, v2).data();
  REQUIRE(std::memcmp(out1.data(), out2.data(), out1.size() * sizeof(double)) == 0);
}

TEST_CASE("dropout identity and scaling") {
  Rng rng(51);
  Tensor x = random_tensor({4, 4}, rng);
  Rng drng(1);
  Tensor same = dropout(x, 0.0, drng, true);
  REQUIRE(same.same_storage(x));
  Tensor infer = dropout(x, 0.5, drng, false);
  REQUIRE(infer.same_storage(x));

  Rng drng2(2);
  Tensor dropped = dropout(x, 0.5, drng2, true);
  for (size_t i = 0; i < dropped.data().size(); ++i) {
    const double v = dropped.data()[i];
    REQUIRE((v == 0.0 || std::abs(v - 2.0 * x.data()[i]) <= 1e-15));
  }

  // Deterministic mask (fixed seed inside f) so central differences agree.
  auto f = [&](const Tensor& t) {
    Rng r(7);
    return sum_all(dropout(t, 0.3, r, true));
  };
  REQUIRE(check_op(f, x) <= 1e-6);
}

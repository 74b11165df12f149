#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "skillnet/gradcheck.hpp"
#include "skillnet/layers.hpp"

using namespace skillnet;

namespace {

FfnParams random_ffn(int64_t d, int64_t h, Rng& rng) {
  FfnParams p;
  p.w1 = Tensor::randn({d, h}, rng, 0.5);
  p.b1 = Tensor::randn({h}, rng, 0.5);
  p.w2 = Tensor::randn({h, d}, rng, 0.5);
  p.b2 = Tensor::randn({d}, rng, 0.5);
  return p;
}

SkillFfnBank random_bank(size_t members, int64_t d, int64_t h, Rng& rng) {
  SkillFfnBank bank;
  for (size_t i = 0; i < members; ++i) bank.members.push_back(random_ffn(d, h, rng));
  return bank;
}

MhaProjection random_proj(int64_t d, Rng& rng) {
  return {Tensor::randn({d, d}, rng, 0.3), Tensor::randn({d, d}, rng, 0.3),
          Tensor::randn({d, d}, rng, 0.3)};
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("skill ffn equals the brute-force masked mean") {
  const int64_t d = 8, h = 12, rows = 5;
  Rng rng(101);
  SkillFfnBank bank = random_bank(6, d, h, rng);

  for (int trial = 0; trial < 100; ++trial) {
    Tensor x = Tensor::randn({rows, d}, rng);
    std::vector<uint8_t> mask(6, 0);
    int active = 0;
    while (active == 0) {
      active = 0;
      for (size_t k = 0; k < 6; ++k) {
        mask[k] = rng.bernoulli(0.5) ? 1 : 0;
        active += mask[k];
      }
    }

    Tensor routed = skill_ffn(x, bank, mask);

    // Oracle: evaluate every active member independently, average naively.
    std::vector<double> want(static_cast<size_t>(rows * d), 0.0);
    for (size_t k = 0; k < 6; ++k) {
      if (!mask[k]) continue;
      const std::vector<double> yk = dense_ffn(x, bank.members[k]).data();
      for (size_t i = 0; i < want.size(); ++i) want[i] += yk[i];
    }
    for (double& v : want) v /= active;

    for (size_t i = 0; i < want.size(); ++i)
      REQUIRE(std::abs(routed.data()[i] - want[i]) <= 1e-12);
  }
}

TEST_CASE("single active skill reproduces that member's dense ffn bitwise") {
  const int64_t d = 8, h = 12;
  Rng rng(102);
  SkillFfnBank bank = random_bank(4, d, h, rng);
  Tensor x = Tensor::randn({6, d}, rng);

  for (size_t k = 0; k < 4; ++k) {
    std::vector<uint8_t> mask(4, 0);
    mask[k] = 1;
    REQUIRE(bitwise_equal(skill_ffn(x, bank, mask), dense_ffn(x, bank.members[k])));
  }
}

TEST_CASE("skill ffn output is bitwise invariant to relabeling active members") {
  // Swapping the storage position of two active members (and their mask bits
  // with them) must not change a single output bit.
  const int64_t d = 6, h = 9;
  Rng rng(103);
  SkillFfnBank bank = random_bank(5, d, h, rng);
  Tensor x = Tensor::randn({4, d}, rng);
  std::vector<uint8_t> mask = {1, 1, 0, 1, 0};

  Tensor base = skill_ffn(x, bank, mask);

  SkillFfnBank swapped = bank;
  std::swap(swapped.members[0], swapped.members[3]);  // both active: mask unchanged
  REQUIRE(bitwise_equal(skill_ffn(x, swapped, mask), base));

  SkillFfnBank inactive_moved = bank;
  std::swap(inactive_moved.members[2], inactive_moved.members[4]);  // both inactive
  REQUIRE(bitwise_equal(skill_ffn(x, inactive_moved, mask), base));
}

TEST_CASE("skill ffn rejects bad masks") {
  Rng rng(104);
  SkillFfnBank bank = random_bank(3, 4, 6, rng);
  Tensor x = Tensor::randn({2, 4}, rng);
  REQUIRE_THROWS_AS(skill_ffn(x, bank, {1, 0}), ShapeError);
  REQUIRE_THROWS_AS(skill_ffn(x, bank, {0, 0, 0}), ContractError);
}

TEST_CASE("backward reaches only the active members of a skill ffn") {
  const int64_t d = 6, h = 8;
  Rng rng(105);
  SkillFfnBank bank = random_bank(4, d, h, rng);
  for (FfnParams& p : bank.members) {
    p.w1.set_requires_grad(true);
    p.b1.set_requires_grad(true);
    p.w2.set_requires_grad(true);
    p.b2.set_requires_grad(true);
  }
  Tensor x = Tensor::randn({3, d}, rng);
  const std::vector<uint8_t> mask = {1, 0, 1, 0};

  GradTape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum_all(skill_ffn(x, bank, mask)));
  }
  for (size_t k = 0; k < 4; ++k) {
    const bool expect = mask[k] == 1;
    REQUIRE(bank.members[k].w1.has_grad() == expect);
    REQUIRE(bank.members[k].b1.has_grad() == expect);
    REQUIRE(bank.members[k].w2.has_grad() == expect);
    REQUIRE(bank.members[k].b2.has_grad() == expect);
  }

  // The active member's gradient agrees with central differences.
  Tensor& w1 = bank.members[0].w1;
  const std::vector<double> analytic = w1.grad();
  const std::vector<double> numeric = finite_diff_grad_inplace(
      [&]() { return sum_all(skill_ffn(x, bank, mask)).item(); }, w1);
  REQUIRE(grad_rel_err(analytic, numeric) <= 1e-6);
}

TEST_CASE("skill mha selects the language triple and matches dense mha bitwise") {
  const int64_t d = 8, batch = 2, seq = 4, heads = 2;
  Rng rng(106);
  SkillMhaParams sp;
  for (int l = 0; l < 4; ++l) sp.languages.push_back(random_proj(d, rng));
  sp.wo = Tensor::randn({d, d}, rng, 0.3);
  sp.heads = heads;

  Tensor x = Tensor::randn({batch * seq, d}, rng);
  std::vector<double> key_mask(static_cast<size_t>(batch * seq), 1.0);
  key_mask[3] = 0.0;

  for (int l = 1; l <= 4; ++l) {
    DenseMhaParams dp;
    dp.proj = sp.languages[static_cast<size_t>(l - 1)];
    dp.wo = sp.wo;
    dp.heads = heads;
    Tensor a = skill_mha(x, sp, SkillId::language(l), batch, seq, key_mask);
    Tensor b = dense_mha(x, dp, batch, seq, key_mask);
    REQUIRE(bitwise_equal(a, b));
  }

  REQUIRE_THROWS_AS(skill_mha(x, sp, SkillId::task(1), batch, seq, key_mask), ContractError);
  REQUIRE_THROWS_AS(skill_mha(x, sp, SkillId::language(5), batch, seq, key_mask), ContractError);
}

TEST_CASE("backward reaches only the selected language's projections") {
  const int64_t d = 6, batch = 1, seq = 3, heads = 2;
  Rng rng(107);
  SkillMhaParams sp;
  for (int l = 0; l < 3; ++l) {
    MhaProjection p = random_proj(d, rng);
    p.wq.set_requires_grad(true);
    p.wk.set_requires_grad(true);
    p.wv.set_requires_grad(true);
    sp.languages.push_back(p);
  }
  sp.wo = Tensor::randn({d, d}, rng, 0.3).set_requires_grad(true);
  sp.heads = heads;
  Tensor x = Tensor::randn({batch * seq, d}, rng);
  const std::vector<double> key_mask(static_cast<size_t>(batch * seq), 1.0);

  GradTape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum_all(skill_mha(x, sp, SkillId::language(2), batch, seq, key_mask)));
  }
  for (int l = 0; l < 3; ++l) {
    const bool expect = l == 1;
    REQUIRE(sp.languages[static_cast<size_t>(l)].wq.has_grad() == expect);
    REQUIRE(sp.languages[static_cast<size_t>(l)].wk.has_grad() == expect);
    REQUIRE(sp.languages[static_cast<size_t>(l)].wv.has_grad() == expect);
  }
  REQUIRE(sp.wo.has_grad());  // shared output projection always participates

  const std::vector<double> analytic = sp.languages[1].wq.grad();
  const std::vector<double> numeric = finite_diff_grad_inplace(
      [&]() { return sum_all(skill_mha(x, sp, SkillId::language(2), batch, seq, key_mask)).item(); },
      sp.languages[1].wq);
  REQUIRE(grad_rel_err(analytic, numeric) <= 1e-5);
}

TEST_CASE("moe ffn matches a per-row top-2 oracle") {
  const int64_t d = 6, h = 9, rows = 7;
  const size_t n_experts = 5;
  Rng rng(108);
  SkillFfnBank experts = random_bank(n_experts, d, h, rng);
  Tensor gate = Tensor::randn({d, static_cast<int64_t>(n_experts)}, rng);
  Tensor x = Tensor::randn({rows, d}, rng);

  Tensor out = moe_ffn(x, experts, gate);

  // Oracle: route each row independently.
  for (int64_t i = 0; i < rows; ++i) {
    std::vector<double> logits(n_experts, 0.0);
    for (size_t e = 0; e < n_experts; ++e)
      for (int64_t j = 0; j < d; ++j)
        logits[e] += x.data()[static_cast<size_t>(i * d + j)] *
                     gate.data()[static_cast<size_t>(j) * n_experts + e];
    size_t a = 0;
    for (size_t e = 1; e < n_experts; ++e)
      if (logits[e] > logits[a]) a = e;
    size_t b = a == 0 ? 1 : 0;
    for (size_t e = 0; e < n_experts; ++e) {
      if (e == a) continue;
      if (logits[e] > logits[b]) b = e;
    }
    const double m = std::max(logits[a], logits[b]);
    const double wa = std::exp(logits[a] - m), wb = std::exp(logits[b] - m);

    Tensor row({1, d});
    std::copy_n(x.data().data() + i * d, d, row.data().data());
    const auto ya = dense_ffn(row, experts.members[a]).data();
    const auto yb = dense_ffn(row, experts.members[b]).data();
    for (int64_t j = 0; j < d; ++j) {
      const double want = (wa * ya[static_cast<size_t>(j)] + wb * yb[static_cast<size_t>(j)]) /
                          (wa + wb);
      REQUIRE(std::abs(out.data()[static_cast<size_t>(i * d + j)] - want) <= 1e-12);
    }
  }
}

TEST_CASE("moe tie-breaking picks the lowest expert indices") {
  const int64_t d = 4, h = 5;
  Rng rng(109);
  SkillFfnBank experts = random_bank(4, d, h, rng);
  Tensor gate = Tensor::zeros({d, 4});  // all logits identical: ties everywhere
  Tensor x = Tensor::randn({3, d}, rng);

  Tensor out = moe_ffn(x, experts, gate);
  // Ties select experts 0 and 1 with equal weight.
  Tensor y0 = dense_ffn(x, experts.members[0]);
  Tensor y1 = dense_ffn(x, experts.members[1]);
  for (size_t i = 0; i < out.data().size(); ++i)
    REQUIRE(std::abs(out.data()[i] - 0.5 * (y0.data()[i] + y1.data()[i])) <= 1e-12);
}

TEST_CASE("moe with a dominant gate logit converges to that expert") {
  const int64_t d = 4, h = 5;
  Rng rng(110);
  SkillFfnBank experts = random_bank(3, d, h, rng);
  // Column 2 of the gate is huge and positive for x = all-ones.
  Tensor gate = Tensor::zeros({d, 3});
  for (int64_t j = 0; j < d; ++j) gate.data()[static_cast<size_t>(j * 3 + 2)] = 50.0;
  Tensor x = Tensor::full({2, d}, 1.0);

  Tensor out = moe_ffn(x, experts, gate);
  Tensor want = dense_ffn(x, experts.members[2]);
  for (size_t i = 0; i < out.data().size(); ++i)
    REQUIRE(std::abs(out.data()[i] - want.data()[i]) <= 1e-12);
}

TEST_CASE("moe gradients match central differences away from routing ties") {
  const int64_t d = 5, h = 7, rows = 4;
  Rng rng(111);
  SkillFfnBank experts = random_bank(4, d, h, rng);
  Tensor gate = Tensor::randn({d, 4}, rng);
  Tensor x = Tensor::randn({rows, d}, rng);

  // Guard: the second/third logits must be well separated per row so the
  // finite-difference probes cannot flip the routing.
  {
    Tensor logits = linear(x, gate);
    for (int64_t i = 0; i < rows; ++i) {
      std::vector<double> row(4);
      for (size_t e = 0; e < 4; ++e) row[e] = logits.data()[static_cast<size_t>(i * 4) + e];
      std::sort(row.begin(), row.end(), std::greater<>());
      REQUIRE(row[1] - row[2] > 1e-3);
    }
  }

  x.set_requires_grad(true);
  gate.set_requires_grad(true);
  experts.members[0].w1.set_requires_grad(true);
  GradTape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum_all(moe_ffn(x, experts, gate)));
  }
  auto loss = [&]() { return sum_all(moe_ffn(x, experts, gate)).item(); };
  REQUIRE(grad_rel_err(x.grad(), finite_diff_grad_inplace(loss, x)) <= 1e-5);
  REQUIRE(grad_rel_err(gate.grad(), finite_diff_grad_inplace(loss, gate)) <= 1e-5);
  if (experts.members[0].w1.has_grad())  // expert 0 may or may not be routed to
    REQUIRE(grad_rel_err(experts.members[0].w1.grad(),
                         finite_diff_grad_inplace(loss, experts.members[0].w1)) <= 1e-5);
}

TEST_CASE("moe rejects malformed configurations") {
  Rng rng(112);
  SkillFfnBank one = random_bank(1, 4, 5, rng);
  Tensor gate1 = Tensor::zeros({4, 1});
  Tensor x = Tensor::randn({2, 4}, rng);
  REQUIRE_THROWS_AS(moe_ffn(x, one, gate1), ContractError);

  SkillFfnBank three = random_bank(3, 4, 5, rng);
  Tensor bad_gate = Tensor::zeros({4, 2});
  REQUIRE_THROWS_AS(moe_ffn(x, three, bad_gate), ShapeError);
}

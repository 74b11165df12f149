#pragma once

// Feed-forward and attention layers in their dense, skill-routed, and
// mixture-of-experts forms. The skill layers activate only the parameter
// blocks selected by the routing mask: deactivated blocks are neither
// evaluated nor recorded on the gradient tape.

#include <vector>

#include "skillnet/skills.hpp"
#include "skillnet/tensor.hpp"

namespace skillnet {

// Two linear transformations with a ReLU in between.
struct FfnParams {
  Tensor w1;  // [d, h]
  Tensor b1;  // [h]
  Tensor w2;  // [h, d]
  Tensor b2;  // [d]

  static FfnParams zeros(int64_t d, int64_t h) {
    return {Tensor::zeros({d, h}), Tensor::zeros({h}), Tensor::zeros({h, d}), Tensor::zeros({d})};
  }
};

// Parallel bank of per-skill FFNs, ordered to match the routing matrix
// columns. Holds all skills for the FFN variant, task skills only for the
// FFN-MHA variant.
struct SkillFfnBank {
  std::vector<FfnParams> members;

  size_t size() const { return members.size(); }
};

// Per-language Q/K/V projection triples plus one output projection shared
// across languages.
struct MhaProjection {
  Tensor wq;  // [d, d]
  Tensor wk;  // [d, d]
  Tensor wv;  // [d, d]
};

struct SkillMhaParams {
  std::vector<MhaProjection> languages;  // index l-1 holds language skill l
  Tensor wo;                             // [d, d], shared
  int64_t heads = 1;
};

struct DenseMhaParams {
  MhaProjection proj;
  Tensor wo;
  int64_t heads = 1;
};

// x: [rows, d] of flattened token positions.
inline Tensor dense_ffn(const Tensor& x, const FfnParams& p) {
  Tensor h = relu(linear(x, p.w1, &p.b1));
  return linear(h, p.w2, &p.b2);
}

// Mean-pooled outputs of the active skills' FFNs. Only banks with a set mask
// bit run; the all-zero mask is a contract error.
inline Tensor skill_ffn(const Tensor& x, const SkillFfnBank& bank,
                        const std::vector<uint8_t>& mask) {
  if (mask.size() != bank.size())
    throw ShapeError("skill_ffn: mask length " + std::to_string(mask.size()) +
                     " != bank size " + std::to_string(bank.size()));
  std::vector<Tensor> active;
  for (size_t k = 0; k < bank.size(); ++k)
    if (mask[k]) active.push_back(dense_ffn(x, bank.members[k]));
  if (active.empty()) throw ContractError("skill_ffn: mask activates no skill");
  if (active.size() == 1) return scale(active[0], 1.0);
  return stable_mean(active);
}

inline Tensor mha_with_projection(const Tensor& x, const MhaProjection& p, const Tensor& wo,
                                  int64_t heads, int64_t batch, int64_t seq_len,
                                  const std::vector<double>& key_mask) {
  Tensor q = linear(x, p.wq);
  Tensor k = linear(x, p.wk);
  Tensor v = linear(x, p.wv);
  Tensor ctx = attention_core(q, k, v, batch, seq_len, heads, key_mask);
  return linear(ctx, wo);
}

// Standard multi-head self-attention over a flattened [batch*seq_len, d]
// input; key_mask marks real tokens with 1.
inline Tensor dense_mha(const Tensor& x, const DenseMhaParams& p, int64_t batch, int64_t seq_len,
                        const std::vector<double>& key_mask) {
  return mha_with_projection(x, p.proj, p.wo, p.heads, batch, seq_len, key_mask);
}

// Identical computation, but the Q/K/V projections come from the selected
// language skill's triple. Non-selected triples stay off the tape.
inline Tensor skill_mha(const Tensor& x, const SkillMhaParams& p, const SkillId& language,
                        int64_t batch, int64_t seq_len, const std::vector<double>& key_mask) {
  if (language.kind != SkillKind::LanguageSkill)
    throw ContractError("skill_mha: " + language.name() + " is not a language skill");
  if (language.index < 1 || language.index > static_cast<int>(p.languages.size()))
    throw ContractError("skill_mha: no projection triple registered for " + language.name());
  const MhaProjection& proj = p.languages[static_cast<size_t>(language.index - 1)];
  return mha_with_projection(x, proj, p.wo, p.heads, batch, seq_len, key_mask);
}

// Token-level top-2 routing over an expert bank. Gate logits are x . gate;
// the two largest logits (lowest index on ties) pick the experts, and their
// outputs combine under a softmax over the selected pair.
inline Tensor moe_ffn(const Tensor& x, const SkillFfnBank& experts, const Tensor& gate) {
  require_2d("moe_ffn", x);
  const int64_t n_experts = static_cast<int64_t>(experts.size());
  if (n_experts < 2) throw ContractError("moe_ffn: need at least 2 experts");
  if (gate.rank() != 2 || gate.dim(0) != x.dim(1) || gate.dim(1) != n_experts)
    throw ShapeError("moe_ffn: gate shape " + shape_str(gate.shape()) + " does not map width " +
                     std::to_string(x.dim(1)) + " to " + std::to_string(n_experts) + " experts");
  const int64_t rows = x.dim(0);

  Tensor logits = linear(x, gate);  // [rows, n_experts]
  std::vector<int> top0(static_cast<size_t>(rows)), top1(static_cast<size_t>(rows));
  const auto& lv = logits.data();
  for (int64_t i = 0; i < rows; ++i) {
    const double* li = lv.data() + i * n_experts;
    int a = 0;
    for (int64_t j = 1; j < n_experts; ++j)
      if (li[j] > li[a]) a = static_cast<int>(j);
    int b = a == 0 ? 1 : 0;
    for (int64_t j = 0; j < n_experts; ++j) {
      if (static_cast<int>(j) == a) continue;
      if (li[j] > li[b]) b = static_cast<int>(j);
    }
    // report the pair in selection order: primary first
    top0[static_cast<size_t>(i)] = a;
    top1[static_cast<size_t>(i)] = b;
  }
  Tensor pair_logits = gather_pair_cols(logits, top0, top1);  // [rows, 2]
  Tensor weights = softmax_lastdim(pair_logits);

  // Group rows by expert so each expert runs one batched FFN.
  std::vector<std::vector<int>> routed(static_cast<size_t>(n_experts));
  std::vector<std::vector<int>> routed_slot(static_cast<size_t>(n_experts));  // 0 or 1
  for (int64_t i = 0; i < rows; ++i) {
    routed[static_cast<size_t>(top0[static_cast<size_t>(i)])].push_back(static_cast<int>(i));
    routed_slot[static_cast<size_t>(top0[static_cast<size_t>(i)])].push_back(0);
    routed[static_cast<size_t>(top1[static_cast<size_t>(i)])].push_back(static_cast<int>(i));
    routed_slot[static_cast<size_t>(top1[static_cast<size_t>(i)])].push_back(1);
  }

  Tensor out = Tensor::zeros({rows, x.dim(1)});
  bool first = true;
  for (int64_t e = 0; e < n_experts; ++e) {
    const auto& idx = routed[static_cast<size_t>(e)];
    if (idx.empty()) continue;
    Tensor xe = gather_rows(x, idx);
    Tensor ye = dense_ffn(xe, experts.members[static_cast<size_t>(e)]);
    std::vector<int> w0(idx.size()), w1(idx.size());
    for (size_t r = 0; r < idx.size(); ++r) {
      w0[r] = 2 * idx[r] + routed_slot[static_cast<size_t>(e)][r];
      w1[r] = w0[r];
    }
    // weight of this expert for each routed row
    Tensor we = gather_rows(reshape(weights, {rows * 2, 1}), w0);
    Tensor weighted = mul_rows(ye, we);
    // scatter back: build a [rows, d] contribution through gather_rows'
    // transpose by accumulating with add on a zero base
    Tensor contrib = Tensor::zeros({rows, x.dim(1)});
    {
      // scatter rows of `weighted` into `contrib`
      auto& cv = contrib.data();
      const auto& wv = weighted.data();
      const int64_t d = x.dim(1);
      for (size_t r = 0; r < idx.size(); ++r)
        std::copy_n(wv.data() + static_cast<int64_t>(r) * d, d,
                    cv.data() + static_cast<int64_t>(idx[r]) * d);
      if (detail::should_record({&weighted})) {
        GradTape::active()->record("scatter_rows", {weighted.impl()}, contrib,
                                   [weighted, contrib, idx, d]() {
          const auto& g = *contrib.impl()->grad;
          std::vector<double> dw(weighted.numel());
          for (size_t r = 0; r < idx.size(); ++r)
            std::copy_n(g.data() + static_cast<int64_t>(idx[r]) * d, d,
                        dw.data() + static_cast<int64_t>(r) * d);
          detail::accumulate(weighted, dw);
        });
      }
    }
    out = first ? contrib : add(out, contrib);
    first = false;
  }
  return out;
}

}  // namespace skillnet

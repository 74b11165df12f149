#pragma once

// L-layer encoder in four variants (dense, mixture-of-experts, skill FFN,
// skill FFN+MHA), task heads, and per-task losses. Parameters live in a
// named store, each tagged with the skill that owns it, which makes routing
// isolation directly assertable.

#include <map>
#include <string>
#include <vector>

#include "skillnet/layers.hpp"
#include "skillnet/skills.hpp"
#include "skillnet/tensor.hpp"

namespace skillnet {

enum class ModelVariant { Dense, Moe, SkillFfn, SkillFfnMha };

inline std::string variant_name(ModelVariant v) {
  switch (v) {
    case ModelVariant::Dense: return "dense";
    case ModelVariant::Moe: return "moe";
    case ModelVariant::SkillFfn: return "skill-ffn";
    case ModelVariant::SkillFfnMha: return "skill-ffn-mha";
  }
  throw ContractError("unreachable variant");
}

inline ModelVariant variant_from_name(const std::string& s) {
  if (s == "dense") return ModelVariant::Dense;
  if (s == "moe") return ModelVariant::Moe;
  if (s == "skill-ffn") return ModelVariant::SkillFfn;
  if (s == "skill-ffn-mha") return ModelVariant::SkillFfnMha;
  throw ConfigError("unknown variant '" + s + "' (expected dense|moe|skill-ffn|skill-ffn-mha)");
}

struct ModelConfig {
  ModelVariant variant = ModelVariant::SkillFfnMha;
  int64_t layers = 2;
  int64_t hidden = 64;
  int64_t intermediate = 128;
  int64_t heads = 4;
  int64_t vocab = 261;
  int64_t max_seq_len = 32;
  double dropout = 0.0;
  double init_stddev = 0.02;
  SkillTaxonomy taxonomy = SkillTaxonomy::default_taxonomy();

  void validate() const {
    if (hidden % heads != 0)
      throw ConfigError("hidden " + std::to_string(hidden) + " not divisible by heads " +
                        std::to_string(heads));
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
    if (layers < 1 || hidden < 1 || intermediate < 1 || vocab < 1 || max_seq_len < 2)
      throw ConfigError("model dimensions must be positive");
  }
};

struct Ownership {
  enum class Kind { Shared, TaskSkill, LanguageSkill };
  Kind kind = Kind::Shared;
  int index = 0;  // 1-based skill index for the skill kinds

  bool operator==(const Ownership&) const = default;

  static Ownership shared() { return {Kind::Shared, 0}; }
  static Ownership of(const SkillId& s) {
    return {s.kind == SkillKind::TaskSkill ? Kind::TaskSkill : Kind::LanguageSkill, s.index};
  }

  std::string label() const {
    switch (kind) {
      case Kind::Shared: return "shared";
      case Kind::TaskSkill: return "t_s" + std::to_string(index);
      case Kind::LanguageSkill: return "l_s" + std::to_string(index);
    }
    throw ContractError("unreachable ownership kind");
  }
};

// Named registry of all trainable parameters. Iteration order is the sorted
// parameter name, which keeps every traversal (updates, serialization,
// gradient checks) deterministic.
class ParameterStore {
 public:
  struct Entry {
    Tensor tensor;
    Ownership owner;
  };

  Tensor& add(const std::string& name, Tensor t, Ownership owner) {
    if (entries_.count(name)) throw ContractError("parameter '" + name + "' already registered");
    t.set_requires_grad(true);
    auto [it, _] = entries_.emplace(name, Entry{std::move(t), owner});
    return it->second.tensor;
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  Tensor& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second.tensor;
  }
  const Tensor& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second.tensor;
  }

  const Ownership& owner(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second.owner;
  }

  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::map<std::string, Entry>& entries() { return entries_; }

  size_t size() const { return entries_.size(); }

  int64_t parameter_count() const {
    int64_t n = 0;
    for (const auto& [_, e] : entries_) n += e.tensor.numel();
    return n;
  }

  void zero_grads() {
    for (auto& [_, e] : entries_) e.tensor.zero_grad();
  }

  // Deep copy; clones share no storage with the source.
  ParameterStore clone() const {
    ParameterStore out;
    for (const auto& [name, e] : entries_) out.entries_.emplace(name, Entry{e.tensor.clone(), e.owner});
    return out;
  }

 private:
  std::map<std::string, Entry> entries_;
};

// Tokenized mini-batch with per-task-type labels, flattened row-major over
// [batch, seq_len].
struct Batch {
  std::string task_id;
  int64_t batch_size = 0;
  int64_t seq_len = 0;
  std::vector<int> token_ids;     // [b*T]
  std::vector<double> attn_mask;  // [b*T], 1 real / 0 pad
  std::vector<int> segment_ids;   // [b*T], 0 or 1

  std::vector<int> class_labels;             // [b] for classification-style heads
  std::vector<int> tag_labels;               // [b*T], -1 at positions without a tag
  std::vector<int> span_start, span_end;     // [b]
  std::vector<int> mlm_positions;            // flat indices into [b*T]
  std::vector<int> mlm_targets;              // original token at each mlm position

  void validate_dims() const {
    const size_t n = static_cast<size_t>(batch_size * seq_len);
    if (token_ids.size() != n || attn_mask.size() != n || segment_ids.size() != n)
      throw ShapeError("batch: field lengths do not match batch_size*seq_len");
  }
};

namespace names {

inline std::string layer(int64_t i, const std::string& rest) {
  return "layer" + std::to_string(i) + "." + rest;
}
inline std::string ffn_member(int64_t i, const std::string& skill, const std::string& p) {
  return layer(i, "ffn." + skill + "." + p);
}
inline std::string head(const std::string& task_id, const std::string& p) {
  return "head." + task_id + "." + p;
}

}  // namespace names

// ---------------------------------------------------------------------------
// Construction. Skill modules of one layer are initialized identically from
// a single draw per parameter shape, so freshly built skills agree exactly;
// they diverge only through training.
// ---------------------------------------------------------------------------

namespace detail_model {

inline void add_ffn_member(ParameterStore& store, int64_t layer, const std::string& skill,
                           Ownership owner, const Tensor& w1_init, const Tensor& w2_init,
                           int64_t d, int64_t h) {
  store.add(names::ffn_member(layer, skill, "w1"), w1_init.clone(), owner);
  store.add(names::ffn_member(layer, skill, "b1"), Tensor::zeros({h}), owner);
  store.add(names::ffn_member(layer, skill, "w2"), w2_init.clone(), owner);
  store.add(names::ffn_member(layer, skill, "b2"), Tensor::zeros({d}), owner);
}

inline void add_layer_norm(ParameterStore& store, const std::string& prefix, int64_t d) {
  store.add(prefix + ".gamma", Tensor::full({d}, 1.0), Ownership::shared());
  store.add(prefix + ".beta", Tensor::zeros({d}), Ownership::shared());
}

inline void add_head(ParameterStore& store, const std::string& task_id, int64_t d, int64_t out,
                     Rng& rng, double stddev, const std::string& sub = "") {
  const std::string base = sub.empty() ? task_id : task_id + "." + sub;
  store.add(names::head(base, "w"), Tensor::randn({d, out}, rng, stddev), Ownership::shared());
  store.add(names::head(base, "b"), Tensor::zeros({out}), Ownership::shared());
}

}  // namespace detail_model

// Registers the head parameters for one task spec. Span heads emit two
// per-position scores; every other head is a single linear readout.
inline void add_task_head(ParameterStore& store, const ModelConfig& cfg, const TaskSpec& spec,
                          Rng& rng) {
  const int64_t d = cfg.hidden;
  switch (spec.task_type) {
    case TaskType::SequenceClassification:
    case TaskType::SequencePairClassification:
      detail_model::add_head(store, spec.task_id, d, spec.num_classes, rng, cfg.init_stddev);
      break;
    case TaskType::TokenClassification:
      detail_model::add_head(store, spec.task_id, d, spec.num_classes, rng, cfg.init_stddev);
      break;
    case TaskType::SpanExtraction:
      detail_model::add_head(store, spec.task_id, d, 1, rng, cfg.init_stddev, "start");
      detail_model::add_head(store, spec.task_id, d, 1, rng, cfg.init_stddev, "end");
      break;
    case TaskType::Mlm:
      detail_model::add_head(store, spec.task_id, d, cfg.vocab, rng, cfg.init_stddev);
      break;
    case TaskType::Nsp:
      detail_model::add_head(store, spec.task_id, d, 2, rng, cfg.init_stddev);
      break;
  }
}

inline ParameterStore build_model(const ModelConfig& cfg, const SkillMatrix& skills,
                                  uint64_t seed) {
  cfg.validate();
  const SkillTaxonomy& tax = skills.taxonomy();
  if (&cfg.taxonomy != &tax &&
      (cfg.taxonomy.num_task_skills != tax.num_task_skills ||
       cfg.taxonomy.num_language_skills != tax.num_language_skills))
    throw ConfigError("model taxonomy does not match skill matrix taxonomy");
  Rng rng(seed);
  ParameterStore store;
  const int64_t d = cfg.hidden, h = cfg.intermediate;

  store.add("embed.token", Tensor::randn({cfg.vocab, d}, rng, cfg.init_stddev), Ownership::shared());
  store.add("embed.position", Tensor::randn({cfg.max_seq_len, d}, rng, cfg.init_stddev),
            Ownership::shared());
  store.add("embed.segment", Tensor::randn({2, d}, rng, cfg.init_stddev), Ownership::shared());
  detail_model::add_layer_norm(store, "embed.ln", d);

  for (int64_t i = 0; i < cfg.layers; ++i) {
    // One backbone draw per shape per layer; skill modules replicate it.
    const Tensor wq_init = Tensor::randn({d, d}, rng, cfg.init_stddev);
    const Tensor wk_init = Tensor::randn({d, d}, rng, cfg.init_stddev);
    const Tensor wv_init = Tensor::randn({d, d}, rng, cfg.init_stddev);
    const Tensor wo_init = Tensor::randn({d, d}, rng, cfg.init_stddev);
    const Tensor w1_init = Tensor::randn({d, h}, rng, cfg.init_stddev);
    const Tensor w2_init = Tensor::randn({h, d}, rng, cfg.init_stddev);

    if (cfg.variant == ModelVariant::SkillFfnMha) {
      for (int l = 1; l <= tax.num_language_skills; ++l) {
        const Ownership owner = Ownership::of(SkillId::language(l));
        const std::string p = "mha.l_s" + std::to_string(l);
        store.add(names::layer(i, p + ".q"), wq_init.clone(), owner);
        store.add(names::layer(i, p + ".k"), wk_init.clone(), owner);
        store.add(names::layer(i, p + ".v"), wv_init.clone(), owner);
      }
    } else {
      store.add(names::layer(i, "mha.q"), wq_init.clone(), Ownership::shared());
      store.add(names::layer(i, "mha.k"), wk_init.clone(), Ownership::shared());
      store.add(names::layer(i, "mha.v"), wv_init.clone(), Ownership::shared());
    }
    store.add(names::layer(i, "mha.wo"), wo_init.clone(), Ownership::shared());
    detail_model::add_layer_norm(store, names::layer(i, "ln1"), d);

    switch (cfg.variant) {
      case ModelVariant::Dense:
        detail_model::add_ffn_member(store, i, "dense", Ownership::shared(), w1_init, w2_init, d, h);
        break;
      case ModelVariant::Moe: {
        for (int e = 0; e < tax.total_skills(); ++e)
          detail_model::add_ffn_member(store, i, "expert" + std::to_string(e), Ownership::shared(),
                                       w1_init, w2_init, d, h);
        store.add(names::layer(i, "moe.gate"),
                  Tensor::randn({d, tax.total_skills()}, rng, cfg.init_stddev), Ownership::shared());
        break;
      }
      case ModelVariant::SkillFfn: {
        // Bank over every skill, task then language, matching matrix columns.
        for (int c = 0; c < tax.total_skills(); ++c) {
          const SkillId s = tax.skill_at(c);
          detail_model::add_ffn_member(store, i, s.name(), Ownership::of(s), w1_init, w2_init, d, h);
        }
        break;
      }
      case ModelVariant::SkillFfnMha: {
        for (int k = 1; k <= tax.num_task_skills; ++k) {
          const SkillId s = SkillId::task(k);
          detail_model::add_ffn_member(store, i, s.name(), Ownership::of(s), w1_init, w2_init, d, h);
        }
        break;
      }
    }
    detail_model::add_layer_norm(store, names::layer(i, "ln2"), d);
  }

  for (const TaskSpec& spec : skills.tasks()) add_task_head(store, cfg, spec, rng);
  return store;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

namespace detail_model {

inline FfnParams ffn_member(const ParameterStore& store, int64_t layer, const std::string& skill) {
  return {store.at(names::ffn_member(layer, skill, "w1")),
          store.at(names::ffn_member(layer, skill, "b1")),
          store.at(names::ffn_member(layer, skill, "w2")),
          store.at(names::ffn_member(layer, skill, "b2"))};
}

}  // namespace detail_model

// Encodes a batch into final hidden states [b*T, d]. `mask` is the task's
// (possibly perturbed) routing row; dense and MoE variants ignore it.
// `rng` drives dropout and may be null for inference.
inline Tensor encode(const ParameterStore& store, const ModelConfig& cfg, const SkillMatrix& skills,
                     const Batch& batch, const SkillMask& mask, Rng* rng = nullptr) {
  batch.validate_dims();
  const int64_t b = batch.batch_size, t = batch.seq_len, d = cfg.hidden;
  if (t > cfg.max_seq_len)
    throw ContractError("sequence length " + std::to_string(t) + " exceeds model maximum " +
                        std::to_string(cfg.max_seq_len));
  const SkillTaxonomy& tax = skills.taxonomy();
  if (cfg.variant == ModelVariant::SkillFfn || cfg.variant == ModelVariant::SkillFfnMha) {
    if (static_cast<int64_t>(mask.size()) != tax.total_skills())
      throw ShapeError("skill mask length " + std::to_string(mask.size()) + " != taxonomy size " +
                       std::to_string(tax.total_skills()));
  }
  const bool training = rng != nullptr && cfg.dropout > 0.0;
  auto drop = [&](const Tensor& x) { return training ? dropout(x, cfg.dropout, *rng, true) : x; };

  std::vector<int> pos_ids(static_cast<size_t>(b * t));
  for (int64_t i = 0; i < b; ++i)
    for (int64_t j = 0; j < t; ++j) pos_ids[static_cast<size_t>(i * t + j)] = static_cast<int>(j);

  Tensor x = add(add(gather_rows(store.at("embed.token"), batch.token_ids),
                     gather_rows(store.at("embed.position"), pos_ids)),
                 gather_rows(store.at("embed.segment"), batch.segment_ids));
  x = drop(layer_norm(x, store.at("embed.ln.gamma"), store.at("embed.ln.beta")));

  for (int64_t i = 0; i < cfg.layers; ++i) {
    Tensor attn_out({b * t, d});
    if (cfg.variant == ModelVariant::SkillFfnMha) {
      SkillMhaParams mha;
      mha.heads = cfg.heads;
      mha.wo = store.at(names::layer(i, "mha.wo"));
      for (int l = 1; l <= tax.num_language_skills; ++l) {
        const std::string p = "mha.l_s" + std::to_string(l);
        mha.languages.push_back({store.at(names::layer(i, p + ".q")),
                                 store.at(names::layer(i, p + ".k")),
                                 store.at(names::layer(i, p + ".v"))});
      }
      attn_out = skill_mha(x, mha, skills.language_of_mask(mask), b, t, batch.attn_mask);
    } else {
      DenseMhaParams mha{{store.at(names::layer(i, "mha.q")), store.at(names::layer(i, "mha.k")),
                          store.at(names::layer(i, "mha.v"))},
                         store.at(names::layer(i, "mha.wo")),
                         cfg.heads};
      attn_out = dense_mha(x, mha, b, t, batch.attn_mask);
    }
    x = layer_norm(add(x, drop(attn_out)), store.at(names::layer(i, "ln1.gamma")),
                   store.at(names::layer(i, "ln1.beta")));

    Tensor ffn_out({b * t, d});
    switch (cfg.variant) {
      case ModelVariant::Dense:
        ffn_out = dense_ffn(x, detail_model::ffn_member(store, i, "dense"));
        break;
      case ModelVariant::Moe: {
        SkillFfnBank experts;
        for (int e = 0; e < tax.total_skills(); ++e)
          experts.members.push_back(detail_model::ffn_member(store, i, "expert" + std::to_string(e)));
        ffn_out = moe_ffn(x, experts, store.at(names::layer(i, "moe.gate")));
        break;
      }
      case ModelVariant::SkillFfn: {
        SkillFfnBank bank;
        for (int c = 0; c < tax.total_skills(); ++c)
          bank.members.push_back(detail_model::ffn_member(store, i, tax.skill_at(c).name()));
        ffn_out = skill_ffn(x, bank, mask);
        break;
      }
      case ModelVariant::SkillFfnMha: {
        SkillFfnBank bank;
        for (int k = 1; k <= tax.num_task_skills; ++k)
          bank.members.push_back(detail_model::ffn_member(store, i, SkillId::task(k).name()));
        ffn_out = skill_ffn(x, bank, skills.task_skill_submask(mask));
        break;
      }
    }
    x = layer_norm(add(x, drop(ffn_out)), store.at(names::layer(i, "ln2.gamma")),
                   store.at(names::layer(i, "ln2.beta")));
  }
  return x;
}

struct TaskOutput {
  std::vector<Tensor> logits;  // head-dependent; span heads emit [start, end]
  Tensor loss;
};

namespace detail_model {

inline std::vector<int> cls_positions(const Batch& batch) {
  std::vector<int> out(static_cast<size_t>(batch.batch_size));
  for (int64_t i = 0; i < batch.batch_size; ++i) out[static_cast<size_t>(i)] = static_cast<int>(i * batch.seq_len);
  return out;
}

// Additive mask pinning padded positions to -1e30 so they never win a
// position softmax.
inline Tensor pad_logit_mask(const Batch& batch) {
  Tensor m({batch.batch_size, batch.seq_len});
  for (size_t i = 0; i < batch.attn_mask.size(); ++i)
    m.data()[i] = batch.attn_mask[i] == 0.0 ? -1e30 : 0.0;
  return m;
}

}  // namespace detail_model

// Runs the encoder plus the task head and returns logits and the task loss.
inline TaskOutput forward_task(const ParameterStore& store, const ModelConfig& cfg,
                               const SkillMatrix& skills, const Batch& batch, const TaskSpec& spec,
                               const SkillMask& mask, Rng* rng = nullptr) {
  if (batch.task_id != spec.task_id)
    throw ContractError("batch for task '" + batch.task_id + "' fed to spec '" + spec.task_id + "'");
  for (int p : batch.mlm_positions)
    if (batch.attn_mask[static_cast<size_t>(p)] == 0.0)
      throw ContractError("mlm position " + std::to_string(p) + " falls on padding");
  Tensor hidden = encode(store, cfg, skills, batch, mask, rng);
  TaskOutput out;
  switch (spec.task_type) {
    case TaskType::SequenceClassification:
    case TaskType::SequencePairClassification:
    case TaskType::Nsp: {
      if (static_cast<int64_t>(batch.class_labels.size()) != batch.batch_size)
        throw LabelError("task '" + spec.task_id + "': class labels missing");
      Tensor cls = gather_rows(hidden, detail_model::cls_positions(batch));
      Tensor w = store.at(names::head(spec.task_id, "w"));
      if (w.dim(1) != spec.num_classes)
        throw ContractError("head width " + std::to_string(w.dim(1)) + " != num_classes " +
                            std::to_string(spec.num_classes));
      Tensor logits = linear(cls, w, &store.at(names::head(spec.task_id, "b")));
      out.loss = cross_entropy(logits, batch.class_labels);
      out.logits = {logits};
      break;
    }
    case TaskType::TokenClassification: {
      std::vector<int> positions;
      std::vector<int> targets;
      for (size_t i = 0; i < batch.tag_labels.size(); ++i) {
        if (batch.tag_labels[i] < 0) continue;
        if (batch.attn_mask[i] == 0.0)
          throw LabelError("tag label at padded position " + std::to_string(i));
        positions.push_back(static_cast<int>(i));
        targets.push_back(batch.tag_labels[i]);
      }
      if (positions.empty()) throw LabelError("task '" + spec.task_id + "': no tagged positions");
      Tensor rows = gather_rows(hidden, positions);
      Tensor logits = linear(rows, store.at(names::head(spec.task_id, "w")),
                             &store.at(names::head(spec.task_id, "b")));
      out.loss = cross_entropy(logits, targets);
      out.logits = {logits};
      break;
    }
    case TaskType::SpanExtraction: {
      if (static_cast<int64_t>(batch.span_start.size()) != batch.batch_size ||
          static_cast<int64_t>(batch.span_end.size()) != batch.batch_size)
        throw LabelError("task '" + spec.task_id + "': span labels missing");
      Tensor pad_mask = detail_model::pad_logit_mask(batch);
      Tensor start = add(reshape(linear(hidden, store.at(names::head(spec.task_id + ".start", "w")),
                                        &store.at(names::head(spec.task_id + ".start", "b"))),
                                 {batch.batch_size, batch.seq_len}),
                         pad_mask);
      Tensor end = add(reshape(linear(hidden, store.at(names::head(spec.task_id + ".end", "w")),
                                      &store.at(names::head(spec.task_id + ".end", "b"))),
                               {batch.batch_size, batch.seq_len}),
                       pad_mask);
      Tensor loss_start = cross_entropy(start, batch.span_start);
      Tensor loss_end = cross_entropy(end, batch.span_end);
      out.loss = scale(add(loss_start, loss_end), 0.5);
      out.logits = {start, end};
      break;
    }
    case TaskType::Mlm: {
      if (batch.mlm_positions.empty())
        throw LabelError("task '" + spec.task_id + "': no mlm positions");
      Tensor rows = gather_rows(hidden, batch.mlm_positions);
      Tensor logits = linear(rows, store.at(names::head(spec.task_id, "w")),
                             &store.at(names::head(spec.task_id, "b")));
      out.loss = cross_entropy(logits, batch.mlm_targets);
      out.logits = {logits};
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prediction / decoding
// ---------------------------------------------------------------------------

struct Predictions {
  std::vector<int> class_ids;                      // classification-style
  std::vector<int> tags;                           // [b*T], -1 at padding
  std::vector<std::pair<int, int>> spans;          // per example (start, end)
};

// Highest-scoring (start, end) pair with end >= start, both on real tokens.
// Ties break to the smallest start, then smallest end.
inline std::pair<int, int> best_span(const double* start_scores, const double* end_scores,
                                     const double* attn, int64_t t) {
  int bs = -1, be = -1;
  double best = -std::numeric_limits<double>::infinity();
  for (int64_t i = 0; i < t; ++i) {
    if (attn[i] == 0.0) continue;
    for (int64_t j = i; j < t; ++j) {
      if (attn[j] == 0.0) continue;
      const double v = start_scores[i] + end_scores[j];
      if (v > best) {
        best = v;
        bs = static_cast<int>(i);
        be = static_cast<int>(j);
      }
    }
  }
  if (bs < 0) throw ContractError("best_span: no unpadded positions");
  return {bs, be};
}

inline Predictions predict(const ParameterStore& store, const ModelConfig& cfg,
                           const SkillMatrix& skills, const Batch& batch, const TaskSpec& spec,
                           const SkillMask& mask) {
  // Inference only: no tape, no dropout.
  Batch b = batch;
  if (b.class_labels.empty() && (spec.task_type == TaskType::SequenceClassification ||
                                 spec.task_type == TaskType::SequencePairClassification ||
                                 spec.task_type == TaskType::Nsp))
    b.class_labels.assign(static_cast<size_t>(b.batch_size), 0);
  if (b.span_start.empty() && spec.task_type == TaskType::SpanExtraction) {
    b.span_start.assign(static_cast<size_t>(b.batch_size), 1);
    b.span_end.assign(static_cast<size_t>(b.batch_size), 1);
  }
  if (spec.task_type == TaskType::TokenClassification) {
    // Decode at every unpadded position regardless of which ones carry
    // reference tags.
    b.tag_labels.assign(b.attn_mask.size(), -1);
    for (size_t i = 0; i < b.attn_mask.size(); ++i)
      if (b.attn_mask[i] != 0.0) b.tag_labels[i] = 0;
  }
  TaskOutput out = forward_task(store, cfg, skills, b, spec, mask, nullptr);
  Predictions pred;
  switch (spec.task_type) {
    case TaskType::SequenceClassification:
    case TaskType::SequencePairClassification:
    case TaskType::Nsp: {
      const Tensor& logits = out.logits[0];
      const int64_t c = logits.dim(1);
      for (int64_t i = 0; i < logits.dim(0); ++i) {
        const double* li = logits.data().data() + i * c;
        int a = 0;
        for (int64_t j = 1; j < c; ++j)
          if (li[j] > li[a]) a = static_cast<int>(j);
        pred.class_ids.push_back(a);
      }
      break;
    }
    case TaskType::TokenClassification: {
      // argmax tag at every decoded position; the logits rows follow the
      // position list the forward pass derived from the (possibly filled-in)
      // tag labels.
      pred.tags.assign(static_cast<size_t>(batch.batch_size * batch.seq_len), -1);
      const Tensor& logits = out.logits[0];
      const int64_t c = logits.dim(1);
      int64_t row = 0;
      for (size_t i = 0; i < b.tag_labels.size(); ++i) {
        if (b.tag_labels[i] < 0) continue;
        const double* li = logits.data().data() + row * c;
        int a = 0;
        for (int64_t j = 1; j < c; ++j)
          if (li[j] > li[a]) a = static_cast<int>(j);
        pred.tags[i] = a;
        ++row;
      }
      break;
    }
    case TaskType::SpanExtraction: {
      const Tensor& start = out.logits[0];
      const Tensor& end = out.logits[1];
      for (int64_t i = 0; i < batch.batch_size; ++i) {
        pred.spans.push_back(best_span(start.data().data() + i * batch.seq_len,
                                       end.data().data() + i * batch.seq_len,
                                       batch.attn_mask.data() + i * batch.seq_len, batch.seq_len));
      }
      break;
    }
    case TaskType::Mlm: {
      const Tensor& logits = out.logits[0];
      const int64_t c = logits.dim(1);
      for (int64_t i = 0; i < logits.dim(0); ++i) {
        const double* li = logits.data().data() + i * c;
        int a = 0;
        for (int64_t j = 1; j < c; ++j)
          if (li[j] > li[a]) a = static_cast<int>(j);
        pred.class_ids.push_back(a);
      }
      break;
    }
  }
  return pred;
}

}  // namespace skillnet

#pragma once

// Multitask training: temperature-based task sampling, class-count loss
// scaling, Adam with linear LR decay, self-supervised skill pre-training,
// and single-task adaptation. The optimizer updates only parameters whose
// gradient slot was materialized by the backward pass, so routing isolation
// holds bitwise through training, momentum included.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "skillnet/checkpoint.hpp"
#include "skillnet/metrics.hpp"
#include "skillnet/model.hpp"
#include "skillnet/synth.hpp"

namespace skillnet {

// ---------------------------------------------------------------------------
// Task sampling
// ---------------------------------------------------------------------------

// q_i = p_i^alpha / sum_j p_j^alpha with p_i proportional to dataset size.
inline std::vector<double> sampling_probs(const std::vector<int64_t>& sizes, double alpha) {
  if (sizes.empty()) throw ContractError("sampling_probs: empty size list");
  if (alpha < 0.0) throw ContractError("sampling_probs: alpha must be >= 0");
  double total = 0.0;
  for (int64_t s : sizes) {
    if (s < 1) throw ContractError("sampling_probs: sizes must be positive");
    total += static_cast<double>(s);
  }
  std::vector<double> q(sizes.size());
  double z = 0.0;
  for (size_t i = 0; i < sizes.size(); ++i) {
    q[i] = std::pow(static_cast<double>(sizes[i]) / total, alpha);
    z += q[i];
  }
  for (double& v : q) v /= z;
  return q;
}

struct SamplingPlan {
  double alpha = 0.0;
  std::vector<std::string> task_ids;
  std::vector<int64_t> sizes;
  std::vector<double> probs;

  static SamplingPlan make(const std::vector<std::string>& task_ids,
                           const std::vector<int64_t>& sizes, double alpha) {
    if (task_ids.size() != sizes.size()) throw ContractError("sampling plan: id/size mismatch");
    SamplingPlan plan;
    plan.alpha = alpha;
    plan.task_ids = task_ids;
    plan.sizes = sizes;
    plan.probs = sampling_probs(sizes, alpha);
    return plan;
  }
};

inline size_t sample_task(const SamplingPlan& plan, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (size_t i = 0; i < plan.probs.size(); ++i) {
    acc += plan.probs[i];
    if (u < acc) return i;
  }
  return plan.probs.size() - 1;  // guard against accumulated rounding
}

// ---------------------------------------------------------------------------
// Loss scaling
// ---------------------------------------------------------------------------

inline double loss_scale_factor(int64_t num_classes) {
  if (num_classes < 2)
    throw ContractError("loss scaling needs num_classes >= 2 (log 1 = 0), got " +
                        std::to_string(num_classes));
  return 1.0 / std::log(static_cast<double>(num_classes));
}

inline double scaled_loss(double raw_loss, int64_t num_classes) {
  return raw_loss * loss_scale_factor(num_classes);
}

// ---------------------------------------------------------------------------
// Optimizer state
// ---------------------------------------------------------------------------

struct TrainHyper {
  double lr = 3e-3;
  int batch_size = 8;
  int64_t max_steps = 1000;
  double alpha = 0.4;       // task-sampling temperature
  int64_t eval_every = 0;   // 0 disables periodic dev evaluation
  int64_t stop_step = 0;    // pause the run here (0 = run to max_steps);
                            // max_steps still anchors the lr schedule
  uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  int64_t stop_at() const {
    return stop_step > 0 ? std::min(stop_step, max_steps) : max_steps;
  }
};

struct TrainState {
  int64_t step = 0;
  std::map<std::string, Tensor> m, v;        // Adam moments, created on first update
  std::map<std::string, int64_t> counts;     // per-parameter update counts (bias correction)
  Rng sampler;
  Rng dropout;
  std::map<std::string, Rng> data_rngs;      // per data stream (task or corpus objective)
  std::map<std::string, std::vector<int>> orders;  // per-task epoch permutation
  std::map<std::string, size_t> cursors;

  static TrainState init(uint64_t seed) {
    TrainState st;
    st.sampler = Rng(mix_seeds(seed, 0xA11CE));
    st.dropout = Rng(mix_seeds(seed, 0xD20));
    return st;
  }

  Rng& data_rng(const std::string& key, uint64_t seed) {
    auto it = data_rngs.find(key);
    if (it == data_rngs.end())
      it = data_rngs.emplace(key, Rng(mix_seeds(seed, fnv1a64(key)))).first;
    return it->second;
  }
};

inline double lr_at(const TrainHyper& h, int64_t step) {
  const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(h.max_steps);
  return h.lr * std::max(0.0, frac);
}

// One Adam update over every parameter that received a gradient. Parameters
// without a materialized grad slot are skipped entirely: no moment decay, no
// weight change, and their bias-correction clock does not tick.
inline void adam_update(ParameterStore& store, TrainState& st, const TrainHyper& h, double lr) {
  for (auto& [name, e] : store.entries()) {
    if (!e.tensor.has_grad()) continue;
    auto mit = st.m.find(name);
    if (mit == st.m.end()) {
      mit = st.m.emplace(name, Tensor::zeros(e.tensor.shape())).first;
      st.v.emplace(name, Tensor::zeros(e.tensor.shape()));
      st.counts.emplace(name, 0);
    }
    Tensor& m = mit->second;
    Tensor& v = st.v.at(name);
    const int64_t t = ++st.counts.at(name);
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
    const std::vector<double>& g = e.tensor.grad();
    std::vector<double>& w = e.tensor.data();
    std::vector<double>& md = m.data();
    std::vector<double>& vd = v.data();
    for (size_t i = 0; i < w.size(); ++i) {
      md[i] = h.beta1 * md[i] + (1.0 - h.beta1) * g[i];
      vd[i] = h.beta2 * vd[i] + (1.0 - h.beta2) * g[i] * g[i];
      const double mhat = md[i] / bc1;
      const double vhat = vd[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + h.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Metrics log: line-delimited JSON, one record per training step or eval.
// ---------------------------------------------------------------------------

struct StepRecord {
  int64_t step = 0;
  std::string task_id;
  double raw_loss = 0.0, scaled_loss = 0.0, lr = 0.0;

  nlohmann::json to_json() const {
    return {{"step", step}, {"task_id", task_id}, {"raw_loss", raw_loss},
            {"scaled_loss", scaled_loss}, {"lr", lr}};
  }
};

struct EvalRecord {
  int64_t step = 0;
  std::string task_id;
  EvalResult result;

  nlohmann::json to_json() const {
    nlohmann::json ev = {{"primary", result.primary}};
    for (const auto& [k, v] : result.detail) ev[k] = v;
    return {{"step", step}, {"task_id", task_id}, {"eval", ev}};
  }
};

class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(const std::filesystem::path& path, bool append = false)
      : os_(std::make_unique<std::ofstream>(
            path, append ? std::ios::app : std::ios::trunc)) {
    if (!*os_) throw IoError("cannot open metrics log '" + path.string() + "'");
  }

  void add(const StepRecord& r) {
    steps.push_back(r);
    write(r.to_json());
  }
  void add(const EvalRecord& r) {
    evals.push_back(r);
    write(r.to_json());
  }

  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;

 private:
  void write(const nlohmann::json& j) {
    if (!os_) return;
    *os_ << j.dump() << "\n";
    os_->flush();
  }
  std::unique_ptr<std::ofstream> os_;
};

// ---------------------------------------------------------------------------
// Batching with per-task epoch cycling
// ---------------------------------------------------------------------------

namespace detail_train {

// Draws the next `batch_size` train examples for a task, reshuffling its
// epoch permutation (with the task's own rng) whenever it wraps.
inline std::vector<Example> next_examples(const TaskDataset& ds, TrainState& st,
                                          const TrainHyper& h, int batch_size) {
  const std::string& key = ds.task_id;
  auto& order = st.orders[key];
  auto& cursor = st.cursors[key];
  Rng& rng = st.data_rng("shuffle:" + key, h.seed);
  if (order.size() != ds.train.size()) {
    order.resize(ds.train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);
    cursor = 0;
  }
  std::vector<Example> out;
  out.reserve(static_cast<size_t>(batch_size));
  for (int k = 0; k < batch_size; ++k) {
    if (cursor >= order.size()) {
      rng.shuffle(order);
      cursor = 0;
    }
    out.push_back(ds.train[static_cast<size_t>(order[cursor])]);
    ++cursor;
  }
  return out;
}

}  // namespace detail_train

// ---------------------------------------------------------------------------
// Training steps and loops
// ---------------------------------------------------------------------------

// Forward → scale loss by 1/ln(C) → backward → Adam → clear grads.
inline StepRecord train_step(ParameterStore& store, const ModelConfig& cfg,
                             const SkillMatrix& skills, TrainState& st, const TrainHyper& h,
                             const Batch& batch, const TaskSpec& spec, const SkillMask& mask) {
  GradTape tape;
  TapeScope scope(tape);
  Rng* drop = cfg.dropout > 0.0 ? &st.dropout : nullptr;
  TaskOutput out = forward_task(store, cfg, skills, batch, spec, mask, drop);
  const double factor = loss_scale_factor(spec.num_classes);
  Tensor total = scale(out.loss, factor);
  tape.backward(total);

  StepRecord rec;
  rec.step = st.step;
  rec.task_id = spec.task_id;
  rec.raw_loss = out.loss.item();
  rec.scaled_loss = total.item();
  rec.lr = lr_at(h, st.step);
  adam_update(store, st, h, rec.lr);
  store.zero_grads();
  ++st.step;
  return rec;
}

inline void eval_all(const ParameterStore& store, const ModelConfig& cfg,
                     const SkillMatrix& skills, const std::map<std::string, TaskDataset>& data,
                     int64_t step, MetricsLog& log) {
  for (const TaskSpec& spec : skills.tasks()) {
    auto it = data.find(spec.task_id);
    if (it == data.end()) continue;
    EvalRecord er;
    er.step = step;
    er.task_id = spec.task_id;
    er.result = evaluate(store, cfg, skills, it->second.dev, spec, skills.active_skill_mask(spec.task_id));
    log.add(er);
  }
}

// The multitask loop: sample a task by temperature, draw its next batch,
// take one optimizer step; periodically evaluate every dev split.
inline void multitask_train(ParameterStore& store, const ModelConfig& cfg,
                            const SkillMatrix& skills,
                            const std::map<std::string, TaskDataset>& data, const TrainHyper& h,
                            TrainState& st, MetricsLog& log) {
  std::vector<std::string> ids;
  std::vector<int64_t> sizes;
  for (const TaskSpec& spec : skills.tasks()) {
    auto it = data.find(spec.task_id);
    if (it == data.end())
      throw ContractError("no dataset for task '" + spec.task_id + "'");
    ids.push_back(spec.task_id);
    sizes.push_back(static_cast<int64_t>(it->second.train.size()));
  }
  const SamplingPlan plan = SamplingPlan::make(ids, sizes, h.alpha);

  while (st.step < h.stop_at()) {
    const size_t ti = sample_task(plan, st.sampler);
    const TaskSpec& spec = skills.spec(plan.task_ids[ti]);
    const TaskDataset& ds = data.at(spec.task_id);
    const std::vector<Example> examples =
        detail_train::next_examples(ds, st, h, h.batch_size);
    const Batch batch = make_batch(examples, spec, cfg.max_seq_len);
    log.add(train_step(store, cfg, skills, st, h, batch, spec, skills.active_skill_mask(spec.task_id)));
    if (h.eval_every > 0 && st.step % h.eval_every == 0)
      eval_all(store, cfg, skills, data, st.step, log);
  }
  if (h.eval_every <= 0 || st.step % h.eval_every != 0)
    eval_all(store, cfg, skills, data, st.step, log);
}

// ---------------------------------------------------------------------------
// Skill pre-training (masked-token + next-sentence objectives)
// ---------------------------------------------------------------------------

// Task specs used to build pre-training heads. Their routing rows carry the
// first language; the loop swaps the language bit per corpus.
inline std::vector<TaskSpec> pretrain_task_specs(const SkillTaxonomy& tax, int64_t vocab,
                                                 const std::string& first_language) {
  TaskSpec mlm;
  mlm.task_id = "mlm";
  mlm.task_type = TaskType::Mlm;
  mlm.language = first_language;
  mlm.num_classes = static_cast<int>(vocab);
  mlm.skills = {SkillId::task(1), SkillId::task(2), tax.language_skill(first_language)};
  TaskSpec nsp;
  nsp.task_id = "nsp";
  nsp.task_type = TaskType::Nsp;
  nsp.language = first_language;
  nsp.num_classes = 2;
  nsp.skills = {SkillId::task(1), SkillId::task(3), SkillId::task(4),
                tax.language_skill(first_language)};
  return {mlm, nsp};
}

// Replaces the language bit of `mask` with `language`'s column.
inline SkillMask mask_with_language(const SkillTaxonomy& tax, SkillMask mask,
                                    const std::string& language) {
  for (int l = 1; l <= tax.num_language_skills; ++l)
    mask[static_cast<size_t>(tax.column_of(SkillId::language(l)))] = 0;
  mask[static_cast<size_t>(tax.column_of(tax.language_skill(language)))] = 1;
  return mask;
}

// Alternates masked-token and next-sentence batches, cycling the provided
// corpora. Only the corpora's language skills (plus the objective task
// skills) ever receive gradient.
inline void skill_pretrain(ParameterStore& store, const ModelConfig& cfg,
                           const SkillMatrix& skills,
                           const std::vector<std::pair<std::string, std::vector<Document>>>& corpora,
                           const std::vector<LanguageSpec>& langs, const TrainHyper& h,
                           TrainState& st, MetricsLog& log) {
  if (corpora.empty()) throw ContractError("skill_pretrain: no corpora");
  for (const auto& [tag, docs] : corpora) {
    if (docs.empty()) throw ContractError("skill_pretrain: empty corpus for '" + tag + "'");
    (void)skills.taxonomy().language_skill(tag);  // unknown language fails here
  }
  const TaskSpec& mlm_spec = skills.spec("mlm");
  const TaskSpec& nsp_spec = skills.spec("nsp");
  while (st.step < h.stop_at()) {
    const size_t li = static_cast<size_t>((st.step / 2) % static_cast<int64_t>(corpora.size()));
    const auto& [tag, docs] = corpora[li];
    const LanguageSpec& lang = language_by_tag(langs, tag);
    const bool is_mlm = st.step % 2 == 0;
    const TaskSpec& spec = is_mlm ? mlm_spec : nsp_spec;
    const SkillMask mask =
        mask_with_language(skills.taxonomy(), skills.active_skill_mask(spec.task_id), tag);
    Rng& rng = st.data_rng((is_mlm ? "mlm:" : "nsp:") + tag, h.seed);
    const Batch batch =
        is_mlm ? make_mlm_batch(docs, lang, h.batch_size, cfg.max_seq_len, rng, "mlm")
               : make_nsp_batch(docs, h.batch_size, cfg.max_seq_len, rng, "nsp");
    log.add(train_step(store, cfg, skills, st, h, batch, spec, mask));
  }
}

// ---------------------------------------------------------------------------
// New-task adaptation: fine-tune the whole model on one task whose mask
// composes already-trained skills.
// ---------------------------------------------------------------------------

inline void adapt_new_task(ParameterStore& store, const ModelConfig& cfg,
                           const SkillMatrix& skills, const TaskSpec& new_spec,
                           const TaskDataset& dataset, const TrainHyper& h, TrainState& st,
                           MetricsLog& log) {
  for (const SkillId& s : new_spec.skills)
    (void)skills.taxonomy().column_of(s);  // unknown skill fails here
  const SkillMask mask = skills.active_skill_mask(new_spec.task_id);
  while (st.step < h.stop_at()) {
    const std::vector<Example> examples =
        detail_train::next_examples(dataset, st, h, h.batch_size);
    const Batch batch = make_batch(examples, new_spec, cfg.max_seq_len);
    log.add(train_step(store, cfg, skills, st, h, batch, new_spec, mask));
    if (h.eval_every > 0 && st.step % h.eval_every == 0) {
      EvalRecord er;
      er.step = st.step;
      er.task_id = new_spec.task_id;
      er.result = evaluate(store, cfg, skills, dataset.dev, new_spec, mask);
      log.add(er);
    }
  }
}

// ---------------------------------------------------------------------------
// Trainer state persistence
// ---------------------------------------------------------------------------

inline void save_train_state(const std::filesystem::path& dir, const TrainState& st) {
  std::vector<std::pair<std::string, Tensor>> tensors;
  for (const auto& [name, t] : st.m) tensors.emplace_back("m." + name, t);
  for (const auto& [name, t] : st.v) tensors.emplace_back("v." + name, t);
  save_tensors(dir / "state.bin", tensors);
  nlohmann::json j;
  j["step"] = st.step;
  j["counts"] = st.counts;
  j["sampler"] = st.sampler.serialize();
  j["dropout"] = st.dropout.serialize();
  nlohmann::json rngs = nlohmann::json::object();
  for (const auto& [k, r] : st.data_rngs) rngs[k] = r.serialize();
  j["data_rngs"] = rngs;
  j["orders"] = st.orders;
  nlohmann::json cursors = nlohmann::json::object();
  for (const auto& [k, c] : st.cursors) cursors[k] = c;
  j["cursors"] = cursors;
  std::ofstream os(dir / "state.json");
  if (!os) throw IoError("cannot write state.json in '" + dir.string() + "'");
  os << j.dump() << "\n";
}

inline TrainState load_train_state(const std::filesystem::path& dir) {
  std::ifstream is(dir / "state.json");
  if (!is) throw IoError("missing state.json in '" + dir.string() + "'");
  nlohmann::json j = nlohmann::json::parse(is);
  TrainState st;
  st.step = j.at("step").get<int64_t>();
  st.counts = j.at("counts").get<std::map<std::string, int64_t>>();
  st.sampler.deserialize(j.at("sampler").get<std::string>());
  st.dropout.deserialize(j.at("dropout").get<std::string>());
  for (const auto& [k, v] : j.at("data_rngs").items()) {
    Rng r;
    r.deserialize(v.get<std::string>());
    st.data_rngs.emplace(k, r);
  }
  st.orders = j.at("orders").get<std::map<std::string, std::vector<int>>>();
  for (const auto& [k, v] : j.at("cursors").items()) st.cursors[k] = v.get<size_t>();
  for (auto& [name, t] : load_tensors(dir / "state.bin")) {
    if (name.rfind("m.", 0) == 0)
      st.m.emplace(name.substr(2), std::move(t));
    else if (name.rfind("v.", 0) == 0)
      st.v.emplace(name.substr(2), std::move(t));
    else
      throw IoError("unexpected entry '" + name + "' in state.bin");
  }
  return st;
}

// Full checkpoint: manifest + parameters + trainer state.
inline void save_checkpoint(const std::filesystem::path& dir, const ParameterStore& store,
                            const CheckpointManifest& manifest,
                            const TrainState* state = nullptr) {
  std::filesystem::create_directories(dir);
  CheckpointManifest m = manifest;
  m.has_trainer_state = state != nullptr;
  save_manifest(dir, m);
  save_parameters(dir, store);
  if (state) save_train_state(dir, *state);
}

}  // namespace skillnet

#pragma once

// Evaluation metrics: accuracy, entity-level F1 over BIO tags, and span
// token-overlap F1 / exact match. All metrics are fractions in [0, 1];
// report layers multiply by 100 for presentation.

#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "skillnet/model.hpp"
#include "skillnet/synth.hpp"

namespace skillnet {

inline double accuracy(const std::vector<int>& predicted, const std::vector<int>& gold) {
  if (predicted.size() != gold.size() || gold.empty())
    throw ContractError("accuracy: size mismatch or empty inputs");
  size_t hits = 0;
  for (size_t i = 0; i < gold.size(); ++i) hits += predicted[i] == gold[i] ? 1u : 0u;
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

// (start, end, type), end inclusive.
using Entity = std::tuple<int, int, int>;

// Decodes BIO tag ids (0 = O, 1+2e = B of type e, 2+2e = I of type e) into
// entities. A stray I (after O, sequence start, or a different type) opens a
// new entity, following the usual conlleval repair.
inline std::vector<Entity> decode_bio(const std::vector<int>& tags) {
  std::vector<Entity> out;
  int start = -1, type = -1;
  auto close = [&](int end) {
    if (start >= 0) out.emplace_back(start, end, type);
    start = -1;
    type = -1;
  };
  for (size_t i = 0; i < tags.size(); ++i) {
    const int tag = tags[i];
    if (tag <= 0) {
      close(static_cast<int>(i) - 1);
      continue;
    }
    const int t = (tag - 1) / 2;
    const bool is_b = tag == 1 + 2 * t;
    if (is_b || t != type) {
      close(static_cast<int>(i) - 1);
      start = static_cast<int>(i);
      type = t;
    }
  }
  close(static_cast<int>(tags.size()) - 1);
  return out;
}

struct F1Counts {
  int64_t matched = 0, predicted = 0, gold = 0;

  void add(const std::vector<Entity>& pred, const std::vector<Entity>& ref) {
    const std::set<Entity> ref_set(ref.begin(), ref.end());
    for (const Entity& e : pred) matched += ref_set.count(e) ? 1 : 0;
    predicted += static_cast<int64_t>(pred.size());
    gold += static_cast<int64_t>(ref.size());
  }

  double precision() const { return predicted == 0 ? 0.0 : static_cast<double>(matched) / predicted; }
  double recall() const { return gold == 0 ? 0.0 : static_cast<double>(matched) / gold; }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }
};

// Token-overlap F1 between two inclusive spans.
inline double span_token_f1(std::pair<int, int> pred, std::pair<int, int> gold) {
  const int lo = std::max(pred.first, gold.first);
  const int hi = std::min(pred.second, gold.second);
  const int overlap = std::max(0, hi - lo + 1);
  if (overlap == 0) return 0.0;
  const double p = static_cast<double>(overlap) / (pred.second - pred.first + 1);
  const double r = static_cast<double>(overlap) / (gold.second - gold.first + 1);
  return 2.0 * p * r / (p + r);
}

struct EvalResult {
  double primary = 0.0;                    // accuracy or F1, in [0, 1]
  std::map<std::string, double> detail;    // precision/recall/em/... as applicable
};

// Evaluates a trained store on a dataset split under the task's routing mask.
inline EvalResult evaluate(const ParameterStore& store, const ModelConfig& cfg,
                           const SkillMatrix& skills, const std::vector<Example>& split,
                           const TaskSpec& spec, const SkillMask& mask, int batch_size = 32) {
  if (split.empty()) throw ContractError("evaluate: empty split for task '" + spec.task_id + "'");
  EvalResult res;
  switch (spec.task_type) {
    case TaskType::SequenceClassification:
    case TaskType::SequencePairClassification:
    case TaskType::Nsp: {
      std::vector<int> pred, gold;
      for (size_t at = 0; at < split.size(); at += static_cast<size_t>(batch_size)) {
        const size_t hi = std::min(split.size(), at + static_cast<size_t>(batch_size));
        const std::vector<Example> chunk(split.begin() + static_cast<std::ptrdiff_t>(at),
                                         split.begin() + static_cast<std::ptrdiff_t>(hi));
        Batch b = make_batch(chunk, spec, cfg.max_seq_len);
        Predictions p = predict(store, cfg, skills, b, spec, mask);
        pred.insert(pred.end(), p.class_ids.begin(), p.class_ids.end());
        for (const Example& ex : chunk) gold.push_back(ex.label);
      }
      res.primary = accuracy(pred, gold);
      res.detail["accuracy"] = res.primary;
      break;
    }
    case TaskType::TokenClassification: {
      F1Counts counts;
      for (size_t at = 0; at < split.size(); at += static_cast<size_t>(batch_size)) {
        const size_t hi = std::min(split.size(), at + static_cast<size_t>(batch_size));
        const std::vector<Example> chunk(split.begin() + static_cast<std::ptrdiff_t>(at),
                                         split.begin() + static_cast<std::ptrdiff_t>(hi));
        Batch b = make_batch(chunk, spec, cfg.max_seq_len);
        Predictions p = predict(store, cfg, skills, b, spec, mask);
        for (size_t e = 0; e < chunk.size(); ++e) {
          std::vector<int> pred_tags, gold_tags;
          const size_t base = e * static_cast<size_t>(cfg.max_seq_len);
          for (int64_t i = 0; i < cfg.max_seq_len; ++i) {
            if (b.tag_labels[base + static_cast<size_t>(i)] < 0) continue;
            pred_tags.push_back(p.tags[base + static_cast<size_t>(i)]);
            gold_tags.push_back(b.tag_labels[base + static_cast<size_t>(i)]);
          }
          counts.add(decode_bio(pred_tags), decode_bio(gold_tags));
        }
      }
      res.primary = counts.f1();
      res.detail["f1"] = counts.f1();
      res.detail["precision"] = counts.precision();
      res.detail["recall"] = counts.recall();
      break;
    }
    case TaskType::SpanExtraction: {
      double f1_sum = 0.0;
      int64_t exact = 0, total = 0;
      for (size_t at = 0; at < split.size(); at += static_cast<size_t>(batch_size)) {
        const size_t hi = std::min(split.size(), at + static_cast<size_t>(batch_size));
        const std::vector<Example> chunk(split.begin() + static_cast<std::ptrdiff_t>(at),
                                         split.begin() + static_cast<std::ptrdiff_t>(hi));
        Batch b = make_batch(chunk, spec, cfg.max_seq_len);
        Predictions p = predict(store, cfg, skills, b, spec, mask);
        for (size_t e = 0; e < chunk.size(); ++e) {
          const std::pair<int, int> gold{b.span_start[e], b.span_end[e]};
          f1_sum += span_token_f1(p.spans[e], gold);
          exact += p.spans[e] == gold ? 1 : 0;
          ++total;
        }
      }
      res.primary = f1_sum / static_cast<double>(total);
      res.detail["f1"] = res.primary;
      res.detail["exact_match"] = static_cast<double>(exact) / static_cast<double>(total);
      break;
    }
    case TaskType::Mlm:
      throw ContractError("evaluate: mlm has no dev-split evaluation");
  }
  return res;
}

// Unweighted mean of per-task primary metrics (mixed accuracy/F1 on purpose).
inline double macro_average(const std::vector<double>& per_task) {
  if (per_task.empty()) throw ContractError("macro_average: no tasks");
  double s = 0.0;
  for (double v : per_task) s += v;
  return s / static_cast<double>(per_task.size());
}

}  // namespace skillnet

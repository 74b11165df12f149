#pragma once

// Skill taxonomy, per-task skill assignments, the binary task-skill routing
// matrix, and inference-time mask perturbations.

#include <map>
#include <set>
#include <string>
#include <vector>

#include "skillnet/common.hpp"

namespace skillnet {

enum class SkillKind { TaskSkill, LanguageSkill };

struct SkillId {
  SkillKind kind;
  int index;  // 1-based within its kind

  bool operator==(const SkillId&) const = default;
  auto operator<=>(const SkillId&) const = default;

  static SkillId task(int i) { return {SkillKind::TaskSkill, i}; }
  static SkillId language(int i) { return {SkillKind::LanguageSkill, i}; }

  std::string name() const {
    return (kind == SkillKind::TaskSkill ? "t_s" : "l_s") + std::to_string(index);
  }

  // Inverse of name(): accepts "t_s<k>" and "l_s<k>".
  static SkillId from_name(const std::string& s) {
    if (s.size() < 4 || s.substr(1, 2) != "_s" || (s[0] != 't' && s[0] != 'l'))
      throw ConfigError("malformed skill name '" + s + "' (expected t_s<k> or l_s<k>)");
    int idx = 0;
    try {
      idx = std::stoi(s.substr(3));
    } catch (const std::exception&) {
      throw ConfigError("malformed skill index in '" + s + "'");
    }
    if (idx < 1) throw ConfigError("skill index must be >= 1 in '" + s + "'");
    return s[0] == 't' ? task(idx) : language(idx);
  }
};

// Names and counts are config-driven so new languages or skills need no code
// change. The default mirrors the ten-skill setup: six task skills, four
// language skills, with language tags en/zh/de/es bound to l_s1..l_s4.
struct SkillTaxonomy {
  int num_task_skills = 6;
  int num_language_skills = 4;
  std::map<std::string, int> language_index;  // language tag -> 1-based skill index

  static SkillTaxonomy default_taxonomy() {
    SkillTaxonomy t;
    t.language_index = {{"en", 1}, {"zh", 2}, {"de", 3}, {"es", 4}};
    return t;
  }

  int total_skills() const { return num_task_skills + num_language_skills; }

  // Column layout of the routing matrix: task skills first, then languages.
  int column_of(const SkillId& s) const {
    if (s.kind == SkillKind::TaskSkill) {
      if (s.index < 1 || s.index > num_task_skills)
        throw ConfigError("unknown task skill t_s" + std::to_string(s.index));
      return s.index - 1;
    }
    if (s.index < 1 || s.index > num_language_skills)
      throw ConfigError("unknown language skill l_s" + std::to_string(s.index));
    return num_task_skills + s.index - 1;
  }

  SkillId skill_at(int column) const {
    if (column < 0 || column >= total_skills())
      throw ConfigError("skill column " + std::to_string(column) + " out of range");
    if (column < num_task_skills) return SkillId::task(column + 1);
    return SkillId::language(column - num_task_skills + 1);
  }

  SkillId language_skill(const std::string& tag) const {
    auto it = language_index.find(tag);
    if (it == language_index.end()) throw ConfigError("no language skill bound to tag '" + tag + "'");
    return SkillId::language(it->second);
  }
};

enum class TaskType {
  SequencePairClassification,
  SequenceClassification,
  TokenClassification,
  SpanExtraction,
  Mlm,
  Nsp,
};

inline std::string task_type_name(TaskType t) {
  switch (t) {
    case TaskType::SequencePairClassification: return "pair_classification";
    case TaskType::SequenceClassification: return "classification";
    case TaskType::TokenClassification: return "token_classification";
    case TaskType::SpanExtraction: return "span_extraction";
    case TaskType::Mlm: return "mlm";
    case TaskType::Nsp: return "nsp";
  }
  throw ContractError("unreachable task type");
}

inline TaskType task_type_from_name(const std::string& s) {
  if (s == "pair_classification") return TaskType::SequencePairClassification;
  if (s == "classification") return TaskType::SequenceClassification;
  if (s == "token_classification") return TaskType::TokenClassification;
  if (s == "span_extraction") return TaskType::SpanExtraction;
  if (s == "mlm") return TaskType::Mlm;
  if (s == "nsp") return TaskType::Nsp;
  throw ConfigError("unknown task type '" + s + "'");
}

// num_classes is the size of each softmax the task head emits: the label-set
// size for classification, the tag-set size for token classification, and
// the sequence length for span extraction.
struct TaskSpec {
  std::string task_id;
  TaskType task_type = TaskType::SequenceClassification;
  std::string language;
  int num_classes = 2;
  std::set<SkillId> skills;

  void validate() const {
    int langs = 0, tasks = 0;
    for (const SkillId& s : skills) (s.kind == SkillKind::LanguageSkill ? langs : tasks)++;
    if (langs != 1)
      throw ConfigError("task '" + task_id + "': exactly one language skill required, got " +
                        std::to_string(langs));
    if (tasks < 1) throw ConfigError("task '" + task_id + "': at least one task skill required");
  }

  SkillId language_skill() const {
    for (const SkillId& s : skills)
      if (s.kind == SkillKind::LanguageSkill) return s;
    throw ContractError("task '" + task_id + "' has no language skill");
  }

  std::vector<int> task_skill_indices() const {
    std::vector<int> out;
    for (const SkillId& s : skills)
      if (s.kind == SkillKind::TaskSkill) out.push_back(s.index);
    return out;
  }
};

using SkillMask = std::vector<uint8_t>;  // one entry per taxonomy column, values 0/1

// Binary task->skill routing matrix. Row i is the activation indicator of
// tasks[i]; 1 activates the skill, 0 deactivates it.
class SkillMatrix {
 public:
  SkillMatrix(SkillTaxonomy taxonomy, std::vector<TaskSpec> tasks)
      : taxonomy_(std::move(taxonomy)), tasks_(std::move(tasks)) {
    std::set<std::string> seen;
    for (const TaskSpec& t : tasks_) {
      if (!seen.insert(t.task_id).second)
        throw ConfigError("duplicate task_id '" + t.task_id + "'");
      t.validate();
    }
    matrix_.reserve(tasks_.size());
    for (size_t i = 0; i < tasks_.size(); ++i) {
      SkillMask row(static_cast<size_t>(taxonomy_.total_skills()), 0);
      for (const SkillId& s : tasks_[i].skills) row[static_cast<size_t>(taxonomy_.column_of(s))] = 1;
      matrix_.push_back(std::move(row));
      row_index_[tasks_[i].task_id] = i;
    }
  }

  const SkillTaxonomy& taxonomy() const { return taxonomy_; }
  const std::vector<TaskSpec>& tasks() const { return tasks_; }
  const std::vector<SkillMask>& matrix() const { return matrix_; }

  const TaskSpec& spec(const std::string& task_id) const {
    return tasks_[row_of(task_id)];
  }

  size_t row_of(const std::string& task_id) const {
    auto it = row_index_.find(task_id);
    if (it == row_index_.end()) throw ConfigError("unknown task_id '" + task_id + "'");
    return it->second;
  }

  // The row of the matrix for this task.
  SkillMask active_skill_mask(const std::string& task_id) const {
    return matrix_[row_of(task_id)];
  }

  // Split view used by the FFN-MHA variant: which task-skill bank members
  // are on, and which single language skill drives the attention projections.
  std::vector<uint8_t> task_skill_submask(const SkillMask& mask) const {
    return {mask.begin(), mask.begin() + taxonomy_.num_task_skills};
  }

  SkillId language_of_mask(const SkillMask& mask) const {
    int found = -1;
    for (int i = 0; i < taxonomy_.num_language_skills; ++i) {
      if (mask[static_cast<size_t>(taxonomy_.num_task_skills + i)]) {
        if (found != -1) throw ContractError("mask activates more than one language skill");
        found = i + 1;
      }
    }
    if (found == -1) throw ContractError("mask activates no language skill");
    return SkillId::language(found);
  }

 private:
  SkillTaxonomy taxonomy_;
  std::vector<TaskSpec> tasks_;
  std::vector<SkillMask> matrix_;
  std::map<std::string, size_t> row_index_;
};

inline SkillMatrix build_skill_matrix(SkillTaxonomy taxonomy, std::vector<TaskSpec> specs) {
  return SkillMatrix(std::move(taxonomy), std::move(specs));
}

// ---------------------------------------------------------------------------
// Inference-time skill perturbations
// ---------------------------------------------------------------------------

struct Perturbation {
  enum class Kind { Identity, LanguageSwap, AllTaskSkills, RandomTaskSkills };
  Kind kind = Kind::Identity;
  SkillId swap_language = SkillId::language(1);  // LanguageSwap target
  double probability = 0.5;                      // RandomTaskSkills activation rate
  uint64_t seed = 0;                             // RandomTaskSkills stream

  static Perturbation identity() { return {}; }
  static Perturbation language_swap(SkillId lang) {
    return {Kind::LanguageSwap, lang, 0.5, 0};
  }
  static Perturbation all_task_skills() {
    return {Kind::AllTaskSkills, SkillId::language(1), 0.5, 0};
  }
  static Perturbation random_task_skills(uint64_t seed, double p = 0.5) {
    return {Kind::RandomTaskSkills, SkillId::language(1), p, seed};
  }

  std::string label() const {
    switch (kind) {
      case Kind::Identity: return "identity";
      case Kind::LanguageSwap: return "lang_swap:" + swap_language.name();
      case Kind::AllTaskSkills: return "all_task_skills";
      case Kind::RandomTaskSkills: return "random_task_skills:seed=" + std::to_string(seed);
    }
    throw ContractError("unreachable perturbation kind");
  }
};

// Applies a perturbation to the task's routing row. LanguageSwap replaces
// only the language component; AllTaskSkills turns every task-skill bit on;
// RandomTaskSkills draws each task-skill bit Bernoulli(p) from the given
// seed, redrawing on the all-zero outcome (mean-pooling over an empty set is
// undefined). `redraws`, when non-null, reports how many all-zero draws were
// rejected.
inline SkillMask perturbed_mask(const SkillMatrix& m, const std::string& task_id,
                                const Perturbation& p, int* redraws = nullptr) {
  SkillMask mask = m.active_skill_mask(task_id);
  const SkillTaxonomy& tax = m.taxonomy();
  if (redraws) *redraws = 0;
  switch (p.kind) {
    case Perturbation::Kind::Identity:
      return mask;
    case Perturbation::Kind::LanguageSwap: {
      if (p.swap_language.kind != SkillKind::LanguageSkill)
        throw ContractError("language swap target must be a language skill");
      for (int i = 0; i < tax.num_language_skills; ++i)
        mask[static_cast<size_t>(tax.num_task_skills + i)] = 0;
      mask[static_cast<size_t>(tax.column_of(p.swap_language))] = 1;
      return mask;
    }
    case Perturbation::Kind::AllTaskSkills: {
      for (int i = 0; i < tax.num_task_skills; ++i) mask[static_cast<size_t>(i)] = 1;
      return mask;
    }
    case Perturbation::Kind::RandomTaskSkills: {
      Rng rng(p.seed);
      while (true) {
        int active = 0;
        for (int i = 0; i < tax.num_task_skills; ++i) {
          mask[static_cast<size_t>(i)] = rng.bernoulli(p.probability) ? 1 : 0;
          active += mask[static_cast<size_t>(i)];
        }
        if (active > 0) break;
        if (redraws) ++(*redraws);
      }
      return mask;
    }
  }
  throw ContractError("unreachable perturbation kind");
}

}  // namespace skillnet

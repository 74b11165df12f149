#pragma once

// Experiment configuration and the three analysis suites (skill
// perturbation, sampling-temperature sweep, new-task adaptation). Configs
// round-trip through JSON with unknown-key rejection, and every emitted
// report carries the config hash and library version so each number is
// traceable to the exact inputs that produced it.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "skillnet/metrics.hpp"
#include "skillnet/model.hpp"
#include "skillnet/svg_plot.hpp"
#include "skillnet/synth.hpp"
#include "skillnet/trainer.hpp"

namespace skillnet {

namespace detail_cfg {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                       const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key))
      throw ConfigError(where + ": unknown key '" + key + "' (config drift?)");
}

template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace detail_cfg

// One synthetic task: its family, language, label space, data sizes, and the
// skills its routing row activates.
struct TaskConfig {
  std::string task_id;
  TaskType type = TaskType::SequenceClassification;
  std::string language = "en";
  int num_classes = 0;  // 0 for span tasks (head emits positions, not classes)
  int train_size = 0;
  int dev_size = 0;
  std::vector<std::string> skills;

  nlohmann::json to_json() const {
    return {{"task_id", task_id},       {"type", task_type_name(type)},
            {"language", language},     {"num_classes", num_classes},
            {"train_size", train_size}, {"dev_size", dev_size},
            {"skills", skills}};
  }

  static TaskConfig from_json(const nlohmann::json& j, const std::string& where) {
    detail_cfg::check_keys(
        j, {"task_id", "type", "language", "num_classes", "train_size", "dev_size", "skills"},
        where);
    TaskConfig t;
    t.task_id = j.at("task_id").get<std::string>();
    t.type = task_type_from_name(j.at("type").get<std::string>());
    t.language = j.at("language").get<std::string>();
    t.num_classes = detail_cfg::get_or<int>(j, "num_classes", 0);
    t.train_size = j.at("train_size").get<int>();
    t.dev_size = j.at("dev_size").get<int>();
    t.skills = j.at("skills").get<std::vector<std::string>>();
    return t;
  }
};

struct PretrainConfig {
  int64_t max_steps = 400;
  int batch_size = 8;
  double lr = 3e-3;
  int num_docs = 150;
  std::vector<std::string> languages = {"en", "zh", "de", "es"};
};

struct SweepConfig {
  std::vector<double> alphas = {0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<std::string> variants = {"dense", "skill-ffn", "skill-ffn-mha"};
  int64_t max_steps = 1200;
};

struct AdaptConfig {
  std::vector<int> data_sizes = {500, 1000, 2000};
  std::vector<int64_t> step_budgets = {100, 200, 300, 500, 800, 1000};
  double threshold = 0.90;  // dev metric declared "reached"
  double lr = 3e-3;
  int batch_size = 8;
  std::vector<uint64_t> seeds = {1, 2, 3};
  bool include_joint_baseline = false;
  int64_t joint_steps = 1200;
};

struct PerturbConfig {
  std::vector<std::string> tasks;           // subset to evaluate (default: all)
  std::vector<std::string> perturbations =  // parsed by perturbation_from_label
      {"identity", "lang_swap:l_s2", "all_task_skills", "random_task_skills:seed=11",
       "random_task_skills:seed=12", "random_task_skills:seed=13"};
};

struct ExperimentConfig {
  ModelConfig model;
  std::vector<std::string> language_tags = {"en", "zh", "de", "es"};
  int tokens_per_language = 64;
  double zipf_s = 1.1;
  int min_sentence_len = 4;
  int max_sentence_len = 10;
  uint64_t data_seed = 7;
  std::vector<TaskConfig> tasks;
  std::vector<TaskConfig> new_tasks;
  TrainHyper train;
  std::vector<uint64_t> seeds = {1, 2, 3};
  PretrainConfig pretrain;
  SweepConfig sweep;
  AdaptConfig adapt;
  PerturbConfig perturb;

  std::vector<LanguageSpec> languages() const {
    std::vector<LanguageSpec> out;
    for (size_t i = 0; i < language_tags.size(); ++i) {
      LanguageSpec l;
      l.tag = language_tags[i];
      l.begin = kNumSpecials + static_cast<int>(i) * tokens_per_language;
      l.end = l.begin + tokens_per_language;
      l.zipf_s = zipf_s;
      l.min_sentence_len = min_sentence_len;
      l.max_sentence_len = max_sentence_len;
      l.seed = 1000 + static_cast<uint64_t>(i);
      l.validate();
      out.push_back(l);
    }
    return out;
  }

  SkillTaxonomy taxonomy() const {
    SkillTaxonomy t;
    t.num_task_skills = model.taxonomy.num_task_skills;
    t.num_language_skills = static_cast<int>(language_tags.size());
    for (size_t i = 0; i < language_tags.size(); ++i)
      t.language_index[language_tags[i]] = static_cast<int>(i) + 1;
    return t;
  }

  TaskSpec task_spec(const TaskConfig& t) const {
    TaskSpec spec;
    spec.task_id = t.task_id;
    spec.task_type = t.type;
    spec.language = t.language;
    spec.num_classes =
        t.type == TaskType::SpanExtraction ? static_cast<int>(model.max_seq_len) : t.num_classes;
    for (const std::string& s : t.skills) spec.skills.insert(SkillId::from_name(s));
    return spec;
  }

  // Routing matrix over the given task configs (defaults to the main tasks).
  SkillMatrix skill_matrix(bool with_new_tasks = false) const {
    std::vector<TaskSpec> specs;
    for (const TaskConfig& t : tasks) specs.push_back(task_spec(t));
    if (with_new_tasks)
      for (const TaskConfig& t : new_tasks) specs.push_back(task_spec(t));
    return build_skill_matrix(taxonomy(), specs);
  }

  SkillMatrix pretrain_matrix() const {
    if (pretrain.languages.empty()) throw ConfigError("pretrain.languages is empty");
    return build_skill_matrix(
        taxonomy(), pretrain_task_specs(taxonomy(), model.vocab, pretrain.languages.front()));
  }

  ModelConfig model_config() const {
    ModelConfig m = model;
    m.vocab = kNumSpecials + static_cast<int64_t>(language_tags.size()) * tokens_per_language;
    m.taxonomy = taxonomy();
    m.validate();
    return m;
  }

  TaskDataset dataset_for(const TaskConfig& t) const {
    const std::vector<LanguageSpec> langs = languages();
    return generate_task_dataset(t.type, language_by_tag(langs, t.language), t.task_id,
                                 t.num_classes == 0 ? 2 : t.num_classes,
                                 {t.train_size, t.dev_size}, mix_seeds(data_seed, fnv1a64(t.task_id)));
  }

  std::map<std::string, TaskDataset> build_datasets(bool with_new_tasks = false) const {
    std::map<std::string, TaskDataset> out;
    for (const TaskConfig& t : tasks) out.emplace(t.task_id, dataset_for(t));
    if (with_new_tasks)
      for (const TaskConfig& t : new_tasks) out.emplace(t.task_id, dataset_for(t));
    return out;
  }

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);

  std::string config_hash() const { return hex64(fnv1a64(to_json().dump())); }

  void validate() const {
    model_config();
    const SkillTaxonomy tax = taxonomy();
    if (tasks.empty()) throw ConfigError("no tasks configured");
    for (const TaskConfig& t : tasks) {
      task_spec(t).validate();
      for (const std::string& s : t.skills) (void)tax.column_of(SkillId::from_name(s));
      (void)language_by_tag(languages(), t.language);
    }
    for (const TaskConfig& t : new_tasks) task_spec(t).validate();
    for (const std::string& tag : pretrain.languages) (void)tax.language_skill(tag);
    for (const std::string& id : perturb.tasks) {
      bool found = false;
      for (const TaskConfig& t : tasks) found = found || t.task_id == id;
      if (!found) throw ConfigError("perturb.tasks references unknown task '" + id + "'");
    }
  }
};

inline nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["model"] = {{"variant", variant_name(model.variant)}, {"layers", model.layers},
                {"hidden", model.hidden},                 {"intermediate", model.intermediate},
                {"heads", model.heads},                   {"max_seq_len", model.max_seq_len},
                {"dropout", model.dropout},               {"init_stddev", model.init_stddev},
                {"task_skills", model.taxonomy.num_task_skills}};
  j["languages"] = {{"tags", language_tags},
                    {"tokens_per_language", tokens_per_language},
                    {"zipf_s", zipf_s},
                    {"min_sentence_len", min_sentence_len},
                    {"max_sentence_len", max_sentence_len}};
  j["data_seed"] = data_seed;
  j["tasks"] = nlohmann::json::array();
  for (const TaskConfig& t : tasks) j["tasks"].push_back(t.to_json());
  j["new_tasks"] = nlohmann::json::array();
  for (const TaskConfig& t : new_tasks) j["new_tasks"].push_back(t.to_json());
  j["train"] = {{"alpha", train.alpha},         {"lr", train.lr},
                {"batch_size", train.batch_size}, {"max_steps", train.max_steps},
                {"eval_every", train.eval_every}, {"seeds", seeds}};
  j["pretrain"] = {{"max_steps", pretrain.max_steps},
                   {"batch_size", pretrain.batch_size},
                   {"lr", pretrain.lr},
                   {"num_docs", pretrain.num_docs},
                   {"languages", pretrain.languages}};
  j["sweep"] = {{"alphas", sweep.alphas}, {"variants", sweep.variants},
                {"max_steps", sweep.max_steps}};
  j["adapt"] = {{"data_sizes", adapt.data_sizes},
                {"step_budgets", adapt.step_budgets},
                {"threshold", adapt.threshold},
                {"lr", adapt.lr},
                {"batch_size", adapt.batch_size},
                {"seeds", adapt.seeds},
                {"include_joint_baseline", adapt.include_joint_baseline},
                {"joint_steps", adapt.joint_steps}};
  j["perturb"] = {{"tasks", perturb.tasks}, {"perturbations", perturb.perturbations}};
  return j;
}

inline ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  using detail_cfg::check_keys;
  using detail_cfg::get_or;
  check_keys(j,
             {"model", "languages", "data_seed", "tasks", "new_tasks", "train", "pretrain",
              "sweep", "adapt", "perturb"},
             "config");
  ExperimentConfig c;
  if (j.contains("model")) {
    const auto& m = j.at("model");
    check_keys(m,
               {"variant", "layers", "hidden", "intermediate", "heads", "max_seq_len", "dropout",
                "init_stddev", "task_skills"},
               "model");
    c.model.variant = variant_from_name(get_or<std::string>(m, "variant", "skill-ffn-mha"));
    c.model.layers = get_or<int64_t>(m, "layers", c.model.layers);
    c.model.hidden = get_or<int64_t>(m, "hidden", c.model.hidden);
    c.model.intermediate = get_or<int64_t>(m, "intermediate", c.model.intermediate);
    c.model.heads = get_or<int64_t>(m, "heads", c.model.heads);
    c.model.max_seq_len = get_or<int64_t>(m, "max_seq_len", c.model.max_seq_len);
    c.model.dropout = get_or<double>(m, "dropout", c.model.dropout);
    c.model.init_stddev = get_or<double>(m, "init_stddev", c.model.init_stddev);
    c.model.taxonomy.num_task_skills =
        get_or<int>(m, "task_skills", c.model.taxonomy.num_task_skills);
  }
  if (j.contains("languages")) {
    const auto& l = j.at("languages");
    check_keys(l, {"tags", "tokens_per_language", "zipf_s", "min_sentence_len", "max_sentence_len"},
               "languages");
    c.language_tags = get_or<std::vector<std::string>>(l, "tags", c.language_tags);
    c.tokens_per_language = get_or<int>(l, "tokens_per_language", c.tokens_per_language);
    c.zipf_s = get_or<double>(l, "zipf_s", c.zipf_s);
    c.min_sentence_len = get_or<int>(l, "min_sentence_len", c.min_sentence_len);
    c.max_sentence_len = get_or<int>(l, "max_sentence_len", c.max_sentence_len);
  }
  c.data_seed = get_or<uint64_t>(j, "data_seed", c.data_seed);
  if (j.contains("tasks"))
    for (size_t i = 0; i < j.at("tasks").size(); ++i)
      c.tasks.push_back(TaskConfig::from_json(j.at("tasks")[i], "tasks[" + std::to_string(i) + "]"));
  if (j.contains("new_tasks"))
    for (size_t i = 0; i < j.at("new_tasks").size(); ++i)
      c.new_tasks.push_back(
          TaskConfig::from_json(j.at("new_tasks")[i], "new_tasks[" + std::to_string(i) + "]"));
  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t, {"alpha", "lr", "batch_size", "max_steps", "eval_every", "seeds"}, "train");
    c.train.alpha = get_or<double>(t, "alpha", c.train.alpha);
    c.train.lr = get_or<double>(t, "lr", c.train.lr);
    c.train.batch_size = get_or<int>(t, "batch_size", c.train.batch_size);
    c.train.max_steps = get_or<int64_t>(t, "max_steps", c.train.max_steps);
    c.train.eval_every = get_or<int64_t>(t, "eval_every", c.train.eval_every);
    c.seeds = get_or<std::vector<uint64_t>>(t, "seeds", c.seeds);
  }
  if (j.contains("pretrain")) {
    const auto& p = j.at("pretrain");
    check_keys(p, {"max_steps", "batch_size", "lr", "num_docs", "languages"}, "pretrain");
    c.pretrain.max_steps = get_or<int64_t>(p, "max_steps", c.pretrain.max_steps);
    c.pretrain.batch_size = get_or<int>(p, "batch_size", c.pretrain.batch_size);
    c.pretrain.lr = get_or<double>(p, "lr", c.pretrain.lr);
    c.pretrain.num_docs = get_or<int>(p, "num_docs", c.pretrain.num_docs);
    c.pretrain.languages = get_or<std::vector<std::string>>(p, "languages", c.pretrain.languages);
  }
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    check_keys(s, {"alphas", "variants", "max_steps"}, "sweep");
    c.sweep.alphas = get_or<std::vector<double>>(s, "alphas", c.sweep.alphas);
    c.sweep.variants = get_or<std::vector<std::string>>(s, "variants", c.sweep.variants);
    c.sweep.max_steps = get_or<int64_t>(s, "max_steps", c.sweep.max_steps);
  }
  if (j.contains("adapt")) {
    const auto& a = j.at("adapt");
    check_keys(a,
               {"data_sizes", "step_budgets", "threshold", "lr", "batch_size", "seeds",
                "include_joint_baseline", "joint_steps"},
               "adapt");
    c.adapt.data_sizes = get_or<std::vector<int>>(a, "data_sizes", c.adapt.data_sizes);
    c.adapt.step_budgets = get_or<std::vector<int64_t>>(a, "step_budgets", c.adapt.step_budgets);
    c.adapt.threshold = get_or<double>(a, "threshold", c.adapt.threshold);
    c.adapt.lr = get_or<double>(a, "lr", c.adapt.lr);
    c.adapt.batch_size = get_or<int>(a, "batch_size", c.adapt.batch_size);
    c.adapt.seeds = get_or<std::vector<uint64_t>>(a, "seeds", c.adapt.seeds);
    c.adapt.include_joint_baseline =
        get_or<bool>(a, "include_joint_baseline", c.adapt.include_joint_baseline);
    c.adapt.joint_steps = get_or<int64_t>(a, "joint_steps", c.adapt.joint_steps);
  }
  if (j.contains("perturb")) {
    const auto& p = j.at("perturb");
    check_keys(p, {"tasks", "perturbations"}, "perturb");
    c.perturb.tasks = get_or<std::vector<std::string>>(p, "tasks", c.perturb.tasks);
    c.perturb.perturbations =
        get_or<std::vector<std::string>>(p, "perturbations", c.perturb.perturbations);
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

// The stock desk-scale experiment: eleven tasks across four languages whose
// families, class counts, routing rows, and ~100x-scaled data sizes mirror
// the reference multitask setup.
inline ExperimentConfig default_experiment_config() {
  ExperimentConfig c;
  auto task = [](std::string id, TaskType type, std::string lang, int classes, int train,
                 std::vector<std::string> skills) {
    TaskConfig t;
    t.task_id = std::move(id);
    t.type = type;
    t.language = std::move(lang);
    t.num_classes = classes;
    t.train_size = train;
    t.dev_size = 200;
    t.skills = std::move(skills);
    return t;
  };
  using TT = TaskType;
  c.tasks = {
      task("pair3_en", TT::SequencePairClassification, "en", 3, 3930, {"t_s1", "t_s3", "t_s4", "l_s1"}),
      task("pair2_en", TT::SequencePairClassification, "en", 2, 1050, {"t_s1", "t_s3", "t_s4", "t_s6", "l_s1"}),
      task("cls2_en", TT::SequenceClassification, "en", 2, 673, {"t_s1", "t_s3", "t_s5", "l_s1"}),
      task("span_en", TT::SpanExtraction, "en", 0, 115, {"t_s1", "t_s2", "t_s4", "t_s6", "l_s1"}),
      task("ner_en", TT::TokenClassification, "en", 5, 140, {"t_s1", "t_s2", "l_s1"}),
      task("pair3_zh", TT::SequencePairClassification, "zh", 3, 500, {"t_s1", "t_s3", "l_s2"}),
      task("cls5_zh", TT::SequenceClassification, "zh", 5, 530, {"t_s1", "t_s3", "l_s2"}),
      task("cls5_de", TT::SequenceClassification, "de", 5, 2000, {"t_s1", "t_s3", "l_s3"}),
      task("ner_de", TT::TokenClassification, "de", 5, 200, {"t_s1", "t_s2", "l_s3"}),
      task("cls5_es", TT::SequenceClassification, "es", 5, 2000, {"t_s1", "t_s3", "l_s4"}),
      task("span_es", TT::SpanExtraction, "es", 0, 880, {"t_s1", "t_s2", "t_s4", "t_s6", "l_s4"}),
  };
  c.new_tasks = {
      task("pair2_en_new", TT::SequencePairClassification, "en", 2, 2000, {"t_s1", "t_s3", "t_s4", "l_s1"}),
      task("ner_es_new", TT::TokenClassification, "es", 5, 2000, {"t_s1", "t_s2", "l_s4"}),
  };
  c.train.alpha = 0.4;
  // The skill-bank variants average up to five members, which scales each
  // member's gradient by 1/N; 3e-3 is stable for the dense variant but can
  // strand the bank variants in a bad basin on some seeds.
  c.train.lr = 2e-3;
  c.train.batch_size = 8;
  c.train.max_steps = 5000;
  c.train.eval_every = 1000;
  c.perturb.tasks = {"pair3_en", "pair2_en", "cls2_en", "span_en", "ner_en"};
  c.validate();
  return c;
}

// Inverse of Perturbation::label().
inline Perturbation perturbation_from_label(const std::string& label) {
  if (label == "identity") return Perturbation::identity();
  if (label == "all_task_skills") return Perturbation::all_task_skills();
  if (label.rfind("lang_swap:", 0) == 0)
    return Perturbation::language_swap(SkillId::from_name(label.substr(10)));
  const std::string rts = "random_task_skills:seed=";
  if (label.rfind(rts, 0) == 0) {
    try {
      return Perturbation::random_task_skills(std::stoull(label.substr(rts.size())));
    } catch (const std::exception&) {
      throw ConfigError("malformed perturbation seed in '" + label + "'");
    }
  }
  throw ConfigError("unknown perturbation '" + label + "'");
}

// ---------------------------------------------------------------------------
// Perturbation suite: evaluate dev metrics with masks perturbed at inference.
// ---------------------------------------------------------------------------

struct PerturbationReport {
  struct Row {
    std::string label;
    std::map<std::string, double> per_task;  // primary metric, [0,1]
    std::map<std::string, SkillMask> masks;  // mask actually used per task
    double macro = 0.0;
    double delta = 0.0;  // macro minus baseline macro
  };
  std::map<std::string, double> baseline_per_task;
  double baseline_macro = 0.0;
  std::vector<Row> rows;

  nlohmann::json to_json(const std::string& config_hash) const {
    nlohmann::json rs = nlohmann::json::array();
    for (const Row& r : rows) {
      nlohmann::json masks = nlohmann::json::object();
      for (const auto& [task, m] : r.masks) masks[task] = m;
      rs.push_back({{"perturbation", r.label},
                    {"per_task", r.per_task},
                    {"masks", masks},
                    {"macro", r.macro},
                    {"delta", r.delta}});
    }
    return {{"library_version", kVersion},
            {"config_hash", config_hash},
            {"baseline", {{"per_task", baseline_per_task}, {"macro", baseline_macro}}},
            {"rows", rs}};
  }
};

inline PerturbationReport run_perturbation_suite(
    const ParameterStore& store, const ModelConfig& cfg, const SkillMatrix& skills,
    const std::map<std::string, TaskDataset>& data, const std::vector<std::string>& task_ids,
    const std::vector<Perturbation>& perturbations) {
  if (task_ids.empty()) throw ContractError("perturbation suite: no tasks");
  PerturbationReport report;
  std::vector<double> base;
  for (const std::string& id : task_ids) {
    const TaskSpec& spec = skills.spec(id);
    const EvalResult r = evaluate(store, cfg, skills, data.at(id).dev, spec,
                                  skills.active_skill_mask(id));
    report.baseline_per_task[id] = r.primary;
    base.push_back(r.primary);
  }
  report.baseline_macro = macro_average(base);
  for (const Perturbation& p : perturbations) {
    PerturbationReport::Row row;
    row.label = p.label();
    std::vector<double> scores;
    for (const std::string& id : task_ids) {
      const TaskSpec& spec = skills.spec(id);
      const SkillMask mask = perturbed_mask(skills, id, p);
      const EvalResult r = evaluate(store, cfg, skills, data.at(id).dev, spec, mask);
      row.per_task[id] = r.primary;
      row.masks[id] = mask;
      scores.push_back(r.primary);
    }
    row.macro = macro_average(scores);
    row.delta = row.macro - report.baseline_macro;
    report.rows.push_back(std::move(row));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Sampling-temperature sweep: one full training run per (variant, alpha).
// ---------------------------------------------------------------------------

struct SweepCell {
  std::string variant;
  double alpha = 0.0;
  double macro = 0.0;
  std::map<std::string, double> per_task;
};

inline nlohmann::json sweep_table_json(const std::vector<SweepCell>& cells,
                                       const std::string& config_hash) {
  nlohmann::json rows = nlohmann::json::array();
  for (const SweepCell& c : cells)
    rows.push_back({{"variant", c.variant}, {"alpha", c.alpha}, {"macro", c.macro},
                    {"per_task", c.per_task}});
  return {{"library_version", kVersion}, {"config_hash", config_hash}, {"rows", rows}};
}

// Extracts the last eval record per task and macro-averages the primaries.
inline SweepCell summarize_final_evals(const MetricsLog& log, const std::string& variant,
                                       double alpha) {
  SweepCell cell;
  cell.variant = variant;
  cell.alpha = alpha;
  std::map<std::string, double> last;
  for (const EvalRecord& e : log.evals) last[e.task_id] = e.result.primary;
  if (last.empty()) throw ContractError("no eval records logged");
  std::vector<double> vals;
  for (const auto& [task, v] : last) {
    cell.per_task[task] = v;
    vals.push_back(v);
  }
  cell.macro = macro_average(vals);
  return cell;
}

inline std::vector<SweepCell> run_alpha_sweep(const ExperimentConfig& cfg, uint64_t seed,
                                              MetricsLog* trace = nullptr) {
  const SkillMatrix skills = cfg.skill_matrix();
  const std::map<std::string, TaskDataset> data = cfg.build_datasets();
  std::vector<SweepCell> cells;
  for (const std::string& vname : cfg.sweep.variants) {
    for (double alpha : cfg.sweep.alphas) {
      ModelConfig mc = cfg.model_config();
      mc.variant = variant_from_name(vname);
      ParameterStore store = build_model(mc, skills, mix_seeds(seed, fnv1a64(vname)));
      TrainHyper h = cfg.train;
      h.alpha = alpha;
      h.max_steps = cfg.sweep.max_steps;
      h.eval_every = 0;  // final evaluation only
      h.seed = mix_seeds(seed, fnv1a64(vname + "@a"));
      TrainState st = TrainState::init(h.seed);
      MetricsLog log;
      multitask_train(store, mc, skills, data, h, st, log);
      cells.push_back(summarize_final_evals(log, vname, alpha));
      if (trace)
        for (const EvalRecord& e : log.evals) trace->add(e);
    }
  }
  return cells;
}

inline void write_sweep_outputs(const std::filesystem::path& dir,
                                const std::vector<SweepCell>& cells,
                                const std::string& config_hash) {
  std::filesystem::create_directories(dir);
  std::ofstream os(dir / "sweep_alpha.json");
  if (!os) throw IoError("cannot write sweep_alpha.json");
  os << sweep_table_json(cells, config_hash).dump(2) << "\n";
  std::map<std::string, PlotSeries> by_variant;
  for (const SweepCell& c : cells) {
    PlotSeries& s = by_variant[c.variant];
    s.label = c.variant;
    s.points.emplace_back(c.alpha, 100.0 * c.macro);
  }
  std::vector<PlotSeries> series;
  for (auto& [_, s] : by_variant) series.push_back(std::move(s));
  write_line_plot(dir / "sweep_alpha.svg", "Macro-average vs sampling temperature",
                  "alpha", "macro-average (x100)", series);
}

// ---------------------------------------------------------------------------
// New-task suite: adaptation vs from-init (and optionally dense joint).
// ---------------------------------------------------------------------------

struct AdaptCurve {
  std::string task_id;
  std::string setting;  // "adapted" | "scratch" | "dense-joint"
  int data_size = 0;
  uint64_t seed = 0;
  std::vector<std::pair<int64_t, double>> curve;  // (step budget, dev metric)
  int64_t first_crossing = -1;                    // -1: threshold never reached

  nlohmann::json to_json() const {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& [s, v] : curve) pts.push_back({{"step", s}, {"metric", v}});
    return {{"task_id", task_id}, {"setting", setting},   {"data_size", data_size},
            {"seed", seed},       {"first_crossing", first_crossing}, {"curve", pts}};
  }
};

inline TaskDataset truncate_train(const TaskDataset& ds, int train_size) {
  TaskDataset out = ds;
  if (train_size < static_cast<int>(out.train.size()))
    out.train.resize(static_cast<size_t>(train_size));
  return out;
}

inline int64_t first_crossing(const std::vector<std::pair<int64_t, double>>& curve,
                              double threshold) {
  for (const auto& [step, v] : curve)
    if (v >= threshold) return step;
  return -1;
}

namespace detail_adapt {

// Trains on a single task and reads the dev metric at each step budget.
inline AdaptCurve run_single(ParameterStore store, const ModelConfig& mc, const SkillMatrix& skills,
                             const TaskSpec& spec, const TaskDataset& ds,
                             const ExperimentConfig& cfg, uint64_t seed,
                             const std::string& setting, int data_size) {
  TrainHyper h;
  h.lr = cfg.adapt.lr;
  h.batch_size = cfg.adapt.batch_size;
  h.max_steps = *std::max_element(cfg.adapt.step_budgets.begin(), cfg.adapt.step_budgets.end());
  h.alpha = 0.0;
  h.eval_every = 0;
  h.seed = seed;
  TrainState st = TrainState::init(seed);
  MetricsLog log;
  AdaptCurve out;
  out.task_id = spec.task_id;
  out.setting = setting;
  out.data_size = data_size;
  out.seed = seed;
  const SkillMask mask = skills.active_skill_mask(spec.task_id);
  std::set<int64_t> budgets(cfg.adapt.step_budgets.begin(), cfg.adapt.step_budgets.end());
  while (st.step < h.max_steps) {
    const std::vector<Example> examples =
        detail_train::next_examples(ds, st, h, h.batch_size);
    const Batch batch = make_batch(examples, spec, mc.max_seq_len);
    log.add(train_step(store, mc, skills, st, h, batch, spec, mask));
    if (budgets.count(st.step)) {
      const EvalResult r = evaluate(store, mc, skills, ds.dev, spec, mask);
      out.curve.emplace_back(st.step, r.primary);
    }
  }
  out.first_crossing = first_crossing(out.curve, cfg.adapt.threshold);
  return out;
}

}  // namespace detail_adapt

// For every (new task, data size, seed): adapt the trained store and train an
// identical architecture from init; optionally add a dense joint-training
// baseline per task at full data.
inline std::vector<AdaptCurve> run_new_task_suite(const ParameterStore& trained,
                                                  const ExperimentConfig& cfg, uint64_t seed) {
  if (cfg.new_tasks.empty()) throw ContractError("no new tasks configured");
  const ModelConfig mc = cfg.model_config();
  const SkillMatrix with_new = cfg.skill_matrix(/*with_new_tasks=*/true);
  std::vector<AdaptCurve> out;
  for (const TaskConfig& t : cfg.new_tasks) {
    const TaskSpec spec = cfg.task_spec(t);
    const TaskDataset full = cfg.dataset_for(t);
    for (int size : cfg.adapt.data_sizes) {
      const TaskDataset ds = truncate_train(full, size);
      for (uint64_t s : cfg.adapt.seeds) {
        const uint64_t run_seed = mix_seeds(seed, mix_seeds(s, fnv1a64(t.task_id)));
        // Warm start: multitask-trained body + a fresh head for the new task.
        ParameterStore adapted = build_model(mc, with_new, run_seed);
        warm_start(adapted, trained);
        out.push_back(detail_adapt::run_single(std::move(adapted), mc, with_new, spec, ds, cfg,
                                               run_seed, "adapted", size));
        // Baseline: same architecture, fresh parameters.
        ParameterStore scratch = build_model(mc, with_new, run_seed);
        out.push_back(detail_adapt::run_single(std::move(scratch), mc, with_new, spec, ds, cfg,
                                               run_seed, "scratch", size));
      }
    }
    if (cfg.adapt.include_joint_baseline) {
      ModelConfig dense = mc;
      dense.variant = ModelVariant::Dense;
      ParameterStore store = build_model(dense, with_new, mix_seeds(seed, fnv1a64("joint")));
      std::map<std::string, TaskDataset> data = cfg.build_datasets(/*with_new_tasks=*/true);
      TrainHyper h = cfg.train;
      h.max_steps = cfg.adapt.joint_steps;
      h.eval_every = 0;
      h.seed = mix_seeds(seed, fnv1a64("joint@" + t.task_id));
      TrainState st = TrainState::init(h.seed);
      MetricsLog log;
      multitask_train(store, dense, with_new, data, h, st, log);
      AdaptCurve jc;
      jc.task_id = t.task_id;
      jc.setting = "dense-joint";
      jc.data_size = t.train_size;
      jc.seed = h.seed;
      for (const EvalRecord& e : log.evals)
        if (e.task_id == t.task_id) jc.curve.emplace_back(e.step, e.result.primary);
      jc.first_crossing = first_crossing(jc.curve, cfg.adapt.threshold);
      out.push_back(std::move(jc));
    }
  }
  return out;
}

inline void write_new_task_outputs(const std::filesystem::path& dir,
                                   const std::vector<AdaptCurve>& curves,
                                   const ExperimentConfig& cfg) {
  std::filesystem::create_directories(dir);
  nlohmann::json rows = nlohmann::json::array();
  for (const AdaptCurve& c : curves) rows.push_back(c.to_json());
  nlohmann::json j = {{"library_version", kVersion},
                      {"config_hash", cfg.config_hash()},
                      {"threshold", cfg.adapt.threshold},
                      {"rows", rows}};
  std::ofstream os(dir / "new_task_suite.json");
  if (!os) throw IoError("cannot write new_task_suite.json");
  os << j.dump(2) << "\n";

  // One step-budget plot per new task at the largest data size: mean metric
  // across seeds, adapted vs scratch.
  const int full = *std::max_element(cfg.adapt.data_sizes.begin(), cfg.adapt.data_sizes.end());
  for (const TaskConfig& t : cfg.new_tasks) {
    std::map<std::string, std::map<int64_t, std::pair<double, int>>> agg;  // setting -> step -> (sum, n)
    for (const AdaptCurve& c : curves) {
      if (c.task_id != t.task_id || c.data_size != full) continue;
      if (c.setting == "dense-joint") continue;
      for (const auto& [step, v] : c.curve) {
        auto& cell = agg[c.setting][step];
        cell.first += v;
        cell.second += 1;
      }
    }
    std::vector<PlotSeries> series;
    for (auto& [setting, by_step] : agg) {
      PlotSeries s;
      s.label = setting;
      for (const auto& [step, sv] : by_step)
        s.points.emplace_back(static_cast<double>(step), 100.0 * sv.first / sv.second);
      series.push_back(std::move(s));
    }
    if (!series.empty())
      write_line_plot(dir / ("new_task_" + t.task_id + ".svg"),
                      "Adaptation vs from-init: " + t.task_id, "fine-tuning steps",
                      "dev metric (x100)", series);
  }
}

}  // namespace skillnet

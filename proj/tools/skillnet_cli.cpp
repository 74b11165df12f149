// Command-line surface for the skill-routed multitask library: pre-training,
// multitask training, evaluation, perturbation analysis, new-task
// adaptation, and the two sweep suites. Every command is a pure function of
// (config, seed flags) to its output directory.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "skillnet/experiment.hpp"

namespace fs = std::filesystem;
using namespace skillnet;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::string checkpoint;
  uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool out_required = true) {
  cmd->add_option("--config", a.config_path, "experiment config JSON (defaults built in)");
  auto* seed = cmd->add_option("--seed", a.seed, "experiment seed");
  seed->each([&a](const std::string&) { a.seed_set = true; });
  auto* out = cmd->add_option("--out", a.out_dir, "output directory");
  if (out_required) out->required();
  cmd->add_option("--checkpoint", a.checkpoint, "checkpoint directory to load");
}

ExperimentConfig resolve_config(const CommonArgs& a) {
  ExperimentConfig cfg =
      a.config_path.empty() ? default_experiment_config() : load_config(a.config_path);
  return cfg;
}

uint64_t resolve_seed(const CommonArgs& a, const ExperimentConfig& cfg) {
  if (a.seed_set) return a.seed;
  if (!cfg.seeds.empty()) return cfg.seeds.front();
  return 1;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os << j.dump(2) << "\n";
}

void write_config_used(const fs::path& dir, const ExperimentConfig& cfg, uint64_t seed) {
  nlohmann::json j = cfg.to_json();
  j["resolved_seed"] = seed;
  write_json(dir / "config_used.json", j);
}

nlohmann::json eval_report_json(const ParameterStore& store, const ModelConfig& mc,
                                const SkillMatrix& skills,
                                const std::map<std::string, TaskDataset>& data,
                                const std::string& config_hash) {
  nlohmann::json per_task = nlohmann::json::object();
  nlohmann::json detail = nlohmann::json::object();
  std::vector<double> primaries;
  for (const TaskSpec& spec : skills.tasks()) {
    const EvalResult r = evaluate(store, mc, skills, data.at(spec.task_id).dev, spec,
                                  skills.active_skill_mask(spec.task_id));
    per_task[spec.task_id] = r.primary;
    nlohmann::json d = nlohmann::json::object();
    for (const auto& [k, v] : r.detail) d[k] = v;
    detail[spec.task_id] = d;
    primaries.push_back(r.primary);
  }
  return {{"library_version", kVersion},
          {"config_hash", config_hash},
          {"per_task", per_task},
          {"detail", detail},
          {"macro", macro_average(primaries)}};
}

int cmd_pretrain(const CommonArgs& a) {
  const ExperimentConfig cfg = resolve_config(a);
  const uint64_t seed = resolve_seed(a, cfg);
  fs::create_directories(a.out_dir);
  write_config_used(a.out_dir, cfg, seed);

  const ModelConfig mc = cfg.model_config();
  const SkillMatrix skills = cfg.pretrain_matrix();
  ParameterStore store = build_model(mc, skills, seed);
  const std::vector<LanguageSpec> langs = cfg.languages();
  std::vector<std::pair<std::string, std::vector<Document>>> corpora;
  for (const std::string& tag : cfg.pretrain.languages)
    corpora.emplace_back(tag, generate_corpus(language_by_tag(langs, tag), cfg.pretrain.num_docs,
                                              mix_seeds(cfg.data_seed, fnv1a64("corpus:" + tag))));
  TrainHyper h;
  h.lr = cfg.pretrain.lr;
  h.batch_size = cfg.pretrain.batch_size;
  h.max_steps = cfg.pretrain.max_steps;
  h.seed = seed;
  TrainState st = TrainState::init(seed);
  MetricsLog log(fs::path(a.out_dir) / "metrics.jsonl");
  skill_pretrain(store, mc, skills, corpora, langs, h, st, log);

  CheckpointManifest m;
  m.variant = variant_name(mc.variant);
  m.step = st.step;
  m.seed = seed;
  m.config_hash = cfg.config_hash();
  save_checkpoint(fs::path(a.out_dir) / "checkpoint", store, m, &st);
  std::cout << "pretrain: " << st.step << " steps, checkpoint at " << a.out_dir
            << "/checkpoint\n";
  return 0;
}

int cmd_train(const CommonArgs& a, const std::string& variant_flag,
              const std::optional<double>& alpha_flag,
              const std::optional<int64_t>& steps_flag) {
  ExperimentConfig cfg = resolve_config(a);
  if (!variant_flag.empty()) cfg.model.variant = variant_from_name(variant_flag);
  if (alpha_flag) cfg.train.alpha = *alpha_flag;
  if (steps_flag) cfg.train.max_steps = *steps_flag;
  const uint64_t seed = resolve_seed(a, cfg);
  fs::create_directories(a.out_dir);
  write_config_used(a.out_dir, cfg, seed);

  const ModelConfig mc = cfg.model_config();
  const SkillMatrix skills = cfg.skill_matrix();
  ParameterStore store = build_model(mc, skills, seed);
  if (!a.checkpoint.empty()) {
    const ParameterStore warm = load_parameters(a.checkpoint);
    const size_t copied = warm_start(store, warm).size();
    std::cout << "warm start: " << copied << " parameter blocks copied\n";
  }
  const std::map<std::string, TaskDataset> data = cfg.build_datasets();
  TrainHyper h = cfg.train;
  h.seed = seed;
  TrainState st = TrainState::init(seed);
  MetricsLog log(fs::path(a.out_dir) / "metrics.jsonl");
  multitask_train(store, mc, skills, data, h, st, log);

  CheckpointManifest m;
  m.variant = variant_name(mc.variant);
  m.step = st.step;
  m.seed = seed;
  m.config_hash = cfg.config_hash();
  save_checkpoint(fs::path(a.out_dir) / "checkpoint", store, m, &st);
  write_json(fs::path(a.out_dir) / "eval_report.json",
             eval_report_json(store, mc, skills, data, cfg.config_hash()));
  std::cout << "train: " << st.step << " steps (" << variant_name(mc.variant)
            << "), checkpoint at " << a.out_dir << "/checkpoint\n";
  return 0;
}

int cmd_eval(const CommonArgs& a) {
  if (a.checkpoint.empty()) throw ConfigError("eval requires --checkpoint");
  const ExperimentConfig cfg = resolve_config(a);
  fs::create_directories(a.out_dir);
  const CheckpointManifest manifest = load_manifest(a.checkpoint);
  ModelConfig mc = cfg.model_config();
  mc.variant = variant_from_name(manifest.variant);
  const SkillMatrix skills = cfg.skill_matrix();
  const ParameterStore store = load_parameters(a.checkpoint);
  const std::map<std::string, TaskDataset> data = cfg.build_datasets();
  const nlohmann::json report = eval_report_json(store, mc, skills, data, cfg.config_hash());
  write_json(fs::path(a.out_dir) / "eval_report.json", report);
  std::cout << "eval: macro " << report.at("macro").get<double>() << "\n";
  return 0;
}

int cmd_perturb(const CommonArgs& a) {
  if (a.checkpoint.empty()) throw ConfigError("perturb requires --checkpoint");
  const ExperimentConfig cfg = resolve_config(a);
  fs::create_directories(a.out_dir);
  const CheckpointManifest manifest = load_manifest(a.checkpoint);
  ModelConfig mc = cfg.model_config();
  mc.variant = variant_from_name(manifest.variant);
  const SkillMatrix skills = cfg.skill_matrix();
  const ParameterStore store = load_parameters(a.checkpoint);
  const std::map<std::string, TaskDataset> data = cfg.build_datasets();
  std::vector<std::string> task_ids = cfg.perturb.tasks;
  if (task_ids.empty())
    for (const TaskSpec& spec : skills.tasks()) task_ids.push_back(spec.task_id);
  std::vector<Perturbation> perturbations;
  for (const std::string& label : cfg.perturb.perturbations)
    perturbations.push_back(perturbation_from_label(label));
  const PerturbationReport report =
      run_perturbation_suite(store, mc, skills, data, task_ids, perturbations);
  write_json(fs::path(a.out_dir) / "perturbation_report.json",
             report.to_json(cfg.config_hash()));
  std::cout << "perturb: baseline macro " << report.baseline_macro << ", " << report.rows.size()
            << " perturbations evaluated\n";
  return 0;
}

int cmd_adapt(const CommonArgs& a) {
  if (a.checkpoint.empty()) throw ConfigError("adapt requires --checkpoint");
  const ExperimentConfig cfg = resolve_config(a);
  if (cfg.new_tasks.empty()) throw ConfigError("config has no new_tasks to adapt to");
  const uint64_t seed = resolve_seed(a, cfg);
  fs::create_directories(a.out_dir);
  write_config_used(a.out_dir, cfg, seed);
  const ModelConfig mc = cfg.model_config();
  const SkillMatrix with_new = cfg.skill_matrix(/*with_new_tasks=*/true);
  const ParameterStore trained = load_parameters(a.checkpoint);
  nlohmann::json results = nlohmann::json::object();
  for (const TaskConfig& t : cfg.new_tasks) {
    const TaskSpec spec = cfg.task_spec(t);
    const TaskDataset ds = cfg.dataset_for(t);
    ParameterStore store = build_model(mc, with_new, mix_seeds(seed, fnv1a64(t.task_id)));
    warm_start(store, trained);
    TrainHyper h;
    h.lr = cfg.adapt.lr;
    h.batch_size = cfg.adapt.batch_size;
    h.max_steps =
        *std::max_element(cfg.adapt.step_budgets.begin(), cfg.adapt.step_budgets.end());
    h.eval_every = 100;
    h.seed = mix_seeds(seed, fnv1a64(t.task_id));
    TrainState st = TrainState::init(h.seed);
    MetricsLog log(fs::path(a.out_dir) / ("metrics_" + t.task_id + ".jsonl"));
    adapt_new_task(store, mc, with_new, spec, ds, h, st, log);
    const EvalResult final_eval = evaluate(store, mc, with_new, ds.dev, spec,
                                           with_new.active_skill_mask(t.task_id));
    results[t.task_id] = final_eval.primary;
    CheckpointManifest m;
    m.variant = variant_name(mc.variant);
    m.step = st.step;
    m.seed = h.seed;
    m.config_hash = cfg.config_hash();
    save_checkpoint(fs::path(a.out_dir) / ("checkpoint_" + t.task_id), store, m, &st);
  }
  write_json(fs::path(a.out_dir) / "adapt_report.json",
             {{"library_version", kVersion},
              {"config_hash", cfg.config_hash()},
              {"final_dev_metric", results}});
  std::cout << "adapt: " << cfg.new_tasks.size() << " new tasks adapted\n";
  return 0;
}

int cmd_sweep_alpha(const CommonArgs& a) {
  const ExperimentConfig cfg = resolve_config(a);
  const uint64_t seed = resolve_seed(a, cfg);
  fs::create_directories(a.out_dir);
  write_config_used(a.out_dir, cfg, seed);
  const std::vector<SweepCell> cells = run_alpha_sweep(cfg, seed);
  write_sweep_outputs(a.out_dir, cells, cfg.config_hash());
  std::cout << "sweep-alpha: " << cells.size() << " cells written\n";
  return 0;
}

int cmd_sweep_newtask(const CommonArgs& a) {
  if (a.checkpoint.empty()) throw ConfigError("sweep-newtask requires --checkpoint");
  const ExperimentConfig cfg = resolve_config(a);
  const uint64_t seed = resolve_seed(a, cfg);
  fs::create_directories(a.out_dir);
  write_config_used(a.out_dir, cfg, seed);
  const ParameterStore trained = load_parameters(a.checkpoint);
  const std::vector<AdaptCurve> curves = run_new_task_suite(trained, cfg, seed);
  write_new_task_outputs(a.out_dir, curves, cfg);
  std::cout << "sweep-newtask: " << curves.size() << " runs written\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"skill-routed sparse multitask transformer toolkit"};
  app.require_subcommand(1);

  CommonArgs pre_a, train_a, eval_a, pert_a, adapt_a, sa_a, sn_a;
  std::string train_variant;
  std::optional<double> train_alpha;
  std::optional<int64_t> train_steps;

  add_common(app.add_subcommand("pretrain", "self-supervised skill pre-training"), pre_a);

  auto* train = app.add_subcommand("train", "multitask training");
  add_common(train, train_a);
  train->add_option("--variant", train_variant,
                    "model variant: dense|moe|skill-ffn|skill-ffn-mha");
  double alpha_tmp = 0.0;
  train->add_option("--alpha", alpha_tmp, "sampling temperature")
      ->each([&train_alpha](const std::string& s) { train_alpha = std::stod(s); });
  int64_t steps_tmp = 0;
  train->add_option("--steps", steps_tmp, "max training steps")
      ->each([&train_steps](const std::string& s) { train_steps = std::stoll(s); });

  add_common(app.add_subcommand("eval", "evaluate a checkpoint on every dev split"), eval_a);
  add_common(app.add_subcommand("perturb", "inference-time skill perturbation suite"), pert_a);
  add_common(app.add_subcommand("adapt", "adapt a trained checkpoint to the configured new tasks"),
             adapt_a);
  add_common(app.add_subcommand("sweep-alpha", "train across sampling temperatures and variants"),
             sa_a);
  add_common(app.add_subcommand("sweep-newtask",
                                "adaptation-vs-scratch curves across sizes and budgets"),
             sn_a);

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("pretrain")) return cmd_pretrain(pre_a);
    if (app.got_subcommand("train")) return cmd_train(train_a, train_variant, train_alpha, train_steps);
    if (app.got_subcommand("eval")) return cmd_eval(eval_a);
    if (app.got_subcommand("perturb")) return cmd_perturb(pert_a);
    if (app.got_subcommand("adapt")) return cmd_adapt(adapt_a);
    if (app.got_subcommand("sweep-alpha")) return cmd_sweep_alpha(sa_a);
    if (app.got_subcommand("sweep-newtask")) return cmd_sweep_newtask(sn_a);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand\n";
  return 1;
}

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "skillnet/experiment.hpp"

using namespace skillnet;

namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

TaskConfig make_task(std::string id, TaskType type, std::string lang, int classes, int train,
                     int dev, std::vector<std::string> skills) {
  TaskConfig t;
  t.task_id = std::move(id);
  t.type = type;
  t.language = std::move(lang);
  t.num_classes = classes;
  t.train_size = train;
  t.dev_size = dev;
  t.skills = std::move(skills);
  return t;
}

// A deliberately small setup so suites that train or evaluate stay fast.
ExperimentConfig tiny_cfg() {
  ExperimentConfig c;
  c.model.variant = ModelVariant::SkillFfn;
  c.model.layers = 1;
  c.model.hidden = 16;
  c.model.intermediate = 24;
  c.model.heads = 2;
  c.model.max_seq_len = 28;
  c.model.dropout = 0.0;
  c.tasks = {
      make_task("cls_en", TaskType::SequenceClassification, "en", 2, 48, 24,
                {"t_s1", "t_s5", "l_s1"}),
      make_task("ner_de", TaskType::TokenClassification, "de", 5, 32, 16,
                {"t_s1", "t_s2", "l_s3"}),
  };
  c.new_tasks = {
      make_task("cls_en_new", TaskType::SequenceClassification, "en", 2, 48, 24,
                {"t_s1", "t_s6", "l_s1"}),
  };
  c.train.alpha = 0.4;
  c.train.lr = 3e-3;
  c.train.batch_size = 4;
  c.train.max_steps = 24;
  c.train.eval_every = 0;
  c.perturb.tasks = {"cls_en", "ner_de"};
  c.sweep.alphas = {0.4};
  c.sweep.variants = {"dense"};
  c.sweep.max_steps = 16;
  c.adapt.data_sizes = {32};
  c.adapt.step_budgets = {8, 16};
  c.adapt.seeds = {1};
  c.adapt.batch_size = 4;
  c.validate();
  return c;
}

}  // namespace

TEST_CASE("accuracy is the exact hit fraction") {
  REQUIRE(accuracy({1, 2, 3}, {1, 0, 3}) == Catch::Approx(2.0 / 3.0).epsilon(1e-15));
  REQUIRE(accuracy({0}, {0}) == 1.0);
  REQUIRE_THROWS_AS(accuracy({1, 2}, {1}), ContractError);
  REQUIRE_THROWS_AS(accuracy({}, {}), ContractError);
}

TEST_CASE("tag sequences decode into typed entities with stray-continuation repair") {
  // tag ids: 0 = outside, 1+2e = begin type e, 2+2e = inside type e
  REQUIRE(decode_bio({0, 0, 0}).empty());
  REQUIRE(decode_bio({1, 2, 0}) == std::vector<Entity>{{0, 1, 0}});
  // run reaching the end of the sequence closes there
  REQUIRE(decode_bio({0, 3, 4}) == std::vector<Entity>{{1, 2, 1}});
  // stray inside-tag after outside opens a fresh entity
  REQUIRE(decode_bio({0, 2, 2}) == std::vector<Entity>{{1, 2, 0}});
  // inside-tag of a different type splits the run
  REQUIRE(decode_bio({1, 4}) == std::vector<Entity>{{0, 0, 0}, {1, 1, 1}});
  // back-to-back begins are two entities
  REQUIRE(decode_bio({1, 1}) == std::vector<Entity>{{0, 0, 0}, {1, 1, 0}});
  // inside-tag at position 0 opens an entity
  REQUIRE(decode_bio({2, 2, 0, 1}) == std::vector<Entity>{{0, 1, 0}, {3, 3, 0}});
}

TEST_CASE("entity-level counts give exact precision, recall, and harmonic mean") {
  F1Counts c;
  c.add({{1, 2, 0}}, {{1, 2, 0}, {4, 5, 1}});
  REQUIRE(c.precision() == 1.0);
  REQUIRE(c.recall() == 0.5);
  REQUIRE(c.f1() == Catch::Approx(2.0 / 3.0).epsilon(1e-15));

  F1Counts empty;
  empty.add({}, {});
  REQUIRE(empty.f1() == 0.0);  // no division blow-ups

  F1Counts off;
  off.add({{0, 1, 0}}, {{0, 1, 1}});  // same span, wrong type
  REQUIRE(off.matched == 0);
}

TEST_CASE("span overlap scoring") {
  REQUIRE(span_token_f1({3, 5}, {4, 6}) == Catch::Approx(2.0 / 3.0).epsilon(1e-15));
  REQUIRE(span_token_f1({4, 6}, {4, 6}) == 1.0);
  REQUIRE(span_token_f1({0, 1}, {5, 9}) == 0.0);
  REQUIRE(span_token_f1({2, 2}, {2, 4}) == Catch::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("macro average") {
  REQUIRE(macro_average({0.5, 1.0}) == 0.75);
  REQUIRE_THROWS_AS(macro_average({}), ContractError);
}

TEST_CASE("dev-set evaluation runs every task family end to end") {
  const ExperimentConfig cfg = tiny_cfg();
  const ModelConfig mc = cfg.model_config();
  const SkillMatrix skills = cfg.skill_matrix();
  const ParameterStore store = build_model(mc, skills, 5);
  const auto data = cfg.build_datasets();

  for (const TaskConfig& t : cfg.tasks) {
    const TaskSpec spec = cfg.task_spec(t);
    const EvalResult r = evaluate(store, mc, skills, data.at(t.task_id).dev, spec,
                                  skills.active_skill_mask(t.task_id));
    REQUIRE(r.primary >= 0.0);
    REQUIRE(r.primary <= 1.0);
    if (t.type == TaskType::SequenceClassification)
      REQUIRE(r.detail.at("accuracy") == r.primary);
    else
      REQUIRE(r.detail.at("f1") == r.primary);
  }
  REQUIRE_THROWS_AS(evaluate(store, mc, skills, {}, cfg.task_spec(cfg.tasks[0]),
                             skills.active_skill_mask("cls_en")),
                    ContractError);
}

TEST_CASE("experiment config round-trips through its serialized form") {
  const ExperimentConfig def = default_experiment_config();
  REQUIRE(def.tasks.size() == 11);
  REQUIRE(def.new_tasks.size() == 2);
  REQUIRE(def.perturb.tasks.size() == 5);
  REQUIRE(def.train.alpha == 0.4);
  REQUIRE(def.model_config().vocab == 261);

  const nlohmann::json j = def.to_json();
  const ExperimentConfig back = ExperimentConfig::from_json(j);
  REQUIRE(back.to_json().dump() == j.dump());
  REQUIRE(back.config_hash() == def.config_hash());
  REQUIRE(def.config_hash().size() == 16);  // 64-bit hex

  ExperimentConfig other = def;
  other.train.alpha = 0.5;
  REQUIRE(other.config_hash() != def.config_hash());

  // Language helper derives the token ranges from the config.
  const std::vector<LanguageSpec> langs = def.languages();
  REQUIRE(langs.size() == 4);
  REQUIRE(langs[0].begin == 5);
  REQUIRE(langs[3].end == 261);

  // Span-extraction heads address positions, so their width is the sequence length.
  for (const TaskConfig& t : def.tasks)
    if (t.type == TaskType::SpanExtraction)
      REQUIRE(def.task_spec(t).num_classes == def.model.max_seq_len);
}

TEST_CASE("unknown config keys are rejected loudly") {
  nlohmann::json j = default_experiment_config().to_json();
  j["modle"] = 1;  // typo'd top-level key
  REQUIRE_THROWS_WITH(ExperimentConfig::from_json(j),
                      Catch::Matchers::ContainsSubstring("config drift?"));

  nlohmann::json j2 = default_experiment_config().to_json();
  j2["train"]["learning_rate"] = 0.1;  // wrong spelling of "lr"
  REQUIRE_THROWS_AS(ExperimentConfig::from_json(j2), ConfigError);

  nlohmann::json j3 = default_experiment_config().to_json();
  j3["tasks"][0]["typo"] = true;
  REQUIRE_THROWS_WITH(ExperimentConfig::from_json(j3),
                      Catch::Matchers::ContainsSubstring("tasks[0]"));
}

TEST_CASE("config files load with clear errors") {
  const fs::path dir = fs::temp_directory_path();
  const fs::path good = dir / "skillnet_cfg_good.json";
  const fs::path bad = dir / "skillnet_cfg_bad.json";
  {
    std::ofstream os(good);
    os << default_experiment_config().to_json().dump(2);
  }
  {
    std::ofstream os(bad);
    os << "{ not json";
  }
  REQUIRE(load_config(good).tasks.size() == 11);
  REQUIRE_THROWS_AS(load_config(bad), ConfigError);
  REQUIRE_THROWS_AS(load_config(dir / "skillnet_cfg_missing.json"), IoError);
  fs::remove(good);
  fs::remove(bad);
}

TEST_CASE("perturbation labels parse back to the perturbation they name") {
  for (const std::string& label :
       {std::string("identity"), std::string("all_task_skills"), std::string("lang_swap:l_s2"),
        std::string("random_task_skills:seed=11")}) {
    REQUIRE(perturbation_from_label(label).label() == label);
  }
  REQUIRE_THROWS_AS(perturbation_from_label("mystery"), ConfigError);
  REQUIRE_THROWS_AS(perturbation_from_label("random_task_skills:seed=abc"), ConfigError);
}

TEST_CASE("perturbation suite reports identity as an exact zero delta") {
  const ExperimentConfig cfg = tiny_cfg();
  const ModelConfig mc = cfg.model_config();
  const SkillMatrix skills = cfg.skill_matrix();
  const ParameterStore store = build_model(mc, skills, 9);
  const auto data = cfg.build_datasets();

  std::vector<Perturbation> ps;
  for (const std::string& label : cfg.perturb.perturbations)
    ps.push_back(perturbation_from_label(label));

  const PerturbationReport rep =
      run_perturbation_suite(store, mc, skills, data, cfg.perturb.tasks, ps);
  REQUIRE(rep.rows.size() == ps.size());
  REQUIRE(rep.baseline_per_task.size() == cfg.perturb.tasks.size());

  const PerturbationReport::Row& identity = rep.rows.front();
  REQUIRE(identity.label == "identity");
  REQUIRE(identity.delta == 0.0);  // exact: same mask, same deterministic forward
  for (const auto& [task, v] : identity.per_task)
    REQUIRE(v == rep.baseline_per_task.at(task));
  for (const std::string& id : cfg.perturb.tasks)
    REQUIRE(identity.masks.at(id) == skills.active_skill_mask(id));

  // The language swap must actually change the evaluated mask.
  for (const PerturbationReport::Row& row : rep.rows) {
    if (row.label.rfind("lang_swap:", 0) != 0) continue;
    for (const std::string& id : cfg.perturb.tasks)
      REQUIRE(row.masks.at(id) != skills.active_skill_mask(id));
  }

  const nlohmann::json j = rep.to_json("deadbeef00000000");
  REQUIRE(j.at("config_hash") == "deadbeef00000000");
  REQUIRE(j.at("rows").size() == ps.size());
  REQUIRE(j.at("baseline").at("macro").get<double>() == rep.baseline_macro);

  REQUIRE_THROWS_AS(run_perturbation_suite(store, mc, skills, data, {}, ps), ContractError);
}

TEST_CASE("final-eval summaries keep the last record per task") {
  MetricsLog log;
  EvalRecord e;
  e.step = 10;
  e.task_id = "a";
  e.result.primary = 0.2;
  log.add(e);
  e.step = 20;
  e.result.primary = 0.8;
  log.add(e);  // later record for the same task wins
  e.task_id = "b";
  e.result.primary = 0.4;
  log.add(e);

  const SweepCell cell = summarize_final_evals(log, "dense", 0.4);
  REQUIRE(cell.per_task.at("a") == 0.8);
  REQUIRE(cell.per_task.at("b") == 0.4);
  REQUIRE(cell.macro == Catch::Approx(0.6).epsilon(1e-15));
  REQUIRE(cell.variant == "dense");

  MetricsLog empty;
  REQUIRE_THROWS_AS(summarize_final_evals(empty, "dense", 0.4), ContractError);

  const nlohmann::json t = sweep_table_json({cell}, "abc");
  REQUIRE(t.at("rows")[0].at("macro").get<double>() == cell.macro);
  REQUIRE(t.at("config_hash") == "abc");
}

TEST_CASE("temperature sweep trains each grid cell and summarizes it") {
  const ExperimentConfig cfg = tiny_cfg();
  const std::vector<SweepCell> cells = run_alpha_sweep(cfg, 3);
  REQUIRE(cells.size() == 1);  // 1 variant x 1 alpha in the tiny grid
  REQUIRE(cells[0].variant == "dense");
  REQUIRE(cells[0].alpha == 0.4);
  REQUIRE(cells[0].per_task.size() == cfg.tasks.size());
  for (const auto& [task, v] : cells[0].per_task) {
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
  }

  const fs::path dir = fs::temp_directory_path() / "skillnet_sweep_out";
  write_sweep_outputs(dir, cells, cfg.config_hash());
  REQUIRE(fs::exists(dir / "sweep_alpha.json"));
  REQUIRE(fs::exists(dir / "sweep_alpha.svg"));
  const nlohmann::json j = nlohmann::json::parse(slurp(dir / "sweep_alpha.json"));
  REQUIRE(j.at("config_hash") == cfg.config_hash());
  REQUIRE(j.at("rows").size() == 1);

  // Regenerating from the same cells is byte-identical.
  const std::string svg1 = slurp(dir / "sweep_alpha.svg");
  write_sweep_outputs(dir, cells, cfg.config_hash());
  REQUIRE(slurp(dir / "sweep_alpha.svg") == svg1);
  fs::remove_all(dir);
}

TEST_CASE("threshold crossing picks the first budget at or above the bar") {
  REQUIRE(first_crossing({{100, 0.5}, {200, 0.93}, {300, 0.95}}, 0.9) == 200);
  REQUIRE(first_crossing({{100, 0.5}}, 0.9) == -1);
  REQUIRE(first_crossing({}, 0.9) == -1);

  TaskDataset ds;
  ds.train.resize(10);
  ds.dev.resize(3);
  REQUIRE(truncate_train(ds, 4).train.size() == 4);
  REQUIRE(truncate_train(ds, 99).train.size() == 10);
  REQUIRE(truncate_train(ds, 4).dev.size() == 3);
}

TEST_CASE("new-task suite produces adapted and from-init curves per cell") {
  const ExperimentConfig cfg = tiny_cfg();
  const ModelConfig mc = cfg.model_config();
  const SkillMatrix skills = cfg.skill_matrix();
  const ParameterStore trained = build_model(mc, skills, 17);  // stand-in for a trained store

  const std::vector<AdaptCurve> curves = run_new_task_suite(trained, cfg, 23);
  // 1 new task x 1 data size x 1 seed x {adapted, scratch}
  REQUIRE(curves.size() == 2);
  REQUIRE(curves[0].setting == "adapted");
  REQUIRE(curves[1].setting == "scratch");
  for (const AdaptCurve& c : curves) {
    REQUIRE(c.task_id == "cls_en_new");
    REQUIRE(c.data_size == 32);
    REQUIRE(c.curve.size() == cfg.adapt.step_budgets.size());
    for (size_t i = 0; i < c.curve.size(); ++i)
      REQUIRE(c.curve[i].first == cfg.adapt.step_budgets[i]);
    if (c.first_crossing != -1) {
      bool is_budget = false;
      for (int64_t b : cfg.adapt.step_budgets) is_budget = is_budget || b == c.first_crossing;
      REQUIRE(is_budget);
    }
  }

  const fs::path dir = fs::temp_directory_path() / "skillnet_adapt_out";
  write_new_task_outputs(dir, curves, cfg);
  REQUIRE(fs::exists(dir / "new_task_suite.json"));
  REQUIRE(fs::exists(dir / "new_task_cls_en_new.svg"));
  const nlohmann::json j = nlohmann::json::parse(slurp(dir / "new_task_suite.json"));
  REQUIRE(j.at("rows").size() == 2);
  REQUIRE(j.at("threshold").get<double>() == cfg.adapt.threshold);
  fs::remove_all(dir);

  ExperimentConfig none = cfg;
  none.new_tasks.clear();
  REQUIRE_THROWS_AS(run_new_task_suite(trained, none, 23), ContractError);
}

TEST_CASE("line plots are deterministic byte for byte") {
  std::vector<PlotSeries> series(2);
  series[0].label = "alpha";
  series[0].points = {{0.0, 1.0}, {1.0, 3.0}, {2.0, 2.0}};
  series[1].label = "beta";
  series[1].points = {{0.0, 2.5}, {2.0, 0.5}};

  const fs::path p1 = fs::temp_directory_path() / "skillnet_plot1.svg";
  const fs::path p2 = fs::temp_directory_path() / "skillnet_plot2.svg";
  write_line_plot(p1, "demo", "x", "y", series);
  write_line_plot(p2, "demo", "x", "y", series);
  const std::string a = slurp(p1), b = slurp(p2);
  REQUIRE(a == b);
  REQUIRE(a.find("<svg") == 0);
  REQUIRE(a.find("polyline") != std::string::npos);
  REQUIRE(a.find(">alpha<") != std::string::npos);
  REQUIRE(a.find(">beta<") != std::string::npos);
  fs::remove(p1);
  fs::remove(p2);

  REQUIRE_THROWS_AS(write_line_plot(p1, "t", "x", "y", {}), ContractError);
}

#include <catch2/catch_amalgamated.hpp>

#include "skillnet/skills.hpp"

using namespace skillnet;

namespace {

SkillMatrix tiny_matrix() {
  SkillTaxonomy tax = SkillTaxonomy::default_taxonomy();
  std::vector<TaskSpec> specs(3);
  specs[0].task_id = "a_en";
  specs[0].task_type = TaskType::SequencePairClassification;
  specs[0].language = "en";
  specs[0].num_classes = 3;
  specs[0].skills = {SkillId::task(1), SkillId::task(3), SkillId::task(4), SkillId::language(1)};
  specs[1].task_id = "b_zh";
  specs[1].task_type = TaskType::SequenceClassification;
  specs[1].language = "zh";
  specs[1].num_classes = 5;
  specs[1].skills = {SkillId::task(1), SkillId::task(3), SkillId::language(2)};
  specs[2].task_id = "c_de";
  specs[2].task_type = TaskType::TokenClassification;
  specs[2].language = "de";
  specs[2].num_classes = 5;
  specs[2].skills = {SkillId::task(1), SkillId::task(2), SkillId::language(3)};
  return build_skill_matrix(tax, specs);
}

}  // namespace

TEST_CASE("skill names round-trip through the parser") {
  REQUIRE(SkillId::task(3).name() == "t_s3");
  REQUIRE(SkillId::language(2).name() == "l_s2");
  REQUIRE(SkillId::from_name("t_s3") == SkillId::task(3));
  REQUIRE(SkillId::from_name("l_s4") == SkillId::language(4));
  REQUIRE_THROWS_AS(SkillId::from_name("x_s1"), ConfigError);
  REQUIRE_THROWS_AS(SkillId::from_name("t_s0"), ConfigError);
  REQUIRE_THROWS_AS(SkillId::from_name("t_sx"), ConfigError);
}

TEST_CASE("taxonomy column layout: task skills first, then languages") {
  SkillTaxonomy tax = SkillTaxonomy::default_taxonomy();
  REQUIRE(tax.total_skills() == 10);
  REQUIRE(tax.column_of(SkillId::task(1)) == 0);
  REQUIRE(tax.column_of(SkillId::task(6)) == 5);
  REQUIRE(tax.column_of(SkillId::language(1)) == 6);
  REQUIRE(tax.column_of(SkillId::language(4)) == 9);
  for (int c = 0; c < tax.total_skills(); ++c)
    REQUIRE(tax.column_of(tax.skill_at(c)) == c);
  REQUIRE_THROWS_AS(tax.column_of(SkillId::task(7)), ConfigError);
  REQUIRE_THROWS_AS(tax.skill_at(10), ConfigError);
  REQUIRE(tax.language_skill("zh") == SkillId::language(2));
  REQUIRE_THROWS_AS(tax.language_skill("fr"), ConfigError);
}

TEST_CASE("task specs enforce exactly one language and at least one task skill") {
  TaskSpec s;
  s.task_id = "t";
  s.skills = {SkillId::task(1)};
  REQUIRE_THROWS_AS(s.validate(), ConfigError);  // no language skill
  s.skills = {SkillId::language(1), SkillId::language(2), SkillId::task(1)};
  REQUIRE_THROWS_AS(s.validate(), ConfigError);  // two language skills
  s.skills = {SkillId::language(1)};
  REQUIRE_THROWS_AS(s.validate(), ConfigError);  // no task skill
  s.skills = {SkillId::language(1), SkillId::task(2)};
  REQUIRE_NOTHROW(s.validate());
  REQUIRE(s.language_skill() == SkillId::language(1));
  REQUIRE(s.task_skill_indices() == std::vector<int>{2});
}

TEST_CASE("routing matrix rows are activation indicators in column order") {
  SkillMatrix m = tiny_matrix();
  REQUIRE(m.tasks().size() == 3);
  REQUIRE(m.matrix().size() == 3);

  const SkillMask row = m.active_skill_mask("a_en");
  REQUIRE(row.size() == 10);
  const SkillMask expected = {1, 0, 1, 1, 0, 0, 1, 0, 0, 0};
  REQUIRE(row == expected);

  REQUIRE(m.row_of("b_zh") == 1);
  REQUIRE(m.spec("c_de").language == "de");
  REQUIRE_THROWS_AS(m.row_of("missing"), ConfigError);

  REQUIRE(m.task_skill_submask(row) == std::vector<uint8_t>{1, 0, 1, 1, 0, 0});
  REQUIRE(m.language_of_mask(row) == SkillId::language(1));

  SkillMask no_lang = row;
  no_lang[6] = 0;
  REQUIRE_THROWS_AS(m.language_of_mask(no_lang), ContractError);
  SkillMask two_langs = row;
  two_langs[7] = 1;
  REQUIRE_THROWS_AS(m.language_of_mask(two_langs), ContractError);
}

TEST_CASE("duplicate task ids are rejected at matrix construction") {
  SkillTaxonomy tax = SkillTaxonomy::default_taxonomy();
  TaskSpec s;
  s.task_id = "same";
  s.language = "en";
  s.skills = {SkillId::task(1), SkillId::language(1)};
  REQUIRE_THROWS_AS(build_skill_matrix(tax, {s, s}), ConfigError);
}

TEST_CASE("identity perturbation returns the row unchanged") {
  SkillMatrix m = tiny_matrix();
  REQUIRE(perturbed_mask(m, "a_en", Perturbation::identity()) == m.active_skill_mask("a_en"));
  REQUIRE(Perturbation::identity().label() == "identity");
}

TEST_CASE("language swap replaces exactly the language component") {
  SkillMatrix m = tiny_matrix();
  Perturbation p = Perturbation::language_swap(SkillId::language(2));
  REQUIRE(p.label() == "lang_swap:l_s2");
  const SkillMask out = perturbed_mask(m, "a_en", p);
  const SkillMask base = m.active_skill_mask("a_en");
  for (size_t c = 0; c < 6; ++c) REQUIRE(out[c] == base[c]);  // task skills untouched
  REQUIRE(m.language_of_mask(out) == SkillId::language(2));

  Perturbation bad = p;
  bad.swap_language = SkillId::task(1);
  REQUIRE_THROWS_AS(perturbed_mask(m, "a_en", bad), ContractError);
}

TEST_CASE("all-task-skills perturbation saturates the task half only") {
  SkillMatrix m = tiny_matrix();
  Perturbation p = Perturbation::all_task_skills();
  REQUIRE(p.label() == "all_task_skills");
  const SkillMask out = perturbed_mask(m, "b_zh", p);
  for (size_t c = 0; c < 6; ++c) REQUIRE(out[c] == 1);
  REQUIRE(m.language_of_mask(out) == SkillId::language(2));
}

TEST_CASE("random task-skill perturbation is seeded and never all-zero") {
  SkillMatrix m = tiny_matrix();
  Perturbation p = Perturbation::random_task_skills(11);
  REQUIRE(p.label() == "random_task_skills:seed=11");

  const SkillMask a = perturbed_mask(m, "a_en", p);
  const SkillMask b = perturbed_mask(m, "a_en", p);
  REQUIRE(a == b);  // same seed, same draw
  REQUIRE(m.language_of_mask(a) == SkillId::language(1));  // language untouched

  // Over many seeds, every draw keeps at least one task skill active, and
  // rejected all-zero draws are reported.
  int total_redraws = 0;
  for (uint64_t seed = 0; seed < 500; ++seed) {
    int redraws = 0;
    const SkillMask out =
        perturbed_mask(m, "a_en", Perturbation::random_task_skills(seed, 0.15), &redraws);
    int active = 0;
    for (size_t c = 0; c < 6; ++c) active += out[c];
    REQUIRE(active >= 1);
    total_redraws += redraws;
  }
  // With p=0.15 the all-zero outcome has probability 0.85^6 ~= 0.38, so
  // rejections must occur across 500 seeds.
  REQUIRE(total_redraws > 0);
}

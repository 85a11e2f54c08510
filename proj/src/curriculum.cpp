#include "cruise/curriculum.hpp"

#include "cruise/errors.hpp"

namespace cruise {

void CurriculumStage::validate() const {
  const std::string where = "curriculum.stage" + std::to_string(index);
  if (index < 1) throw ConfigError(where + ".index", "must be >= 1");
  if (timestep_budget <= 0) throw ConfigError(where + ".timestep_budget", "must be > 0");
  if (!(agility > 0.0)) throw ConfigError(where + ".agility", "must be > 0");
  if (!(v_min >= 0.0)) throw ConfigError(where + ".v_min", "must be >= 0");
  if (!(collision_weight >= 0.0)) throw ConfigError(where + ".collision_weight", "must be >= 0");
  if (!(gate_tolerance > 0.0)) throw ConfigError(where + ".gate_tolerance", "must be > 0");
  if (!(overtake_weight >= 0.0)) throw ConfigError(where + ".overtake_weight", "must be >= 0");
}

std::vector<CurriculumStage> default_curriculum() {
  // index, name, budget, v_min, α, c_enable, w_coll, g_tol, w_over, terminal
  return {
      {1, "Basics", 1'000'000, 1.0, 2.0, false, 0.0, 0.5, 0.0, false},
      {2, "Intermediate", 3'000'000, 3.0, 3.0, true, 0.25, 0.3, 0.1, false},
      {3, "Advanced", 6'000'000, 5.0, 4.0, true, 0.5, 0.25, 0.2, false},
      {4, "Advanced II", 10'000'000, 7.0, 6.0, true, 0.6, 0.2, 0.2, true},
      {5, "Advanced III", 20'000'000, 10.0, 7.5, true, 0.7, 0.2, 0.2, true},
  };
}

CurriculumStage builtin_stage(int index) {
  if (index < 1 || index > 5) throw ConfigError("stage", "built-in stages are 1..5");
  return default_curriculum()[static_cast<std::size_t>(index - 1)];
}

std::vector<CurriculumStage> with_budgets(std::vector<CurriculumStage> stages,
                                          const std::vector<std::int64_t>& budgets) {
  if (budgets.size() != stages.size())
    throw ConfigError("curriculum.budgets", "one budget per stage required");
  for (std::size_t i = 0; i < stages.size(); ++i) stages[i].timestep_budget = budgets[i];
  return stages;
}

void validate_schedule(const std::vector<CurriculumStage>& stages) {
  if (stages.empty()) throw ConfigError("curriculum", "schedule is empty");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    stages[i].validate();
    if (i > 0 && stages[i].index <= stages[i - 1].index)
      throw ConfigError("curriculum", "stage indices must be strictly increasing");
  }
}

}  // namespace cruise

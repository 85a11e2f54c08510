#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cruise {

/// Environment and reward parameters for one curriculum stage.
struct CurriculumStage {
  int index{1};
  std::string name;
  std::int64_t timestep_budget{1'000'000};
  double v_min{1.0};              // speed target [m/s]
  double agility{2.0};            // α, action scale [m/s²]
  bool collisions_enabled{false};
  double collision_weight{0.0};
  double gate_tolerance{0.5};     // [m]
  double overtake_weight{0.0};
  bool collision_terminal{false};

  void validate() const;
  bool operator==(const CurriculumStage&) const = default;
};

/// The five built-in stages (Basics .. Advanced III).
std::vector<CurriculumStage> default_curriculum();

/// Built-in stage by index 1..5.
CurriculumStage builtin_stage(int index);

/// Copy of `stages` with budgets replaced, e.g. for desk-scale runs.
std::vector<CurriculumStage> with_budgets(std::vector<CurriculumStage> stages,
                                          const std::vector<std::int64_t>& budgets);

void validate_schedule(const std::vector<CurriculumStage>& stages);

}  // namespace cruise

#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "moesim/sim.hpp"

namespace moesim {

// Named, self-contained experiment fixtures. Each returns its full result
// table as JSON; all seeds are baked in so reruns are byte-identical.
nlohmann::json run_fig12_imbalance();
nlohmann::json run_fig9_sweep();
nlohmann::json run_fig13_ablation();
nlohmann::json run_fig11_diurnal();

std::vector<std::string> scenario_names();
nlohmann::json run_scenario(const std::string& name);

nlohmann::json report_to_json(const SimReport& r);

}  // namespace moesim

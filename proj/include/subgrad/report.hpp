#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "subgrad/asd.hpp"

namespace subgrad {

/// One engine run, serialized to the stable JSON schema shipped under
/// schemas/. Round-trips losslessly (doubles use shortest-round-trip form).
struct RunReport {
  std::string program;
  std::vector<double> at;
  std::optional<std::uint64_t> seed;
  std::vector<double> direction;
  double value = 0.0;
  double directional_derivative = 0.0;
  std::vector<double> subgradient;
  std::int64_t runtime_f = 0;
  std::int64_t runtime_asd = 0;
  double ratio = 1.0;
  std::string variant;
};

inline nlohmann::json to_json(const RunReport& r) {
  nlohmann::json j{
      {"command", "run"},
      {"program", r.program},
      {"at", r.at},
      {"direction", r.direction},
      {"value", r.value},
      {"directional_derivative", r.directional_derivative},
      {"subgradient", r.subgradient},
      {"cost", {{"runtime_f", r.runtime_f}, {"runtime_asd", r.runtime_asd}, {"ratio", r.ratio}}},
      {"variant", r.variant},
  };
  if (r.seed)
    j["seed"] = *r.seed;
  else
    j["seed"] = nullptr;
  return j;
}

inline RunReport run_report_from_json(const nlohmann::json& j) {
  RunReport r;
  r.program = j.at("program").get<std::string>();
  r.at = j.at("at").get<std::vector<double>>();
  if (!j.at("seed").is_null()) r.seed = j.at("seed").get<std::uint64_t>();
  r.direction = j.at("direction").get<std::vector<double>>();
  r.value = j.at("value").get<double>();
  r.directional_derivative = j.at("directional_derivative").get<double>();
  r.subgradient = j.at("subgradient").get<std::vector<double>>();
  r.runtime_f = j.at("cost").at("runtime_f").get<std::int64_t>();
  r.runtime_asd = j.at("cost").at("runtime_asd").get<std::int64_t>();
  r.ratio = j.at("cost").at("ratio").get<double>();
  r.variant = j.at("variant").get<std::string>();
  return r;
}

inline RunReport make_run_report(std::string program, std::span<const double> at,
                                 std::optional<std::uint64_t> seed,
                                 std::span<const double> direction,
                                 const AsdProgramResult<double>& r, Variant variant) {
  RunReport rep;
  rep.program = std::move(program);
  rep.at.assign(at.begin(), at.end());
  rep.seed = seed;
  rep.direction.assign(direction.begin(), direction.end());
  rep.value = r.value;
  rep.directional_derivative = r.deriv;
  rep.subgradient = r.u;
  rep.runtime_f = r.cost.runtime_f;
  rep.runtime_asd = r.cost.runtime_asd;
  rep.ratio = r.cost.ratio;
  rep.variant = to_string(variant);
  return rep;
}

}  // namespace subgrad

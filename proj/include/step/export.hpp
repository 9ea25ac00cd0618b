#pragma once

#include <nlohmann/json.hpp>

#include "step/dynamics.hpp"
#include "step/geom_planner.hpp"

namespace step {

inline nlohmann::ordered_json path_to_json(const GeometricPath& path) {
  nlohmann::ordered_json doc;
  auto poses = nlohmann::ordered_json::array();
  for (const auto& p : path.poses) poses.push_back({p.x(), p.y()});
  doc["poses"] = std::move(poses);
  doc["total_risk"] = path.total_risk;
  doc["total_length"] = path.total_length;
  return doc;
}

template <class Model>
nlohmann::ordered_json trajectory_to_json(const Trajectory<Model>& traj) {
  auto rows = [](const auto& vectors) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& v : vectors) arr.push_back(std::vector<double>(v.data(), v.data() + v.size()));
    return arr;
  };
  nlohmann::ordered_json doc;
  doc["dt"] = traj.dt;
  doc["states"] = rows(traj.states);
  doc["controls"] = rows(traj.controls);
  return doc;
}

}  // namespace step

#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "step/errors.hpp"
#include "step/gridmap.hpp"

namespace step {

inline nlohmann::ordered_json map_to_json(const GridMap& map) {
  nlohmann::ordered_json doc;
  doc["version"] = 1;
  doc["resolution"] = map.resolution();
  doc["origin"] = {map.origin().x(), map.origin().y()};
  doc["width"] = map.width();
  doc["height"] = map.height();
  auto& layers = doc["layers"] = nlohmann::ordered_json::object();
  for (const auto& name : map.layer_names()) {
    auto arr = nlohmann::ordered_json::array();
    for (double v : map.layer(name)) {
      if (is_missing(v))
        arr.push_back(nullptr);
      else
        arr.push_back(v);
    }
    layers[name] = std::move(arr);
  }
  return doc;
}

namespace detail {

template <class T>
T require_field(const nlohmann::json& doc, const char* field) {
  if (!doc.contains(field)) throw ParseError(std::string("map file: missing field '") + field + "'");
  try {
    return doc.at(field).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("map file: field '") + field + "': " + e.what());
  }
}

}  // namespace detail

inline GridMap map_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ParseError("map file: top level must be an object");
  const int version = detail::require_field<int>(doc, "version");
  if (version != 1) throw ParseError("map file: field 'version': unsupported version " + std::to_string(version));
  const double res = detail::require_field<double>(doc, "resolution");
  const auto origin = detail::require_field<std::vector<double>>(doc, "origin");
  if (origin.size() != 2) throw ParseError("map file: field 'origin': expected [x, y]");
  const auto width = detail::require_field<std::size_t>(doc, "width");
  const auto height = detail::require_field<std::size_t>(doc, "height");

  std::optional<GridMap> map;
  try {
    map.emplace(width, height, res, Eigen::Vector2d(origin[0], origin[1]));
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("map file: ") + e.what());
  }
  if (!doc.contains("layers") || !doc["layers"].is_object())
    throw ParseError("map file: field 'layers' must be an object");

  for (const auto& [name, values] : doc["layers"].items()) {
    const std::string where = "map file: field 'layers." + name + "'";
    if (!values.is_array()) throw ParseError(where + ": expected array");
    if (values.size() != map->cell_count())
      throw ParseError(where + ": expected " + std::to_string(map->cell_count()) + " values, got " +
                       std::to_string(values.size()));
    std::vector<double> data;
    data.reserve(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto& v = values[i];
      if (v.is_null())
        data.push_back(kMissing);
      else if (v.is_number())
        data.push_back(v.get<double>());
      else
        throw ParseError(where + "[" + std::to_string(i) + "]: expected number or null");
    }
    map->set_layer(name, std::move(data));
  }
  return std::move(*map);
}

inline void save_map(const GridMap& map, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << map_to_json(map).dump() << '\n';
}

inline GridMap load_map_from_string(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("map file: ") + e.what());
  }
  return map_from_json(doc);
}

inline GridMap load_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return load_map_from_string(buf.str());
}

}  // namespace step

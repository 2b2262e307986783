// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "certigraph/common.hpp"
#include "certigraph/conformal.hpp"
#include "json.hpp"

namespace certigraph {

inline nlohmann::ordered_json value_to_json(const Value& v) {
  using json = nlohmann::ordered_json;
  if (std::holds_alternative<std::string>(v)) return json(std::get<std::string>(v));
  if (std::holds_alternative<double>(v)) return json(std::get<double>(v));
  const Box& b = std::get<Box>(v);
  return json::array({b.x0, b.y0, b.x1, b.y1});
}

inline Value value_from_json(const nlohmann::ordered_json& j) {
  if (j.is_string()) return Value{j.get<std::string>()};
  if (j.is_number()) return Value{j.get<double>()};
  if (j.is_array() && j.size() == 4)
    return Value{Box{j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(),
                     j.at(3).get<double>()}};
  throw Error(ErrorKind::IoError, "bad value json");
}

inline nlohmann::ordered_json features_to_json(const conformal::NodeFeatures& x) {
  using json = nlohmann::ordered_json;
  json j;
  j["type"] = node_type_name(x.type);
  json cands = json::array();
  for (const Candidate& c : x.candidates) cands.push_back(json::array({value_to_json(c.value), c.prob}));
  j["candidates"] = std::move(cands);
  j["fidelity"] = x.fidelity;
  j["parent_empty"] = x.parent_empty;
  return j;
}

inline conformal::NodeFeatures features_from_json(const nlohmann::ordered_json& j) {
  conformal::NodeFeatures x;
  x.type = node_type_from_name(j.at("type").get<std::string>());
  for (const auto& c : j.at("candidates"))
    x.candidates.push_back({value_from_json(c.at(0)), c.at(1).get<double>()});
  x.fidelity = j.at("fidelity").get<int>();
  x.parent_empty = j.at("parent_empty").get<bool>();
  return x;
}

}  // namespace certigraph

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "certigraph/common.hpp"
#include "certigraph/conformal.hpp"
#include "certigraph/controller.hpp"
#include "certigraph/engine.hpp"
#include "certigraph/world.hpp"

namespace certigraph::selfplay {

// Everything the mining adversary needs to run the pipeline: scorers and
// calibrators, plus the control policy. Frozen bundles are never mutated by
// mining; refresh_adversary produces one from the current student.
struct AgentBundle {
  engine::Bundle bundle;
  engine::PolicyKind policy_kind = engine::PolicyKind::Heuristic;
  control::PolicyParams policy;
  bool frozen = false;
};

struct FailingNode {
  std::string node_id;
  NodeType type = NodeType::OcrString;
  conformal::NodeFeatures features;
  Value truth;
  double score = 0;  // adversary scorer on (features, truth); > tau by construction
};

struct Counterexample {
  uint64_t world_seed = 0;
  world::Difficulty difficulty = world::Difficulty::Easy;
  bool perturbed = false;
  world::PerturbationKind kind = world::PerturbationKind::CharConfusionShift;
  double magnitude = 0;
  uint64_t perturb_seed = 0;
  uint64_t episode_seed = 0;
  bool wrong_answer = false;        // failure kinds; at least one holds
  bool high_nonconformity = false;
  std::vector<FailingNode> nodes;
  double severity = 0;  // max failing-node score; ranks what the cap keeps
};

struct PerturbationSpec {
  world::PerturbationKind kind = world::PerturbationKind::CharConfusionShift;
  double magnitude = 0;
};

std::vector<PerturbationSpec> default_grid();

struct MineConfig {
  std::vector<PerturbationSpec> grid;  // applied per world; see include_unperturbed
  bool include_unperturbed = false;
  double budget = 16;
  control::CostModel cost;
  std::size_t cap = 500;  // per round; excess dropped lowest-severity first
  uint64_t seed = 1;
  int threads = 0;
};

// Runs the frozen adversary over worlds x grid and keeps episodes failing
// either predicate: wrong final answer, or some labeled node whose truth
// scores above the adversary's own threshold. Deterministic given (agent,
// worlds, cfg); neither the agent nor the worlds are mutated.
std::vector<Counterexample> mine_counterexamples(const AgentBundle& adversary,
                                                 const std::vector<world::WorldInstance>& worlds,
                                                 const MineConfig& cfg);

// Appends every failing node record to the pool of its type (provenance
// "selfplay"); versions bump once per touched pool. Returns appended counts.
std::map<NodeType, std::size_t> augment_pools(
    std::map<NodeType, conformal::CalibrationPool>& pools,
    const std::vector<Counterexample>& mined);

// Deep copy with frozen=true; later student updates never leak in.
AgentBundle refresh_adversary(const AgentBundle& student);

std::string counterexamples_to_jsonl(const std::vector<Counterexample>& mined);
std::vector<Counterexample> counterexamples_from_jsonl(const std::string& text);

}  // namespace certigraph::selfplay

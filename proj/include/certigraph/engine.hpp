// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "certigraph/common.hpp"
#include "certigraph/conformal.hpp"
#include "certigraph/controller.hpp"
#include "certigraph/dsl.hpp"
#include "certigraph/world.hpp"

namespace certigraph::engine {

enum class ExecMode { Full, NoCp, FinalOnlyCp };
const char* exec_mode_name(ExecMode m);

enum class PolicyKind { Learned, Heuristic, AcceptAlways, AbortAlways };
const char* policy_kind_name(PolicyKind p);
PolicyKind policy_kind_from_name(const std::string& s);

struct CertificateState {
  bool present = false;  // absent in no-cp traces (and non-answer final-only nodes)
  double tau = 0;
  double set_size = 0;  // member count, or interval width for chart nodes
  double dispersion = 0;
  NodeType type = NodeType::OcrString;
  bool parent_empty = false;
  std::optional<bool> truth_in_set;  // populated in training traces only
};

struct NodeOutcome {
  std::string node_id;
  NodeType type = NodeType::OcrString;
  conformal::NodeFeatures input;  // candidates + context of the final attempt
  conformal::ConformalSet set;    // accepted set (singleton MAP outside full CP)
  std::vector<Candidate> evidence;  // set member values with raw candidate probs
  CertificateState certificate;
  control::Action action = control::Action::Accept;  // final action at this node
  int retries = 0;
  int fidelity = 1;
  double cost = 0;  // total charged for this node, retries/expansion included
  bool has_point = false;
  Value point_choice;  // lowest-score member; interval midpoint for chart nodes
  uint64_t cand_seed = 0;  // candidate-draw seed of the final attempt (replay)
};

struct MutationLogEntry {
  std::string node;
  control::Action action;  // Retry or Expand
  std::vector<std::string> added;  // node ids created by Expand
};

constexpr const char* kNoAnswer = "NO_ANSWER";

struct AnswerRecord {
  bool aborted = false;
  bool forced = false;  // budget could not cover an unavoidable execution
  bool has_answer = false;
  std::string answer = kNoAnswer;
  conformal::ConformalSet answer_set;
};

struct ExecutionTrace {
  uint64_t seed = 0;
  ExecMode mode = ExecMode::Full;
  double budget = 16;
  std::vector<NodeOutcome> outcomes;  // execution order
  std::vector<MutationLogEntry> mutations;
  AnswerRecord answer;
  double comp_cost = 0;
  dsl::ReasoningGraph final_graph;
};

struct Bundle {
  std::map<NodeType, conformal::Scorer> scorers;
  std::map<NodeType, conformal::ConformalCalibrator> calibrators;

  static Bundle with_default_scorers();
};

struct EngineConfig {
  ExecMode mode = ExecMode::Full;
  PolicyKind policy = PolicyKind::AcceptAlways;
  control::PolicyParams params;  // Learned policy weights
  control::CostModel cost;
  double budget = 16;
  bool training = false;  // sample the policy and record truth_in_set
};

struct ParentSet {
  std::string id;
  std::vector<Candidate> members;  // accepted values with raw candidate probs
};

// Serialized fuse context: all parent members in parent-id then ascending
// nonconformity-score order; tool context is just (region, prompt, fidelity).
struct NodeInput {
  dsl::RegionSpec region;
  std::string prompt;
  int fidelity = 1;
  std::vector<ParentSet> parents;  // declaration order (drives fusion)
  std::vector<std::pair<std::string, conformal::ScoredValue>> serialized;
  bool parent_empty = false;
};

NodeInput node_input(const dsl::ReasoningGraph& g, const std::string& node_id,
                     const std::map<std::string, NodeOutcome>& executed);

// Deterministic fusion. Prompt selects the op: "lookup", "merge", "sum",
// "compare <a> <b>", "count", "direct <query>". Emits normalized pseudo-probs,
// MAP first, capped at the candidate cap. With probability
// confab_prob * gain^(fidelity-1) a spurious candidate not derived from the
// parents is injected (the synthetic stand-in for fuser confabulation);
// pass confab_prob = 0 for evidence-support replay.
std::vector<Candidate> fuse_candidates(const std::string& prompt,
                                       const std::vector<ParentSet>& parents,
                                       const world::WorldInstance& w, double confab_prob,
                                       int fidelity, uint64_t seed);

// Lowest-score member wins; score ties resolved by lexicographic value order;
// empty set (or aborted episode) reports kNoAnswer.
std::string select_answer(const conformal::ConformalSet& answer_set);

// Topological sweep with conformal sets, controller actions and immediate
// local re-execution of mutated/new nodes. comp_cost never exceeds budget.
ExecutionTrace execute(const dsl::ReasoningGraph& g, const world::WorldInstance& w,
                       const Bundle& bundle, const EngineConfig& cfg, uint64_t seed);

// Wrapper collecting the policy-gradient step records of a training run.
ExecutionTrace execute_recorded(const dsl::ReasoningGraph& g, const world::WorldInstance& w,
                                const Bundle& bundle, const EngineConfig& cfg, uint64_t seed,
                                std::vector<control::StepRecord>* steps);

control::CostBreakdown trace_cost(const ExecutionTrace& trace, const world::WorldInstance& w,
                                  const control::CostModel& m);

std::string trace_to_json(const ExecutionTrace& trace);

}  // namespace certigraph::engine

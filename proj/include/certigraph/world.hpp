// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "certigraph/common.hpp"
#include "certigraph/dsl.hpp"

namespace certigraph::world {

constexpr int kCandidateCap = 16;
constexpr const char* kAlphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

// Observation-noise profile. Instances carry their own copy so perturbations
// can shift it per instance. All rates scale with fidelity_gain^(fidelity-1).
struct NoiseConfig {
  double char_confusion_prob = 0.08;  // per-character corruption rate
  double box_jitter_sigma = 6.0;      // scene units, per coordinate
  double numeric_noise_sigma = 0.05;  // relative to series value
  int distractor_count = 0;           // extra off-task fields/objects
  double fidelity_gain = 0.5;         // noise multiplier per fidelity step
  double score_jitter = 0.05;         // log-weight jitter; keeps scores atomless
  double fuse_confab_prob = 0.08;     // spurious fusion candidate injection rate

  static NoiseConfig zero() {
    NoiseConfig n;
    n.char_confusion_prob = 0;
    n.box_jitter_sigma = 0;
    n.numeric_noise_sigma = 0;
    n.distractor_count = 0;
    n.score_jitter = 0;
    n.fuse_confab_prob = 0;
    return n;
  }
};

enum class Difficulty { Easy, Medium, Hard };
const char* difficulty_name(Difficulty d);
Difficulty difficulty_from_name(const std::string& s);

struct TextField {
  Box region;
  std::string truth;  // A-Z0-9, length 3-10
  bool distractor = false;
};

struct SceneObject {
  Box box;
  std::string label;
  bool distractor = false;
};

struct Series {
  std::string key;
  double value = 0;
  Box region;
};

enum class PerturbationKind { CharConfusionShift, Clutter, AffineOffset, PanelShuffle };
const char* perturbation_name(PerturbationKind k);
PerturbationKind perturbation_from_name(const std::string& s);

struct PerturbationTag {
  PerturbationKind kind;
  double magnitude = 0;
  uint64_t seed = 0;
};

struct WorldInstance {
  uint64_t seed = 0;
  Difficulty difficulty = Difficulty::Easy;
  NoiseConfig noise;
  std::vector<TextField> fields;
  std::vector<SceneObject> objects;
  std::vector<Series> series;
  Query query;
  std::string gold_answer;  // canonical string form
  double gold_numeric = 0;
  bool gold_is_numeric = false;
  std::vector<PerturbationTag> perturbations;
};

WorldInstance generate_instance(uint64_t seed, Difficulty d);
WorldInstance generate_instance(uint64_t seed, Difficulty d, const NoiseConfig& base);

// Scene resolution shared by oracle and ground truth: max overlap area wins,
// ties broken by lowest index (real content is indexed before distractors).
// Returns -1 when nothing intersects.
int resolve_field(const WorldInstance& w, const Box& region);
int resolve_series(const WorldInstance& w, const Box& region);

// Simulated perception tool. Returns up to kCandidateCap (value, pseudo-prob)
// pairs, probabilities summing to <= 1, candidate 0 the MAP. Empty region
// content yields an empty list, not an error.
std::vector<Candidate> tool_oracle(NodeType type, const WorldInstance& w, const Box& region,
                                   const std::string& prompt, int fidelity, uint64_t seed);

// Weak no-tool guesser backing the fallback graph's direct answer node.
std::vector<Candidate> direct_candidates(const WorldInstance& w, const std::string& query_text,
                                         int fidelity, uint64_t seed);

// Gold target for a node. Tool nodes resolve against the scene; fuse nodes
// resolve through their op (merge fuses inherit the first tool ancestor's
// truth, answer fuses carry the instance gold). Throws Unresolvable when the
// region covers no content or a det probe indexes past the last match.
Value ground_truth(const WorldInstance& w, const dsl::ReasoningGraph& g, const std::string& node_id);

// Observation-difficulty shifts; gold_answer is never altered. PanelShuffle
// with negative magnitude applies the inverse of the seed's permutation.
WorldInstance perturb(const WorldInstance& w, PerturbationKind kind, double magnitude,
                      uint64_t seed);

std::string world_to_json(const WorldInstance& w);
WorldInstance world_from_json(const std::string& text);

}  // namespace certigraph::world

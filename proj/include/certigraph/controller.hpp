// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "certigraph/common.hpp"
#include "certigraph/rng.hpp"

namespace certigraph::control {

enum class Action { Accept, Retry, Expand, Abort };
constexpr int kNumActions = 4;
const char* action_name(Action a);
Action action_from_name(const std::string& s);

struct CostModel {
  double c_tool = 1.0;   // first execution of a tool node
  double c_retry = 2.0;  // high-fidelity re-run, any node kind
  double c_fuse = 0.25;  // one fusion pass
  double beta = 0.05;    // compute weight in the episode objective
  double err_weight = 1.0;
};

struct BudgetState {
  double budget = 16.0;
  double spent = 0.0;
  double remaining() const { return budget - spent; }
};

// tau, set size, dispersion, normalized remaining budget, node-type one-hot,
// parent-empty flag. Unbounded inputs squashed by x/(1+x) (+inf -> 1) so the
// linear policy stays finite.
constexpr int kPolicyFeatureDim = 9;

using FeatureVec = std::array<double, kPolicyFeatureDim>;

FeatureVec policy_features(double tau, double set_size, double dispersion, NodeType type,
                           bool parent_empty, const BudgetState& budget);

struct PolicyParams {
  // one weight row per action; zero-initialized => uniform policy
  std::array<FeatureVec, kNumActions> w{};
};

struct RewardBaseline {
  double value = 0.0;
  double decay = 0.9;
};

struct Decision {
  Action action = Action::Accept;
  double logp = 0;
  std::array<double, kNumActions> probs{};  // masked actions exactly 0
};

// Masked linear-softmax policy. Samples when `sample`, argmax otherwise
// (argmax ties resolved toward the lower action index). Throws
// AllActionsMasked when the mask removes everything.
Decision decide(const PolicyParams& p, const FeatureVec& f,
                const std::array<bool, kNumActions>& masked, bool sample, Rng& rng);

// Retry while uncertain and retries remain, else accept; never aborts.
constexpr double kHeuristicSizeThreshold = 3.0;
Action heuristic_decide(double set_size, int retry_count,
                        const std::array<bool, kNumActions>& masked);

// C_err = err_weight*[wrong] + err_weight*[gold not in answer set];
// C = C_err + beta * C_comp.
struct CostBreakdown {
  double c_err = 0;
  double c_comp = 0;
  double c_total = 0;
};
CostBreakdown episode_cost(bool answer_correct, bool gold_in_answer_set, double comp_cost,
                           const CostModel& m);

/* policy-gradient training ------------------------------------------- */

struct StepRecord {
  FeatureVec features{};
  Action action = Action::Accept;
  std::array<bool, kNumActions> masked{};
};

struct EpisodeRecord {
  std::vector<StepRecord> steps;
  double reward = 0;  // typically -C_total
};

// Surrogate whose analytic gradient the update ascends, at a frozen baseline:
// sum over episodes/steps of log pi(a | f, mask) * (R_ep - baseline).
double pg_objective(const PolicyParams& p, const std::vector<EpisodeRecord>& batch,
                    double baseline);
std::array<FeatureVec, kNumActions> pg_gradient(const PolicyParams& p,
                                                const std::vector<EpisodeRecord>& batch,
                                                double baseline);

// One REINFORCE step: w += lr * grad (baseline frozen during the step), then
// baseline <- decay*baseline + (1-decay)*mean(batch rewards).  The gradient is
// a batch sum, so callers wanting batch-size-independent steps scale lr.
void reinforce_update(PolicyParams& p, RewardBaseline& b,
                      const std::vector<EpisodeRecord>& batch, double lr);

std::string policy_to_json(const PolicyParams& p, const RewardBaseline& b);
void policy_from_json(const std::string& text, PolicyParams& p, RewardBaseline& b);

}  // namespace certigraph::control

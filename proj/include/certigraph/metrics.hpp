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

namespace certigraph::metrics {

struct Wilson {
  double lo = 0;
  double hi = 1;
};

// 95% Wilson score interval; degenerate [0,1] when n = 0.
Wilson wilson95(std::size_t hits, std::size_t n);

// Exact P(Bin(n, 0.5) >= k); the one-sided paired (McNemar) test used for
// hallucination-direction comparisons.
double binom_tail_geq_half(std::size_t n, std::size_t k);

struct CoverageStat {
  std::size_t covered = 0;
  std::size_t total = 0;
  double rate() const { return total ? static_cast<double>(covered) / total : 0.0; }
};

// Shared filter for calibration harvesting and coverage scoring. Truth must
// resolve; for the discrete string types the truth must additionally appear in
// the candidate list, the population on which set membership and the
// score-threshold event coincide.
bool coverage_eligible(const conformal::NodeFeatures& x, const Value& truth);

// Coverage of (features, truth) test nodes: fraction with score(truth) <= tau
// (equivalently truth in the untruncated set), plus Wilson CI.
// Throws EmptyBatch when test_nodes is empty.
std::pair<double, Wilson> eval_coverage(const conformal::ConformalCalibrator& calib,
                                        const conformal::Scorer& scorer,
                                        const std::vector<conformal::PoolExample>& test_nodes);

// Evidence-support test for the final answer: a non-aborted answer must be
// entailed by some accepted non-answer set (exact/substring string membership,
// interval or exact numeric containment, IoU > 0.5 for boxes) or be derivable
// by a confabulation-free replay of the answer fusion over the accepted
// parent sets. Aborted or unanswered episodes are vacuously supported.
bool answer_supported(const engine::ExecutionTrace& trace, const world::WorldInstance& w);

struct EpisodeEval {
  bool aborted = false;
  bool forced_abort = false;
  bool answered = false;  // non-aborted, non-empty answer set
  bool correct = false;   // exact match against the instance gold
  bool answer_covered = false;
  bool hallucinated = false;  // answered and unsupported
  bool has_abs_error = false;
  double abs_error = 0;  // numeric-gold episodes with a parseable answer
  double comp_cost = 0;
  control::CostBreakdown cost;
  std::map<NodeType, CoverageStat> node_cov;  // labeled, certificate-bearing nodes
};

EpisodeEval evaluate_episode(const engine::ExecutionTrace& trace, const world::WorldInstance& w,
                             const engine::Bundle& bundle, const control::CostModel& cost);

struct MetricsReport {
  std::size_t episodes = 0;
  std::size_t answered = 0;
  std::size_t aborted = 0;
  std::size_t forced_aborts = 0;
  double em = 0;             // correct / episodes
  double answer_coverage = 0;  // gold in answer set / non-aborted
  Wilson answer_coverage_ci;
  double hallucination_rate = 0;  // unsupported / answered
  Wilson hallucination_ci;
  double mean_cost = 0;  // realized compute per episode
  double mean_total_cost = 0;
  double abs_error = 0;  // mean over numeric-gold answered episodes
  std::size_t abs_error_count = 0;
  std::map<NodeType, CoverageStat> node_coverage;
  std::map<NodeType, Wilson> node_coverage_ci;
  uint64_t fingerprint = 0;    // fnv1a64 of config_json
  std::string config_json;     // canonical run configuration
};

MetricsReport aggregate(const std::vector<EpisodeEval>& evals);

std::string report_to_json(const MetricsReport& r);
// Same values, key/value rows; per-type rows carry the type in the key.
std::string report_to_csv(const MetricsReport& r);
MetricsReport report_from_json(const std::string& text);

}  // namespace certigraph::metrics

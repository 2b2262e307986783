// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "certigraph/common.hpp"
#include "certigraph/conformal.hpp"
#include "certigraph/controller.hpp"
#include "certigraph/engine.hpp"
#include "certigraph/metrics.hpp"
#include "certigraph/selfplay.hpp"
#include "certigraph/world.hpp"

namespace certigraph::bench {

struct SuiteConfig {
  int instances = 500;  // per difficulty
  int seeds_per_instance = 20;
  std::vector<world::Difficulty> difficulties = {world::Difficulty::Easy,
                                                 world::Difficulty::Medium,
                                                 world::Difficulty::Hard};
  bool zero_noise = false;
  uint64_t world_seed = 711;  // instance-generation stream, distinct from episodes
};

struct RunConfig {
  engine::ExecMode mode = engine::ExecMode::Full;
  engine::PolicyKind policy = engine::PolicyKind::Heuristic;
  control::PolicyParams params;  // Learned policy weights
  control::CostModel cost;
  double budget = 16;
  double delta = 0.1;
  uint64_t seed = 20260816;  // master episode stream
  int threads = 0;
};

std::string config_json(const SuiteConfig& suite, const RunConfig& run);
uint64_t config_fingerprint(const std::string& canonical_config);

std::vector<world::WorldInstance> make_worlds(const SuiteConfig& suite);
// One perturbed copy per world; deterministic in (seed, kind, magnitude).
std::vector<world::WorldInstance> perturb_worlds(const std::vector<world::WorldInstance>& worlds,
                                                 const selfplay::PerturbationSpec& spec,
                                                 uint64_t seed);

// Scorers with all-inclusive thresholds; used for pool-collection sweeps.
engine::Bundle open_bundle(double delta);

// Accept-always sweep over `worlds` harvesting eligible labeled node examples
// per type. The bundle shapes fuse inputs: pass open_bundle() for a first
// pass, then recollect under the calibrated bundle so pool and evaluation
// node distributions match.
std::map<NodeType, conformal::CalibrationPool> build_pools(
    const std::vector<world::WorldInstance>& worlds, const engine::Bundle& bundle,
    const RunConfig& run);

engine::Bundle calibrated_bundle(const std::map<NodeType, conformal::CalibrationPool>& pools,
                                 double delta);

// open collect -> calibrate -> recollect -> recalibrate
std::pair<engine::Bundle, std::map<NodeType, conformal::CalibrationPool>> calibration_pipeline(
    const std::vector<world::WorldInstance>& pool_worlds, const RunConfig& run);

// Parallel paired episodes: repeats r of world i use episode seed
// h(run.seed, world.seed, r), independent of policy/budget, so variant
// comparisons pair exactly. Results ordered by (world index, repeat).
std::vector<metrics::EpisodeEval> run_episodes(const std::vector<world::WorldInstance>& worlds,
                                               const engine::Bundle& bundle, const RunConfig& run,
                                               int seeds_per_instance);

metrics::MetricsReport run_suite(const SuiteConfig& suite, const engine::Bundle& bundle,
                                 const RunConfig& run);

/* coverage study ------------------------------------------------------- */

// Directly harvested labeled node examples (tool probes plus synthetic
// fusions), at the default noise profile, difficulty-cycled.
std::map<NodeType, std::vector<conformal::PoolExample>> harvest_examples(std::size_t per_type,
                                                                         uint64_t seed);

struct CoverageStudyRow {
  NodeType type = NodeType::OcrString;
  double delta = 0.1;
  double mean_coverage = 0;  // over resamples
  double window_lo = 0;      // 1 - delta
  double window_hi = 0;      // 1 - delta + 1/(n_calib+1)
  std::size_t n_calib = 0;
  std::size_t n_test = 0;
  int resamples = 0;
};

// Random calibration/test resplits of a fixed harvested pool; the mean
// empirical coverage per (type, delta) should sit in the finite-sample window.
std::vector<CoverageStudyRow> coverage_study(std::size_t n_calib, std::size_t n_test,
                                             int resamples, const std::vector<double>& deltas,
                                             uint64_t seed, int threads);

/* policy training ------------------------------------------------------ */

struct TrainConfig {
  int iterations = 200;
  int batch = 48;
  double lr = 0.1;  // per-batch-mean step size (scaled by 1/batch internally)
  std::vector<double> budgets = {8, 12, 16, 24};  // sampled per episode
  // Worlds the greedy policy currently fails on are re-identified every
  // audit_every iterations and drawn with probability hard_fraction per
  // episode; failure states are otherwise too rare to leave a gradient trace.
  int audit_every = 25;
  double hard_fraction = 0.5;
  uint64_t seed = 4242;
  int threads = 0;
};

struct TrainResult {
  control::PolicyParams params;
  control::RewardBaseline baseline;
  std::vector<double> batch_mean_rewards;  // one per iteration
};

TrainResult train_policy(const std::vector<world::WorldInstance>& train_worlds,
                         const engine::Bundle& bundle, const control::CostModel& cost,
                         const TrainConfig& cfg);

/* experiment harnesses -------------------------------------------------- */

struct FrontierPoint {
  double budget = 0;
  double em = 0;
  double hallucination_rate = 0;
  double mean_cost = 0;
  double answer_coverage = 0;
};

std::vector<FrontierPoint> budget_sweep(const SuiteConfig& suite, const engine::Bundle& bundle,
                                        const RunConfig& run, const std::vector<double>& budgets);

struct RobustnessRow {
  std::string label;  // "baseline" or "<kind>@<magnitude>"
  bool baseline = false;
  world::PerturbationKind kind = world::PerturbationKind::CharConfusionShift;
  double magnitude = 0;
  metrics::MetricsReport report;
};

std::vector<RobustnessRow> robustness_suite(const SuiteConfig& suite, const engine::Bundle& bundle,
                                            const RunConfig& run,
                                            const std::vector<selfplay::PerturbationSpec>& grid);

// variant in {full, no-cp, final-only-cp, heuristic-controller}
metrics::MetricsReport run_ablation(const SuiteConfig& suite, const engine::Bundle& bundle,
                                    const control::PolicyParams& learned, const RunConfig& run,
                                    const std::string& variant);
std::vector<std::pair<std::string, metrics::MetricsReport>> run_all_ablations(
    const SuiteConfig& suite, const engine::Bundle& bundle, const control::PolicyParams& learned,
    const RunConfig& run);

/* self-play experiments -------------------------------------------------- */

struct RecoveryResult {
  double cov_clean_base = 0;  // pooled node coverage, clean eval worlds, base pools
  double cov_shift_base = 0;  // same calibrators under the perturbation grid
  double cov_clean_aug = 0;   // after mining + recalibration
  double cov_shift_aug = 0;
  std::size_t mined = 0;
  std::size_t appended = 0;
};

struct RecoveryConfig {
  int pool_worlds = 150;
  int eval_worlds = 100;
  int mine_worlds = 60;
  double delta = 0.1;
  int threads = 0;
  std::vector<selfplay::PerturbationSpec> grid;  // empty -> default_grid()
};

RecoveryResult selfplay_recovery(uint64_t seed, const RecoveryConfig& cfg);

struct SelfplayRound {
  int round = 0;
  std::size_t mined = 0;
  std::map<NodeType, std::size_t> appended;
  double cov_shift_before = 0;
  double cov_shift_after = 0;
  double cov_clean_after = 0;
};

std::vector<SelfplayRound> selfplay_loop(uint64_t seed, int rounds, const RecoveryConfig& cfg,
                                         std::vector<selfplay::Counterexample>* all_mined);

/* emission --------------------------------------------------------------- */

std::string frontier_csv(const std::vector<FrontierPoint>& rows);
std::string frontier_json(const std::vector<FrontierPoint>& rows);
std::string robustness_csv(const std::vector<RobustnessRow>& rows);
std::string robustness_json(const std::vector<RobustnessRow>& rows);
std::string ablation_csv(const std::vector<std::pair<std::string, metrics::MetricsReport>>& rows);
std::string ablation_json(const std::vector<std::pair<std::string, metrics::MetricsReport>>& rows);
std::string coverage_study_csv(const std::vector<CoverageStudyRow>& rows);
std::string coverage_study_json(const std::vector<CoverageStudyRow>& rows);
std::string selfplay_rounds_csv(const std::vector<SelfplayRound>& rows);
std::string selfplay_rounds_json(const std::vector<SelfplayRound>& rows);
std::string dataset_manifest(const SuiteConfig& suite,
                             const std::vector<world::WorldInstance>& worlds);

}  // namespace certigraph::bench

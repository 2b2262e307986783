// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "certigraph/common.hpp"

namespace certigraph::conformal {

enum class ScorerVariant { ProbComplement, EditDistance, BoxIou, NumericResidual, LearnedHead };
const char* scorer_variant_name(ScorerVariant v);
ScorerVariant scorer_variant_from_name(const std::string& s);

// Everything needed to recompute a nonconformity score later (replayability):
// the candidate list plus minimal context.
struct NodeFeatures {
  NodeType type = NodeType::OcrString;
  std::vector<Candidate> candidates;  // MAP first, pseudo-probs sum <= 1
  int fidelity = 1;
  bool parent_empty = false;
};

int levenshtein(const std::string& a, const std::string& b);

// Intersection over union; throws DegenerateBox unless both boxes are valid.
double iou(const Box& a, const Box& b);

inline double softplus(double x) {
  return x > 30 ? x : std::log1p(std::exp(x));
}

// Hand-crafted per-candidate features for the learned head:
// normalized base score, rank, margin to MAP, type magnitude (length/area/residual).
std::array<double, 4> head_features(const NodeFeatures& x, const Value& z);

struct Scorer {
  ScorerVariant variant = ScorerVariant::ProbComplement;
  NodeType type = NodeType::OcrString;
  std::array<double, 4> psi{};  // LearnedHead only

  // Lower is more conforming. Always >= 0; finite except NumericResidual
  // against an empty candidate list.
  double score(const NodeFeatures& x, const Value& z) const;
};

Scorer default_scorer(NodeType t);

struct PoolExample {
  NodeFeatures features;
  Value truth;
  std::string provenance = "base";  // "base" | "selfplay"
};

struct CalibrationPool {
  NodeType type = NodeType::OcrString;
  std::vector<PoolExample> examples;
  uint64_t version = 0;  // bumped by append_pool
};

// Appends examples and bumps the version; calibrators born from an older
// version are stale and must be recomputed before reuse.
void append_pool(CalibrationPool& pool, std::vector<PoolExample> more);

struct ConformalCalibrator {
  NodeType type = NodeType::OcrString;
  double delta = 0.1;
  std::vector<double> sorted_scores;  // ascending, ties in insertion order
  std::size_t n = 0;
  std::size_t k = 0;  // ceil((n+1)(1-delta))
  double threshold = std::numeric_limits<double>::infinity();
  uint64_t pool_version = 0;
};

inline bool is_stale(const ConformalCalibrator& c, const CalibrationPool& p) {
  return c.pool_version != p.version;
}

// Split-conformal threshold: the k-th smallest calibration score with
// k = ceil((n+1)(1-delta)); +inf when k > n. Throws EmptyPool on no examples.
ConformalCalibrator calibrate(const CalibrationPool& pool, const Scorer& scorer, double delta);

struct ScoredValue {
  Value value;
  double score = 0;
};

struct ConformalSet {
  NodeType type = NodeType::OcrString;
  std::vector<ScoredValue> members;  // ascending score; candidate order on ties
  bool truncated = false;            // K_max dropped a passing candidate
  bool is_interval = false;          // ChartNum with a MAP present
  double center = 0;                 // interval [center-radius, center+radius]
  double radius = 0;

  double set_size() const { return is_interval ? 2 * radius : static_cast<double>(members.size()); }
  bool empty() const { return members.empty(); }
  // max - min member score; 0 when fewer than two members
  double dispersion() const;
  bool contains(const Value& z) const;  // membership; interval containment for numerics
};

int k_max_for(NodeType t);  // 5 / 3 / 5 / 5

// Keep candidates scoring <= threshold (inclusive), ascending score, truncate
// to k_max. ChartNum additionally reports the interval around the MAP.
ConformalSet conformal_set(const NodeFeatures& x, const Scorer& scorer,
                           const ConformalCalibrator& calib, int k_max);

/* margin training of the learned head ------------------------------- */

// Mean hinge max{0, s_psi(x, z_true) - tau - eps} over `examples`, tau fixed.
double margin_loss(const std::vector<PoolExample>& examples, const Scorer& scorer, double tau,
                   double eps);
std::array<double, 4> margin_loss_grad(const std::vector<PoolExample>& examples,
                                       const Scorer& scorer, double tau, double eps);

struct MarginTrainResult {
  Scorer scorer;                    // LearnedHead with trained psi
  std::vector<double> epoch_losses;  // non-increasing up to 1e-9
};

// Gradient descent on the validate half; tau recomputed on the fit half at
// each epoch start and held constant within the epoch. Backtracking keeps the
// recorded loss sequence non-increasing; stops early at a plateau.
MarginTrainResult train_scorer_margin(const CalibrationPool& pool, const Scorer& init,
                                      double delta, double eps, double lr, int epochs);

/* persistence -------------------------------------------------------- */

std::string pool_to_jsonl(const CalibrationPool& pool);
CalibrationPool pool_from_jsonl(const std::string& text);
std::string calibrator_to_json(const ConformalCalibrator& c);
ConformalCalibrator calibrator_from_json(const std::string& text);

}  // namespace certigraph::conformal

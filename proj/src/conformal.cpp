// SPDX-License-Identifier: Apache-2.0
#include "certigraph/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "value_json.hpp"

namespace certigraph::conformal {

using json = nlohmann::ordered_json;

const char* scorer_variant_name(ScorerVariant v) {
  switch (v) {
    case ScorerVariant::ProbComplement: return "prob-complement";
    case ScorerVariant::EditDistance: return "edit-distance";
    case ScorerVariant::BoxIou: return "box-iou";
    case ScorerVariant::NumericResidual: return "numeric-residual";
    case ScorerVariant::LearnedHead: return "learned-head";
  }
  return "?";
}

ScorerVariant scorer_variant_from_name(const std::string& s) {
  if (s == "prob-complement") return ScorerVariant::ProbComplement;
  if (s == "edit-distance") return ScorerVariant::EditDistance;
  if (s == "box-iou") return ScorerVariant::BoxIou;
  if (s == "numeric-residual") return ScorerVariant::NumericResidual;
  if (s == "learned-head") return ScorerVariant::LearnedHead;
  throw Error(ErrorKind::UnknownKind, "scorer variant '" + s + "'");
}

int levenshtein(const std::string& a, const std::string& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int> row(m + 1);
  for (size_t j = 0; j <= m; ++j) row[j] = static_cast<int>(j);
  for (size_t i = 1; i <= n; ++i) {
    int prev = row[0];
    row[0] = static_cast<int>(i);
    for (size_t j = 1; j <= m; ++j) {
      int cur = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, prev + (a[i - 1] == b[j - 1] ? 0 : 1)});
      prev = cur;
    }
  }
  return row[m];
}

double iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) throw Error(ErrorKind::DegenerateBox, "iou over degenerate box");
  double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
  return inter / (a.area() + b.area() - inter);
}

namespace {

// Normalized probability of z under the candidate list; 0 when absent.
// Entries carrying the same value are one outcome: their mass accumulates.
double normalized_prob(const std::vector<Candidate>& cands, const Value& z, double* map_prob) {
  double total = 0;
  for (const Candidate& c : cands) total += c.prob;
  double pz = 0;
  for (const Candidate& c : cands)
    if (value_eq(c.value, z)) pz += total > 0 ? c.prob / total : 0;
  if (map_prob) {
    double best = 0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      double p = 0;
      bool first = true;
      for (std::size_t k = 0; k < cands.size() && first; ++k) {
        if (!value_eq(cands[k].value, cands[i].value)) continue;
        if (k < i) first = false;  // counted at its first occurrence
        p += total > 0 ? cands[k].prob / total : 0;
      }
      if (first) best = std::max(best, p);
    }
    *map_prob = best;
  }
  return pz;
}

std::string value_as_string(const Value& z) {
  if (!std::holds_alternative<std::string>(z))
    throw Error(ErrorKind::WrongVariant, "string-valued scorer on non-string value");
  return std::get<std::string>(z);
}

}  // namespace

std::array<double, 4> head_features(const NodeFeatures& x, const Value& z) {
  double map_prob = 0;
  double pz = normalized_prob(x.candidates, z, &map_prob);
  double rank = static_cast<double>(x.candidates.size());
  for (size_t i = 0; i < x.candidates.size(); ++i)
    if (value_eq(x.candidates[i].value, z)) {
      rank = static_cast<double>(i);
      break;
    }
  double magnitude = 0;
  if (std::holds_alternative<std::string>(z)) {
    magnitude = static_cast<double>(std::get<std::string>(z).size()) / 16.0;
  } else if (std::holds_alternative<Box>(z)) {
    magnitude = std::get<Box>(z).area() / 1e5;
  } else if (!x.candidates.empty() && std::holds_alternative<double>(x.candidates[0].value)) {
    double mu = std::get<double>(x.candidates[0].value);
    magnitude = std::abs(std::get<double>(z) - mu) / (std::abs(mu) + 1.0);
  } else {
    magnitude = std::abs(std::get<double>(z));
  }
  return {pz, rank / 16.0, map_prob - pz, magnitude};
}

double Scorer::score(const NodeFeatures& x, const Value& z) const {
  switch (variant) {
    case ScorerVariant::ProbComplement:
      return 1.0 - normalized_prob(x.candidates, z, nullptr);
    case ScorerVariant::EditDistance: {
      if (x.candidates.empty()) return static_cast<double>(value_as_string(z).size()) + 1.0;
      return static_cast<double>(
          levenshtein(value_as_string(z), value_as_string(x.candidates[0].value)));
    }
    case ScorerVariant::BoxIou: {
      if (!std::holds_alternative<Box>(z))
        throw Error(ErrorKind::WrongVariant, "box scorer on non-box value");
      if (x.candidates.empty()) return 1.0;
      return 1.0 - iou(std::get<Box>(z), std::get<Box>(x.candidates[0].value));
    }
    case ScorerVariant::NumericResidual: {
      if (!std::holds_alternative<double>(z))
        throw Error(ErrorKind::WrongVariant, "numeric scorer on non-numeric value");
      if (x.candidates.empty()) return std::numeric_limits<double>::infinity();
      return std::abs(std::get<double>(z) - std::get<double>(x.candidates[0].value));
    }
    case ScorerVariant::LearnedHead: {
      std::array<double, 4> f = head_features(x, z);
      double dot = 0;
      for (int i = 0; i < 4; ++i) dot += psi[i] * f[i];
      return softplus(dot);
    }
  }
  throw Error(ErrorKind::UnknownKind, "scorer variant");
}

Scorer default_scorer(NodeType t) {
  Scorer s;
  s.type = t;
  switch (t) {
    case NodeType::OcrString: s.variant = ScorerVariant::ProbComplement; break;
    case NodeType::DetBox: s.variant = ScorerVariant::BoxIou; break;
    case NodeType::ChartNum: s.variant = ScorerVariant::NumericResidual; break;
    case NodeType::LogicText: s.variant = ScorerVariant::ProbComplement; break;
  }
  return s;
}

void append_pool(CalibrationPool& pool, std::vector<PoolExample> more) {
  for (PoolExample& e : more) pool.examples.push_back(std::move(e));
  ++pool.version;
}

ConformalCalibrator calibrate(const CalibrationPool& pool, const Scorer& scorer, double delta) {
  if (pool.examples.empty()) throw Error(ErrorKind::EmptyPool, "calibrate over empty pool");
  if (delta <= 0 || delta >= 1) throw Error(ErrorKind::BadConfig, "delta must be in (0,1)");
  ConformalCalibrator c;
  c.type = pool.type;
  c.delta = delta;
  c.pool_version = pool.version;
  c.sorted_scores.reserve(pool.examples.size());
  for (const PoolExample& e : pool.examples)
    c.sorted_scores.push_back(scorer.score(e.features, e.truth));
  std::stable_sort(c.sorted_scores.begin(), c.sorted_scores.end());
  c.n = c.sorted_scores.size();
  c.k = static_cast<std::size_t>(
      std::ceil(static_cast<double>(c.n + 1) * (1.0 - delta)));
  c.threshold = c.k > c.n ? std::numeric_limits<double>::infinity() : c.sorted_scores[c.k - 1];
  return c;
}

double ConformalSet::dispersion() const {
  if (members.size() < 2) return 0;
  return members.back().score - members.front().score;
}

bool ConformalSet::contains(const Value& z) const {
  if (is_interval && std::holds_alternative<double>(z)) {
    double v = std::get<double>(z);
    return v >= center - radius && v <= center + radius;
  }
  for (const ScoredValue& m : members)
    if (value_eq(m.value, z)) return true;
  return false;
}

int k_max_for(NodeType t) {
  switch (t) {
    case NodeType::OcrString: return 5;
    case NodeType::DetBox: return 3;
    case NodeType::ChartNum: return 5;
    case NodeType::LogicText: return 5;
  }
  return 5;
}

ConformalSet conformal_set(const NodeFeatures& x, const Scorer& scorer,
                           const ConformalCalibrator& calib, int k_max) {
  if (k_max < 1) throw Error(ErrorKind::BadConfig, "k_max < 1");
  ConformalSet out;
  out.type = x.type;
  std::vector<ScoredValue> passing;
  for (const Candidate& c : x.candidates) {
    double s = scorer.score(x, c.value);
    if (s <= calib.threshold) passing.push_back(ScoredValue{c.value, s});
  }
  std::stable_sort(passing.begin(), passing.end(),
                   [](const ScoredValue& a, const ScoredValue& b) { return a.score < b.score; });
  if (passing.size() > static_cast<size_t>(k_max)) {
    passing.resize(k_max);
    out.truncated = true;
  }
  out.members = std::move(passing);
  if (x.type == NodeType::ChartNum && !x.candidates.empty() &&
      std::holds_alternative<double>(x.candidates[0].value)) {
    out.is_interval = true;
    out.center = std::get<double>(x.candidates[0].value);
    out.radius = calib.threshold;
  }
  return out;
}

/* margin training ----------------------------------------------------- */

double margin_loss(const std::vector<PoolExample>& examples, const Scorer& scorer, double tau,
                   double eps) {
  if (examples.empty()) throw Error(ErrorKind::EmptyBatch, "margin loss over empty set");
  double total = 0;
  for (const PoolExample& e : examples)
    total += std::max(0.0, scorer.score(e.features, e.truth) - tau - eps);
  return total / static_cast<double>(examples.size());
}

std::array<double, 4> margin_loss_grad(const std::vector<PoolExample>& examples,
                                       const Scorer& scorer, double tau, double eps) {
  if (examples.empty()) throw Error(ErrorKind::EmptyBatch, "margin grad over empty set");
  std::array<double, 4> grad{};
  for (const PoolExample& e : examples) {
    std::array<double, 4> f = head_features(e.features, e.truth);
    double dot = 0;
    for (int i = 0; i < 4; ++i) dot += scorer.psi[i] * f[i];
    if (softplus(dot) - tau - eps <= 0) continue;
    double sig = 1.0 / (1.0 + std::exp(-dot));  // d softplus
    for (int i = 0; i < 4; ++i) grad[i] += sig * f[i];
  }
  for (double& g : grad) g /= static_cast<double>(examples.size());
  return grad;
}

namespace {

// tau of the fit half under the calibration k-rule.
double fit_threshold(const std::vector<PoolExample>& fit, const Scorer& s, double delta) {
  std::vector<double> scores;
  scores.reserve(fit.size());
  for (const PoolExample& e : fit) scores.push_back(s.score(e.features, e.truth));
  std::stable_sort(scores.begin(), scores.end());
  std::size_t n = scores.size();
  std::size_t k =
      static_cast<std::size_t>(std::ceil(static_cast<double>(n + 1) * (1.0 - delta)));
  return k > n ? std::numeric_limits<double>::infinity() : scores[k - 1];
}

}  // namespace

MarginTrainResult train_scorer_margin(const CalibrationPool& pool, const Scorer& init,
                                      double delta, double eps, double lr, int epochs) {
  if (init.variant != ScorerVariant::LearnedHead)
    throw Error(ErrorKind::WrongVariant, "margin training requires the learned head");
  if (pool.examples.empty()) throw Error(ErrorKind::EmptyPool, "margin training over empty pool");

  std::size_t n_fit = (pool.examples.size() + 1) / 2;
  std::vector<PoolExample> fit(pool.examples.begin(), pool.examples.begin() + n_fit);
  std::vector<PoolExample> val(pool.examples.begin() + n_fit, pool.examples.end());
  if (val.empty()) val = fit;

  MarginTrainResult out;
  out.scorer = init;
  Scorer cur = init;
  double tau = fit_threshold(fit, cur, delta);
  double loss = std::isinf(tau) ? 0.0 : margin_loss(val, cur, tau, eps);
  out.epoch_losses.push_back(loss);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    if (std::isinf(tau) || loss <= 0) break;  // nothing violates the margin
    std::array<double, 4> grad = margin_loss_grad(val, cur, tau, eps);
    double gn = 0;
    for (double g : grad) gn += g * g;
    if (gn == 0) break;

    double step = lr;
    bool accepted = false;
    for (int tries = 0; tries < 40; ++tries) {
      Scorer trial = cur;
      for (int i = 0; i < 4; ++i) trial.psi[i] = cur.psi[i] - step * grad[i];
      double trial_tau = fit_threshold(fit, trial, delta);
      double trial_loss = std::isinf(trial_tau) ? 0.0 : margin_loss(val, trial, trial_tau, eps);
      if (trial_loss <= loss + 1e-12) {
        cur = trial;
        tau = trial_tau;
        loss = trial_loss;
        accepted = true;
        break;
      }
      step /= 2;
    }
    if (!accepted) break;  // plateau: no improving step along the gradient
    out.epoch_losses.push_back(loss);
  }
  out.scorer = cur;
  return out;
}

/* persistence ---------------------------------------------------------- */

namespace {

json features_json(const NodeFeatures& f) {
  json cands = json::array();
  for (const Candidate& c : f.candidates) cands.push_back({value_to_json(c.value), c.prob});
  return json{{"candidates", std::move(cands)},
              {"fidelity", f.fidelity},
              {"parent_empty", f.parent_empty}};
}

NodeFeatures features_from(const json& j, NodeType type) {
  NodeFeatures f;
  f.type = type;
  for (const auto& c : j.at("candidates"))
    f.candidates.push_back(Candidate{value_from_json(c.at(0)), c.at(1).get<double>()});
  f.fidelity = j.at("fidelity").get<int>();
  f.parent_empty = j.at("parent_empty").get<bool>();
  return f;
}

}  // namespace

std::string pool_to_jsonl(const CalibrationPool& pool) {
  std::string out;
  for (const PoolExample& e : pool.examples) {
    json j;
    j["type"] = node_type_name(pool.type);
    j["features"] = features_json(e.features);
    j["truth"] = value_to_json(e.truth);
    j["provenance"] = e.provenance;
    out += j.dump();
    out += '\n';
  }
  return out;
}

CalibrationPool pool_from_jsonl(const std::string& text) {
  CalibrationPool pool;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw Error(ErrorKind::IoError, std::string("pool jsonl: ") + e.what());
    }
    NodeType t = node_type_from_name(j.at("type").get<std::string>());
    if (first) {
      pool.type = t;
      first = false;
    } else if (t != pool.type) {
      throw Error(ErrorKind::WrongVariant, "mixed node types in one pool");
    }
    PoolExample e;
    e.features = features_from(j.at("features"), t);
    e.truth = value_from_json(j.at("truth"));
    e.provenance = j.at("provenance").get<std::string>();
    pool.examples.push_back(std::move(e));
  }
  return pool;
}

std::string calibrator_to_json(const ConformalCalibrator& c) {
  json j;
  j["type"] = node_type_name(c.type);
  j["delta"] = c.delta;
  j["threshold"] = std::isinf(c.threshold) ? json("inf") : json(c.threshold);
  j["n"] = c.n;
  return j.dump(2);
}

ConformalCalibrator calibrator_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw Error(ErrorKind::IoError, std::string("calibrator json: ") + e.what());
  }
  ConformalCalibrator c;
  c.type = node_type_from_name(j.at("type").get<std::string>());
  c.delta = j.at("delta").get<double>();
  c.threshold = j.at("threshold").is_string() ? std::numeric_limits<double>::infinity()
                                              : j.at("threshold").get<double>();
  c.n = j.at("n").get<std::size_t>();
  c.k = static_cast<std::size_t>(
      std::ceil(static_cast<double>(c.n + 1) * (1.0 - c.delta)));
  return c;
}

}  // namespace certigraph::conformal

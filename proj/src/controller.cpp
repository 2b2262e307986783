// SPDX-License-Identifier: Apache-2.0
#include "certigraph/controller.hpp"

#include <cmath>

#include "json.hpp"

namespace certigraph::control {

using json = nlohmann::ordered_json;

const char* action_name(Action a) {
  switch (a) {
    case Action::Accept: return "accept";
    case Action::Retry: return "retry";
    case Action::Expand: return "expand";
    case Action::Abort: return "abort";
  }
  return "?";
}

Action action_from_name(const std::string& s) {
  if (s == "accept") return Action::Accept;
  if (s == "retry") return Action::Retry;
  if (s == "expand") return Action::Expand;
  if (s == "abort") return Action::Abort;
  throw Error(ErrorKind::UnknownKind, "action '" + s + "'");
}

namespace {

double squash(double x) {
  if (std::isinf(x)) return 1.0;
  return x / (1.0 + x);
}

std::array<double, kNumActions> masked_softmax(const PolicyParams& p, const FeatureVec& f,
                                               const std::array<bool, kNumActions>& masked) {
  std::array<double, kNumActions> logits{};
  double mx = -1e300;
  bool any = false;
  for (int a = 0; a < kNumActions; ++a) {
    if (masked[a]) continue;
    any = true;
    double dot = 0;
    for (int i = 0; i < kPolicyFeatureDim; ++i) dot += p.w[a][i] * f[i];
    logits[a] = dot;
    mx = std::max(mx, dot);
  }
  if (!any) throw Error(ErrorKind::AllActionsMasked, "policy query with empty action set");
  std::array<double, kNumActions> probs{};
  double z = 0;
  for (int a = 0; a < kNumActions; ++a) {
    if (masked[a]) continue;
    probs[a] = std::exp(logits[a] - mx);
    z += probs[a];
  }
  for (int a = 0; a < kNumActions; ++a) probs[a] /= z;
  return probs;
}

}  // namespace

FeatureVec policy_features(double tau, double set_size, double dispersion, NodeType type,
                           bool parent_empty, const BudgetState& budget) {
  FeatureVec f{};
  f[0] = squash(std::max(0.0, tau));
  f[1] = squash(std::max(0.0, set_size));
  f[2] = squash(std::max(0.0, dispersion));
  f[3] = budget.budget > 0 ? clamp01(budget.remaining() / budget.budget) : 0.0;
  f[4 + static_cast<int>(type)] = 1.0;
  f[8] = parent_empty ? 1.0 : 0.0;
  return f;
}

Decision decide(const PolicyParams& p, const FeatureVec& f,
                const std::array<bool, kNumActions>& masked, bool sample, Rng& rng) {
  Decision d;
  d.probs = masked_softmax(p, f, masked);
  int chosen = -1;
  if (sample) {
    double u = rng.uniform();
    double acc = 0;
    for (int a = 0; a < kNumActions; ++a) {
      if (masked[a]) continue;
      acc += d.probs[a];
      if (u < acc) {
        chosen = a;
        break;
      }
    }
    if (chosen < 0)  // numeric tail: last unmasked
      for (int a = kNumActions - 1; a >= 0; --a)
        if (!masked[a]) {
          chosen = a;
          break;
        }
  } else {
    double best = -1;
    for (int a = 0; a < kNumActions; ++a) {
      if (masked[a]) continue;
      if (d.probs[a] > best) {
        best = d.probs[a];
        chosen = a;
      }
    }
  }
  d.action = static_cast<Action>(chosen);
  d.logp = std::log(d.probs[chosen]);
  return d;
}

Action heuristic_decide(double set_size, int retry_count,
                        const std::array<bool, kNumActions>& masked) {
  if (set_size > kHeuristicSizeThreshold && retry_count < 2 &&
      !masked[static_cast<int>(Action::Retry)])
    return Action::Retry;
  return Action::Accept;
}

CostBreakdown episode_cost(bool answer_correct, bool gold_in_answer_set, double comp_cost,
                           const CostModel& m) {
  CostBreakdown c;
  c.c_err = m.err_weight * (answer_correct ? 0.0 : 1.0) +
            m.err_weight * (gold_in_answer_set ? 0.0 : 1.0);
  c.c_comp = comp_cost;
  c.c_total = c.c_err + m.beta * c.c_comp;
  return c;
}

/* policy gradient ------------------------------------------------------ */

double pg_objective(const PolicyParams& p, const std::vector<EpisodeRecord>& batch,
                    double baseline) {
  if (batch.empty()) throw Error(ErrorKind::EmptyBatch, "pg objective over empty batch");
  double total = 0;
  for (const EpisodeRecord& ep : batch) {
    double adv = ep.reward - baseline;
    for (const StepRecord& st : ep.steps) {
      auto probs = masked_softmax(p, st.features, st.masked);
      total += std::log(probs[static_cast<int>(st.action)]) * adv;
    }
  }
  return total;
}

std::array<FeatureVec, kNumActions> pg_gradient(const PolicyParams& p,
                                                const std::vector<EpisodeRecord>& batch,
                                                double baseline) {
  if (batch.empty()) throw Error(ErrorKind::EmptyBatch, "pg gradient over empty batch");
  std::array<FeatureVec, kNumActions> grad{};
  for (const EpisodeRecord& ep : batch) {
    double adv = ep.reward - baseline;
    if (adv == 0) continue;
    for (const StepRecord& st : ep.steps) {
      auto probs = masked_softmax(p, st.features, st.masked);
      int chosen = static_cast<int>(st.action);
      for (int a = 0; a < kNumActions; ++a) {
        if (st.masked[a]) continue;
        double coeff = ((a == chosen) ? 1.0 : 0.0) - probs[a];
        for (int i = 0; i < kPolicyFeatureDim; ++i)
          grad[a][i] += coeff * st.features[i] * adv;
      }
    }
  }
  return grad;
}

void reinforce_update(PolicyParams& p, RewardBaseline& b,
                      const std::vector<EpisodeRecord>& batch, double lr) {
  auto grad = pg_gradient(p, batch, b.value);
  for (int a = 0; a < kNumActions; ++a)
    for (int i = 0; i < kPolicyFeatureDim; ++i) p.w[a][i] += lr * grad[a][i];
  double mean_r = 0;
  for (const EpisodeRecord& ep : batch) mean_r += ep.reward;
  mean_r /= static_cast<double>(batch.size());
  b.value = b.decay * b.value + (1.0 - b.decay) * mean_r;
}

std::string policy_to_json(const PolicyParams& p, const RewardBaseline& b) {
  json j;
  j["feature_names"] = {"tau", "set_size", "dispersion", "remaining_budget",
                        "type_ocr", "type_det", "type_chart", "type_logic", "parent_empty"};
  json w = json::array();
  for (int a = 0; a < kNumActions; ++a) {
    json row = json::array();
    for (int i = 0; i < kPolicyFeatureDim; ++i) row.push_back(p.w[a][i]);
    w.push_back(std::move(row));
  }
  j["actions"] = {"accept", "retry", "expand", "abort"};
  j["weights"] = std::move(w);
  j["baseline"] = b.value;
  j["baseline_decay"] = b.decay;
  return j.dump(2);
}

void policy_from_json(const std::string& text, PolicyParams& p, RewardBaseline& b) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw Error(ErrorKind::IoError, std::string("policy json: ") + e.what());
  }
  const auto& w = j.at("weights");
  if (w.size() != kNumActions) throw Error(ErrorKind::BadConfig, "policy weight rows");
  for (int a = 0; a < kNumActions; ++a) {
    if (w.at(a).size() != kPolicyFeatureDim)
      throw Error(ErrorKind::BadConfig, "policy weight cols");
    for (int i = 0; i < kPolicyFeatureDim; ++i) p.w[a][i] = w.at(a).at(i).get<double>();
  }
  b.value = j.at("baseline").get<double>();
  b.decay = j.at("baseline_decay").get<double>();
}

}  // namespace certigraph::control

// SPDX-License-Identifier: Apache-2.0
#include "certigraph/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "certigraph/rng.hpp"
#include "json.hpp"
#include "value_json.hpp"

namespace certigraph::metrics {

using json = nlohmann::ordered_json;

Wilson wilson95(std::size_t hits, std::size_t n) {
  if (n == 0) return Wilson{0, 1};
  const double z = 1.959963984540054;
  double nn = static_cast<double>(n);
  double p = static_cast<double>(hits) / nn;
  double z2 = z * z;
  double denom = 1 + z2 / nn;
  double mid = p + z2 / (2 * nn);
  double half = z * std::sqrt(p * (1 - p) / nn + z2 / (4 * nn * nn));
  return Wilson{clamp01((mid - half) / denom), clamp01((mid + half) / denom)};
}

double binom_tail_geq_half(std::size_t n, std::size_t k) {
  if (k == 0) return 1.0;
  if (k > n) return 0.0;
  double log_half_n = -static_cast<double>(n) * std::log(2.0);
  double tail = 0;
  for (std::size_t i = k; i <= n; ++i) {
    double lc = std::lgamma(static_cast<double>(n) + 1) - std::lgamma(static_cast<double>(i) + 1) -
                std::lgamma(static_cast<double>(n - i) + 1);
    tail += std::exp(lc + log_half_n);
  }
  return tail > 1 ? 1.0 : tail;
}

bool coverage_eligible(const conformal::NodeFeatures& x, const Value& truth) {
  if (x.type == NodeType::OcrString || x.type == NodeType::LogicText) {
    for (const Candidate& c : x.candidates)
      if (value_eq(c.value, truth)) return true;
    return false;
  }
  return true;
}

std::pair<double, Wilson> eval_coverage(const conformal::ConformalCalibrator& calib,
                                        const conformal::Scorer& scorer,
                                        const std::vector<conformal::PoolExample>& test_nodes) {
  if (test_nodes.empty()) throw Error(ErrorKind::EmptyBatch, "no test nodes");
  std::size_t covered = 0;
  for (const conformal::PoolExample& e : test_nodes)
    if (scorer.score(e.features, e.truth) <= calib.threshold) ++covered;
  double rate = static_cast<double>(covered) / test_nodes.size();
  return {rate, wilson95(covered, test_nodes.size())};
}

namespace {

bool parse_number(const std::string& s, double* out) {
  if (s.empty()) return false;
  try {
    size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) return false;
    *out = v;
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace

bool answer_supported(const engine::ExecutionTrace& trace, const world::WorldInstance& w) {
  if (trace.answer.aborted || !trace.answer.has_answer) return true;
  const std::string& ans = trace.answer.answer;
  double numeric = 0;
  const bool is_numeric = parse_number(ans, &numeric);

  const std::string& answer_id = trace.final_graph.answer_node;
  for (const engine::NodeOutcome& o : trace.outcomes) {
    if (o.node_id == answer_id) continue;
    if (o.set.is_interval && is_numeric &&
        std::fabs(numeric - o.set.center) <= o.set.radius)
      return true;
    for (const conformal::ScoredValue& m : o.set.members) {
      if (std::holds_alternative<std::string>(m.value)) {
        const std::string& s = std::get<std::string>(m.value);
        if (s == ans || (!ans.empty() && s.find(ans) != std::string::npos)) return true;
      } else if (std::holds_alternative<double>(m.value)) {
        if (is_numeric && std::get<double>(m.value) == numeric) return true;
      }
    }
  }

  // Composite answers (sums, comparisons, counts) are entailed by their parent
  // sets rather than any single member: replay the final fusion with
  // confabulation switched off and check the answer is still producible.
  auto ans_it = std::find_if(trace.outcomes.begin(), trace.outcomes.end(),
                             [&](const engine::NodeOutcome& o) { return o.node_id == answer_id; });
  if (ans_it == trace.outcomes.end()) return false;
  const dsl::NodeSpec& spec = trace.final_graph.at(answer_id);
  if (spec.kind != dsl::NodeKind::Fuse) return false;
  std::vector<engine::ParentSet> parents;
  for (const std::string& pid : spec.parents) {
    auto it = std::find_if(trace.outcomes.begin(), trace.outcomes.end(),
                           [&](const engine::NodeOutcome& o) { return o.node_id == pid; });
    if (it == trace.outcomes.end()) return false;
    parents.push_back(engine::ParentSet{pid, it->evidence});
  }
  std::vector<Candidate> replay = engine::fuse_candidates(
      spec.prompt, parents, w, /*confab_prob=*/0.0, ans_it->fidelity, ans_it->cand_seed);
  for (const Candidate& c : replay) {
    if (std::holds_alternative<std::string>(c.value) && std::get<std::string>(c.value) == ans)
      return true;
    if (std::holds_alternative<double>(c.value) && is_numeric &&
        std::get<double>(c.value) == numeric)
      return true;
  }
  return false;
}

EpisodeEval evaluate_episode(const engine::ExecutionTrace& trace, const world::WorldInstance& w,
                             const engine::Bundle& bundle, const control::CostModel& cost) {
  EpisodeEval ev;
  ev.aborted = trace.answer.aborted;
  ev.forced_abort = trace.answer.forced;
  ev.answered = !trace.answer.aborted && trace.answer.has_answer;
  ev.correct = ev.answered && trace.answer.answer == w.gold_answer;
  ev.answer_covered =
      !trace.answer.aborted && trace.answer.answer_set.contains(Value{w.gold_answer});
  ev.comp_cost = trace.comp_cost;
  ev.cost = engine::trace_cost(trace, w, cost);
  if (ev.answered) {
    ev.hallucinated = !answer_supported(trace, w);
    double a = 0;
    if (w.gold_is_numeric && parse_number(trace.answer.answer, &a)) {
      ev.abs_error = std::fabs(a - w.gold_numeric);
      ev.has_abs_error = true;
    }
  }
  for (const engine::NodeOutcome& o : trace.outcomes) {
    if (!o.certificate.present) continue;
    Value truth;
    try {
      truth = world::ground_truth(w, trace.final_graph, o.node_id);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Unresolvable) throw;
      continue;
    }
    if (!coverage_eligible(o.input, truth)) continue;
    auto it = bundle.scorers.find(o.type);
    if (it == bundle.scorers.end()) continue;
    CoverageStat& st = ev.node_cov[o.type];
    st.total += 1;
    if (it->second.score(o.input, truth) <= o.certificate.tau) st.covered += 1;
  }
  return ev;
}

MetricsReport aggregate(const std::vector<EpisodeEval>& evals) {
  MetricsReport r;
  r.episodes = evals.size();
  std::size_t correct = 0, covered = 0, non_aborted = 0, halluc = 0;
  double cost_sum = 0, total_cost_sum = 0, err_sum = 0;
  for (const EpisodeEval& ev : evals) {
    if (ev.aborted) {
      ++r.aborted;
      if (ev.forced_abort) ++r.forced_aborts;
    } else {
      ++non_aborted;
      if (ev.answer_covered) ++covered;
    }
    if (ev.answered) {
      ++r.answered;
      if (ev.hallucinated) ++halluc;
    }
    if (ev.correct) ++correct;
    if (ev.has_abs_error) {
      err_sum += ev.abs_error;
      ++r.abs_error_count;
    }
    cost_sum += ev.comp_cost;
    total_cost_sum += ev.cost.c_total;
    for (const auto& [t, st] : ev.node_cov) {
      r.node_coverage[t].covered += st.covered;
      r.node_coverage[t].total += st.total;
    }
  }
  if (r.episodes) {
    r.em = static_cast<double>(correct) / r.episodes;
    r.mean_cost = cost_sum / r.episodes;
    r.mean_total_cost = total_cost_sum / r.episodes;
  }
  r.answer_coverage = non_aborted ? static_cast<double>(covered) / non_aborted : 0;
  r.answer_coverage_ci = wilson95(covered, non_aborted);
  r.hallucination_rate = r.answered ? static_cast<double>(halluc) / r.answered : 0;
  r.hallucination_ci = wilson95(halluc, r.answered);
  if (r.abs_error_count) r.abs_error = err_sum / r.abs_error_count;
  for (const auto& [t, st] : r.node_coverage)
    r.node_coverage_ci[t] = wilson95(st.covered, st.total);
  return r;
}

std::string report_to_json(const MetricsReport& r) {
  json j;
  j["episodes"] = r.episodes;
  j["answered"] = r.answered;
  j["aborted"] = r.aborted;
  j["forced_aborts"] = r.forced_aborts;
  j["em"] = r.em;
  j["answer_coverage"] = r.answer_coverage;
  j["answer_coverage_ci"] = json::array({r.answer_coverage_ci.lo, r.answer_coverage_ci.hi});
  j["hallucination_rate"] = r.hallucination_rate;
  j["hallucination_ci"] = json::array({r.hallucination_ci.lo, r.hallucination_ci.hi});
  j["mean_cost"] = r.mean_cost;
  j["mean_total_cost"] = r.mean_total_cost;
  j["abs_error"] = r.abs_error;
  j["abs_error_count"] = r.abs_error_count;
  json cov;
  for (const auto& [t, st] : r.node_coverage) {
    json row;
    row["covered"] = st.covered;
    row["total"] = st.total;
    row["rate"] = st.rate();
    auto ci = r.node_coverage_ci.at(t);
    row["ci"] = json::array({ci.lo, ci.hi});
    cov[node_type_name(t)] = std::move(row);
  }
  j["node_coverage"] = std::move(cov);
  j["fingerprint"] = r.fingerprint;
  if (!r.config_json.empty()) j["config"] = json::parse(r.config_json);
  return j.dump(2) + "\n";
}

std::string report_to_csv(const MetricsReport& r) {
  std::string out = "metric,value\n";
  auto row = [&](const std::string& k, const std::string& v) { out += k + "," + v + "\n"; };
  auto num = [&](const std::string& k, double v) { row(k, canonical_number(v)); };
  row("episodes", std::to_string(r.episodes));
  row("answered", std::to_string(r.answered));
  row("aborted", std::to_string(r.aborted));
  row("forced_aborts", std::to_string(r.forced_aborts));
  num("em", r.em);
  num("answer_coverage", r.answer_coverage);
  num("answer_coverage_ci_lo", r.answer_coverage_ci.lo);
  num("answer_coverage_ci_hi", r.answer_coverage_ci.hi);
  num("hallucination_rate", r.hallucination_rate);
  num("hallucination_ci_lo", r.hallucination_ci.lo);
  num("hallucination_ci_hi", r.hallucination_ci.hi);
  num("mean_cost", r.mean_cost);
  num("mean_total_cost", r.mean_total_cost);
  num("abs_error", r.abs_error);
  row("abs_error_count", std::to_string(r.abs_error_count));
  for (const auto& [t, st] : r.node_coverage) {
    std::string base = std::string("coverage_") + node_type_name(t);
    row(base + "_covered", std::to_string(st.covered));
    row(base + "_total", std::to_string(st.total));
    num(base + "_rate", st.rate());
    auto ci = r.node_coverage_ci.at(t);
    num(base + "_ci_lo", ci.lo);
    num(base + "_ci_hi", ci.hi);
  }
  row("fingerprint", std::to_string(r.fingerprint));
  return out;
}

MetricsReport report_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw Error(ErrorKind::IoError, std::string("report json: ") + e.what());
  }
  MetricsReport r;
  r.episodes = j.at("episodes").get<std::size_t>();
  r.answered = j.at("answered").get<std::size_t>();
  r.aborted = j.at("aborted").get<std::size_t>();
  r.forced_aborts = j.at("forced_aborts").get<std::size_t>();
  r.em = j.at("em").get<double>();
  r.answer_coverage = j.at("answer_coverage").get<double>();
  r.answer_coverage_ci = {j.at("answer_coverage_ci").at(0).get<double>(),
                          j.at("answer_coverage_ci").at(1).get<double>()};
  r.hallucination_rate = j.at("hallucination_rate").get<double>();
  r.hallucination_ci = {j.at("hallucination_ci").at(0).get<double>(),
                        j.at("hallucination_ci").at(1).get<double>()};
  r.mean_cost = j.at("mean_cost").get<double>();
  r.mean_total_cost = j.at("mean_total_cost").get<double>();
  r.abs_error = j.at("abs_error").get<double>();
  r.abs_error_count = j.at("abs_error_count").get<std::size_t>();
  if (j.contains("node_coverage"))
    for (auto it = j.at("node_coverage").begin(); it != j.at("node_coverage").end(); ++it) {
      NodeType t = node_type_from_name(it.key());
      CoverageStat st;
      st.covered = it.value().at("covered").get<std::size_t>();
      st.total = it.value().at("total").get<std::size_t>();
      r.node_coverage[t] = st;
      r.node_coverage_ci[t] = {it.value().at("ci").at(0).get<double>(),
                               it.value().at("ci").at(1).get<double>()};
    }
  r.fingerprint = j.at("fingerprint").get<uint64_t>();
  if (j.contains("config")) r.config_json = j.at("config").dump();
  return r;
}

}  // namespace certigraph::metrics

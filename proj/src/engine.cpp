// SPDX-License-Identifier: Apache-2.0
#include "certigraph/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "certigraph/rng.hpp"
#include "json.hpp"
#include "value_json.hpp"

namespace certigraph::engine {

using json = nlohmann::ordered_json;

const char* exec_mode_name(ExecMode m) {
  switch (m) {
    case ExecMode::Full: return "full";
    case ExecMode::NoCp: return "no-cp";
    case ExecMode::FinalOnlyCp: return "final-only-cp";
  }
  return "?";
}

const char* policy_kind_name(PolicyKind p) {
  switch (p) {
    case PolicyKind::Learned: return "learned";
    case PolicyKind::Heuristic: return "heuristic";
    case PolicyKind::AcceptAlways: return "accept-always";
    case PolicyKind::AbortAlways: return "abort-always";
  }
  return "?";
}

PolicyKind policy_kind_from_name(const std::string& s) {
  if (s == "learned") return PolicyKind::Learned;
  if (s == "heuristic") return PolicyKind::Heuristic;
  if (s == "accept-always") return PolicyKind::AcceptAlways;
  if (s == "abort-always") return PolicyKind::AbortAlways;
  throw Error(ErrorKind::BadConfig, "unknown policy kind " + s);
}

Bundle Bundle::with_default_scorers() {
  Bundle b;
  for (NodeType t : {NodeType::OcrString, NodeType::DetBox, NodeType::ChartNum,
                     NodeType::LogicText})
    b.scorers.emplace(t, conformal::default_scorer(t));
  return b;
}

NodeInput node_input(const dsl::ReasoningGraph& g, const std::string& node_id,
                     const std::map<std::string, NodeOutcome>& executed) {
  const dsl::NodeSpec& spec = g.at(node_id);
  NodeInput in;
  in.fidelity = spec.fidelity;
  in.prompt = spec.prompt;
  if (spec.kind == dsl::NodeKind::Tool) {
    in.region = spec.region;
    return in;
  }
  for (const std::string& p : spec.parents) {
    auto it = executed.find(p);
    if (it == executed.end()) throw Error(ErrorKind::ParentNotExecuted, p);
    in.parents.push_back(ParentSet{p, it->second.evidence});
    if (it->second.evidence.empty()) in.parent_empty = true;
  }
  // Featurization context: parent-id order, then ascending score within parent.
  std::vector<std::string> ids;
  for (const ParentSet& ps : in.parents) ids.push_back(ps.id);
  std::sort(ids.begin(), ids.end());
  for (const std::string& pid : ids)
    for (const conformal::ScoredValue& sv : executed.at(pid).set.members)
      in.serialized.emplace_back(pid, sv);
  return in;
}

namespace {

struct Weighted {
  Value value;
  double weight = 0;
};

void add_weight(std::vector<Weighted>& pool, const Value& v, double w) {
  for (Weighted& e : pool)
    if (value_eq(e.value, v)) {
      e.weight += w;
      return;
    }
  pool.push_back({v, w});
}

// Normalize, order by descending weight (value order on ties), cap. Mirrors
// the perception oracle's candidate-list conventions.
std::vector<Candidate> finalize_pool(std::vector<Weighted> pool) {
  double total = 0;
  for (const Weighted& e : pool) total += e.weight;
  if (pool.empty() || total <= 0) return {};
  std::stable_sort(pool.begin(), pool.end(), [](const Weighted& a, const Weighted& b) {
    if (a.weight != b.weight) return a.weight > b.weight;
    return value_less(a.value, b.value);
  });
  if (pool.size() > static_cast<size_t>(world::kCandidateCap))
    pool.resize(world::kCandidateCap);
  std::vector<Candidate> out;
  out.reserve(pool.size());
  for (const Weighted& e : pool) out.push_back({e.value, e.weight / total});
  return out;
}

std::string first_token(const std::string& s) {
  size_t sp = s.find(' ');
  return sp == std::string::npos ? s : s.substr(0, sp);
}

std::vector<std::string> tokens_after(const std::string& s) {
  std::vector<std::string> out;
  size_t i = s.find(' ');
  while (i != std::string::npos) {
    size_t j = s.find(' ', i + 1);
    std::string tok = j == std::string::npos ? s.substr(i + 1) : s.substr(i + 1, j - i - 1);
    if (!tok.empty()) out.push_back(tok);
    i = j;
  }
  return out;
}

std::vector<Candidate> numeric_members(const ParentSet& p) {
  std::vector<Candidate> out;
  for (const Candidate& c : p.members)
    if (std::holds_alternative<double>(c.value)) out.push_back(c);
  return out;
}

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

// Spurious candidate anchored near the pool's MAP: the synthetic stand-in for
// a fuser inventing evidence-free output.
void maybe_confab(std::vector<Weighted>& pool, const world::WorldInstance& w,
                  const std::string& op, double confab_prob, int fidelity, Rng& rng) {
  double eff = clamp01(confab_prob * std::pow(w.noise.fidelity_gain, fidelity - 1));
  // Gate drawn unconditionally: the support replay (confab_prob = 0) walks the
  // same stream and must land on an identical base pool.
  bool fire = rng.bernoulli(eff);
  if (!fire || pool.empty()) return;

  size_t top = 0;
  for (size_t i = 1; i < pool.size(); ++i)
    if (pool[i].weight > pool[top].weight) top = i;
  const Value& anchor = pool[top].value;
  double weight = pool[top].weight * rng.uniform(0.7, 1.4);

  Value spurious;
  if (std::holds_alternative<double>(anchor) ||
      (std::holds_alternative<std::string>(anchor) &&
       [&] {
         double tmp;
         return parse_number(std::get<std::string>(anchor), &tmp);
       }())) {
    double v = std::holds_alternative<double>(anchor) ? std::get<double>(anchor) : 0;
    if (std::holds_alternative<std::string>(anchor)) parse_number(std::get<std::string>(anchor), &v);
    double shifted;
    if (std::floor(v) == v && std::fabs(v) < 1000) {
      // integral answers (counts) drift by whole steps, floored at zero
      double step = 1.0 + std::floor(rng.uniform(0, 2));
      shifted = rng.bernoulli(0.5) ? v + step : std::max(0.0, v - step);
      if (shifted == v) shifted = v + step;
    } else {
      double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
      shifted = v + sign * rng.uniform(0.15, 0.45) * (std::fabs(v) + 1.0);
    }
    spurious = std::holds_alternative<double>(anchor) ? Value{shifted}
                                                      : Value{canonical_number(shifted)};
  } else if (std::holds_alternative<std::string>(anchor)) {
    const std::string& a = std::get<std::string>(anchor);
    std::string s;
    if (op == "compare") {
      // flip to some other key seen in the pool, else corrupt the anchor
      for (const Weighted& e : pool)
        if (std::holds_alternative<std::string>(e.value) &&
            std::get<std::string>(e.value) != a) {
          s = std::get<std::string>(e.value);
          break;
        }
    }
    if (s.empty() && !w.fields.empty()) {
      const std::string& t = w.fields[rng.uniform_int(w.fields.size())].truth;
      if (t != a) s = t;
    }
    if (s.empty()) {
      s = a;
      if (s.empty()) s = "X";
      size_t pos = rng.uniform_int(s.size());
      const char* alpha = world::kAlphabet;
      char repl = alpha[rng.uniform_int(36)];
      if (s[pos] == repl) repl = alpha[(repl - 'A' + 1) % 36];
      s[pos] = repl;
    }
    spurious = Value{s};
  } else {
    Box b = std::get<Box>(anchor);
    double dx = rng.uniform(40, 120) * (rng.bernoulli(0.5) ? 1 : -1);
    double dy = rng.uniform(40, 120) * (rng.bernoulli(0.5) ? 1 : -1);
    b.x0 += dx;
    b.x1 += dx;
    b.y0 += dy;
    b.y1 += dy;
    spurious = Value{b};
  }
  add_weight(pool, spurious, weight);
}

}  // namespace

std::vector<Candidate> fuse_candidates(const std::string& prompt,
                                       const std::vector<ParentSet>& parents,
                                       const world::WorldInstance& w, double confab_prob,
                                       int fidelity, uint64_t seed) {
  Rng rng(seed);
  const std::string op = first_token(prompt);

  if (op == "direct") {
    std::string text = prompt.size() > 7 ? prompt.substr(7) : std::string();
    return world::direct_candidates(w, text, fidelity, hash_combine(seed, fnv1a64("direct")));
  }

  std::vector<Weighted> pool;
  if (op == "merge") {
    for (const ParentSet& p : parents)
      for (const Candidate& c : p.members) add_weight(pool, c.value, c.prob);
  } else if (op == "sum") {
    // Cartesian enumeration over numeric members, parents in declaration
    // order so float accumulation matches the instance gold exactly.
    std::vector<std::vector<Candidate>> axes;
    bool degenerate = false;
    for (const ParentSet& p : parents) {
      axes.push_back(numeric_members(p));
      if (axes.back().empty()) degenerate = true;
    }
    if (!degenerate && !axes.empty()) {
      std::vector<size_t> ix(axes.size(), 0);
      while (true) {
        double total = 0, weight = 1;
        for (size_t a = 0; a < axes.size(); ++a) {
          total += std::get<double>(axes[a][ix[a]].value);
          weight *= axes[a][ix[a]].prob;
        }
        add_weight(pool, Value{canonical_number(total)}, weight);
        size_t a = 0;
        while (a < axes.size() && ++ix[a] == axes[a].size()) ix[a++] = 0;
        if (a == axes.size()) break;
      }
    }
  } else if (op == "compare") {
    std::vector<std::string> keys = tokens_after(prompt);
    if (keys.size() >= 2 && parents.size() >= 2) {
      std::vector<Candidate> lhs = numeric_members(parents[0]);
      std::vector<Candidate> rhs = numeric_members(parents[1]);
      for (const Candidate& a : lhs)
        for (const Candidate& b : rhs) {
          // mirrors the gold rule: strict > favors the first key
          const std::string& win =
              std::get<double>(a.value) > std::get<double>(b.value) ? keys[0] : keys[1];
          add_weight(pool, Value{win}, a.prob * b.prob);
        }
    }
  } else if (op == "count") {
    // Poisson-binomial over per-probe presence mass (sum of member probs).
    std::vector<double> dist{1.0};
    for (const ParentSet& p : parents) {
      double mass = 0;
      for (const Candidate& c : p.members) mass += c.prob;
      double present = clamp01(mass);
      std::vector<double> next(dist.size() + 1, 0.0);
      for (size_t c = 0; c < dist.size(); ++c) {
        next[c] += dist[c] * (1 - present);
        next[c + 1] += dist[c] * present;
      }
      dist = std::move(next);
    }
    for (size_t c = 0; c < dist.size(); ++c)
      if (dist[c] > 0)
        add_weight(pool, Value{canonical_number(static_cast<double>(c))}, dist[c]);
  } else {
    // "lookup" and any unrecognized prompt: pass the first parent through,
    // rendering numerics in canonical string form for answer comparison.
    if (!parents.empty())
      for (const Candidate& c : parents[0].members) {
        Value v = std::holds_alternative<double>(c.value)
                      ? Value{canonical_number(std::get<double>(c.value))}
                      : c.value;
        add_weight(pool, v, c.prob);
      }
  }

  maybe_confab(pool, w, op, confab_prob, fidelity, rng);
  return finalize_pool(std::move(pool));
}

std::string select_answer(const conformal::ConformalSet& s) {
  if (s.members.empty()) return kNoAnswer;
  const conformal::ScoredValue* best = &s.members[0];
  for (const conformal::ScoredValue& m : s.members) {
    if (m.score != best->score) break;  // members ascend; past the tie block
    if (value_less(m.value, best->value)) best = &m;
  }
  if (std::holds_alternative<std::string>(best->value)) return std::get<std::string>(best->value);
  if (std::holds_alternative<double>(best->value))
    return canonical_number(std::get<double>(best->value));
  return value_repr(best->value);
}

namespace {

uint64_t derive_seed(uint64_t seed, const char* tag, const std::string& id, int attempt) {
  uint64_t h = hash_combine(seed, fnv1a64(tag, std::char_traits<char>::length(tag)));
  h = hash_combine(h, fnv1a64(id));
  return hash_combine(h, static_cast<uint64_t>(attempt));
}

// Singleton MAP "set" used wherever conformal filtering is switched off.
conformal::ConformalSet map_singleton(const conformal::NodeFeatures& x,
                                      const conformal::Scorer& scorer) {
  conformal::ConformalSet s;
  s.type = x.type;
  if (!x.candidates.empty())
    s.members.push_back({x.candidates[0].value, scorer.score(x, x.candidates[0].value)});
  return s;
}

std::vector<Candidate> evidence_from(const conformal::ConformalSet& s,
                                     const std::vector<Candidate>& candidates) {
  std::vector<Candidate> out;
  for (const conformal::ScoredValue& m : s.members)
    for (const Candidate& c : candidates)
      if (value_eq(c.value, m.value)) {
        out.push_back(c);
        break;
      }
  return out;
}

}  // namespace

ExecutionTrace execute_recorded(const dsl::ReasoningGraph& g0, const world::WorldInstance& w,
                                const Bundle& bundle, const EngineConfig& cfg, uint64_t seed,
                                std::vector<control::StepRecord>* steps) {
  dsl::validate(g0);
  ExecutionTrace tr;
  tr.seed = seed;
  tr.mode = cfg.mode;
  tr.budget = cfg.budget;
  dsl::ReasoningGraph g = g0;
  control::BudgetState bs{cfg.budget, 0.0};
  std::map<std::string, NodeOutcome> executed;

  auto scorer_for = [&](NodeType t) -> const conformal::Scorer& {
    auto it = bundle.scorers.find(t);
    if (it == bundle.scorers.end())
      throw Error(ErrorKind::BadConfig, std::string("no scorer for ") + node_type_name(t));
    return it->second;
  };
  auto calibrator_for = [&](NodeType t) -> const conformal::ConformalCalibrator& {
    auto it = bundle.calibrators.find(t);
    if (it == bundle.calibrators.end())
      throw Error(ErrorKind::MissingCalibrator, node_type_name(t));
    return it->second;
  };

  std::vector<std::string> order = dsl::topological_order(g);
  size_t idx = 0;
  bool episode_done = false;
  while (!episode_done && idx < order.size()) {
    const std::string id = order[idx];
    if (executed.count(id)) {
      ++idx;
      continue;
    }

    NodeOutcome out;
    out.node_id = id;
    int attempt = 0;
    bool node_done = false;
    while (!node_done) {
      const dsl::NodeSpec& spec = g.at(id);
      const bool is_tool = spec.kind == dsl::NodeKind::Tool;
      out.type = spec.type;
      out.fidelity = spec.fidelity;

      const double charge =
          attempt == 0 ? (is_tool ? cfg.cost.c_tool : cfg.cost.c_fuse) : cfg.cost.c_retry;
      if (bs.remaining() + 1e-9 < charge) {
        // Unavoidable execution the budget cannot cover (retries are only
        // offered when affordable, so this is always a first execution).
        tr.answer.aborted = true;
        tr.answer.forced = true;
        episode_done = true;
        break;
      }
      bs.spent += charge;
      tr.comp_cost += charge;
      out.cost += charge;

      out.cand_seed = derive_seed(seed, "cand", id, attempt);
      NodeInput in = node_input(g, id, executed);
      std::vector<Candidate> candidates =
          is_tool ? world::tool_oracle(spec.type, w, in.region.box, in.prompt, spec.fidelity,
                                       out.cand_seed)
                  : fuse_candidates(in.prompt, in.parents, w, w.noise.fuse_confab_prob,
                                    spec.fidelity, out.cand_seed);

      out.input = conformal::NodeFeatures{spec.type, candidates, spec.fidelity, in.parent_empty};
      const conformal::Scorer& scorer = scorer_for(spec.type);

      const bool full_cp = cfg.mode == ExecMode::Full ||
                           (cfg.mode == ExecMode::FinalOnlyCp && id == g.answer_node);
      double tau = 0;
      if (full_cp) {
        const conformal::ConformalCalibrator& calib = calibrator_for(spec.type);
        tau = calib.threshold;
        out.set = conformal::conformal_set(out.input, scorer, calib, conformal::k_max_for(spec.type));
        out.certificate.present = true;
      } else {
        out.set = map_singleton(out.input, scorer);
        out.certificate.present = false;
      }
      out.evidence = evidence_from(out.set, candidates);
      out.certificate.tau = tau;
      out.certificate.set_size = out.set.set_size();
      out.certificate.dispersion = out.set.dispersion();
      out.certificate.type = spec.type;
      out.certificate.parent_empty = in.parent_empty;
      out.certificate.truth_in_set.reset();
      if (cfg.training && out.certificate.present) {
        try {
          Value truth = world::ground_truth(w, g, id);
          out.certificate.truth_in_set = scorer.score(out.input, truth) <= tau;
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::Unresolvable) throw;
        }
      }

      // Action masks: retries capped per node, expansion limited to ocr tool
      // leaves above depth cap, both only when the budget can absorb them.
      std::array<bool, control::kNumActions> masked{};
      masked[static_cast<int>(control::Action::Retry)] =
          out.retries >= dsl::kRetryCap || bs.remaining() + 1e-9 < cfg.cost.c_retry;
      const double expand_floor = 2 * cfg.cost.c_tool + cfg.cost.c_fuse;
      masked[static_cast<int>(control::Action::Expand)] =
          !is_tool || spec.type != NodeType::OcrString ||
          spec.expand_depth >= dsl::kExpandDepthCap || bs.remaining() + 1e-9 < expand_floor;

      control::FeatureVec feats =
          control::policy_features(out.certificate.present ? tau : 0.0, out.set.set_size(),
                                   out.set.dispersion(), spec.type, in.parent_empty, bs);
      control::Action action = control::Action::Accept;
      switch (cfg.policy) {
        case PolicyKind::AcceptAlways:
          action = control::Action::Accept;
          break;
        case PolicyKind::AbortAlways:
          action = control::Action::Abort;
          break;
        case PolicyKind::Heuristic:
          action = control::heuristic_decide(out.set.set_size(), out.retries, masked);
          break;
        case PolicyKind::Learned: {
          Rng prng(derive_seed(seed, "policy", id, attempt));
          action = control::decide(cfg.params, feats, masked, cfg.training, prng).action;
          break;
        }
      }
      if (steps) steps->push_back(control::StepRecord{feats, action, masked});
      out.action = action;

      switch (action) {
        case control::Action::Accept:
          node_done = true;
          break;
        case control::Action::Retry: {
          g = dsl::mutate(g, dsl::RetryMutation{id});
          tr.mutations.push_back({id, control::Action::Retry, {}});
          ++out.retries;
          ++attempt;
          break;
        }
        case control::Action::Expand: {
          // refine: split the probed region along its longer axis
          Box r = spec.region.box;
          dsl::NodeSpec child;
          child.kind = dsl::NodeKind::Tool;
          child.tool_id = spec.tool_id;
          child.region = spec.region;
          child.prompt = spec.prompt;
          dsl::NodeSpec left = child, right = child;
          if (r.x1 - r.x0 >= r.y1 - r.y0) {
            double mid = (r.x0 + r.x1) / 2;
            left.region.box.x1 = mid;
            right.region.box.x0 = mid;
          } else {
            double mid = (r.y0 + r.y1) / 2;
            left.region.box.y1 = mid;
            right.region.box.y0 = mid;
          }
          dsl::ReasoningGraph next = dsl::mutate(g, dsl::ExpandMutation{id, {left, right}});
          MutationLogEntry entry{id, control::Action::Expand, {}};
          for (const auto& [nid, nspec] : next.nodes)
            if (!g.nodes.count(nid)) entry.added.push_back(nid);
          tr.mutations.push_back(std::move(entry));
          g = std::move(next);
          order = dsl::topological_order(g);
          idx = 0;
          node_done = true;
          break;
        }
        case control::Action::Abort:
          tr.answer.aborted = true;
          episode_done = true;
          node_done = true;
          break;
      }
    }
    if (episode_done && tr.answer.forced) break;
    if (!tr.answer.aborted || out.cost > 0) {
      // point estimate: lowest-score member (interval midpoint for numerics)
      if (out.set.is_interval) {
        out.point_choice = Value{out.set.center};
        out.has_point = true;
      } else if (!out.set.members.empty()) {
        const conformal::ScoredValue* pick = &out.set.members[0];
        for (const conformal::ScoredValue& m : out.set.members)
          if (m.score == out.set.members[0].score && value_less(m.value, pick->value)) pick = &m;
        out.point_choice = pick->value;
        out.has_point = true;
      }
      executed.emplace(id, out);
      tr.outcomes.push_back(std::move(out));
    }
  }

  if (!tr.answer.aborted) {
    auto it = executed.find(g.answer_node);
    if (it == executed.end())
      throw Error(ErrorKind::InvalidGraph, "answer node never executed");
    tr.answer.answer_set = it->second.set;
    tr.answer.answer = select_answer(it->second.set);
    tr.answer.has_answer = tr.answer.answer != kNoAnswer;
  }
  tr.final_graph = g;
  return tr;
}

ExecutionTrace execute(const dsl::ReasoningGraph& g, const world::WorldInstance& w,
                       const Bundle& bundle, const EngineConfig& cfg, uint64_t seed) {
  return execute_recorded(g, w, bundle, cfg, seed, nullptr);
}

control::CostBreakdown trace_cost(const ExecutionTrace& trace, const world::WorldInstance& w,
                                  const control::CostModel& m) {
  bool correct = !trace.answer.aborted && trace.answer.has_answer &&
                 trace.answer.answer == w.gold_answer;
  bool covered = trace.answer.answer_set.contains(Value{w.gold_answer});
  return control::episode_cost(correct, covered, trace.comp_cost, m);
}

namespace {

json number_or_inf(double x) {
  if (std::isinf(x)) return json(x > 0 ? "inf" : "-inf");
  return json(x);
}

json set_to_json(const conformal::ConformalSet& s) {
  json j;
  j["type"] = node_type_name(s.type);
  json members = json::array();
  for (const conformal::ScoredValue& m : s.members)
    members.push_back(json{{"value", value_to_json(m.value)}, {"score", m.score}});
  j["members"] = std::move(members);
  j["truncated"] = s.truncated;
  if (s.is_interval) {
    j["interval"] = true;
    j["center"] = s.center;
    j["radius"] = number_or_inf(s.radius);
  }
  return j;
}

}  // namespace

std::string trace_to_json(const ExecutionTrace& trace) {
  json j;
  j["seed"] = trace.seed;
  j["mode"] = exec_mode_name(trace.mode);
  j["budget"] = trace.budget;
  j["comp_cost"] = trace.comp_cost;
  json outs = json::array();
  for (const NodeOutcome& o : trace.outcomes) {
    json n;
    n["node"] = o.node_id;
    n["type"] = node_type_name(o.type);
    n["action"] = control::action_name(o.action);
    n["retries"] = o.retries;
    n["fidelity"] = o.fidelity;
    n["cost"] = o.cost;
    json cands = json::array();
    for (const Candidate& c : o.input.candidates)
      cands.push_back(json::array({value_to_json(c.value), c.prob}));
    n["candidates"] = std::move(cands);
    n["set"] = set_to_json(o.set);
    json cert;
    cert["present"] = o.certificate.present;
    if (o.certificate.present) {
      cert["tau"] = number_or_inf(o.certificate.tau);
      cert["set_size"] = number_or_inf(o.certificate.set_size);
      cert["dispersion"] = o.certificate.dispersion;
      cert["type"] = node_type_name(o.certificate.type);
      cert["parent_empty"] = o.certificate.parent_empty;
      if (o.certificate.truth_in_set.has_value())
        cert["truth_in_set"] = *o.certificate.truth_in_set;
    }
    n["certificate"] = std::move(cert);
    if (o.has_point) n["point"] = value_to_json(o.point_choice);
    n["cand_seed"] = o.cand_seed;
    outs.push_back(std::move(n));
  }
  j["outcomes"] = std::move(outs);
  json muts = json::array();
  for (const MutationLogEntry& m : trace.mutations) {
    json e;
    e["node"] = m.node;
    e["action"] = control::action_name(m.action);
    e["added"] = m.added;
    muts.push_back(std::move(e));
  }
  j["mutations"] = std::move(muts);
  json ans;
  ans["aborted"] = trace.answer.aborted;
  ans["forced"] = trace.answer.forced;
  ans["answer"] = trace.answer.answer;
  ans["answer_set"] = set_to_json(trace.answer.answer_set);
  j["answer"] = std::move(ans);
  j["final_graph"] = json::parse(dsl::graph_to_json(trace.final_graph));
  return j.dump(2) + "\n";
}

}  // namespace certigraph::engine

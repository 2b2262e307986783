// SPDX-License-Identifier: Apache-2.0
#include "certigraph/selfplay.hpp"

#include <algorithm>
#include <sstream>

#include "certigraph/metrics.hpp"
#include "certigraph/rng.hpp"
#include "json.hpp"
#include "parallel.hpp"
#include "value_json.hpp"

namespace certigraph::selfplay {

using json = nlohmann::ordered_json;

std::vector<PerturbationSpec> default_grid() {
  return {
      {world::PerturbationKind::CharConfusionShift, 0.5},
      {world::PerturbationKind::CharConfusionShift, 1.0},
      {world::PerturbationKind::Clutter, 0.5},
      {world::PerturbationKind::Clutter, 1.0},
      {world::PerturbationKind::AffineOffset, 4.0},
      {world::PerturbationKind::AffineOffset, 8.0},
      {world::PerturbationKind::PanelShuffle, 1.0},
  };
}

namespace {

// One adversary episode, filtered by the two failure predicates.
Counterexample mine_one(const AgentBundle& adv, const world::WorldInstance& w,
                        const MineConfig& cfg, uint64_t episode_seed) {
  Counterexample ce;
  ce.episode_seed = episode_seed;

  dsl::ReasoningGraph graph = dsl::build_graph(dsl::parse_program(dsl::plan_dsl(w.query)));
  engine::EngineConfig ec;
  ec.mode = engine::ExecMode::Full;
  ec.policy = adv.policy_kind;
  ec.params = adv.policy;
  ec.cost = cfg.cost;
  ec.budget = cfg.budget;
  ec.training = false;
  engine::ExecutionTrace trace = engine::execute(graph, w, adv.bundle, ec, episode_seed);

  for (const engine::NodeOutcome& o : trace.outcomes) {
    if (!o.certificate.present) continue;
    Value truth;
    try {
      truth = world::ground_truth(w, trace.final_graph, o.node_id);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Unresolvable) throw;
      continue;
    }
    if (!metrics::coverage_eligible(o.input, truth)) continue;
    auto sit = adv.bundle.scorers.find(o.type);
    auto cit = adv.bundle.calibrators.find(o.type);
    if (sit == adv.bundle.scorers.end() || cit == adv.bundle.calibrators.end()) continue;
    double s = sit->second.score(o.input, truth);
    if (s > cit->second.threshold) {
      ce.nodes.push_back(FailingNode{o.node_id, o.type, o.input, truth, s});
      ce.high_nonconformity = true;
      if (s > ce.severity) ce.severity = s;
    }
  }

  ce.wrong_answer = trace.answer.answer != w.gold_answer;
  if (ce.wrong_answer && ce.nodes.empty() && !trace.answer.aborted) {
    // Wrong answer with every node nominally conforming: harvest the answer
    // node itself so the pool sees this failure shape.
    const std::string& aid = trace.final_graph.answer_node;
    for (const engine::NodeOutcome& o : trace.outcomes) {
      if (o.node_id != aid || !o.certificate.present) continue;
      try {
        Value truth = world::ground_truth(w, trace.final_graph, aid);
        if (metrics::coverage_eligible(o.input, truth)) {
          auto sit = adv.bundle.scorers.find(o.type);
          if (sit != adv.bundle.scorers.end()) {
            double s = sit->second.score(o.input, truth);
            ce.nodes.push_back(FailingNode{aid, o.type, o.input, truth, s});
            if (s > ce.severity) ce.severity = s;
          }
        }
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Unresolvable) throw;
      }
      break;
    }
  }
  return ce;
}

}  // namespace

std::vector<Counterexample> mine_counterexamples(const AgentBundle& adversary,
                                                 const std::vector<world::WorldInstance>& worlds,
                                                 const MineConfig& cfg) {
  if (!adversary.frozen)
    throw Error(ErrorKind::BadConfig, "mining requires a frozen adversary");

  struct Task {
    const world::WorldInstance* base;
    int variant;  // -1 = unperturbed, else grid index
  };
  std::vector<Task> tasks;
  for (const world::WorldInstance& w : worlds) {
    if (cfg.include_unperturbed) tasks.push_back({&w, -1});
    for (int gi = 0; gi < static_cast<int>(cfg.grid.size()); ++gi) tasks.push_back({&w, gi});
  }

  std::vector<Counterexample> mined(tasks.size());
  std::vector<char> keep(tasks.size(), 0);
  parallel_for(tasks.size(), cfg.threads, [&](std::size_t i) {
    const Task& t = tasks[i];
    world::WorldInstance inst = *t.base;
    uint64_t pseed = 0;
    if (t.variant >= 0) {
      const PerturbationSpec& p = cfg.grid[t.variant];
      pseed = hash_combine(hash_combine(cfg.seed, t.base->seed),
                           static_cast<uint64_t>(t.variant));
      inst = world::perturb(*t.base, p.kind, p.magnitude, pseed);
    }
    uint64_t ep_seed = hash_combine(hash_combine(cfg.seed, fnv1a64("mine")),
                                    hash_combine(t.base->seed, static_cast<uint64_t>(t.variant + 1)));
    Counterexample ce = mine_one(adversary, inst, cfg, ep_seed);
    ce.world_seed = t.base->seed;
    ce.difficulty = t.base->difficulty;
    ce.perturbed = t.variant >= 0;
    if (t.variant >= 0) {
      ce.kind = cfg.grid[t.variant].kind;
      ce.magnitude = cfg.grid[t.variant].magnitude;
      ce.perturb_seed = pseed;
    }
    if (ce.wrong_answer || ce.high_nonconformity) {
      mined[i] = std::move(ce);
      keep[i] = 1;
    }
  });

  std::vector<Counterexample> out;
  for (std::size_t i = 0; i < mined.size(); ++i)
    if (keep[i]) out.push_back(std::move(mined[i]));
  // hardest kept: severity descending, stable on the deterministic task order
  std::stable_sort(out.begin(), out.end(),
                   [](const Counterexample& a, const Counterexample& b) {
                     return a.severity > b.severity;
                   });
  if (out.size() > cfg.cap) out.resize(cfg.cap);
  return out;
}

std::map<NodeType, std::size_t> augment_pools(
    std::map<NodeType, conformal::CalibrationPool>& pools,
    const std::vector<Counterexample>& mined) {
  std::map<NodeType, std::vector<conformal::PoolExample>> staged;
  for (const Counterexample& ce : mined)
    for (const FailingNode& n : ce.nodes) {
      if (n.features.type != n.type)
        throw Error(ErrorKind::WrongVariant, "failing node features/type mismatch");
      staged[n.type].push_back(conformal::PoolExample{n.features, n.truth, "selfplay"});
    }
  std::map<NodeType, std::size_t> appended;
  for (auto& [t, examples] : staged) {
    auto it = pools.find(t);
    if (it == pools.end()) {
      conformal::CalibrationPool p;
      p.type = t;
      it = pools.emplace(t, std::move(p)).first;
    } else if (it->second.type != t) {
      throw Error(ErrorKind::WrongVariant, "pool type mismatch");
    }
    appended[t] = examples.size();
    conformal::append_pool(it->second, std::move(examples));
  }
  return appended;
}

AgentBundle refresh_adversary(const AgentBundle& student) {
  AgentBundle adv = student;
  adv.frozen = true;
  return adv;
}

std::string counterexamples_to_jsonl(const std::vector<Counterexample>& mined) {
  std::string out;
  for (const Counterexample& ce : mined) {
    json j;
    j["world_seed"] = ce.world_seed;
    j["difficulty"] = world::difficulty_name(ce.difficulty);
    j["perturbed"] = ce.perturbed;
    if (ce.perturbed) {
      j["kind"] = world::perturbation_name(ce.kind);
      j["magnitude"] = ce.magnitude;
      j["perturb_seed"] = ce.perturb_seed;
    }
    j["episode_seed"] = ce.episode_seed;
    j["wrong_answer"] = ce.wrong_answer;
    j["high_nonconformity"] = ce.high_nonconformity;
    j["severity"] = ce.severity;
    json nodes = json::array();
    for (const FailingNode& n : ce.nodes) {
      json nj;
      nj["node"] = n.node_id;
      nj["type"] = node_type_name(n.type);
      nj["features"] = features_to_json(n.features);
      nj["truth"] = value_to_json(n.truth);
      nj["score"] = n.score;
      nodes.push_back(std::move(nj));
    }
    j["nodes"] = std::move(nodes);
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<Counterexample> counterexamples_from_jsonl(const std::string& text) {
  std::vector<Counterexample> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw Error(ErrorKind::IoError, std::string("counterexample jsonl: ") + e.what());
    }
    Counterexample ce;
    ce.world_seed = j.at("world_seed").get<uint64_t>();
    ce.difficulty = world::difficulty_from_name(j.at("difficulty").get<std::string>());
    ce.perturbed = j.at("perturbed").get<bool>();
    if (ce.perturbed) {
      ce.kind = world::perturbation_from_name(j.at("kind").get<std::string>());
      ce.magnitude = j.at("magnitude").get<double>();
      ce.perturb_seed = j.at("perturb_seed").get<uint64_t>();
    }
    ce.episode_seed = j.at("episode_seed").get<uint64_t>();
    ce.wrong_answer = j.at("wrong_answer").get<bool>();
    ce.high_nonconformity = j.at("high_nonconformity").get<bool>();
    ce.severity = j.at("severity").get<double>();
    for (const auto& nj : j.at("nodes")) {
      FailingNode n;
      n.node_id = nj.at("node").get<std::string>();
      n.type = node_type_from_name(nj.at("type").get<std::string>());
      n.features = features_from_json(nj.at("features"));
      n.truth = value_from_json(nj.at("truth"));
      n.score = nj.at("score").get<double>();
      ce.nodes.push_back(std::move(n));
    }
    out.push_back(std::move(ce));
  }
  return out;
}

}  // namespace certigraph::selfplay

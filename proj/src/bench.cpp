// SPDX-License-Identifier: Apache-2.0
#include "certigraph/bench.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

#include "certigraph/dsl.hpp"
#include "certigraph/rng.hpp"
#include "parallel.hpp"
#include "value_json.hpp"

namespace certigraph::bench {

namespace {

constexpr NodeType kAllTypes[] = {NodeType::OcrString, NodeType::DetBox, NodeType::ChartNum,
                                  NodeType::LogicText};

uint64_t mix(uint64_t a, uint64_t b) { return hash_combine(a, b); }
uint64_t mix(uint64_t a, const char* t) { return hash_combine(a, fnv1a64(t)); }
template <class A, class B, class... Rest>
uint64_t mix(uint64_t a, A b, B c, Rest... rest) {
  return mix(mix(a, b), c, rest...);
}

dsl::ReasoningGraph plan_graph(const Query& q) {
  return dsl::build_graph(dsl::parse_program(dsl::plan_dsl(q)));
}

std::vector<dsl::ReasoningGraph> plan_graphs(const std::vector<world::WorldInstance>& worlds,
                                             int threads) {
  std::vector<dsl::ReasoningGraph> graphs(worlds.size());
  parallel_for(worlds.size(), threads,
               [&](std::size_t i) { graphs[i] = plan_graph(worlds[i].query); });
  return graphs;
}

engine::EngineConfig engine_config(const RunConfig& run, bool training) {
  engine::EngineConfig cfg;
  cfg.mode = run.mode;
  cfg.policy = run.policy;
  cfg.params = run.params;
  cfg.cost = run.cost;
  cfg.budget = run.budget;
  cfg.training = training;
  return cfg;
}

// Labeled eligible (features, truth) pairs from one accept-always trace.
void harvest_trace(const engine::ExecutionTrace& trace, const world::WorldInstance& w,
                   std::vector<std::pair<NodeType, conformal::PoolExample>>& sink) {
  for (const engine::NodeOutcome& out : trace.outcomes) {
    Value truth;
    try {
      truth = world::ground_truth(w, trace.final_graph, out.node_id);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::Unresolvable) continue;
      throw;
    }
    if (!metrics::coverage_eligible(out.input, truth)) continue;
    sink.emplace_back(out.type, conformal::PoolExample{out.input, truth, "base"});
  }
}

double pooled_coverage(const engine::Bundle& bundle,
                       const std::map<NodeType, std::vector<conformal::PoolExample>>& examples) {
  std::size_t covered = 0, total = 0;
  for (const auto& [t, vec] : examples) {
    const conformal::Scorer& sc = bundle.scorers.at(t);
    double tau = bundle.calibrators.at(t).threshold;
    for (const conformal::PoolExample& e : vec) {
      ++total;
      if (sc.score(e.features, e.truth) <= tau) ++covered;
    }
  }
  if (!total) throw Error(ErrorKind::EmptyBatch, "coverage over no labeled nodes");
  return static_cast<double>(covered) / static_cast<double>(total);
}

std::map<NodeType, std::vector<conformal::PoolExample>> harvest_worlds(
    const std::vector<world::WorldInstance>& worlds, const engine::Bundle& bundle,
    const RunConfig& run) {
  std::vector<dsl::ReasoningGraph> graphs = plan_graphs(worlds, run.threads);
  std::vector<std::vector<std::pair<NodeType, conformal::PoolExample>>> per(worlds.size());
  RunConfig sweep = run;
  sweep.policy = engine::PolicyKind::AcceptAlways;
  sweep.mode = engine::ExecMode::Full;
  parallel_for(worlds.size(), run.threads, [&](std::size_t i) {
    engine::ExecutionTrace trace =
        engine::execute(graphs[i], worlds[i], bundle, engine_config(sweep, false),
                        mix(run.seed, "pool", worlds[i].seed));
    harvest_trace(trace, worlds[i], per[i]);
  });
  std::map<NodeType, std::vector<conformal::PoolExample>> out;
  for (NodeType t : kAllTypes) out[t];
  for (auto& v : per)
    for (auto& [t, e] : v) out[t].push_back(std::move(e));
  return out;
}

nlohmann::ordered_json cost_json(const control::CostModel& m) {
  return {{"c_tool", m.c_tool},
          {"c_retry", m.c_retry},
          {"c_fuse", m.c_fuse},
          {"beta", m.beta},
          {"err_weight", m.err_weight}};
}

}  // namespace

std::string config_json(const SuiteConfig& suite, const RunConfig& run) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json s;
  s["instances"] = suite.instances;
  s["seeds_per_instance"] = suite.seeds_per_instance;
  nlohmann::ordered_json diffs = nlohmann::ordered_json::array();
  for (world::Difficulty d : suite.difficulties) diffs.push_back(world::difficulty_name(d));
  s["difficulties"] = diffs;
  s["zero_noise"] = suite.zero_noise;
  s["world_seed"] = suite.world_seed;
  j["suite"] = s;

  nlohmann::ordered_json r;
  r["mode"] = engine::exec_mode_name(run.mode);
  r["policy"] = engine::policy_kind_name(run.policy);
  if (run.policy == engine::PolicyKind::Learned) {
    // weights folded in as a digest so retrained policies never collide
    std::string flat;
    for (const auto& row : run.params.w)
      for (double v : row) flat += canonical_number(v) + ",";
    r["params_digest"] = fnv1a64(flat);
  }
  r["cost"] = cost_json(run.cost);
  r["budget"] = run.budget;
  r["delta"] = run.delta;
  r["seed"] = run.seed;
  j["run"] = r;
  return j.dump();
}

uint64_t config_fingerprint(const std::string& canonical_config) {
  return fnv1a64(canonical_config);
}

std::vector<world::WorldInstance> make_worlds(const SuiteConfig& suite) {
  if (suite.instances < 1 || suite.difficulties.empty())
    throw Error(ErrorKind::BadConfig, "suite needs instances and difficulties");
  std::vector<world::WorldInstance> out;
  out.reserve(static_cast<std::size_t>(suite.instances) * suite.difficulties.size());
  for (std::size_t di = 0; di < suite.difficulties.size(); ++di) {
    world::Difficulty d = suite.difficulties[di];
    for (int i = 0; i < suite.instances; ++i) {
      uint64_t ws = mix(suite.world_seed, "world", di, static_cast<uint64_t>(i));
      out.push_back(suite.zero_noise
                        ? world::generate_instance(ws, d, world::NoiseConfig::zero())
                        : world::generate_instance(ws, d));
    }
  }
  return out;
}

std::vector<world::WorldInstance> perturb_worlds(const std::vector<world::WorldInstance>& worlds,
                                                 const selfplay::PerturbationSpec& spec,
                                                 uint64_t seed) {
  std::vector<world::WorldInstance> out;
  out.reserve(worlds.size());
  for (const world::WorldInstance& w : worlds)
    out.push_back(world::perturb(w, spec.kind, spec.magnitude, mix(seed, "shift", w.seed)));
  return out;
}

engine::Bundle open_bundle(double delta) {
  engine::Bundle b = engine::Bundle::with_default_scorers();
  for (NodeType t : kAllTypes) {
    conformal::ConformalCalibrator c;
    c.type = t;
    c.delta = delta;  // threshold stays +inf: every candidate passes
    b.calibrators[t] = c;
  }
  return b;
}

std::map<NodeType, conformal::CalibrationPool> build_pools(
    const std::vector<world::WorldInstance>& worlds, const engine::Bundle& bundle,
    const RunConfig& run) {
  std::map<NodeType, std::vector<conformal::PoolExample>> raw =
      harvest_worlds(worlds, bundle, run);
  std::map<NodeType, conformal::CalibrationPool> pools;
  for (auto& [t, vec] : raw) {
    conformal::CalibrationPool& p = pools[t];
    p.type = t;
    conformal::append_pool(p, std::move(vec));
  }
  return pools;
}

engine::Bundle calibrated_bundle(const std::map<NodeType, conformal::CalibrationPool>& pools,
                                 double delta) {
  engine::Bundle b = open_bundle(delta);
  for (const auto& [t, pool] : pools) {
    if (pool.examples.empty()) continue;
    b.calibrators[t] = conformal::calibrate(pool, b.scorers.at(t), delta);
  }
  return b;
}

std::pair<engine::Bundle, std::map<NodeType, conformal::CalibrationPool>> calibration_pipeline(
    const std::vector<world::WorldInstance>& pool_worlds, const RunConfig& run) {
  // Pass 1 shapes fuse inputs with open thresholds; pass 2 recollects under
  // the calibrated thresholds so pooled fuse nodes match what evaluation sees.
  engine::Bundle b0 = open_bundle(run.delta);
  std::map<NodeType, conformal::CalibrationPool> p0 = build_pools(pool_worlds, b0, run);
  engine::Bundle b1 = calibrated_bundle(p0, run.delta);
  std::map<NodeType, conformal::CalibrationPool> p1 = build_pools(pool_worlds, b1, run);
  engine::Bundle b2 = calibrated_bundle(p1, run.delta);
  return {std::move(b2), std::move(p1)};
}

std::vector<metrics::EpisodeEval> run_episodes(const std::vector<world::WorldInstance>& worlds,
                                               const engine::Bundle& bundle, const RunConfig& run,
                                               int seeds_per_instance) {
  if (seeds_per_instance < 1) throw Error(ErrorKind::BadConfig, "seeds_per_instance < 1");
  std::vector<dsl::ReasoningGraph> graphs = plan_graphs(worlds, run.threads);
  std::size_t repeats = static_cast<std::size_t>(seeds_per_instance);
  std::vector<metrics::EpisodeEval> evals(worlds.size() * repeats);
  engine::EngineConfig cfg = engine_config(run, false);
  parallel_for(evals.size(), run.threads, [&](std::size_t idx) {
    std::size_t i = idx / repeats, r = idx % repeats;
    uint64_t es = mix(run.seed, "episode", worlds[i].seed, static_cast<uint64_t>(r));
    engine::ExecutionTrace trace = engine::execute(graphs[i], worlds[i], bundle, cfg, es);
    evals[idx] = metrics::evaluate_episode(trace, worlds[i], bundle, run.cost);
  });
  return evals;
}

metrics::MetricsReport run_suite(const SuiteConfig& suite, const engine::Bundle& bundle,
                                 const RunConfig& run) {
  std::vector<world::WorldInstance> worlds = make_worlds(suite);
  metrics::MetricsReport rep =
      metrics::aggregate(run_episodes(worlds, bundle, run, suite.seeds_per_instance));
  rep.config_json = config_json(suite, run);
  rep.fingerprint = config_fingerprint(rep.config_json);
  return rep;
}

/* coverage study ------------------------------------------------------- */

std::map<NodeType, std::vector<conformal::PoolExample>> harvest_examples(std::size_t per_type,
                                                                         uint64_t seed) {
  std::map<NodeType, std::vector<conformal::PoolExample>> out;
  const world::Difficulty diffs[] = {world::Difficulty::Easy, world::Difficulty::Medium,
                                     world::Difficulty::Hard};
  Box full{0, 0, kSceneExtent, kSceneExtent};

  {  // ocr: every real text field is one probe
    auto& vec = out[NodeType::OcrString];
    for (uint64_t i = 0; vec.size() < per_type; ++i) {
      world::WorldInstance w = world::generate_instance(mix(seed, "ocr", i), diffs[i % 3]);
      for (std::size_t f = 0; f < w.fields.size() && vec.size() < per_type; ++f) {
        if (w.fields[f].distractor) continue;
        conformal::NodeFeatures x;
        x.type = NodeType::OcrString;
        x.candidates = world::tool_oracle(NodeType::OcrString, w, w.fields[f].region, "read", 1,
                                          mix(seed, "ocr-probe", i, f));
        Value truth{w.fields[f].truth};
        if (metrics::coverage_eligible(x, truth)) vec.push_back({x, truth, "base"});
      }
    }
  }

  {  // chart: every series region
    auto& vec = out[NodeType::ChartNum];
    for (uint64_t i = 0; vec.size() < per_type; ++i) {
      world::WorldInstance w = world::generate_instance(mix(seed, "chart", i), diffs[i % 3]);
      for (std::size_t s = 0; s < w.series.size() && vec.size() < per_type; ++s) {
        conformal::NodeFeatures x;
        x.type = NodeType::ChartNum;
        x.candidates = world::tool_oracle(NodeType::ChartNum, w, w.series[s].region, "value", 1,
                                          mix(seed, "chart-probe", i, s));
        Value truth{w.series[s].value};
        if (metrics::coverage_eligible(x, truth)) vec.push_back({x, truth, "base"});
      }
    }
  }

  {  // det: one indexed probe per real object, grouped by label
    auto& vec = out[NodeType::DetBox];
    for (uint64_t i = 0; vec.size() < per_type; ++i) {
      world::WorldInstance w = world::generate_instance(mix(seed, "det", i), diffs[i % 3]);
      std::vector<std::string> labels;
      for (const world::SceneObject& o : w.objects)
        if (!o.distractor && std::find(labels.begin(), labels.end(), o.label) == labels.end())
          labels.push_back(o.label);
      for (const std::string& label : labels) {
        // probe index k targets the k-th match in scan order, same contract
        // as planned count probes
        for (int k = 0; vec.size() < per_type; ++k) {
          std::string prompt = "label=" + label + ";index=" + std::to_string(k);
          Value truth;
          try {
            // resolve the probe target exactly the way episode labeling does
            dsl::ReasoningGraph g = dsl::build_graph(dsl::parse_program(
                "CALL_TOOL(2, img0[0,0,1000,1000], \"" + prompt + "\") -> d\n"
                "FUSE([d], \"count\") -> a\nRETURN(a)\n"));
            truth = world::ground_truth(w, g, "d");
          } catch (const Error& e) {
            if (e.kind() == ErrorKind::Unresolvable) break;  // past the last match
            throw;
          }
          conformal::NodeFeatures x;
          x.type = NodeType::DetBox;
          x.candidates = world::tool_oracle(NodeType::DetBox, w, full, prompt, 1,
                                            mix(seed, "det-probe", i, fnv1a64(prompt)));
          if (metrics::coverage_eligible(x, truth)) vec.push_back({x, truth, "base"});
        }
        if (vec.size() >= per_type) break;
      }
    }
  }

  {  // logic: the planned answer fusion over truncated tool evidence
    auto& vec = out[NodeType::LogicText];
    for (uint64_t i = 0; vec.size() < per_type; ++i) {
      world::WorldInstance w = world::generate_instance(mix(seed, "logic", i), diffs[i % 3]);
      dsl::ReasoningGraph g = plan_graph(w.query);
      const dsl::NodeSpec& ans = g.at(g.answer_node);
      std::vector<engine::ParentSet> parents;
      bool parent_empty = false;
      std::size_t pi = 0;
      for (const std::string& pid : ans.parents) {
        const dsl::NodeSpec& ps = g.at(pid);
        std::vector<Candidate> cands = world::tool_oracle(
            ps.type, w, ps.region.box, ps.prompt, 1, mix(seed, "logic-probe", i, pi++));
        std::size_t keep =
            std::min<std::size_t>(cands.size(), conformal::k_max_for(ps.type));
        cands.resize(keep);
        parent_empty = parent_empty || cands.empty();
        parents.push_back({pid, std::move(cands)});
      }
      conformal::NodeFeatures x;
      x.type = NodeType::LogicText;
      x.candidates = engine::fuse_candidates(ans.prompt, parents, w, w.noise.fuse_confab_prob, 1,
                                             mix(seed, "logic-fuse", i));
      x.parent_empty = parent_empty;
      Value truth{w.gold_answer};
      if (metrics::coverage_eligible(x, truth)) vec.push_back({x, truth, "base"});
    }
  }
  return out;
}

std::vector<CoverageStudyRow> coverage_study(std::size_t n_calib, std::size_t n_test,
                                             int resamples, const std::vector<double>& deltas,
                                             uint64_t seed, int threads) {
  if (!n_calib || !n_test || resamples < 1 || deltas.empty())
    throw Error(ErrorKind::BadConfig, "coverage study shape");
  std::size_t need = n_calib + n_test;
  std::map<NodeType, std::vector<conformal::PoolExample>> pool =
      harvest_examples(need, mix(seed, "harvest"));

  std::vector<CoverageStudyRow> rows;
  for (NodeType t : kAllTypes)
    for (double d : deltas) {
      CoverageStudyRow r;
      r.type = t;
      r.delta = d;
      r.window_lo = 1 - d;
      r.window_hi = 1 - d + 1.0 / (static_cast<double>(n_calib) + 1);
      r.n_calib = n_calib;
      r.n_test = n_test;
      r.resamples = resamples;
      rows.push_back(r);
    }

  // score(truth) is fixed per example; resplits only move the threshold
  std::map<NodeType, std::vector<double>> truth_scores;
  for (NodeType t : kAllTypes) {
    const conformal::Scorer& sc = conformal::default_scorer(t);
    std::vector<double>& s = truth_scores[t];
    s.resize(need);
    const auto& vec = pool.at(t);
    parallel_for(need, threads,
                 [&](std::size_t i) { s[i] = sc.score(vec[i].features, vec[i].truth); });
  }

  std::size_t reps = static_cast<std::size_t>(resamples);
  std::vector<double> split_cov(rows.size() * reps, 0.0);  // one slot per task
  parallel_for(split_cov.size(), threads, [&](std::size_t task) {
    const CoverageStudyRow& row = rows[task / reps];
    std::size_t rep = task % reps;
    Rng rng(mix(seed, "split", static_cast<uint64_t>(row.type),
                fnv1a64(canonical_number(row.delta)), rep));
    std::vector<std::size_t> idx(need);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = need; i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_int(i)]);

    conformal::CalibrationPool cp;
    cp.type = row.type;
    const auto& vec = pool.at(row.type);
    cp.examples.reserve(n_calib);
    for (std::size_t i = 0; i < n_calib; ++i) cp.examples.push_back(vec[idx[i]]);
    double tau =
        conformal::calibrate(cp, conformal::default_scorer(row.type), row.delta).threshold;

    const std::vector<double>& s = truth_scores.at(row.type);
    std::size_t covered = 0;
    for (std::size_t i = n_calib; i < need; ++i)
      if (s[idx[i]] <= tau) ++covered;
    split_cov[task] = static_cast<double>(covered) / static_cast<double>(n_test);
  });
  for (std::size_t r = 0; r < rows.size(); ++r) {
    double sum = 0;
    for (std::size_t rep = 0; rep < reps; ++rep) sum += split_cov[r * reps + rep];
    rows[r].mean_coverage = sum / static_cast<double>(reps);
  }

  return rows;
}

/* policy training ------------------------------------------------------ */

TrainResult train_policy(const std::vector<world::WorldInstance>& train_worlds,
                         const engine::Bundle& bundle, const control::CostModel& cost,
                         const TrainConfig& cfg) {
  if (train_worlds.empty() || cfg.batch < 1 || cfg.iterations < 1 || cfg.budgets.empty())
    throw Error(ErrorKind::BadConfig, "training needs worlds, batch, iterations, budgets");
  std::vector<dsl::ReasoningGraph> graphs = plan_graphs(train_worlds, cfg.threads);

  TrainResult res;
  res.baseline = control::RewardBaseline{};
  std::vector<std::size_t> hard;  // worlds the current greedy policy fails
  uint64_t audit_round = 0;
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    if (cfg.audit_every > 0 && iter % cfg.audit_every == 0) {
      // Greedy audit at the middle budget.  Oversampling the failures keeps
      // rare states (empty sets, coverage misses) present in every batch;
      // under uniform draws their gradient share rounds to zero.
      std::vector<char> fail(train_worlds.size(), 0);
      parallel_for(train_worlds.size(), cfg.threads, [&](std::size_t wi) {
        engine::EngineConfig ec;
        ec.mode = engine::ExecMode::Full;
        ec.policy = engine::PolicyKind::Learned;
        ec.params = res.params;
        ec.cost = cost;
        ec.budget = cfg.budgets[cfg.budgets.size() / 2];
        engine::ExecutionTrace t = engine::execute(graphs[wi], train_worlds[wi], bundle, ec,
                                                   mix(cfg.seed, "audit", audit_round, wi));
        fail[wi] = engine::trace_cost(t, train_worlds[wi], cost).c_err > 0 ? 1 : 0;
      });
      hard.clear();
      for (std::size_t wi = 0; wi < fail.size(); ++wi)
        if (fail[wi]) hard.push_back(wi);
      ++audit_round;
    }
    std::vector<control::EpisodeRecord> batch(cfg.batch);
    parallel_for(static_cast<std::size_t>(cfg.batch), cfg.threads, [&](std::size_t b) {
      Rng pick(mix(cfg.seed, "pick", static_cast<uint64_t>(iter), b));
      std::size_t wi = !hard.empty() && pick.uniform() < cfg.hard_fraction
                           ? hard[pick.uniform_int(hard.size())]
                           : pick.uniform_int(train_worlds.size());
      double budget = cfg.budgets[pick.uniform_int(cfg.budgets.size())];

      engine::EngineConfig ec;
      ec.mode = engine::ExecMode::Full;
      ec.policy = engine::PolicyKind::Learned;
      ec.params = res.params;
      ec.cost = cost;
      ec.budget = budget;
      ec.training = true;

      std::vector<control::StepRecord> steps;
      engine::ExecutionTrace trace =
          engine::execute_recorded(graphs[wi], train_worlds[wi], bundle, ec,
                                   mix(cfg.seed, "train-ep", static_cast<uint64_t>(iter), b),
                                   &steps);
      control::CostBreakdown cb = engine::trace_cost(trace, train_worlds[wi], cost);
      batch[b] = control::EpisodeRecord{std::move(steps), -cb.c_total};
    });
    double mean = 0;
    for (const control::EpisodeRecord& e : batch) mean += e.reward;
    res.batch_mean_rewards.push_back(mean / cfg.batch);
    // the update sums over the batch; dividing keeps cfg.lr a per-mean step
    control::reinforce_update(res.params, res.baseline, batch, cfg.lr / cfg.batch);
  }
  return res;
}

/* experiment harnesses --------------------------------------------------- */

std::vector<FrontierPoint> budget_sweep(const SuiteConfig& suite, const engine::Bundle& bundle,
                                        const RunConfig& run, const std::vector<double>& budgets) {
  std::vector<world::WorldInstance> worlds = make_worlds(suite);
  std::vector<FrontierPoint> rows;
  for (double b : budgets) {
    RunConfig rb = run;
    rb.budget = b;  // episode seeds stay budget-independent: points pair up
    metrics::MetricsReport rep =
        metrics::aggregate(run_episodes(worlds, bundle, rb, suite.seeds_per_instance));
    rows.push_back({b, rep.em, rep.hallucination_rate, rep.mean_cost, rep.answer_coverage});
  }
  return rows;
}

std::vector<RobustnessRow> robustness_suite(const SuiteConfig& suite, const engine::Bundle& bundle,
                                            const RunConfig& run,
                                            const std::vector<selfplay::PerturbationSpec>& grid) {
  std::vector<world::WorldInstance> worlds = make_worlds(suite);
  std::vector<RobustnessRow> rows;

  RobustnessRow base;
  base.label = "baseline";
  base.baseline = true;
  base.report = metrics::aggregate(run_episodes(worlds, bundle, run, suite.seeds_per_instance));
  base.report.config_json = config_json(suite, run);
  base.report.fingerprint = config_fingerprint(base.report.config_json);
  rows.push_back(std::move(base));

  for (const selfplay::PerturbationSpec& spec : grid) {
    std::vector<world::WorldInstance> shifted =
        perturb_worlds(worlds, spec, mix(run.seed, "robust", fnv1a64(world::perturbation_name(spec.kind)),
                                         fnv1a64(canonical_number(spec.magnitude))));
    RobustnessRow r;
    r.label = std::string(world::perturbation_name(spec.kind)) + "@" +
              canonical_number(spec.magnitude);
    r.kind = spec.kind;
    r.magnitude = spec.magnitude;
    r.report = metrics::aggregate(run_episodes(shifted, bundle, run, suite.seeds_per_instance));
    r.report.config_json = config_json(suite, run);
    r.report.fingerprint = config_fingerprint(r.report.config_json);
    rows.push_back(std::move(r));
  }
  return rows;
}

metrics::MetricsReport run_ablation(const SuiteConfig& suite, const engine::Bundle& bundle,
                                    const control::PolicyParams& learned, const RunConfig& run,
                                    const std::string& variant) {
  RunConfig rc = run;
  if (variant == "full") {
    rc.mode = engine::ExecMode::Full;
    rc.policy = engine::PolicyKind::Learned;
    rc.params = learned;
  } else if (variant == "no-cp") {
    rc.mode = engine::ExecMode::NoCp;
    rc.policy = engine::PolicyKind::Learned;
    rc.params = learned;
  } else if (variant == "final-only-cp") {
    rc.mode = engine::ExecMode::FinalOnlyCp;
    rc.policy = engine::PolicyKind::Learned;
    rc.params = learned;
  } else if (variant == "heuristic-controller") {
    rc.mode = engine::ExecMode::Full;
    rc.policy = engine::PolicyKind::Heuristic;
    rc.params = control::PolicyParams{};
  } else {
    throw Error(ErrorKind::UnknownKind, "ablation variant " + variant);
  }
  return run_suite(suite, bundle, rc);
}

std::vector<std::pair<std::string, metrics::MetricsReport>> run_all_ablations(
    const SuiteConfig& suite, const engine::Bundle& bundle, const control::PolicyParams& learned,
    const RunConfig& run) {
  std::vector<std::pair<std::string, metrics::MetricsReport>> rows;
  for (const char* v : {"full", "no-cp", "final-only-cp", "heuristic-controller"})
    rows.emplace_back(v, run_ablation(suite, bundle, learned, run, v));
  return rows;
}

/* self-play experiments ---------------------------------------------------- */

namespace {

struct RecoverySetup {
  engine::Bundle bundle;
  std::map<NodeType, conformal::CalibrationPool> pools;
  selfplay::AgentBundle student;
  std::map<NodeType, std::vector<conformal::PoolExample>> eval_clean;
  std::map<NodeType, std::vector<conformal::PoolExample>> eval_shift;
  std::vector<selfplay::PerturbationSpec> grid;
  RunConfig run;
};

RecoverySetup recovery_setup(uint64_t seed, const RecoveryConfig& cfg) {
  RecoverySetup s;
  s.grid = cfg.grid.empty() ? selfplay::default_grid() : cfg.grid;
  s.run.delta = cfg.delta;
  s.run.threads = cfg.threads;
  s.run.seed = mix(seed, "recovery");
  s.run.policy = engine::PolicyKind::Heuristic;

  SuiteConfig pool_suite;
  pool_suite.instances = cfg.pool_worlds;
  pool_suite.seeds_per_instance = 1;
  pool_suite.world_seed = mix(seed, "pool-worlds");
  std::vector<world::WorldInstance> pool_worlds = make_worlds(pool_suite);
  auto [bundle, pools] = calibration_pipeline(pool_worlds, s.run);
  s.bundle = std::move(bundle);
  s.pools = std::move(pools);
  s.student = selfplay::AgentBundle{s.bundle, engine::PolicyKind::Heuristic,
                                    control::PolicyParams{}, false};

  SuiteConfig eval_suite;
  eval_suite.instances = cfg.eval_worlds;
  eval_suite.seeds_per_instance = 1;
  eval_suite.world_seed = mix(seed, "eval-worlds");
  std::vector<world::WorldInstance> eval_worlds = make_worlds(eval_suite);
  s.eval_clean = harvest_worlds(eval_worlds, s.bundle, s.run);
  for (const selfplay::PerturbationSpec& spec : s.grid) {
    std::vector<world::WorldInstance> shifted = perturb_worlds(
        eval_worlds, spec, mix(seed, "eval-shift", fnv1a64(world::perturbation_name(spec.kind)),
                               fnv1a64(canonical_number(spec.magnitude))));
    auto part = harvest_worlds(shifted, s.bundle, s.run);
    for (auto& [t, vec] : part) {
      auto& sink = s.eval_shift[t];
      for (auto& e : vec) sink.push_back(std::move(e));
    }
  }
  return s;
}

std::vector<selfplay::Counterexample> mine_round(const RecoverySetup& s, uint64_t seed,
                                                 const RecoveryConfig& cfg, int round) {
  SuiteConfig mine_suite;
  mine_suite.instances = cfg.mine_worlds;
  mine_suite.seeds_per_instance = 1;
  mine_suite.world_seed = mix(seed, "mine-worlds", static_cast<uint64_t>(round));
  std::vector<world::WorldInstance> mine_worlds = make_worlds(mine_suite);

  selfplay::MineConfig mc;
  mc.grid = s.grid;
  mc.include_unperturbed = false;
  mc.budget = s.run.budget;
  mc.cost = s.run.cost;
  mc.seed = mix(seed, "mine", static_cast<uint64_t>(round));
  mc.threads = cfg.threads;
  selfplay::AgentBundle adversary = selfplay::refresh_adversary(s.student);
  return selfplay::mine_counterexamples(adversary, mine_worlds, mc);
}

}  // namespace

RecoveryResult selfplay_recovery(uint64_t seed, const RecoveryConfig& cfg) {
  RecoverySetup s = recovery_setup(seed, cfg);
  RecoveryResult out;
  out.cov_clean_base = pooled_coverage(s.bundle, s.eval_clean);
  out.cov_shift_base = pooled_coverage(s.bundle, s.eval_shift);

  std::vector<selfplay::Counterexample> mined = mine_round(s, seed, cfg, 0);
  out.mined = mined.size();
  std::map<NodeType, std::size_t> added = selfplay::augment_pools(s.pools, mined);
  for (const auto& [t, n] : added) out.appended += n;

  engine::Bundle aug = calibrated_bundle(s.pools, cfg.delta);
  out.cov_clean_aug = pooled_coverage(aug, s.eval_clean);
  out.cov_shift_aug = pooled_coverage(aug, s.eval_shift);
  return out;
}

std::vector<SelfplayRound> selfplay_loop(uint64_t seed, int rounds, const RecoveryConfig& cfg,
                                         std::vector<selfplay::Counterexample>* all_mined) {
  if (rounds < 1) throw Error(ErrorKind::BadConfig, "selfplay rounds < 1");
  RecoverySetup s = recovery_setup(seed, cfg);
  std::vector<SelfplayRound> rows;
  for (int r = 0; r < rounds; ++r) {
    SelfplayRound row;
    row.round = r;
    row.cov_shift_before = pooled_coverage(s.student.bundle, s.eval_shift);

    std::vector<selfplay::Counterexample> mined = mine_round(s, seed, cfg, r);
    row.mined = mined.size();
    row.appended = selfplay::augment_pools(s.pools, mined);
    s.student.bundle = calibrated_bundle(s.pools, cfg.delta);

    row.cov_shift_after = pooled_coverage(s.student.bundle, s.eval_shift);
    row.cov_clean_after = pooled_coverage(s.student.bundle, s.eval_clean);
    if (all_mined)
      for (selfplay::Counterexample& c : mined) all_mined->push_back(std::move(c));
    rows.push_back(std::move(row));
  }
  return rows;
}

/* emission ----------------------------------------------------------------- */

namespace {

std::string csv_join(const std::vector<std::string>& cells) {
  std::string line;
  for (std::size_t i = 0; i < cells.size(); ++i) line += (i ? "," : "") + cells[i];
  return line + "\n";
}

}  // namespace

std::string frontier_csv(const std::vector<FrontierPoint>& rows) {
  std::string out = "budget,em,hallucination_rate,mean_cost,answer_coverage\n";
  for (const FrontierPoint& r : rows)
    out += csv_join({canonical_number(r.budget), canonical_number(r.em),
                     canonical_number(r.hallucination_rate), canonical_number(r.mean_cost),
                     canonical_number(r.answer_coverage)});
  return out;
}

std::string frontier_json(const std::vector<FrontierPoint>& rows) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const FrontierPoint& r : rows)
    arr.push_back({{"budget", r.budget},
                   {"em", r.em},
                   {"hallucination_rate", r.hallucination_rate},
                   {"mean_cost", r.mean_cost},
                   {"answer_coverage", r.answer_coverage}});
  return arr.dump(2) + "\n";
}

std::string robustness_csv(const std::vector<RobustnessRow>& rows) {
  std::string out = "label,em,answer_coverage,hallucination_rate,mean_cost,aborted,episodes\n";
  for (const RobustnessRow& r : rows)
    out += csv_join({r.label, canonical_number(r.report.em),
                     canonical_number(r.report.answer_coverage),
                     canonical_number(r.report.hallucination_rate),
                     canonical_number(r.report.mean_cost), std::to_string(r.report.aborted),
                     std::to_string(r.report.episodes)});
  return out;
}

std::string robustness_json(const std::vector<RobustnessRow>& rows) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const RobustnessRow& r : rows) {
    nlohmann::ordered_json j;
    j["label"] = r.label;
    j["em"] = r.report.em;
    j["answer_coverage"] = r.report.answer_coverage;
    j["hallucination_rate"] = r.report.hallucination_rate;
    j["mean_cost"] = r.report.mean_cost;
    j["aborted"] = r.report.aborted;
    j["episodes"] = r.report.episodes;
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

std::string ablation_csv(const std::vector<std::pair<std::string, metrics::MetricsReport>>& rows) {
  std::string out = "variant,em,answer_coverage,hallucination_rate,mean_cost,aborted,episodes\n";
  for (const auto& [name, rep] : rows)
    out += csv_join({name, canonical_number(rep.em), canonical_number(rep.answer_coverage),
                     canonical_number(rep.hallucination_rate), canonical_number(rep.mean_cost),
                     std::to_string(rep.aborted), std::to_string(rep.episodes)});
  return out;
}

std::string ablation_json(const std::vector<std::pair<std::string, metrics::MetricsReport>>& rows) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& [name, rep] : rows) {
    nlohmann::ordered_json j;
    j["variant"] = name;
    j["em"] = rep.em;
    j["answer_coverage"] = rep.answer_coverage;
    j["hallucination_rate"] = rep.hallucination_rate;
    j["mean_cost"] = rep.mean_cost;
    j["aborted"] = rep.aborted;
    j["episodes"] = rep.episodes;
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

std::string coverage_study_csv(const std::vector<CoverageStudyRow>& rows) {
  std::string out = "type,delta,mean_coverage,window_lo,window_hi,n_calib,n_test,resamples\n";
  for (const CoverageStudyRow& r : rows)
    out += csv_join({node_type_name(r.type), canonical_number(r.delta),
                     canonical_number(r.mean_coverage), canonical_number(r.window_lo),
                     canonical_number(r.window_hi), std::to_string(r.n_calib),
                     std::to_string(r.n_test), std::to_string(r.resamples)});
  return out;
}

std::string coverage_study_json(const std::vector<CoverageStudyRow>& rows) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const CoverageStudyRow& r : rows) {
    nlohmann::ordered_json j;
    j["type"] = node_type_name(r.type);
    j["delta"] = r.delta;
    j["mean_coverage"] = r.mean_coverage;
    j["window_lo"] = r.window_lo;
    j["window_hi"] = r.window_hi;
    j["n_calib"] = r.n_calib;
    j["n_test"] = r.n_test;
    j["resamples"] = r.resamples;
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

std::string selfplay_rounds_csv(const std::vector<SelfplayRound>& rows) {
  std::string out = "round,mined,appended,cov_shift_before,cov_shift_after,cov_clean_after\n";
  for (const SelfplayRound& r : rows) {
    std::size_t appended = 0;
    for (const auto& [t, n] : r.appended) appended += n;
    out += csv_join({std::to_string(r.round), std::to_string(r.mined), std::to_string(appended),
                     canonical_number(r.cov_shift_before), canonical_number(r.cov_shift_after),
                     canonical_number(r.cov_clean_after)});
  }
  return out;
}

std::string selfplay_rounds_json(const std::vector<SelfplayRound>& rows) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const SelfplayRound& r : rows) {
    nlohmann::ordered_json j;
    j["round"] = r.round;
    j["mined"] = r.mined;
    nlohmann::ordered_json app;
    for (const auto& [t, n] : r.appended) app[node_type_name(t)] = n;
    j["appended"] = app;
    j["cov_shift_before"] = r.cov_shift_before;
    j["cov_shift_after"] = r.cov_shift_after;
    j["cov_clean_after"] = r.cov_clean_after;
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

std::string dataset_manifest(const SuiteConfig& suite,
                             const std::vector<world::WorldInstance>& worlds) {
  nlohmann::ordered_json j;
  j["world_seed"] = suite.world_seed;
  j["instances_per_difficulty"] = suite.instances;
  j["seeds_per_instance"] = suite.seeds_per_instance;
  j["zero_noise"] = suite.zero_noise;
  j["total_worlds"] = worlds.size();

  std::map<std::string, std::size_t> by_diff, by_kind;
  std::size_t numeric_gold = 0;
  for (const world::WorldInstance& w : worlds) {
    ++by_diff[world::difficulty_name(w.difficulty)];
    ++by_kind[query_kind_name(w.query.kind)];
    if (w.gold_is_numeric) ++numeric_gold;
  }
  nlohmann::ordered_json d, k;
  for (const auto& [name, n] : by_diff) d[name] = n;
  for (const auto& [name, n] : by_kind) k[name] = n;
  j["by_difficulty"] = d;
  j["by_query_kind"] = k;
  j["numeric_gold"] = numeric_gold;
  if (!worlds.empty()) {
    const world::NoiseConfig& n = worlds.front().noise;
    j["noise"] = {{"char_confusion_prob", n.char_confusion_prob},
                  {"box_jitter_sigma", n.box_jitter_sigma},
                  {"numeric_noise_sigma", n.numeric_noise_sigma},
                  {"distractor_count", n.distractor_count},
                  {"fidelity_gain", n.fidelity_gain},
                  {"score_jitter", n.score_jitter},
                  {"fuse_confab_prob", n.fuse_confab_prob}};
  }
  return j.dump(2) + "\n";
}

}  // namespace certigraph::bench

// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: calibrate pools, run single episodes, and drive the
// benchmark / training / self-play harnesses. All randomness flows from
// explicit seeds (or the CERTIGRAPH_SEED environment variable), so every
// command is reproducible byte for byte.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "certigraph/bench.hpp"
#include "certigraph/common.hpp"
#include "certigraph/conformal.hpp"
#include "certigraph/controller.hpp"
#include "certigraph/dsl.hpp"
#include "certigraph/engine.hpp"
#include "certigraph/metrics.hpp"
#include "certigraph/rng.hpp"
#include "certigraph/selfplay.hpp"
#include "certigraph/world.hpp"

namespace fs = std::filesystem;
using namespace certigraph;

namespace {

uint64_t default_seed() {
  const char* s = std::getenv("CERTIGRAPH_SEED");
  if (!s || !*s) return 20260816ull;
  char* end = nullptr;
  uint64_t v = std::strtoull(s, &end, 10);
  if (end == s || *end) throw Error(ErrorKind::BadConfig, "CERTIGRAPH_SEED is not an integer");
  return v;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spill(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path);
  out << content;
  if (!out) throw Error(ErrorKind::IoError, "short write to " + path);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create " + dir + ": " + ec.message());
}

engine::ExecMode mode_from_name(const std::string& s) {
  if (s == "full") return engine::ExecMode::Full;
  if (s == "no-cp") return engine::ExecMode::NoCp;
  if (s == "final-only-cp") return engine::ExecMode::FinalOnlyCp;
  throw Error(ErrorKind::BadConfig, "unknown mode " + s);
}

// Shared pipeline knobs for bench-style commands.
struct PipelineOpts {
  std::string mode = "full";
  std::string policy = "heuristic";
  std::string policy_file;
  double budget = 16;
  double delta = 0.1;
  uint64_t seed = default_seed();
  uint64_t world_seed = 711;
  int pool_worlds = 400;
  int threads = 0;
  bool zero_noise = false;
};

void add_pipeline_opts(CLI::App* cmd, PipelineOpts& o) {
  cmd->add_option("--mode", o.mode, "full | no-cp | final-only-cp")->capture_default_str();
  cmd->add_option("--policy", o.policy, "learned | heuristic | accept-always | abort-always")
      ->capture_default_str();
  cmd->add_option("--policy-file", o.policy_file, "weights JSON for --policy learned");
  cmd->add_option("--budget", o.budget, "episode compute budget")->capture_default_str();
  cmd->add_option("--delta", o.delta, "target miscoverage rate")->capture_default_str();
  cmd->add_option("--seed", o.seed, "master episode seed")->capture_default_str();
  cmd->add_option("--world-seed", o.world_seed, "instance-generation seed")
      ->capture_default_str();
  cmd->add_option("--pool-worlds", o.pool_worlds, "calibration worlds per difficulty")
      ->capture_default_str();
  cmd->add_option("--threads", o.threads, "worker threads (0 = hardware)")
      ->capture_default_str();
  cmd->add_flag("--zero-noise", o.zero_noise, "disable all observation noise");
}

bench::RunConfig run_config(const PipelineOpts& o) {
  bench::RunConfig run;
  run.mode = mode_from_name(o.mode);
  run.policy = engine::policy_kind_from_name(o.policy);
  run.budget = o.budget;
  run.delta = o.delta;
  run.seed = o.seed;
  run.threads = o.threads;
  if (run.policy == engine::PolicyKind::Learned && !o.policy_file.empty()) {
    control::RewardBaseline b;
    control::policy_from_json(slurp(o.policy_file), run.params, b);
  }
  return run;
}

// Calibration worlds come from their own seed stream, disjoint from both the
// evaluation suite and the training split.
std::pair<engine::Bundle, std::map<NodeType, conformal::CalibrationPool>> make_bundle(
    const PipelineOpts& o, const bench::RunConfig& run) {
  bench::SuiteConfig pools;
  pools.instances = o.pool_worlds;
  pools.seeds_per_instance = 1;
  pools.zero_noise = o.zero_noise;
  pools.world_seed = hash_combine(o.world_seed, fnv1a64("calibration-worlds"));
  return bench::calibration_pipeline(bench::make_worlds(pools), run);
}

control::PolicyParams train_if_needed(const PipelineOpts& o, bench::RunConfig& run,
                                      const engine::Bundle& bundle, int iterations, int batch,
                                      double lr) {
  if (run.policy != engine::PolicyKind::Learned || !o.policy_file.empty()) return run.params;
  bench::SuiteConfig tw;
  tw.instances = 150;
  tw.seeds_per_instance = 1;
  tw.zero_noise = o.zero_noise;
  tw.world_seed = hash_combine(o.world_seed, fnv1a64("train-worlds"));
  bench::TrainConfig tc;
  tc.iterations = iterations;
  tc.batch = batch;
  tc.lr = lr;
  tc.seed = hash_combine(o.seed, fnv1a64("train"));
  tc.threads = o.threads;
  std::cerr << "training policy (" << iterations << " iterations x " << batch
            << " episodes)...\n";
  bench::TrainResult tr = bench::train_policy(bench::make_worlds(tw), bundle, run.cost, tc);
  run.params = tr.params;
  return tr.params;
}

std::vector<double> parse_budget_list(const std::vector<double>& v) {
  if (v.empty()) throw Error(ErrorKind::BadConfig, "empty budget list");
  return v;
}

void print_report_summary(const metrics::MetricsReport& r) {
  std::cout << "episodes           " << r.episodes << "\n"
            << "exact match        " << canonical_number(r.em) << "\n"
            << "answer coverage    " << canonical_number(r.answer_coverage) << "\n"
            << "hallucination rate " << canonical_number(r.hallucination_rate) << "\n"
            << "mean compute       " << canonical_number(r.mean_cost) << "\n"
            << "aborted            " << r.aborted << " (" << r.forced_aborts << " forced)\n"
            << "fingerprint        " << r.fingerprint << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conformal-certified reasoning-graph engine"};
  app.require_subcommand(1);

  /* calibrate ------------------------------------------------------- */
  auto* cal = app.add_subcommand("calibrate", "fit a conformal threshold from a pool JSONL");
  std::string cal_pool, cal_out;
  double cal_delta = 0.1;
  cal->add_option("--pool", cal_pool, "pool JSONL path")->required();
  cal->add_option("--delta", cal_delta, "target miscoverage rate")->capture_default_str();
  cal->add_option("--out", cal_out, "output JSON path (default stdout)");
  cal->callback([&] {
    conformal::CalibrationPool pool = conformal::pool_from_jsonl(slurp(cal_pool));
    conformal::ConformalCalibrator c =
        conformal::calibrate(pool, conformal::default_scorer(pool.type), cal_delta);
    std::string text = conformal::calibrator_to_json(c);
    if (cal_out.empty())
      std::cout << text << "\n";
    else
      spill(cal_out, text + "\n");
    std::cerr << "n=" << c.n << " k=" << c.k << " threshold="
              << (std::isinf(c.threshold) ? "inf" : canonical_number(c.threshold)) << "\n";
  });

  /* run -------------------------------------------------------------- */
  auto* run_cmd = app.add_subcommand("run", "execute one episode and print the answer");
  PipelineOpts ro;
  std::string run_difficulty = "medium", run_graph, run_trace_out;
  run_cmd->add_option("--difficulty", run_difficulty, "easy | medium | hard")
      ->capture_default_str();
  run_cmd->add_option("--graph", run_graph, "program text path (default: plan from the query)");
  run_cmd->add_option("--trace-out", run_trace_out, "write the full trace JSON here");
  add_pipeline_opts(run_cmd, ro);
  run_cmd->get_option("--world-seed")->required();
  run_cmd->callback([&] {
    world::Difficulty d = world::difficulty_from_name(run_difficulty);
    world::WorldInstance w = ro.zero_noise
                                 ? world::generate_instance(ro.world_seed, d,
                                                            world::NoiseConfig::zero())
                                 : world::generate_instance(ro.world_seed, d);
    dsl::ReasoningGraph g =
        run_graph.empty() ? dsl::build_graph(dsl::parse_program(dsl::plan_dsl(w.query)))
                          : dsl::build_graph(dsl::parse_program(slurp(run_graph)));

    bench::RunConfig run = run_config(ro);
    auto [bundle, pools] = make_bundle(ro, run);
    engine::EngineConfig cfg;
    cfg.mode = run.mode;
    cfg.policy = run.policy;
    cfg.params = run.params;
    cfg.cost = run.cost;
    cfg.budget = run.budget;
    engine::ExecutionTrace trace =
        engine::execute(g, w, bundle, cfg, hash_combine(run.seed, w.seed));

    metrics::EpisodeEval ev = metrics::evaluate_episode(trace, w, bundle, run.cost);
    std::cout << "query   " << w.query.text << "\n"
              << "answer  " << trace.answer.answer << (trace.answer.aborted ? "  [aborted]" : "")
              << "\n"
              << "gold    " << w.gold_answer << "\n"
              << "correct " << (ev.correct ? "yes" : "no") << "\n"
              << "set     " << canonical_number(trace.answer.answer_set.set_size())
              << " members, compute " << canonical_number(trace.comp_cost) << " / "
              << canonical_number(trace.budget) << "\n";
    if (!run_trace_out.empty()) spill(run_trace_out, engine::trace_to_json(trace) + "\n");
  });

  /* bench ------------------------------------------------------------ */
  auto* bench_cmd = app.add_subcommand("bench", "calibrate, run the evaluation suite, emit reports");
  PipelineOpts bo;
  std::string bench_dir;
  int bench_instances = 500, bench_repeats = 20;
  int bench_iters = 200, bench_batch = 48;
  double bench_lr = 0.1;
  bench_cmd->add_option("--report", bench_dir, "output directory")->required();
  bench_cmd->add_option("--instances", bench_instances, "instances per difficulty")
      ->capture_default_str();
  bench_cmd->add_option("--seeds-per-instance", bench_repeats, "episode repeats per instance")
      ->capture_default_str();
  bench_cmd->add_option("--train-iterations", bench_iters, "policy training iterations")
      ->capture_default_str();
  bench_cmd->add_option("--train-batch", bench_batch, "episodes per training batch")
      ->capture_default_str();
  bench_cmd->add_option("--train-lr", bench_lr, "policy learning rate")->capture_default_str();
  add_pipeline_opts(bench_cmd, bo);
  bench_cmd->callback([&] {
    ensure_dir(bench_dir);
    bench::SuiteConfig suite;
    suite.instances = bench_instances;
    suite.seeds_per_instance = bench_repeats;
    suite.zero_noise = bo.zero_noise;
    suite.world_seed = bo.world_seed;

    bench::RunConfig run = run_config(bo);
    auto [bundle, pools] = make_bundle(bo, run);
    train_if_needed(bo, run, bundle, bench_iters, bench_batch, bench_lr);

    metrics::MetricsReport rep = bench::run_suite(suite, bundle, run);
    spill(bench_dir + "/report.json", metrics::report_to_json(rep) + "\n");
    spill(bench_dir + "/report.csv", metrics::report_to_csv(rep));
    spill(bench_dir + "/manifest.json",
          bench::dataset_manifest(suite, bench::make_worlds(suite)));
    print_report_summary(rep);
  });

  /* sweep ------------------------------------------------------------ */
  auto* sweep_cmd = app.add_subcommand("sweep", "accuracy/cost frontier across budgets");
  PipelineOpts so;
  std::string sweep_dir;
  int sweep_instances = 200, sweep_repeats = 5;
  std::vector<double> sweep_budgets = {8, 12, 16, 24};
  sweep_cmd->add_option("--report", sweep_dir, "output directory")->required();
  sweep_cmd->add_option("--budgets", sweep_budgets, "budget grid")
      ->delimiter(',')
      ->capture_default_str();
  sweep_cmd->add_option("--instances", sweep_instances, "instances per difficulty")
      ->capture_default_str();
  sweep_cmd->add_option("--seeds-per-instance", sweep_repeats, "episode repeats per instance")
      ->capture_default_str();
  add_pipeline_opts(sweep_cmd, so);
  sweep_cmd->callback([&] {
    ensure_dir(sweep_dir);
    bench::SuiteConfig suite;
    suite.instances = sweep_instances;
    suite.seeds_per_instance = sweep_repeats;
    suite.zero_noise = so.zero_noise;
    suite.world_seed = so.world_seed;

    bench::RunConfig run = run_config(so);
    auto [bundle, pools] = make_bundle(so, run);
    std::vector<bench::FrontierPoint> rows =
        bench::budget_sweep(suite, bundle, run, parse_budget_list(sweep_budgets));
    spill(sweep_dir + "/frontier.csv", bench::frontier_csv(rows));
    spill(sweep_dir + "/frontier.json", bench::frontier_json(rows));
    std::cout << bench::frontier_csv(rows);
  });

  /* selfplay ----------------------------------------------------------- */
  auto* sp_cmd = app.add_subcommand("selfplay", "mine counterexamples and recalibrate in rounds");
  std::string sp_dir;
  int sp_rounds = 3;
  bench::RecoveryConfig sp_cfg;
  uint64_t sp_seed = default_seed();
  sp_cmd->add_option("--report", sp_dir, "output directory")->required();
  sp_cmd->add_option("--rounds", sp_rounds, "mining rounds")->capture_default_str();
  sp_cmd->add_option("--pool-worlds", sp_cfg.pool_worlds, "calibration worlds per difficulty")
      ->capture_default_str();
  sp_cmd->add_option("--eval-worlds", sp_cfg.eval_worlds, "held-out coverage worlds")
      ->capture_default_str();
  sp_cmd->add_option("--mine-worlds", sp_cfg.mine_worlds, "adversary worlds per round")
      ->capture_default_str();
  sp_cmd->add_option("--delta", sp_cfg.delta, "target miscoverage rate")->capture_default_str();
  sp_cmd->add_option("--threads", sp_cfg.threads, "worker threads (0 = hardware)")
      ->capture_default_str();
  sp_cmd->add_option("--seed", sp_seed, "master seed")->capture_default_str();
  sp_cmd->callback([&] {
    ensure_dir(sp_dir);
    std::vector<selfplay::Counterexample> mined;
    std::vector<bench::SelfplayRound> rows =
        bench::selfplay_loop(sp_seed, sp_rounds, sp_cfg, &mined);
    spill(sp_dir + "/rounds.csv", bench::selfplay_rounds_csv(rows));
    spill(sp_dir + "/rounds.json", bench::selfplay_rounds_json(rows));
    spill(sp_dir + "/counterexamples.jsonl", selfplay::counterexamples_to_jsonl(mined));
    std::cout << bench::selfplay_rounds_csv(rows);
  });

  /* train -------------------------------------------------------------- */
  auto* train_cmd = app.add_subcommand("train", "train the compute-allocation policy");
  PipelineOpts to;
  std::string train_out = "policy.json";
  int train_iters = 200, train_batch = 48, train_worlds_n = 250;
  double train_lr = 0.1;
  std::vector<double> train_budgets = {8, 12, 16, 24};
  train_cmd->add_option("--out", train_out, "weights JSON path")->capture_default_str();
  train_cmd->add_option("--iterations", train_iters, "training iterations")
      ->capture_default_str();
  train_cmd->add_option("--batch", train_batch, "episodes per batch")->capture_default_str();
  train_cmd->add_option("--lr", train_lr, "learning rate")->capture_default_str();
  train_cmd->add_option("--budgets", train_budgets, "budget grid sampled per episode")
      ->delimiter(',')
      ->capture_default_str();
  train_cmd->add_option("--train-worlds", train_worlds_n, "training worlds per difficulty")
      ->capture_default_str();
  add_pipeline_opts(train_cmd, to);
  train_cmd->callback([&] {
    bench::RunConfig run = run_config(to);
    auto [bundle, pools] = make_bundle(to, run);

    bench::SuiteConfig tw;
    tw.instances = train_worlds_n;
    tw.seeds_per_instance = 1;
    tw.zero_noise = to.zero_noise;
    tw.world_seed = hash_combine(to.world_seed, fnv1a64("train-worlds"));

    bench::TrainConfig tc;
    tc.iterations = train_iters;
    tc.batch = train_batch;
    tc.lr = train_lr;
    tc.budgets = parse_budget_list(train_budgets);
    tc.seed = hash_combine(to.seed, fnv1a64("train"));
    tc.threads = to.threads;

    bench::TrainResult tr = bench::train_policy(bench::make_worlds(tw), bundle, run.cost, tc);
    spill(train_out, control::policy_to_json(tr.params, tr.baseline) + "\n");
    double first = tr.batch_mean_rewards.front(), last = tr.batch_mean_rewards.back();
    std::cout << "iterations " << train_iters << "\n"
              << "reward     " << canonical_number(first) << " -> " << canonical_number(last)
              << "\n"
              << "weights    " << train_out << "\n";
  });

  /* coverage ------------------------------------------------------------- */
  auto* cov_cmd = app.add_subcommand("coverage", "finite-sample coverage study over resplits");
  std::string cov_dir;
  std::size_t cov_calib = 2000, cov_test = 10000;
  int cov_resamples = 50, cov_threads = 0;
  std::vector<double> cov_deltas = {0.05, 0.1, 0.2};
  uint64_t cov_seed = default_seed();
  cov_cmd->add_option("--report", cov_dir, "output directory (default: stdout only)");
  cov_cmd->add_option("--calib", cov_calib, "calibration examples per type")
      ->capture_default_str();
  cov_cmd->add_option("--test", cov_test, "test examples per type")->capture_default_str();
  cov_cmd->add_option("--resamples", cov_resamples, "random resplits")->capture_default_str();
  cov_cmd->add_option("--deltas", cov_deltas, "miscoverage grid")
      ->delimiter(',')
      ->capture_default_str();
  cov_cmd->add_option("--seed", cov_seed, "master seed")->capture_default_str();
  cov_cmd->add_option("--threads", cov_threads, "worker threads (0 = hardware)")
      ->capture_default_str();
  cov_cmd->callback([&] {
    std::vector<bench::CoverageStudyRow> rows =
        bench::coverage_study(cov_calib, cov_test, cov_resamples, cov_deltas, cov_seed,
                              cov_threads);
    std::cout << bench::coverage_study_csv(rows);
    if (!cov_dir.empty()) {
      ensure_dir(cov_dir);
      spill(cov_dir + "/coverage.csv", bench::coverage_study_csv(rows));
      spill(cov_dir + "/coverage.json", bench::coverage_study_json(rows));
    }
  });

  /* report ---------------------------------------------------------------- */
  auto* rep_cmd = app.add_subcommand("report", "re-emit a report JSON as csv or json");
  std::string rep_in, rep_format = "csv";
  rep_cmd->add_option("--in", rep_in, "report JSON path")->required();
  rep_cmd->add_option("--format", rep_format, "csv | json")->capture_default_str();
  rep_cmd->callback([&] {
    metrics::MetricsReport r = metrics::report_from_json(slurp(rep_in));
    if (rep_format == "csv")
      std::cout << metrics::report_to_csv(r);
    else if (rep_format == "json")
      std::cout << metrics::report_to_json(r) << "\n";
    else
      throw Error(ErrorKind::BadConfig, "unknown format " + rep_format);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 10 + static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

// SPDX-License-Identifier: Apache-2.0
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "certigraph/controller.hpp"
#include "certigraph/rng.hpp"
#include "doctest.h"

using namespace certigraph;
using namespace certigraph::control;

namespace {

constexpr std::array<bool, kNumActions> kNoMask{false, false, false, false};

PolicyParams random_params(Rng& rng, double scale = 1.0) {
  PolicyParams p;
  for (int a = 0; a < kNumActions; ++a)
    for (int i = 0; i < kPolicyFeatureDim; ++i) p.w[a][i] = rng.uniform(-scale, scale);
  return p;
}

FeatureVec random_features(Rng& rng) {
  FeatureVec f{};
  for (int i = 0; i < kPolicyFeatureDim; ++i) f[i] = rng.uniform(0.0, 1.0);
  return f;
}

std::vector<EpisodeRecord> random_batch(Rng& rng, int n_eps, int n_steps) {
  std::vector<EpisodeRecord> batch;
  for (int e = 0; e < n_eps; ++e) {
    EpisodeRecord ep;
    ep.reward = rng.uniform(-2.0, 2.0);
    for (int s = 0; s < n_steps; ++s) {
      StepRecord st;
      st.features = random_features(rng);
      // random mask keeping at least two actions live, chosen action unmasked
      for (int a = 0; a < kNumActions; ++a) st.masked[a] = rng.bernoulli(0.3);
      int live = 0;
      for (int a = 0; a < kNumActions; ++a) live += st.masked[a] ? 0 : 1;
      while (live < 2) {
        int a = static_cast<int>(rng.uniform_int(kNumActions));
        if (st.masked[a]) {
          st.masked[a] = false;
          ++live;
        }
      }
      int pick = static_cast<int>(rng.uniform_int(kNumActions));
      while (st.masked[pick]) pick = (pick + 1) % kNumActions;
      st.action = static_cast<Action>(pick);
      ep.steps.push_back(st);
    }
    batch.push_back(std::move(ep));
  }
  return batch;
}

}  // namespace

TEST_CASE("policy features squash unbounded inputs into [0,1]") {
  BudgetState budget{16.0, 4.0};
  FeatureVec f = policy_features(1.0, 3.0, 0.5, NodeType::ChartNum, true, budget);
  CHECK(f[0] == doctest::Approx(0.5));        // tau 1 -> 1/2
  CHECK(f[1] == doctest::Approx(0.75));       // size 3 -> 3/4
  CHECK(f[2] == doctest::Approx(1.0 / 3.0));  // dispersion 0.5 -> 1/3
  CHECK(f[3] == doctest::Approx(0.75));       // 12 of 16 remaining
  CHECK(f[4] == 0.0);
  CHECK(f[5] == 0.0);
  CHECK(f[6] == 1.0);  // chart one-hot
  CHECK(f[7] == 0.0);
  CHECK(f[8] == 1.0);  // parent empty

  FeatureVec inf_tau = policy_features(std::numeric_limits<double>::infinity(), 0.0, 0.0,
                                       NodeType::OcrString, false, budget);
  CHECK(inf_tau[0] == 1.0);
  CHECK(inf_tau[1] == 0.0);
  CHECK(inf_tau[4] == 1.0);
  CHECK(inf_tau[8] == 0.0);

  BudgetState zero{0.0, 0.0};
  CHECK(policy_features(0, 0, 0, NodeType::DetBox, false, zero)[3] == 0.0);
  BudgetState overspent{8.0, 11.0};
  CHECK(policy_features(0, 0, 0, NodeType::DetBox, false, overspent)[3] == 0.0);
}

TEST_CASE("decide masks actions hard and normalizes the rest") {
  Rng rng(1);
  PolicyParams p = random_params(rng);
  FeatureVec f = random_features(rng);
  std::array<bool, kNumActions> masked{false, true, false, true};
  Decision d = decide(p, f, masked, false, rng);
  CHECK(d.probs[1] == 0.0);
  CHECK(d.probs[3] == 0.0);
  CHECK(d.probs[0] + d.probs[2] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((d.action == Action::Accept || d.action == Action::Expand));
  CHECK(d.logp == doctest::Approx(std::log(d.probs[static_cast<int>(d.action)])));

  std::array<bool, kNumActions> all{true, true, true, true};
  try {
    decide(p, f, all, false, rng);
    FAIL("expected all-actions-masked error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::AllActionsMasked);
  }
}

TEST_CASE("greedy decide breaks exact ties toward the lower action index") {
  PolicyParams uniform;  // zero weights -> equal logits
  FeatureVec f{};
  f[0] = 0.4;
  Rng rng(7);
  Decision d = decide(uniform, f, kNoMask, false, rng);
  CHECK(d.action == Action::Accept);
  for (int a = 0; a < kNumActions; ++a) CHECK(d.probs[a] == doctest::Approx(0.25));

  // masking the lower-indexed contenders shifts the tie winner
  Decision d2 = decide(uniform, f, {true, false, false, false}, false, rng);
  CHECK(d2.action == Action::Retry);
}

TEST_CASE("sampling is deterministic given the generator state") {
  Rng setup(42);
  PolicyParams p = random_params(setup);
  FeatureVec f = random_features(setup);

  Rng s1(99), s2(99);
  for (int i = 0; i < 50; ++i) {
    Decision a = decide(p, f, kNoMask, true, s1);
    Decision b = decide(p, f, kNoMask, true, s2);
    CHECK(a.action == b.action);
    CHECK(a.logp == b.logp);
  }

  // sampled actions always come from the unmasked set
  Rng s3(5);
  std::array<bool, kNumActions> masked{false, true, false, true};
  for (int i = 0; i < 100; ++i) {
    Action a = decide(p, f, masked, true, s3).action;
    CHECK((a == Action::Accept || a == Action::Expand));
  }
}

TEST_CASE("heuristic controller retries on wide sets, otherwise accepts") {
  CHECK(heuristic_decide(4.0, 0, kNoMask) == Action::Retry);
  CHECK(heuristic_decide(4.0, 1, kNoMask) == Action::Retry);
  CHECK(heuristic_decide(4.0, 2, kNoMask) == Action::Accept);  // retry budget exhausted
  CHECK(heuristic_decide(3.0, 0, kNoMask) == Action::Accept);  // threshold is strict
  CHECK(heuristic_decide(1.0, 0, kNoMask) == Action::Accept);
  std::array<bool, kNumActions> retry_masked{false, true, false, false};
  CHECK(heuristic_decide(10.0, 0, retry_masked) == Action::Accept);
  // it never aborts, even on empty sets
  CHECK(heuristic_decide(0.0, 0, kNoMask) == Action::Accept);
}

TEST_CASE("episode cost charges errors and compute separately") {
  CostModel m;  // beta 0.05, err_weight 1
  CostBreakdown ok = episode_cost(true, true, 10.0, m);
  CHECK(ok.c_err == 0.0);
  CHECK(ok.c_comp == 10.0);
  CHECK(ok.c_total == doctest::Approx(0.5));

  CostBreakdown wrong = episode_cost(false, true, 4.0, m);
  CHECK(wrong.c_err == 1.0);
  CHECK(wrong.c_total == doctest::Approx(1.2));

  CostBreakdown uncovered = episode_cost(false, false, 4.0, m);
  CHECK(uncovered.c_err == 2.0);
  CHECK(uncovered.c_total == doctest::Approx(2.2));

  // correct but gold outside the reported set still pays one error unit
  CostBreakdown leaky = episode_cost(true, false, 0.0, m);
  CHECK(leaky.c_err == 1.0);

  CostModel heavy;
  heavy.err_weight = 3.0;
  heavy.beta = 0.1;
  CostBreakdown h = episode_cost(false, false, 5.0, heavy);
  CHECK(h.c_err == 6.0);
  CHECK(h.c_total == doctest::Approx(6.5));
}

TEST_CASE("policy-gradient matches central finite differences") {
  Rng rng(0xabcdULL);
  for (int trial = 0; trial < 5; ++trial) {
    PolicyParams p = random_params(rng, 0.8);
    std::vector<EpisodeRecord> batch = random_batch(rng, 6, 4);
    double baseline = rng.uniform(-0.5, 0.5);
    auto grad = pg_gradient(p, batch, baseline);
    const double h = 1e-6;
    for (int a = 0; a < kNumActions; ++a) {
      for (int i = 0; i < kPolicyFeatureDim; ++i) {
        PolicyParams up = p, down = p;
        up.w[a][i] += h;
        down.w[a][i] -= h;
        double fd =
            (pg_objective(up, batch, baseline) - pg_objective(down, batch, baseline)) / (2 * h);
        CHECK(std::abs(grad[a][i] - fd) < 1e-5);
      }
    }
  }
  std::vector<EpisodeRecord> empty;
  CHECK_THROWS_AS(pg_objective(PolicyParams{}, empty, 0.0), Error);
  CHECK_THROWS_AS(pg_gradient(PolicyParams{}, empty, 0.0), Error);
}

TEST_CASE("reinforce step applies exactly one frozen-baseline gradient ascent") {
  Rng rng(0x777ULL);
  PolicyParams p = random_params(rng, 0.5);
  PolicyParams before = p;
  RewardBaseline b;
  b.value = 0.25;
  std::vector<EpisodeRecord> batch = random_batch(rng, 5, 3);
  const double lr = 0.07;

  auto expected = pg_gradient(before, batch, 0.25);
  reinforce_update(p, b, batch, lr);
  for (int a = 0; a < kNumActions; ++a)
    for (int i = 0; i < kPolicyFeatureDim; ++i)
      CHECK(p.w[a][i] == doctest::Approx(before.w[a][i] + lr * expected[a][i]).epsilon(1e-12));

  double mean_r = 0;
  for (const EpisodeRecord& ep : batch) mean_r += ep.reward;
  mean_r /= static_cast<double>(batch.size());
  CHECK(b.value == doctest::Approx(0.9 * 0.25 + 0.1 * mean_r).epsilon(1e-12));
}

TEST_CASE("policy round-trips through json") {
  PolicyParams p;
  for (int a = 0; a < kNumActions; ++a)
    for (int i = 0; i < kPolicyFeatureDim; ++i) p.w[a][i] = a * 10.0 + i * 0.125;
  RewardBaseline b;
  b.value = -0.375;
  b.decay = 0.8;

  PolicyParams p2;
  RewardBaseline b2;
  policy_from_json(policy_to_json(p, b), p2, b2);
  for (int a = 0; a < kNumActions; ++a)
    for (int i = 0; i < kPolicyFeatureDim; ++i) CHECK(p2.w[a][i] == p.w[a][i]);
  CHECK(b2.value == b.value);
  CHECK(b2.decay == b.decay);

  PolicyParams scratch;
  RewardBaseline bs;
  CHECK_THROWS_AS(policy_from_json("nope", scratch, bs), Error);
  try {
    policy_from_json("{\"weights\": [[1,2],[3,4]], \"baseline\": 0, \"baseline_decay\": 0.9}",
                     scratch, bs);
    FAIL("expected bad-config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::BadConfig);
  }
}

TEST_CASE("reinforce learns a contextual bandit with state-dependent best arms") {
  // context A pays for Accept, context B pays for Retry; everything else pays 0
  FeatureVec ctx_a{};
  ctx_a[0] = 1.0;
  FeatureVec ctx_b{};
  ctx_b[1] = 1.0;
  auto payout = [&](const FeatureVec& ctx, Action a) {
    if (ctx[0] == 1.0) return a == Action::Accept ? 1.0 : 0.0;
    return a == Action::Retry ? 1.0 : 0.0;
  };

  PolicyParams p;
  RewardBaseline b;
  Rng rng(0x1badULL);
  double first_mean = -1;
  double last_mean = -1;
  for (int iter = 0; iter < 150; ++iter) {
    std::vector<EpisodeRecord> batch;
    double mean = 0;
    for (int e = 0; e < 16; ++e) {
      const FeatureVec& ctx = (e % 2 == 0) ? ctx_a : ctx_b;
      EpisodeRecord ep;
      StepRecord st;
      st.features = ctx;
      Decision d = decide(p, ctx, kNoMask, true, rng);
      st.action = d.action;
      ep.steps.push_back(st);
      ep.reward = payout(ctx, d.action);
      mean += ep.reward;
      batch.push_back(std::move(ep));
    }
    mean /= 16.0;
    if (iter == 0) first_mean = mean;
    last_mean = mean;
    reinforce_update(p, b, batch, 0.5);
  }
  CHECK(first_mean < 0.6);  // uniform start: ~0.25 expected
  CHECK(last_mean > 0.8);

  Rng greedy_rng(0);
  CHECK(decide(p, ctx_a, kNoMask, false, greedy_rng).action == Action::Accept);
  CHECK(decide(p, ctx_b, kNoMask, false, greedy_rng).action == Action::Retry);
}

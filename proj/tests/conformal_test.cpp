// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "certigraph/conformal.hpp"
#include "certigraph/rng.hpp"
#include "doctest.h"

using namespace certigraph;
using namespace certigraph::conformal;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Quantile oracle, written from the rank definition rather than reusing any
// library code: sort a copy, take the k-th smallest with k = ceil((n+1)(1-d)).
double quantile_oracle(std::vector<double> scores, double delta) {
  std::sort(scores.begin(), scores.end());
  std::size_t n = scores.size();
  std::size_t k = static_cast<std::size_t>(std::ceil((static_cast<double>(n) + 1.0) * (1.0 - delta)));
  if (k > n) return kInf;
  return scores[k - 1];
}

// Pool whose scores are fully controlled: NumericResidual against a single
// candidate at 0 makes score(truth) == truth for non-negative truths.
CalibrationPool residual_pool(const std::vector<double>& scores) {
  CalibrationPool pool;
  pool.type = NodeType::ChartNum;
  for (double s : scores) {
    PoolExample e;
    e.features.type = NodeType::ChartNum;
    e.features.candidates = {Candidate{Value{0.0}, 1.0}};
    e.truth = Value{s};
    pool.examples.push_back(std::move(e));
  }
  return pool;
}

NodeFeatures string_features(std::vector<std::pair<std::string, double>> cands) {
  NodeFeatures f;
  f.type = NodeType::OcrString;
  for (auto& [v, p] : cands) f.candidates.push_back(Candidate{Value{v}, p});
  return f;
}

// Reference prediction-set construction: score every candidate, keep the ones
// at or below the threshold, order ascending by score (stable), cap at k_max.
ConformalSet reference_set(const NodeFeatures& x, const Scorer& scorer, double threshold,
                           int k_max) {
  ConformalSet out;
  out.type = x.type;
  for (const Candidate& c : x.candidates) {
    double s = scorer.score(x, c.value);
    if (s <= threshold) out.members.push_back(ScoredValue{c.value, s});
  }
  std::stable_sort(out.members.begin(), out.members.end(),
                   [](const ScoredValue& a, const ScoredValue& b) { return a.score < b.score; });
  if (out.members.size() > static_cast<std::size_t>(k_max)) {
    out.members.resize(k_max);
    out.truncated = true;
  }
  if (x.type == NodeType::ChartNum && !x.candidates.empty() &&
      std::holds_alternative<double>(x.candidates[0].value)) {
    out.is_interval = true;
    out.center = std::get<double>(x.candidates[0].value);
    out.radius = threshold;
  }
  return out;
}

ConformalCalibrator manual_calibrator(NodeType t, double threshold) {
  ConformalCalibrator c;
  c.type = t;
  c.threshold = threshold;
  return c;
}

}  // namespace

TEST_CASE("levenshtein matches hand-computed distances") {
  CHECK(levenshtein("", "") == 0);
  CHECK(levenshtein("abc", "") == 3);
  CHECK(levenshtein("", "abcd") == 4);
  CHECK(levenshtein("abc", "abc") == 0);
  CHECK(levenshtein("kitten", "sitting") == 3);
  CHECK(levenshtein("flaw", "lawn") == 2);
  CHECK(levenshtein("ab", "ba") == 2);
  CHECK(levenshtein("intention", "execution") == 5);
  CHECK(levenshtein("A", "AB") == 1);
}

TEST_CASE("iou on overlapping, nested, and disjoint boxes") {
  Box a{0, 0, 2, 2};
  Box b{1, 1, 3, 3};
  CHECK(iou(a, b) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
  CHECK(iou(a, a) == doctest::Approx(1.0));
  CHECK(iou(Box{0, 0, 1, 1}, Box{5, 5, 6, 6}) == 0.0);
  // touching edges have zero-width intersection
  CHECK(iou(Box{0, 0, 1, 1}, Box{1, 0, 2, 1}) == 0.0);
  // nested: 1x1 inside 4x4
  CHECK(iou(Box{0, 0, 4, 4}, Box{1, 1, 2, 2}) == doctest::Approx(1.0 / 16.0));

  CHECK_THROWS_AS(iou(Box{0, 0, 0, 0}, a), Error);
  try {
    iou(a, Box{3, 3, 3, 8});
    FAIL("expected degenerate-box error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateBox);
  }
}

TEST_CASE("scorer basics across variants") {
  Scorer prob = default_scorer(NodeType::OcrString);
  CHECK(prob.variant == ScorerVariant::ProbComplement);
  NodeFeatures f = string_features({{"CAT", 0.6}, {"CAR", 0.2}, {"CAT", 0.2}});
  // duplicated value accumulates: p(CAT) = 0.8 of a 1.0 total
  CHECK(prob.score(f, Value{std::string("CAT")}) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(prob.score(f, Value{std::string("CAR")}) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(prob.score(f, Value{std::string("DOG")}) == doctest::Approx(1.0));
  NodeFeatures empty;
  CHECK(prob.score(empty, Value{std::string("X")}) == doctest::Approx(1.0));

  Scorer edit;
  edit.variant = ScorerVariant::EditDistance;
  CHECK(edit.score(f, Value{std::string("CAR")}) == doctest::Approx(1.0));  // vs MAP "CAT"
  CHECK(edit.score(empty, Value{std::string("XYZ")}) == doctest::Approx(4.0));
  CHECK_THROWS_AS(edit.score(f, Value{3.0}), Error);

  Scorer boxs = default_scorer(NodeType::DetBox);
  CHECK(boxs.variant == ScorerVariant::BoxIou);
  NodeFeatures bf;
  bf.type = NodeType::DetBox;
  bf.candidates = {Candidate{Value{Box{0, 0, 2, 2}}, 0.9}};
  CHECK(boxs.score(bf, Value{Box{1, 1, 3, 3}}) == doctest::Approx(6.0 / 7.0));
  CHECK(boxs.score(bf, Value{Box{0, 0, 2, 2}}) == doctest::Approx(0.0));
  NodeFeatures bempty;
  bempty.type = NodeType::DetBox;
  CHECK(boxs.score(bempty, Value{Box{0, 0, 1, 1}}) == doctest::Approx(1.0));
  try {
    boxs.score(bf, Value{std::string("not a box")});
    FAIL("expected wrong-variant error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::WrongVariant);
  }

  Scorer num = default_scorer(NodeType::ChartNum);
  CHECK(num.variant == ScorerVariant::NumericResidual);
  NodeFeatures nf;
  nf.type = NodeType::ChartNum;
  nf.candidates = {Candidate{Value{42.5}, 0.8}};
  CHECK(num.score(nf, Value{40.0}) == doctest::Approx(2.5));
  NodeFeatures nempty;
  nempty.type = NodeType::ChartNum;
  CHECK(std::isinf(num.score(nempty, Value{7.0})));
  CHECK_THROWS_AS(num.score(nf, Value{std::string("7")}), Error);
}

TEST_CASE("learned head reduces to softplus of the feature dot product") {
  Scorer head;
  head.variant = ScorerVariant::LearnedHead;
  head.psi = {0, 0, 0, 0};
  NodeFeatures f = string_features({{"ALPHA", 0.5}, {"BETA", 0.25}});
  CHECK(head.score(f, Value{std::string("ALPHA")}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // psi picking out only the normalized-probability feature
  head.psi = {1, 0, 0, 0};
  double pz = 0.5 / 0.75;
  CHECK(head.score(f, Value{std::string("ALPHA")}) ==
        doctest::Approx(softplus(pz)).epsilon(1e-12));

  // features themselves: pz, rank/16, map margin, magnitude (= length/16)
  std::array<double, 4> ft = head_features(f, Value{std::string("BETA")});
  CHECK(ft[0] == doctest::Approx(0.25 / 0.75));
  CHECK(ft[1] == doctest::Approx(1.0 / 16.0));
  CHECK(ft[2] == doctest::Approx(0.5 / 0.75 - 0.25 / 0.75));
  CHECK(ft[3] == doctest::Approx(4.0 / 16.0));
  // absent value: rank saturates at the list size
  std::array<double, 4> miss = head_features(f, Value{std::string("GAMMA")});
  CHECK(miss[0] == 0.0);
  CHECK(miss[1] == doctest::Approx(2.0 / 16.0));
}

TEST_CASE("calibrate agrees with the sort-based quantile oracle") {
  Rng rng(0x5eedc0deULL);
  int checked = 0;
  for (int it = 0; it < 300; ++it) {
    std::size_t n = 1 + rng.uniform_int(200);
    std::vector<double> scores;
    scores.reserve(n);
    for (std::size_t i = 0; i < n; ++i) scores.push_back(rng.uniform(0.0, 10.0));
    double delta = rng.uniform(0.01, 0.5);
    CalibrationPool pool = residual_pool(scores);
    ConformalCalibrator c = calibrate(pool, default_scorer(NodeType::ChartNum), delta);
    double want = quantile_oracle(scores, delta);
    // bitwise agreement, infinity included
    CHECK(c.threshold == want);
    CHECK(c.n == n);
    CHECK(c.k == static_cast<std::size_t>(std::ceil((static_cast<double>(n) + 1.0) * (1.0 - delta))));
    ++checked;
  }
  CHECK(checked == 300);
}

TEST_CASE("calibrate yields infinity when the rank exceeds the pool") {
  // n=3, delta=0.05: k = ceil(4 * 0.95) = 4 > 3
  CalibrationPool pool = residual_pool({0.5, 0.1, 0.9});
  ConformalCalibrator c = calibrate(pool, default_scorer(NodeType::ChartNum), 0.05);
  CHECK(c.k == 4);
  CHECK(std::isinf(c.threshold));

  // same pool at a loose delta picks a finite order statistic
  ConformalCalibrator loose = calibrate(pool, default_scorer(NodeType::ChartNum), 0.5);
  CHECK(loose.k == 2);
  CHECK(loose.threshold == 0.5);
}

TEST_CASE("calibrate rejects empty pools and bad deltas") {
  CalibrationPool empty;
  try {
    calibrate(empty, default_scorer(NodeType::OcrString), 0.1);
    FAIL("expected empty-pool error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::EmptyPool);
  }
  CalibrationPool pool = residual_pool({1.0});
  CHECK_THROWS_AS(calibrate(pool, default_scorer(NodeType::ChartNum), 0.0), Error);
  CHECK_THROWS_AS(calibrate(pool, default_scorer(NodeType::ChartNum), 1.0), Error);
}

TEST_CASE("conformal_set agrees with the filter-sort-truncate reference") {
  Rng rng(0xfacadeULL);
  Scorer scorer = default_scorer(NodeType::OcrString);
  const std::vector<std::string> vocab = {"CAT", "DOG", "CAR", "HAT", "BOX", "PIG", "OWL", "FOX"};
  for (int it = 0; it < 300; ++it) {
    NodeFeatures f;
    f.type = NodeType::OcrString;
    std::size_t m = rng.uniform_int(9);  // 0..8 candidates
    double budget = 1.0;
    for (std::size_t i = 0; i < m; ++i) {
      double p = budget * rng.uniform(0.0, 0.6);
      budget -= p;
      f.candidates.push_back(Candidate{Value{vocab[rng.uniform_int(vocab.size())]}, p});
    }
    double tau = rng.uniform(0.0, 1.2);
    int k_max = 1 + static_cast<int>(rng.uniform_int(6));
    ConformalCalibrator calib = manual_calibrator(NodeType::OcrString, tau);
    ConformalSet got = conformal_set(f, scorer, calib, k_max);
    ConformalSet want = reference_set(f, scorer, tau, k_max);
    REQUIRE(got.members.size() == want.members.size());
    for (std::size_t i = 0; i < got.members.size(); ++i) {
      CHECK(value_eq(got.members[i].value, want.members[i].value));
      CHECK(got.members[i].score == want.members[i].score);
    }
    CHECK(got.truncated == want.truncated);
    CHECK(got.is_interval == want.is_interval);
  }
}

TEST_CASE("threshold membership is inclusive at the boundary") {
  // p(CAT)=0.7, p(DOG)=0.3 after normalization: scores 0.3 and 0.7 exactly...
  NodeFeatures f = string_features({{"CAT", 0.7}, {"DOG", 0.3}});
  Scorer scorer = default_scorer(NodeType::OcrString);
  double s_dog = scorer.score(f, Value{std::string("DOG")});
  // ...so a calibrator sitting exactly on DOG's score must keep DOG in.
  ConformalSet at = conformal_set(f, scorer, manual_calibrator(NodeType::OcrString, s_dog), 5);
  CHECK(at.members.size() == 2);
  CHECK(at.contains(Value{std::string("DOG")}));
  ConformalSet below = conformal_set(
      f, scorer, manual_calibrator(NodeType::OcrString, std::nextafter(s_dog, 0.0)), 5);
  CHECK(below.members.size() == 1);
  CHECK_FALSE(below.contains(Value{std::string("DOG")}));
}

TEST_CASE("numeric sets report an interval around the front-runner") {
  NodeFeatures f;
  f.type = NodeType::ChartNum;
  f.candidates = {Candidate{Value{12.0}, 0.55}, Candidate{Value{14.5}, 0.25}};
  Scorer scorer = default_scorer(NodeType::ChartNum);
  ConformalCalibrator calib = manual_calibrator(NodeType::ChartNum, 0.75);
  ConformalSet set = conformal_set(f, scorer, calib, k_max_for(NodeType::ChartNum));
  CHECK(set.is_interval);
  CHECK(set.center == 12.0);
  CHECK(set.radius == 0.75);
  CHECK(set.set_size() == doctest::Approx(1.5));
  CHECK(set.contains(Value{12.75}));
  CHECK(set.contains(Value{11.25}));
  CHECK_FALSE(set.contains(Value{12.76}));
  CHECK_FALSE(set.contains(Value{11.24}));
  // the explicit member list only holds candidates that pass the threshold
  CHECK(set.members.size() == 1);
  CHECK(value_eq(set.members[0].value, Value{12.0}));

  // no candidates: no interval, empty set, and set_size collapses to 0
  NodeFeatures empty;
  empty.type = NodeType::ChartNum;
  ConformalSet none = conformal_set(empty, scorer, calib, 5);
  CHECK(none.empty());
  CHECK_FALSE(none.is_interval);
  CHECK(none.set_size() == 0.0);
  CHECK_FALSE(none.contains(Value{12.0}));
}

TEST_CASE("set dispersion is the member score spread") {
  NodeFeatures f = string_features({{"AA", 0.6}, {"BB", 0.3}, {"CC", 0.1}});
  Scorer scorer = default_scorer(NodeType::OcrString);
  ConformalSet set = conformal_set(f, scorer, manual_calibrator(NodeType::OcrString, 1.0), 5);
  REQUIRE(set.members.size() == 3);
  CHECK(set.dispersion() == doctest::Approx(0.9 - 0.4));
  ConformalSet one = conformal_set(f, scorer, manual_calibrator(NodeType::OcrString, 0.45), 5);
  REQUIRE(one.members.size() == 1);
  CHECK(one.dispersion() == 0.0);
}

TEST_CASE("k_max caps per node type and flags truncation") {
  CHECK(k_max_for(NodeType::OcrString) == 5);
  CHECK(k_max_for(NodeType::DetBox) == 3);
  CHECK(k_max_for(NodeType::ChartNum) == 5);
  CHECK(k_max_for(NodeType::LogicText) == 5);

  NodeFeatures f;
  f.type = NodeType::DetBox;
  for (int i = 0; i < 6; ++i)
    f.candidates.push_back(Candidate{Value{Box{0.0, 0.0, 10.0 + i, 10.0}}, 0.15});
  Scorer scorer = default_scorer(NodeType::DetBox);
  ConformalSet set = conformal_set(f, scorer, manual_calibrator(NodeType::DetBox, 2.0), 3);
  CHECK(set.members.size() == 3);
  CHECK(set.truncated);
  // kept members are the three best scores
  CHECK(set.members[0].score <= set.members[1].score);
  CHECK(set.members[1].score <= set.members[2].score);
}

TEST_CASE("margin gradient matches central finite differences") {
  Rng rng(0xd1ffULL);
  const std::vector<std::string> vocab = {"RED", "BLUE", "GREEN", "AMBER"};
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<PoolExample> batch;
    for (int i = 0; i < 12; ++i) {
      PoolExample e;
      e.features.type = NodeType::LogicText;
      double budget = 1.0;
      std::size_t m = 1 + rng.uniform_int(4);
      for (std::size_t j = 0; j < m; ++j) {
        double p = budget * rng.uniform(0.1, 0.5);
        budget -= p;
        e.features.candidates.push_back(Candidate{Value{vocab[rng.uniform_int(vocab.size())]}, p});
      }
      e.truth = rng.bernoulli(0.7)
                    ? e.features.candidates[rng.uniform_int(e.features.candidates.size())].value
                    : Value{std::string("OTHER")};
      batch.push_back(std::move(e));
    }
    Scorer head;
    head.variant = ScorerVariant::LearnedHead;
    head.type = NodeType::LogicText;
    for (int i = 0; i < 4; ++i) head.psi[i] = rng.uniform(-1.5, 1.5);

    double tau = rng.uniform(0.2, 0.9);
    const double eps = 0.05;
    // keep every example strictly off the hinge kink so the loss is smooth here
    bool near_kink = false;
    for (const PoolExample& e : batch)
      if (std::abs(head.score(e.features, e.truth) - tau - eps) < 1e-3) near_kink = true;
    if (near_kink) continue;

    std::array<double, 4> grad = margin_loss_grad(batch, head, tau, eps);
    const double h = 1e-6;
    for (int i = 0; i < 4; ++i) {
      Scorer up = head, down = head;
      up.psi[i] += h;
      down.psi[i] -= h;
      double fd = (margin_loss(batch, up, tau, eps) - margin_loss(batch, down, tau, eps)) / (2 * h);
      CHECK(std::abs(grad[i] - fd) < 1e-5);
    }
  }
}

TEST_CASE("margin training keeps the recorded losses non-increasing") {
  Rng rng(0xbeefULL);
  CalibrationPool pool;
  pool.type = NodeType::LogicText;
  const std::vector<std::string> vocab = {"UP", "DOWN", "LEFT", "RIGHT", "STAY"};
  for (int i = 0; i < 80; ++i) {
    PoolExample e;
    e.features.type = NodeType::LogicText;
    double budget = 1.0;
    std::size_t m = 1 + rng.uniform_int(4);
    for (std::size_t j = 0; j < m; ++j) {
      double p = budget * rng.uniform(0.1, 0.5);
      budget -= p;
      e.features.candidates.push_back(Candidate{Value{vocab[rng.uniform_int(vocab.size())]}, p});
    }
    e.truth = e.features.candidates[rng.uniform_int(e.features.candidates.size())].value;
    pool.examples.push_back(std::move(e));
  }

  Scorer init;
  init.variant = ScorerVariant::LearnedHead;
  init.type = NodeType::LogicText;
  init.psi = {2.0, 1.0, 1.5, 0.5};  // deliberately bad start: large positive scores
  MarginTrainResult res = train_scorer_margin(pool, init, 0.1, 0.02, 0.5, 40);
  CHECK(res.scorer.variant == ScorerVariant::LearnedHead);
  REQUIRE(!res.epoch_losses.empty());
  for (std::size_t i = 1; i < res.epoch_losses.size(); ++i)
    CHECK(res.epoch_losses[i] <= res.epoch_losses[i - 1] + 1e-9);

  // wrong scorer variant and empty pool both refuse to train
  try {
    train_scorer_margin(pool, default_scorer(NodeType::LogicText), 0.1, 0.02, 0.5, 5);
    FAIL("expected wrong-variant error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::WrongVariant);
  }
  CalibrationPool empty;
  CHECK_THROWS_AS(train_scorer_margin(empty, init, 0.1, 0.02, 0.5, 5), Error);
}

TEST_CASE("pools round-trip through jsonl") {
  CalibrationPool pool;
  pool.type = NodeType::OcrString;
  PoolExample a;
  a.features.type = NodeType::OcrString;
  a.features.candidates = {Candidate{Value{std::string("CAT")}, 0.625},
                           Candidate{Value{std::string("CAR")}, 0.25}};
  a.features.fidelity = 2;
  a.truth = Value{std::string("CAT")};
  pool.examples.push_back(a);
  PoolExample b;
  b.features.type = NodeType::OcrString;
  b.features.parent_empty = true;
  b.truth = Value{std::string("DOG")};
  b.provenance = "selfplay";
  pool.examples.push_back(b);

  CalibrationPool back = pool_from_jsonl(pool_to_jsonl(pool));
  REQUIRE(back.examples.size() == 2);
  CHECK(back.type == NodeType::OcrString);
  CHECK(back.examples[0].features.candidates.size() == 2);
  CHECK(value_eq(back.examples[0].features.candidates[0].value, Value{std::string("CAT")}));
  CHECK(back.examples[0].features.candidates[0].prob == 0.625);
  CHECK(back.examples[0].features.fidelity == 2);
  CHECK_FALSE(back.examples[0].features.parent_empty);
  CHECK(value_eq(back.examples[0].truth, Value{std::string("CAT")}));
  CHECK(back.examples[0].provenance == "base");
  CHECK(back.examples[1].features.parent_empty);
  CHECK(back.examples[1].provenance == "selfplay");

  // boxes and numerics survive too
  CalibrationPool boxes;
  boxes.type = NodeType::DetBox;
  PoolExample d;
  d.features.type = NodeType::DetBox;
  d.features.candidates = {Candidate{Value{Box{1, 2, 3.5, 4}}, 0.5}};
  d.truth = Value{Box{1, 2, 3.5, 4}};
  boxes.examples.push_back(d);
  CalibrationPool boxes_back = pool_from_jsonl(pool_to_jsonl(boxes));
  REQUIRE(boxes_back.examples.size() == 1);
  CHECK(value_eq(boxes_back.examples[0].truth, Value{Box{1, 2, 3.5, 4}}));

  CHECK_THROWS_AS(pool_from_jsonl("not json\n"), Error);
}

TEST_CASE("calibrators round-trip through json, infinity included") {
  CalibrationPool pool = residual_pool({0.25, 0.5, 0.125, 0.75, 1.0, 0.375, 0.875, 0.625});
  ConformalCalibrator c = calibrate(pool, default_scorer(NodeType::ChartNum), 0.2);
  ConformalCalibrator back = calibrator_from_json(calibrator_to_json(c));
  CHECK(back.type == c.type);
  CHECK(back.delta == c.delta);
  CHECK(back.threshold == c.threshold);
  CHECK(back.n == c.n);
  CHECK(back.k == c.k);

  ConformalCalibrator inf_c = calibrate(residual_pool({0.5}), default_scorer(NodeType::ChartNum), 0.1);
  REQUIRE(std::isinf(inf_c.threshold));
  ConformalCalibrator inf_back = calibrator_from_json(calibrator_to_json(inf_c));
  CHECK(std::isinf(inf_back.threshold));
  CHECK(inf_back.k == inf_c.k);

  CHECK_THROWS_AS(calibrator_from_json("{"), Error);
}

TEST_CASE("appending examples bumps the pool version and stales calibrators") {
  CalibrationPool pool = residual_pool({0.1, 0.2, 0.3, 0.4, 0.5});
  CHECK(pool.version == 0);
  ConformalCalibrator c = calibrate(pool, default_scorer(NodeType::ChartNum), 0.2);
  CHECK_FALSE(is_stale(c, pool));

  PoolExample extra;
  extra.features.type = NodeType::ChartNum;
  extra.features.candidates = {Candidate{Value{0.0}, 1.0}};
  extra.truth = Value{0.45};
  append_pool(pool, {extra});
  CHECK(pool.version == 1);
  CHECK(pool.examples.size() == 6);
  CHECK(is_stale(c, pool));

  ConformalCalibrator fresh = calibrate(pool, default_scorer(NodeType::ChartNum), 0.2);
  CHECK_FALSE(is_stale(fresh, pool));
  CHECK(fresh.pool_version == 1);
}

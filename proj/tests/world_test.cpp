// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "certigraph/common.hpp"
#include "certigraph/dsl.hpp"
#include "certigraph/rng.hpp"
#include "certigraph/world.hpp"
#include "doctest.h"

using namespace certigraph;
using namespace certigraph::world;

namespace {

const Box kFull{0, 0, kSceneExtent, kSceneExtent};

WorldInstance clean_world(uint64_t seed, Difficulty d = Difficulty::Medium) {
  return generate_instance(seed, d, NoiseConfig::zero());
}

}  // namespace

TEST_CASE("instance generation is deterministic in the seed") {
  WorldInstance a = generate_instance(42, Difficulty::Hard);
  WorldInstance b = generate_instance(42, Difficulty::Hard);
  CHECK(world_to_json(a) == world_to_json(b));
  WorldInstance c = generate_instance(43, Difficulty::Hard);
  CHECK(world_to_json(a) != world_to_json(c));
}

TEST_CASE("difficulty scales content and distractors") {
  std::map<Difficulty, double> mean_fields;
  for (Difficulty d : {Difficulty::Easy, Difficulty::Medium, Difficulty::Hard}) {
    double total = 0;
    for (uint64_t s = 0; s < 40; ++s) total += generate_instance(s, d).fields.size();
    mean_fields[d] = total / 40;
  }
  CHECK(mean_fields[Difficulty::Easy] < mean_fields[Difficulty::Medium]);
  CHECK(mean_fields[Difficulty::Medium] < mean_fields[Difficulty::Hard]);
  CHECK(generate_instance(7, Difficulty::Easy).noise.distractor_count <
        generate_instance(7, Difficulty::Hard).noise.distractor_count);
}

TEST_CASE("query synthesis is well formed and gold is recomputable") {
  std::set<QueryKind> seen;
  for (uint64_t s = 0; s < 200; ++s) {
    WorldInstance w = generate_instance(s, Difficulty::Medium);
    const Query& q = w.query;
    seen.insert(q.kind);
    switch (q.kind) {
      case QueryKind::Lookup:
        REQUIRE(q.regions.size() == 1);
        break;
      case QueryKind::Sum: {
        REQUIRE(q.keys.size() == q.regions.size());
        double total = 0;
        for (const std::string& k : q.keys)
          for (const Series& ser : w.series)
            if (ser.key == k) total += ser.value;
        CHECK(w.gold_answer == canonical_number(total));
        break;
      }
      case QueryKind::Compare: {
        REQUIRE(q.keys.size() == 2);
        double a = 0, b = 0;
        for (const Series& ser : w.series) {
          if (ser.key == q.keys[0]) a = ser.value;
          if (ser.key == q.keys[1]) b = ser.value;
        }
        CHECK(w.gold_answer == (a > b ? q.keys[0] : q.keys[1]));
        break;
      }
      case QueryKind::Count: {
        REQUIRE(q.keys.size() == 1);
        REQUIRE(q.probe_count == static_cast<int>(q.regions.size()));
        int n = 0;
        for (const SceneObject& o : w.objects)
          if (!o.distractor && o.label == q.keys[0]) ++n;
        CHECK(w.gold_answer == canonical_number(static_cast<double>(n)));
        break;
      }
    }
  }
  CHECK(seen.size() == 4);  // every kind appears in 200 draws
}

TEST_CASE("zero-noise ocr probe returns the exact truth as a singleton") {
  for (uint64_t s = 0; s < 20; ++s) {
    WorldInstance w = clean_world(s);
    for (size_t f = 0; f < w.fields.size(); ++f) {
      auto cands = tool_oracle(NodeType::OcrString, w, w.fields[f].region, "read", 1,
                               hash_combine(s, f));
      REQUIRE(cands.size() == 1);
      CHECK(std::get<std::string>(cands[0].value) == w.fields[f].truth);
      CHECK(cands[0].prob == doctest::Approx(1.0));
    }
  }
}

TEST_CASE("zero-noise chart probe returns the exact series value") {
  WorldInstance w = clean_world(11);
  REQUIRE(!w.series.empty());
  auto cands = tool_oracle(NodeType::ChartNum, w, w.series[0].region, "value", 1, 5);
  REQUIRE(cands.size() == 1);
  CHECK(std::get<double>(cands[0].value) == w.series[0].value);
}

TEST_CASE("zero-noise det probe hits the indexed match in scan order") {
  WorldInstance w = clean_world(3);
  REQUIRE(!w.objects.empty());
  const std::string& label = w.objects[0].label;
  std::vector<const SceneObject*> matches;
  for (const SceneObject& o : w.objects)
    if (o.label == label) matches.push_back(&o);
  std::sort(matches.begin(), matches.end(), [](const SceneObject* a, const SceneObject* b) {
    if (a->box.x0 != b->box.x0) return a->box.x0 < b->box.x0;
    return a->box.y0 < b->box.y0;
  });
  for (size_t k = 0; k < matches.size(); ++k) {
    std::string prompt = "label=" + label + ";index=" + std::to_string(k);
    auto cands = tool_oracle(NodeType::DetBox, w, kFull, prompt, 1, 99 + k);
    REQUIRE(cands.size() == 1);
    const Box& got = std::get<Box>(cands[0].value);
    CHECK(got.x0 == matches[k]->box.x0);
    CHECK(got.y1 == matches[k]->box.y1);
  }
  // past the last match, with no distractors, the probe comes back empty
  std::string past = "label=" + label + ";index=" + std::to_string(matches.size());
  CHECK(tool_oracle(NodeType::DetBox, w, kFull, past, 1, 7).empty());
}

TEST_CASE("tool oracle rejects bad regions and fidelity") {
  WorldInstance w = clean_world(1);
  CHECK_THROWS_AS(tool_oracle(NodeType::OcrString, w, Box{10, 10, 10, 40}, "read", 1, 1), Error);
  CHECK_THROWS_AS(tool_oracle(NodeType::OcrString, w, Box{-5, 0, 50, 40}, "read", 1, 1), Error);
  CHECK_THROWS_AS(tool_oracle(NodeType::OcrString, w, kFull, "read", 0, 1), Error);
}

TEST_CASE("resolver picks the largest overlap, ties to the lowest index") {
  WorldInstance w;
  w.fields.push_back(TextField{Box{0, 0, 100, 100}, "FIRST", false});
  w.fields.push_back(TextField{Box{50, 0, 150, 100}, "SECOND", false});
  CHECK(resolve_field(w, Box{0, 0, 60, 100}) == 0);     // 60 vs 10 overlap
  CHECK(resolve_field(w, Box{90, 0, 150, 100}) == 1);   // 10 vs 60
  CHECK(resolve_field(w, Box{25, 0, 125, 100}) == 0);   // 75 vs 75: tie -> 0
  CHECK(resolve_field(w, Box{500, 500, 600, 600}) == -1);
}

TEST_CASE("noise rates fall with fidelity") {
  // corrupted readings still enter the candidate list (with less weight than
  // the deduplicated truth); a high-fidelity re-read must admit strictly
  // fewer of them in aggregate
  int corrupted_f1 = 0, corrupted_f2 = 0, probes = 0;
  auto count_corrupted = [](const std::vector<Candidate>& c, const std::string& truth) {
    int n = 0;
    for (const Candidate& cand : c)
      if (std::get<std::string>(cand.value) != truth) ++n;
    return n;
  };
  for (uint64_t s = 0; s < 60; ++s) {
    WorldInstance w = generate_instance(s, Difficulty::Medium);
    for (size_t f = 0; f < w.fields.size(); ++f) {
      uint64_t ps = hash_combine(s, f);
      auto c1 = tool_oracle(NodeType::OcrString, w, w.fields[f].region, "read", 1, ps);
      auto c2 = tool_oracle(NodeType::OcrString, w, w.fields[f].region, "read", 2, ps);
      corrupted_f1 += count_corrupted(c1, w.fields[f].truth);
      corrupted_f2 += count_corrupted(c2, w.fields[f].truth);
      ++probes;
    }
  }
  CHECK(probes > 300);
  CHECK(corrupted_f2 < corrupted_f1);
  CHECK(corrupted_f1 > probes / 4);  // the base rate actually bites
}

TEST_CASE("ground truth resolves tools, merges, and the answer") {
  WorldInstance w = clean_world(17);
  dsl::ReasoningGraph g =
      dsl::build_graph(dsl::parse_program(dsl::plan_dsl(w.query)));
  // answer fuse carries the instance gold
  Value ans = ground_truth(w, g, g.answer_node);
  REQUIRE(std::holds_alternative<std::string>(ans));
  CHECK(std::get<std::string>(ans) == w.gold_answer);

  // a merge fuse inherits its first parent's truth
  std::string tool_id;
  for (const auto& [id, spec] : g.nodes)
    if (spec.kind == dsl::NodeKind::Tool) tool_id = id;
  REQUIRE(!tool_id.empty());
  Value tool_truth = ground_truth(w, g, tool_id);
  dsl::NodeSpec child;
  child.kind = dsl::NodeKind::Tool;
  child.tool_id = g.at(tool_id).tool_id;
  child.region = g.at(tool_id).region;
  child.prompt = g.at(tool_id).prompt;
  dsl::ReasoningGraph h = dsl::mutate(g, dsl::ExpandMutation{tool_id, {child}});
  std::string merge_id;
  for (const auto& [id, spec] : h.nodes)
    if (spec.prompt == "merge") merge_id = id;
  REQUIRE(!merge_id.empty());
  CHECK(value_eq(ground_truth(w, h, merge_id), tool_truth));
}

TEST_CASE("ground truth throws Unresolvable off-content") {
  WorldInstance w = clean_world(5);
  std::string prog =
      "CALL_TOOL(2, img0[0,0,1000,1000], \"label=CAT;index=40\") -> d\n"
      "FUSE([d], \"count\") -> a\n"
      "RETURN(a)\n";
  dsl::ReasoningGraph g = dsl::build_graph(dsl::parse_program(prog));
  try {
    ground_truth(w, g, "d");
    FAIL("expected Unresolvable");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Unresolvable);
  }
}

TEST_CASE("perturbations never touch the gold answer") {
  for (uint64_t s = 0; s < 12; ++s) {
    WorldInstance w = generate_instance(s, Difficulty::Medium);
    for (PerturbationKind k :
         {PerturbationKind::CharConfusionShift, PerturbationKind::Clutter,
          PerturbationKind::AffineOffset, PerturbationKind::PanelShuffle}) {
      WorldInstance p = perturb(w, k, 0.7, hash_combine(s, static_cast<uint64_t>(k)));
      CHECK(p.gold_answer == w.gold_answer);
      CHECK(p.query.text == w.query.text);
      REQUIRE(p.perturbations.size() == w.perturbations.size() + 1);
      CHECK(p.perturbations.back().kind == k);
    }
  }
}

TEST_CASE("char-confusion shift degrades ocr accuracy") {
  int base_correct = 0, shifted_correct = 0, probes = 0;
  for (uint64_t s = 0; s < 40; ++s) {
    WorldInstance w = generate_instance(s, Difficulty::Medium);
    WorldInstance p = perturb(w, PerturbationKind::CharConfusionShift, 0.5, s + 1000);
    CHECK(p.noise.char_confusion_prob > w.noise.char_confusion_prob);
    for (size_t f = 0; f < w.fields.size(); ++f) {
      uint64_t ps = hash_combine(s, f);
      auto cb = tool_oracle(NodeType::OcrString, w, w.fields[f].region, "read", 1, ps);
      auto cs = tool_oracle(NodeType::OcrString, p, p.fields[f].region, "read", 1, ps);
      if (!cb.empty() && std::get<std::string>(cb[0].value) == w.fields[f].truth) ++base_correct;
      if (!cs.empty() && std::get<std::string>(cs[0].value) == w.fields[f].truth)
        ++shifted_correct;
      ++probes;
    }
  }
  CHECK(shifted_correct < base_correct);
  CHECK(base_correct > probes / 2);
}

TEST_CASE("panel shuffle with negative magnitude inverts the permutation") {
  WorldInstance w = generate_instance(23, Difficulty::Hard);
  WorldInstance fwd = perturb(w, PerturbationKind::PanelShuffle, 1.0, 777);
  WorldInstance back = perturb(fwd, PerturbationKind::PanelShuffle, -1.0, 777);
  bool moved = false;
  for (size_t i = 0; i < w.fields.size(); ++i) {
    if (fwd.fields[i].region.x0 != w.fields[i].region.x0) moved = true;
    CHECK(back.fields[i].region.x0 == w.fields[i].region.x0);
    CHECK(back.fields[i].region.y0 == w.fields[i].region.y0);
  }
  CHECK(moved);  // the shuffle was not the identity on this seed
}

TEST_CASE("clutter adds distractor fields that can shadow content") {
  WorldInstance w = generate_instance(9, Difficulty::Medium);
  WorldInstance p = perturb(w, PerturbationKind::Clutter, 1.0, 4242);
  CHECK(p.fields.size() > w.fields.size());
  for (size_t i = w.fields.size(); i < p.fields.size(); ++i)
    CHECK(p.fields[i].distractor);
  CHECK(p.noise.distractor_count > w.noise.distractor_count);
}

TEST_CASE("direct candidates are a usable weak guesser") {
  WorldInstance w = clean_world(31);
  auto cands = direct_candidates(w, w.query.text, 1, 8);
  CHECK(!cands.empty());
  double total = 0;
  for (const Candidate& c : cands) total += c.prob;
  CHECK(total <= 1.0 + 1e-9);
}

TEST_CASE("world JSON round trip preserves the instance") {
  WorldInstance w = generate_instance(57, Difficulty::Hard);
  WorldInstance back = world_from_json(world_to_json(w));
  CHECK(world_to_json(back) == world_to_json(w));
  CHECK(back.gold_answer == w.gold_answer);
  CHECK(back.query.kind == w.query.kind);
  CHECK(back.fields.size() == w.fields.size());
}

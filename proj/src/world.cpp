// SPDX-License-Identifier: Apache-2.0
#include "certigraph/world.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "certigraph/rng.hpp"
#include "json.hpp"

namespace certigraph::world {

using json = nlohmann::ordered_json;

const char* difficulty_name(Difficulty d) {
  switch (d) {
    case Difficulty::Easy: return "easy";
    case Difficulty::Medium: return "medium";
    case Difficulty::Hard: return "hard";
  }
  return "?";
}

Difficulty difficulty_from_name(const std::string& s) {
  if (s == "easy") return Difficulty::Easy;
  if (s == "medium") return Difficulty::Medium;
  if (s == "hard") return Difficulty::Hard;
  throw Error(ErrorKind::UnknownKind, "difficulty '" + s + "'");
}

const char* perturbation_name(PerturbationKind k) {
  switch (k) {
    case PerturbationKind::CharConfusionShift: return "char-confusion-shift";
    case PerturbationKind::Clutter: return "clutter";
    case PerturbationKind::AffineOffset: return "affine-offset";
    case PerturbationKind::PanelShuffle: return "panel-shuffle";
  }
  return "?";
}

PerturbationKind perturbation_from_name(const std::string& s) {
  if (s == "char-confusion-shift") return PerturbationKind::CharConfusionShift;
  if (s == "clutter") return PerturbationKind::Clutter;
  if (s == "affine-offset") return PerturbationKind::AffineOffset;
  if (s == "panel-shuffle") return PerturbationKind::PanelShuffle;
  throw Error(ErrorKind::UnknownKind, "perturbation '" + s + "'");
}

namespace {

constexpr int kGrid = 6;  // 6x6 placement cells keep scene content disjoint
const std::vector<std::string> kLabelVocab = {"CAT", "DOG", "CAR", "HAT", "BOX"};

double overlap_area(const Box& a, const Box& b) {
  double w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  double h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  return (w > 0 && h > 0) ? w * h : 0.0;
}

bool intersects(const Box& a, const Box& b) { return overlap_area(a, b) > 0; }

std::string random_token(Rng& rng, int min_len, int max_len) {
  int len = min_len + static_cast<int>(rng.uniform_int(max_len - min_len + 1));
  std::string s;
  s.reserve(len);
  for (int i = 0; i < len; ++i) s += kAlphabet[rng.uniform_int(36)];
  return s;
}

std::string corrupt_string(const std::string& truth, double p, Rng& rng) {
  std::string out = truth;
  for (char& c : out) {
    if (rng.bernoulli(p)) {
      char r = kAlphabet[rng.uniform_int(36)];
      while (r == c) r = kAlphabet[rng.uniform_int(36)];
      c = r;
    }
  }
  return out;
}

Box box_in_cell(Rng& rng, int cell, double min_w, double max_w, double min_h, double max_h) {
  double cs = kSceneExtent / kGrid;
  double cx = (cell % kGrid) * cs, cy = (cell / kGrid) * cs;
  double w = rng.uniform(min_w, std::min(max_w, cs - 8));
  double h = rng.uniform(min_h, std::min(max_h, cs - 8));
  double x0 = cx + rng.uniform(2, cs - w - 4);
  double y0 = cy + rng.uniform(2, cs - h - 4);
  return Box{x0, y0, x0 + w, y0 + h};
}

Box random_box(Rng& rng, double min_sz, double max_sz) {
  double w = rng.uniform(min_sz, max_sz), h = rng.uniform(min_sz, max_sz);
  double x0 = rng.uniform(0, kSceneExtent - w), y0 = rng.uniform(0, kSceneExtent - h);
  return Box{x0, y0, x0 + w, y0 + h};
}

struct WeightedValue {
  Value value;
  double weight;
};

// Dedupe exact values (merging weight), jitter log-weights, softmax, sort by
// descending probability, cap. `scale` < 1 leaves pseudo-probability mass
// unclaimed, which downstream count fusion reads as absence mass.
std::vector<Candidate> assemble(std::vector<WeightedValue> entries, double jitter, double scale,
                                Rng& rng) {
  std::vector<WeightedValue> uniq;
  for (auto& e : entries) {
    bool merged = false;
    for (auto& u : uniq)
      if (value_eq(u.value, e.value)) {
        u.weight += e.weight;
        merged = true;
        break;
      }
    if (!merged) uniq.push_back(std::move(e));
  }
  std::vector<double> logits(uniq.size());
  double mx = -1e300;
  for (size_t i = 0; i < uniq.size(); ++i) {
    logits[i] = std::log(uniq[i].weight) + jitter * rng.normal();
    mx = std::max(mx, logits[i]);
  }
  double z = 0;
  for (double l : logits) z += std::exp(l - mx);
  std::vector<Candidate> out(uniq.size());
  for (size_t i = 0; i < uniq.size(); ++i)
    out[i] = Candidate{uniq[i].value, std::exp(logits[i] - mx) / z * scale};
  std::sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
    if (a.prob != b.prob) return a.prob > b.prob;
    return value_less(a.value, b.value);
  });
  if (out.size() > static_cast<size_t>(kCandidateCap)) out.resize(kCandidateCap);
  return out;
}

struct DetPrompt {
  std::string label;
  int index = 0;
};

DetPrompt parse_det_prompt(const std::string& prompt) {
  DetPrompt p;
  auto lpos = prompt.find("label=");
  if (lpos != std::string::npos) {
    auto end = prompt.find(';', lpos);
    p.label = prompt.substr(lpos + 6, end == std::string::npos ? end : end - lpos - 6);
  }
  auto ipos = prompt.find("index=");
  if (ipos != std::string::npos) p.index = std::atoi(prompt.c_str() + ipos + 6);
  return p;
}

// Matching objects in deterministic scan order.
std::vector<int> det_matches(const WorldInstance& w, const Box& region, const std::string& label) {
  std::vector<int> idx;
  for (int i = 0; i < static_cast<int>(w.objects.size()); ++i) {
    const SceneObject& o = w.objects[i];
    if (!label.empty() && o.label != label) continue;
    if (o.distractor) continue;
    if (!intersects(o.box, region)) continue;
    idx.push_back(i);
  }
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    const Box &x = w.objects[a].box, &y = w.objects[b].box;
    if (x.x0 != y.x0) return x.x0 < y.x0;
    if (x.y0 != y.y0) return x.y0 < y.y0;
    return a < b;
  });
  return idx;
}

void check_region(const Box& region) {
  if (!region.valid()) throw Error(ErrorKind::DegenerateBox, "tool region");
  if (region.x0 < 0 || region.y0 < 0 || region.x1 > kSceneExtent || region.y1 > kSceneExtent)
    throw Error(ErrorKind::RegionOutOfBounds, "tool region outside scene");
}

int difficulty_distractors(Difficulty d) {
  switch (d) {
    case Difficulty::Easy: return 1;
    case Difficulty::Medium: return 2;
    case Difficulty::Hard: return 4;
  }
  return 0;
}

}  // namespace

int resolve_field(const WorldInstance& w, const Box& region) {
  int best = -1;
  double best_area = 0;
  for (int i = 0; i < static_cast<int>(w.fields.size()); ++i) {
    double a = overlap_area(region, w.fields[i].region);
    if (a > best_area) {
      best_area = a;
      best = i;
    }
  }
  return best;
}

int resolve_series(const WorldInstance& w, const Box& region) {
  int best = -1;
  double best_area = 0;
  for (int i = 0; i < static_cast<int>(w.series.size()); ++i) {
    double a = overlap_area(region, w.series[i].region);
    if (a > best_area) {
      best_area = a;
      best = i;
    }
  }
  return best;
}

WorldInstance generate_instance(uint64_t seed, Difficulty d) {
  NoiseConfig base;
  base.distractor_count = difficulty_distractors(d);
  return generate_instance(seed, d, base);
}

WorldInstance generate_instance(uint64_t seed, Difficulty d, const NoiseConfig& base) {
  Rng rng = Rng(seed).derive("gen").derive(static_cast<uint64_t>(d));
  WorldInstance w;
  w.seed = seed;
  w.difficulty = d;
  w.noise = base;

  int nf = 0, ns = 0, nobj = 0;
  switch (d) {
    case Difficulty::Easy:
      nf = 3 + static_cast<int>(rng.uniform_int(3));    // 3-5
      ns = 2 + static_cast<int>(rng.uniform_int(3));    // 2-4
      nobj = 2 + static_cast<int>(rng.uniform_int(3));  // 2-4
      break;
    case Difficulty::Medium:
      nf = 6 + static_cast<int>(rng.uniform_int(5));    // 6-10
      ns = 3 + static_cast<int>(rng.uniform_int(4));    // 3-6
      nobj = 3 + static_cast<int>(rng.uniform_int(4));  // 3-6
      break;
    case Difficulty::Hard:
      nf = 11 + static_cast<int>(rng.uniform_int(10));  // 11-20
      ns = 5 + static_cast<int>(rng.uniform_int(4));    // 5-8
      nobj = 4 + static_cast<int>(rng.uniform_int(5));  // 4-8
      break;
  }

  std::vector<int> cells(kGrid * kGrid);
  std::iota(cells.begin(), cells.end(), 0);
  for (size_t i = cells.size(); i > 1; --i)
    std::swap(cells[i - 1], cells[rng.uniform_int(i)]);
  size_t cell_at = 0;
  auto next_cell = [&]() { return cells[cell_at++ % cells.size()]; };

  for (int i = 0; i < nf; ++i)
    w.fields.push_back(TextField{box_in_cell(rng, next_cell(), 80, 150, 24, 40),
                                 random_token(rng, 3, 10), false});
  for (int i = 0; i < ns; ++i)
    w.series.push_back(Series{std::string(1, static_cast<char>('A' + i)),
                              rng.uniform(10, 100),
                              box_in_cell(rng, next_cell(), 90, 150, 50, 90)});
  std::vector<int> label_use(kLabelVocab.size(), 0);
  for (int i = 0; i < nobj; ++i) {
    int li = static_cast<int>(rng.uniform_int(kLabelVocab.size()));
    for (int tries = 0; label_use[li] >= 4 && tries < 8; ++tries)
      li = static_cast<int>(rng.uniform_int(kLabelVocab.size()));
    if (label_use[li] >= 4) continue;
    ++label_use[li];
    w.objects.push_back(SceneObject{random_box(rng, 30, 80), kLabelVocab[li], false});
  }
  for (int i = 0; i < base.distractor_count; ++i) {
    if (rng.bernoulli(0.5))
      w.fields.push_back(
          TextField{box_in_cell(rng, next_cell(), 80, 150, 24, 40), random_token(rng, 3, 10), true});
    else
      w.objects.push_back(SceneObject{random_box(rng, 30, 80), "BLOB", true});
  }

  // Query synthesis. Regions are captured now, before any perturbation.
  Box full{0, 0, kSceneExtent, kSceneExtent};
  int roll = static_cast<int>(rng.uniform_int(5));
  Query& q = w.query;
  if (roll == 0) {
    q.kind = QueryKind::Lookup;
    q.lookup_type = NodeType::OcrString;
    int fi = static_cast<int>(rng.uniform_int(nf));
    q.regions = {w.fields[fi].region};
    q.text = "read field " + std::to_string(fi);
    w.gold_answer = w.fields[fi].truth;
    w.gold_is_numeric = false;
  } else if (roll == 1) {
    q.kind = QueryKind::Lookup;
    q.lookup_type = NodeType::ChartNum;
    int si = static_cast<int>(rng.uniform_int(ns));
    q.regions = {w.series[si].region};
    q.keys = {w.series[si].key};
    q.text = "value of series " + w.series[si].key;
    w.gold_numeric = w.series[si].value;
    w.gold_is_numeric = true;
    w.gold_answer = canonical_number(w.gold_numeric);
  } else if (roll == 2) {
    q.kind = QueryKind::Sum;
    int k = (ns >= 3 && rng.bernoulli(0.5)) ? 3 : 2;
    std::vector<int> si(ns);
    std::iota(si.begin(), si.end(), 0);
    for (size_t i = si.size(); i > 1; --i) std::swap(si[i - 1], si[rng.uniform_int(i)]);
    si.resize(k);
    std::sort(si.begin(), si.end());
    double total = 0;
    q.text = "sum of";
    for (int s : si) {
      q.keys.push_back(w.series[s].key);
      q.regions.push_back(w.series[s].region);
      total += w.series[s].value;  // left-to-right in key order
      q.text += " " + w.series[s].key;
    }
    w.gold_numeric = total;
    w.gold_is_numeric = true;
    w.gold_answer = canonical_number(total);
  } else if (roll == 3) {
    q.kind = QueryKind::Compare;
    int a = static_cast<int>(rng.uniform_int(ns));
    int b = static_cast<int>(rng.uniform_int(ns - 1));
    if (b >= a) ++b;
    if (a > b) std::swap(a, b);
    q.keys = {w.series[a].key, w.series[b].key};
    q.regions = {w.series[a].region, w.series[b].region};
    q.text = "larger of " + q.keys[0] + " " + q.keys[1];
    w.gold_answer = w.series[a].value > w.series[b].value ? q.keys[0] : q.keys[1];
    w.gold_is_numeric = false;
  } else {
    q.kind = QueryKind::Count;
    const std::string& label = kLabelVocab[rng.uniform_int(kLabelVocab.size())];
    q.keys = {label};
    q.probe_count = 4;
    q.regions.assign(4, full);
    q.text = "count " + label;
    int count = 0;
    for (const SceneObject& o : w.objects)
      if (!o.distractor && o.label == label) ++count;
    w.gold_numeric = count;
    w.gold_is_numeric = true;
    w.gold_answer = canonical_number(static_cast<double>(count));
  }
  return w;
}

std::vector<Candidate> tool_oracle(NodeType type, const WorldInstance& w, const Box& region,
                                   const std::string& prompt, int fidelity, uint64_t seed) {
  check_region(region);
  if (fidelity < 1) throw Error(ErrorKind::BadConfig, "fidelity < 1");
  Rng rng(seed);
  const NoiseConfig& n = w.noise;
  double gain = std::pow(n.fidelity_gain, fidelity - 1);
  double jitter = n.score_jitter * gain;

  if (type == NodeType::OcrString) {
    int fi = resolve_field(w, region);
    if (fi < 0) return {};
    double eff_p = clamp01(n.char_confusion_prob * gain);
    std::vector<WeightedValue> entries;
    for (int j = 0; j < kCandidateCap; ++j)
      entries.push_back({Value{corrupt_string(w.fields[fi].truth, eff_p, rng)}, 1.0});
    for (int i = 0; i < static_cast<int>(w.fields.size()); ++i) {
      if (i == fi || !intersects(w.fields[i].region, region)) continue;
      entries.push_back({Value{corrupt_string(w.fields[i].truth, eff_p, rng)}, 0.5});
    }
    return assemble(std::move(entries), jitter, 1.0, rng);
  }

  if (type == NodeType::ChartNum) {
    int si = resolve_series(w, region);
    if (si < 0) return {};
    double v = w.series[si].value;
    double eff_sigma = n.numeric_noise_sigma * std::abs(v) * gain;
    std::vector<double> draws(kCandidateCap);
    for (double& z : draws) z = rng.normal(v, eff_sigma);
    std::vector<WeightedValue> entries;
    for (double z : draws)
      entries.push_back({Value{z}, std::exp(-std::abs(z - draws[0]) / (eff_sigma + 1e-9))});
    return assemble(std::move(entries), jitter, 1.0, rng);
  }

  // det-box
  DetPrompt dp = parse_det_prompt(prompt);
  std::vector<int> matches = det_matches(w, region, dp.label);
  double eff_sigma = n.box_jitter_sigma * gain;
  Box target;
  double scale;
  if (dp.index >= 0 && dp.index < static_cast<int>(matches.size())) {
    target = w.objects[matches[dp.index]].box;
    scale = 1.0 / (1.0 + 0.04 * eff_sigma);  // detection confidence; 1 at zero noise
  } else {
    double p_fp = clamp01(0.05 * n.distractor_count) * gain;
    if (!rng.bernoulli(p_fp)) return {};
    std::vector<int> dis;
    for (int i = 0; i < static_cast<int>(w.objects.size()); ++i)
      if (w.objects[i].distractor) dis.push_back(i);
    target = dis.empty() ? random_box(rng, 30, 80) : w.objects[dis[rng.uniform_int(dis.size())]].box;
    scale = 0.45;
  }
  std::vector<Box> draws(kCandidateCap);
  for (Box& b : draws) {
    b = Box{target.x0 + rng.normal() * eff_sigma, target.y0 + rng.normal() * eff_sigma,
            target.x1 + rng.normal() * eff_sigma, target.y1 + rng.normal() * eff_sigma};
    if (b.x1 <= b.x0) b.x1 = b.x0 + 0.5;
    if (b.y1 <= b.y0) b.y1 = b.y0 + 0.5;
  }
  auto box_dist = [](const Box& a, const Box& b) {
    return (std::abs(a.x0 - b.x0) + std::abs(a.y0 - b.y0) + std::abs(a.x1 - b.x1) +
            std::abs(a.y1 - b.y1)) /
           4.0;
  };
  std::vector<WeightedValue> entries;
  for (const Box& b : draws)
    entries.push_back({Value{b}, std::exp(-box_dist(b, draws[0]) / (2 * eff_sigma + 1e-9))});
  return assemble(std::move(entries), jitter, scale, rng);
}

std::vector<Candidate> direct_candidates(const WorldInstance& w, const std::string& query_text,
                                         int fidelity, uint64_t seed) {
  (void)query_text;
  Rng rng(seed);
  double gain = std::pow(w.noise.fidelity_gain, fidelity - 1);
  constexpr double kDirectAccuracy = 0.25;  // weak parametric guess
  std::vector<std::string> wrongs;
  for (int i = 0; i < 3; ++i) {
    int roll = static_cast<int>(rng.uniform_int(3));
    if (roll == 0 && !w.fields.empty())
      wrongs.push_back(w.fields[rng.uniform_int(w.fields.size())].truth);
    else if (roll == 1)
      wrongs.push_back(canonical_number(std::floor(rng.uniform(0, 6))));
    else
      wrongs.push_back(canonical_number(std::floor(rng.uniform(10, 300)) / 2.0));
  }
  bool lucky = rng.bernoulli(kDirectAccuracy);
  std::vector<WeightedValue> entries;
  if (lucky) entries.push_back({Value{w.gold_answer}, 1.0});
  entries.push_back({Value{wrongs[0]}, lucky ? 0.4 : 1.0});
  if (!lucky) entries.push_back({Value{w.gold_answer}, 0.4});
  entries.push_back({Value{wrongs[1]}, 0.3});
  entries.push_back({Value{wrongs[2]}, 0.2});
  return assemble(std::move(entries), std::max(w.noise.score_jitter * gain, 1e-4), 1.0, rng);
}

Value ground_truth(const WorldInstance& w, const dsl::ReasoningGraph& g,
                   const std::string& node_id) {
  const dsl::NodeSpec& spec = g.at(node_id);
  if (spec.kind == dsl::NodeKind::Tool) {
    const Box& region = spec.region.box;
    check_region(region);
    switch (spec.type) {
      case NodeType::OcrString: {
        int fi = resolve_field(w, region);
        if (fi < 0) throw Error(ErrorKind::Unresolvable, "no field under " + node_id);
        return Value{w.fields[fi].truth};
      }
      case NodeType::ChartNum: {
        int si = resolve_series(w, region);
        if (si < 0) throw Error(ErrorKind::Unresolvable, "no series under " + node_id);
        return Value{w.series[si].value};
      }
      default: {
        DetPrompt dp = parse_det_prompt(spec.prompt);
        std::vector<int> matches = det_matches(w, region, dp.label);
        if (dp.index < 0 || dp.index >= static_cast<int>(matches.size()))
          throw Error(ErrorKind::Unresolvable, "det probe past last match at " + node_id);
        return Value{w.objects[matches[dp.index]].box};
      }
    }
  }
  // Fuse: merge fuses inherit the refined node's truth, every other fuse op
  // targets the instance gold.
  if (spec.prompt.rfind("merge", 0) == 0) {
    if (spec.parents.empty()) throw Error(ErrorKind::InvalidGraph, "merge fuse without parents");
    return ground_truth(w, g, spec.parents[0]);
  }
  return Value{w.gold_answer};
}

WorldInstance perturb(const WorldInstance& w, PerturbationKind kind, double magnitude,
                      uint64_t seed) {
  WorldInstance out = w;
  out.perturbations.push_back(PerturbationTag{kind, magnitude, seed});
  Rng rng = Rng(seed).derive("perturb");

  switch (kind) {
    case PerturbationKind::CharConfusionShift:
      out.noise.char_confusion_prob = clamp01(out.noise.char_confusion_prob + magnitude);
      break;
    case PerturbationKind::Clutter: {
      int extra = static_cast<int>(std::ceil(magnitude * static_cast<double>(w.fields.size())));
      out.noise.distractor_count += extra;
      for (int i = 0; i < extra; ++i) {
        // clutter may overlap real content; that is the point
        double cw = rng.uniform(80, 150), ch = rng.uniform(24, 40);
        double x0 = rng.uniform(0, kSceneExtent - cw), y0 = rng.uniform(0, kSceneExtent - ch);
        out.fields.push_back(TextField{Box{x0, y0, x0 + cw, y0 + ch}, random_token(rng, 3, 10), true});
      }
      break;
    }
    case PerturbationKind::AffineOffset: {
      double t = std::tan(magnitude * 3.14159265358979323846 / 180.0);
      auto shear = [&](Box& b) {
        double yc = (b.y0 + b.y1) / 2;
        double dx = t * (yc - kSceneExtent / 2);
        double width = b.x1 - b.x0;
        double x0 = b.x0 + dx;
        if (x0 < 0) x0 = 0;
        if (x0 + width > kSceneExtent) x0 = kSceneExtent - width;
        b.x0 = x0;
        b.x1 = x0 + width;
      };
      for (TextField& f : out.fields) shear(f.region);
      for (Series& s : out.series) shear(s.region);
      for (SceneObject& o : out.objects) shear(o.box);
      break;
    }
    case PerturbationKind::PanelShuffle: {
      std::vector<int> real;
      for (int i = 0; i < static_cast<int>(out.fields.size()); ++i)
        if (!out.fields[i].distractor) real.push_back(i);
      std::vector<int> perm(real.size());
      std::iota(perm.begin(), perm.end(), 0);
      for (size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
      if (magnitude < 0) {
        std::vector<int> inv(perm.size());
        for (size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = static_cast<int>(i);
        perm = inv;
      }
      std::vector<Box> regions(real.size());
      for (size_t i = 0; i < real.size(); ++i) regions[i] = out.fields[real[perm[i]]].region;
      for (size_t i = 0; i < real.size(); ++i) out.fields[real[i]].region = regions[i];
      break;
    }
  }
  return out;
}

/* ------------------------------------------------------------------ */
/* serialization                                                      */
/* ------------------------------------------------------------------ */

namespace {

json box_json(const Box& b) { return json::array({b.x0, b.y0, b.x1, b.y1}); }
Box box_from(const json& j) {
  return Box{j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(),
             j.at(3).get<double>()};
}

json noise_json(const NoiseConfig& n) {
  return json{{"char_confusion_prob", n.char_confusion_prob},
              {"box_jitter_sigma", n.box_jitter_sigma},
              {"numeric_noise_sigma", n.numeric_noise_sigma},
              {"distractor_count", n.distractor_count},
              {"fidelity_gain", n.fidelity_gain},
              {"score_jitter", n.score_jitter},
              {"fuse_confab_prob", n.fuse_confab_prob}};
}

NoiseConfig noise_from(const json& j) {
  NoiseConfig n;
  n.char_confusion_prob = j.at("char_confusion_prob").get<double>();
  n.box_jitter_sigma = j.at("box_jitter_sigma").get<double>();
  n.numeric_noise_sigma = j.at("numeric_noise_sigma").get<double>();
  n.distractor_count = j.at("distractor_count").get<int>();
  n.fidelity_gain = j.at("fidelity_gain").get<double>();
  n.score_jitter = j.at("score_jitter").get<double>();
  n.fuse_confab_prob = j.at("fuse_confab_prob").get<double>();
  return n;
}

}  // namespace

std::string world_to_json(const WorldInstance& w) {
  json j;
  j["seed"] = w.seed;
  j["difficulty"] = difficulty_name(w.difficulty);
  j["noise"] = noise_json(w.noise);
  json fields = json::array();
  for (const TextField& f : w.fields)
    fields.push_back({{"region", box_json(f.region)}, {"truth", f.truth}, {"distractor", f.distractor}});
  j["fields"] = std::move(fields);
  json objects = json::array();
  for (const SceneObject& o : w.objects)
    objects.push_back({{"box", box_json(o.box)}, {"label", o.label}, {"distractor", o.distractor}});
  j["objects"] = std::move(objects);
  json series = json::array();
  for (const Series& s : w.series)
    series.push_back({{"key", s.key}, {"value", s.value}, {"region", box_json(s.region)}});
  j["series"] = std::move(series);
  json q;
  q["kind"] = query_kind_name(w.query.kind);
  q["text"] = w.query.text;
  q["lookup_type"] = node_type_name(w.query.lookup_type);
  q["keys"] = w.query.keys;
  json regions = json::array();
  for (const Box& b : w.query.regions) regions.push_back(box_json(b));
  q["regions"] = std::move(regions);
  q["probe_count"] = w.query.probe_count;
  j["query"] = std::move(q);
  j["gold_answer"] = w.gold_answer;
  j["gold_numeric"] = w.gold_numeric;
  j["gold_is_numeric"] = w.gold_is_numeric;
  json perts = json::array();
  for (const PerturbationTag& p : w.perturbations)
    perts.push_back({{"kind", perturbation_name(p.kind)}, {"magnitude", p.magnitude}, {"seed", p.seed}});
  j["perturbations"] = std::move(perts);
  return j.dump(2);
}

WorldInstance world_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw Error(ErrorKind::IoError, std::string("world json: ") + e.what());
  }
  WorldInstance w;
  w.seed = j.at("seed").get<uint64_t>();
  w.difficulty = difficulty_from_name(j.at("difficulty").get<std::string>());
  w.noise = noise_from(j.at("noise"));
  for (const auto& f : j.at("fields"))
    w.fields.push_back(TextField{box_from(f.at("region")), f.at("truth").get<std::string>(),
                                 f.at("distractor").get<bool>()});
  for (const auto& o : j.at("objects"))
    w.objects.push_back(SceneObject{box_from(o.at("box")), o.at("label").get<std::string>(),
                                    o.at("distractor").get<bool>()});
  for (const auto& s : j.at("series"))
    w.series.push_back(
        Series{s.at("key").get<std::string>(), s.at("value").get<double>(), box_from(s.at("region"))});
  const auto& q = j.at("query");
  w.query.kind = query_kind_from_name(q.at("kind").get<std::string>());
  w.query.text = q.at("text").get<std::string>();
  w.query.lookup_type = node_type_from_name(q.at("lookup_type").get<std::string>());
  w.query.keys = q.at("keys").get<std::vector<std::string>>();
  for (const auto& b : q.at("regions")) w.query.regions.push_back(box_from(b));
  w.query.probe_count = q.at("probe_count").get<int>();
  w.gold_answer = j.at("gold_answer").get<std::string>();
  w.gold_numeric = j.at("gold_numeric").get<double>();
  w.gold_is_numeric = j.at("gold_is_numeric").get<bool>();
  for (const auto& p : j.at("perturbations"))
    w.perturbations.push_back(PerturbationTag{perturbation_from_name(p.at("kind").get<std::string>()),
                                              p.at("magnitude").get<double>(),
                                              p.at("seed").get<uint64_t>()});
  return w;
}

}  // namespace certigraph::world

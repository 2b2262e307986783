// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace certigraph {

enum class ErrorKind {
  SyntaxError,
  UndefinedNode,
  MissingReturn,
  MultipleReturn,
  CycleDetected,
  DanglingParent,
  UnknownNode,
  ExpandOnAnswerNode,
  ExpandDepthExceeded,
  RegionOutOfBounds,
  Unresolvable,
  UnknownKind,
  DegenerateBox,
  EmptyPool,
  WrongVariant,
  MissingCalibrator,
  ParentNotExecuted,
  InvalidGraph,
  AllActionsMasked,
  EmptyBatch,
  IoError,
  BadConfig,
};

const char* error_kind_name(ErrorKind k);

// Single exception type; `kind` drives CLI exit codes and test assertions.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// Axis-aligned box, scene coordinates, x0<x1 and y0<y1 when valid.
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double area() const { return (x1 - x0) * (y1 - y0); }
  bool valid() const { return x1 > x0 && y1 > y0; }
  bool operator==(const Box& o) const {
    return x0 == o.x0 && y0 == o.y0 && x1 == o.x1 && y1 == o.y1;
  }
};

constexpr double kSceneExtent = 1000.0;

enum class NodeType { OcrString, DetBox, ChartNum, LogicText };
constexpr int kNumNodeTypes = 4;

const char* node_type_name(NodeType t);
NodeType node_type_from_name(const std::string& s);

// Node value: ocr/logic carry strings, chart carries numbers, det carries boxes.
using Value = std::variant<std::string, double, Box>;

bool value_eq(const Value& a, const Value& b);
// Total order used for deterministic tie-breaks: by alternative index, then payload.
bool value_less(const Value& a, const Value& b);
std::string value_repr(const Value& v);

// Canonical numeric rendering shared by gold answers and fusion output so
// exact-match comparison is byte-stable.
std::string canonical_number(double x);

struct Candidate {
  Value value;
  double prob = 0;  // pseudo-probability; list sums to <= 1
};

enum class QueryKind { Lookup, Sum, Compare, Count };

const char* query_kind_name(QueryKind k);
QueryKind query_kind_from_name(const std::string& s);

// A structured synthetic task. Regions are filled in by the world generator so
// the planner can emit region-addressed tool calls without seeing the scene.
struct Query {
  QueryKind kind = QueryKind::Lookup;
  std::string text;                       // human-readable form
  NodeType lookup_type = NodeType::OcrString;  // Lookup only: ocr or chart
  std::vector<std::string> keys;          // Sum/Compare: series keys; Count: {label}
  std::vector<Box> regions;               // one probe region per planned tool call
  int probe_count = 0;                    // Count only
};

inline double clamp01(double x) { return x < 0 ? 0 : (x > 1 ? 1 : x); }

}  // namespace certigraph

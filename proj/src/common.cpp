// SPDX-License-Identifier: Apache-2.0
#include "certigraph/common.hpp"

#include <charconv>
#include <cstdio>

namespace certigraph {

const char* error_kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::SyntaxError: return "SyntaxError";
    case ErrorKind::UndefinedNode: return "UndefinedNode";
    case ErrorKind::MissingReturn: return "MissingReturn";
    case ErrorKind::MultipleReturn: return "MultipleReturn";
    case ErrorKind::CycleDetected: return "CycleDetected";
    case ErrorKind::DanglingParent: return "DanglingParent";
    case ErrorKind::UnknownNode: return "UnknownNode";
    case ErrorKind::ExpandOnAnswerNode: return "ExpandOnAnswerNode";
    case ErrorKind::ExpandDepthExceeded: return "ExpandDepthExceeded";
    case ErrorKind::RegionOutOfBounds: return "RegionOutOfBounds";
    case ErrorKind::Unresolvable: return "Unresolvable";
    case ErrorKind::UnknownKind: return "UnknownKind";
    case ErrorKind::DegenerateBox: return "DegenerateBox";
    case ErrorKind::EmptyPool: return "EmptyPool";
    case ErrorKind::WrongVariant: return "WrongVariant";
    case ErrorKind::MissingCalibrator: return "MissingCalibrator";
    case ErrorKind::ParentNotExecuted: return "ParentNotExecuted";
    case ErrorKind::InvalidGraph: return "InvalidGraph";
    case ErrorKind::AllActionsMasked: return "AllActionsMasked";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::BadConfig: return "BadConfig";
  }
  return "UnknownError";
}

const char* node_type_name(NodeType t) {
  switch (t) {
    case NodeType::OcrString: return "ocr-string";
    case NodeType::DetBox: return "det-box";
    case NodeType::ChartNum: return "chart-num";
    case NodeType::LogicText: return "logic-text";
  }
  return "?";
}

NodeType node_type_from_name(const std::string& s) {
  if (s == "ocr-string") return NodeType::OcrString;
  if (s == "det-box") return NodeType::DetBox;
  if (s == "chart-num") return NodeType::ChartNum;
  if (s == "logic-text") return NodeType::LogicText;
  throw Error(ErrorKind::UnknownKind, "node type '" + s + "'");
}

const char* query_kind_name(QueryKind k) {
  switch (k) {
    case QueryKind::Lookup: return "lookup";
    case QueryKind::Sum: return "sum";
    case QueryKind::Compare: return "compare";
    case QueryKind::Count: return "count";
  }
  return "?";
}

QueryKind query_kind_from_name(const std::string& s) {
  if (s == "lookup") return QueryKind::Lookup;
  if (s == "sum") return QueryKind::Sum;
  if (s == "compare") return QueryKind::Compare;
  if (s == "count") return QueryKind::Count;
  throw Error(ErrorKind::UnknownKind, "query kind '" + s + "'");
}

std::string canonical_number(double x) {
  // Shortest round-trip form; keeps gold answers and fused answers byte-equal
  // whenever the underlying doubles are equal.
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

bool value_eq(const Value& a, const Value& b) {
  if (a.index() != b.index()) return false;
  if (std::holds_alternative<std::string>(a))
    return std::get<std::string>(a) == std::get<std::string>(b);
  if (std::holds_alternative<double>(a)) return std::get<double>(a) == std::get<double>(b);
  return std::get<Box>(a) == std::get<Box>(b);
}

bool value_less(const Value& a, const Value& b) {
  if (a.index() != b.index()) return a.index() < b.index();
  if (std::holds_alternative<std::string>(a))
    return std::get<std::string>(a) < std::get<std::string>(b);
  if (std::holds_alternative<double>(a)) return std::get<double>(a) < std::get<double>(b);
  const Box &x = std::get<Box>(a), &y = std::get<Box>(b);
  if (x.x0 != y.x0) return x.x0 < y.x0;
  if (x.y0 != y.y0) return x.y0 < y.y0;
  if (x.x1 != y.x1) return x.x1 < y.x1;
  return x.y1 < y.y1;
}

std::string value_repr(const Value& v) {
  if (std::holds_alternative<std::string>(v)) return std::get<std::string>(v);
  if (std::holds_alternative<double>(v)) return canonical_number(std::get<double>(v));
  const Box& b = std::get<Box>(v);
  return "[" + canonical_number(b.x0) + "," + canonical_number(b.y0) + "," +
         canonical_number(b.x1) + "," + canonical_number(b.y1) + "]";
}

}  // namespace certigraph

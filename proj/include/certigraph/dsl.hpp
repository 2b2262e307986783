// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <variant>
#include <vector>

#include "certigraph/common.hpp"

namespace certigraph::dsl {

// Registered tools: 1 = ocr-string, 2 = det-box, 3 = chart-num.
bool tool_id_known(int tool_id);
NodeType tool_node_type(int tool_id);
int node_type_tool_id(NodeType t);

struct RegionSpec {
  int image = 0;
  Box box;
  bool operator==(const RegionSpec& o) const { return image == o.image && box == o.box; }
};

struct CallToolInstr {
  int tool_id = 0;
  RegionSpec region;
  std::string prompt;
  std::string dst;
  bool operator==(const CallToolInstr&) const = default;
};

struct FuseInstr {
  std::vector<std::string> srcs;  // declaration order, preserved
  std::string prompt;
  std::string dst;
  bool operator==(const FuseInstr&) const = default;
};

struct ReturnInstr {
  std::string src;
  bool operator==(const ReturnInstr&) const = default;
};

using Instruction = std::variant<CallToolInstr, FuseInstr, ReturnInstr>;
using Program = std::vector<Instruction>;

// Grammar, one instruction per line ('#' starts a comment):
//   CALL_TOOL(<tool_id>, img<N>[x0,y0,x1,y1], "<prompt>") -> <id>
//   FUSE([<id>, <id>, ...], "<prompt>") -> <id>
//   RETURN(<id>)
// Exactly one RETURN, as the last instruction. Identifiers defined before use.
Program parse_program(const std::string& text);
std::string print_program(const Program& prog);

enum class NodeKind { Tool, Fuse };

struct NodeSpec {
  NodeKind kind = NodeKind::Tool;
  NodeType type = NodeType::OcrString;
  int tool_id = 0;                   // Tool only
  RegionSpec region;                 // Tool only
  std::string prompt;
  std::vector<std::string> parents;  // Fuse only, declaration order
  int fidelity = 1;
  int expand_depth = 0;
  bool operator==(const NodeSpec&) const = default;
};

struct ReasoningGraph {
  std::map<std::string, NodeSpec> nodes;
  std::string answer_node;
  int gen_counter = 0;  // next generated node id suffix for mutations

  const NodeSpec& at(const std::string& id) const;
  // Consumers of `id` in lexicographic order.
  std::vector<std::string> consumers(const std::string& id) const;
};

constexpr int kExpandDepthCap = 3;
constexpr int kRetryCap = 2;  // per-node retries, so fidelity <= 1 + cap

// Shared validator used by build_graph, mutate and deserialization: parents
// exist, tool nodes are parentless, fuse nodes are logic-text, single answer
// fuse with no consumers, no cycles.
void validate(const ReasoningGraph& g);

ReasoningGraph build_graph(const Program& prog);

// Kahn's algorithm; ready set popped in lexicographic node-id order.
std::vector<std::string> topological_order(const ReasoningGraph& g);

struct RetryMutation {
  std::string node;
};
struct ExpandMutation {
  std::string node;
  std::vector<NodeSpec> children;  // fresh tool nodes refining `node`
};
using Mutation = std::variant<RetryMutation, ExpandMutation>;

// Pure: returns a new graph. Retry bumps fidelity. Expand materializes the
// children plus a merge Fuse over {node, children}; the merge fuse replaces
// node's edges into its downstream consumers.
ReasoningGraph mutate(const ReasoningGraph& g, const Mutation& m);

// Single parentless answer Fuse over the raw query text (direct guess).
ReasoningGraph fallback_graph(const std::string& query_text);

// Template planner: emits DSL text for a structured query.
std::string plan_dsl(const Query& q);

std::string graph_to_json(const ReasoningGraph& g);
ReasoningGraph graph_from_json(const std::string& text);

}  // namespace certigraph::dsl

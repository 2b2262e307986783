// SPDX-License-Identifier: Apache-2.0
#include "certigraph/dsl.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <set>
#include <sstream>

#include "json.hpp"

namespace certigraph::dsl {

using json = nlohmann::ordered_json;

bool tool_id_known(int tool_id) { return tool_id >= 1 && tool_id <= 3; }

NodeType tool_node_type(int tool_id) {
  switch (tool_id) {
    case 1: return NodeType::OcrString;
    case 2: return NodeType::DetBox;
    case 3: return NodeType::ChartNum;
  }
  throw Error(ErrorKind::UnknownKind, "unknown tool id " + std::to_string(tool_id));
}

int node_type_tool_id(NodeType t) {
  switch (t) {
    case NodeType::OcrString: return 1;
    case NodeType::DetBox: return 2;
    case NodeType::ChartNum: return 3;
    default: throw Error(ErrorKind::UnknownKind, "no tool for fuse node type");
  }
}

/* ------------------------------------------------------------------ */
/* parsing                                                            */
/* ------------------------------------------------------------------ */

namespace {

struct Cursor {
  const std::string& s;
  size_t pos = 0;
  int line = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(ErrorKind::SyntaxError,
                "line " + std::to_string(line) + ": " + msg);
  }
  void skip_ws() {
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
  }
  bool done() {
    skip_ws();
    return pos >= s.size();
  }
  char peek() {
    skip_ws();
    return pos < s.size() ? s[pos] : '\0';
  }
  void expect(char c) {
    skip_ws();
    if (pos >= s.size() || s[pos] != c)
      fail(std::string("expected '") + c + "'");
    ++pos;
  }
  bool try_consume(const std::string& kw) {
    skip_ws();
    if (s.compare(pos, kw.size(), kw) == 0) {
      pos += kw.size();
      return true;
    }
    return false;
  }
  std::string ident() {
    skip_ws();
    size_t start = pos;
    if (pos < s.size() && (std::isalpha((unsigned char)s[pos]) || s[pos] == '_')) {
      ++pos;
      while (pos < s.size() && (std::isalnum((unsigned char)s[pos]) || s[pos] == '_')) ++pos;
    }
    if (start == pos) fail("expected identifier");
    return s.substr(start, pos - start);
  }
  long integer() {
    skip_ws();
    size_t start = pos;
    if (pos < s.size() && (s[pos] == '-' || s[pos] == '+')) ++pos;
    while (pos < s.size() && std::isdigit((unsigned char)s[pos])) ++pos;
    if (start == pos) fail("expected integer");
    return std::strtol(s.c_str() + start, nullptr, 10);
  }
  double number() {
    skip_ws();
    const char* begin = s.c_str() + pos;
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin) fail("expected number");
    pos += static_cast<size_t>(end - begin);
    return v;
  }
  std::string quoted() {
    skip_ws();
    if (pos >= s.size() || s[pos] != '"') fail("expected string literal");
    ++pos;
    std::string out;
    while (pos < s.size() && s[pos] != '"') {
      char c = s[pos++];
      if (c == '\\') {
        if (pos >= s.size()) fail("unterminated escape");
        char e = s[pos++];
        if (e == 'n') out += '\n';
        else if (e == '"') out += '"';
        else if (e == '\\') out += '\\';
        else fail("bad escape");
      } else {
        out += c;
      }
    }
    if (pos >= s.size()) fail("unterminated string literal");
    ++pos;
    return out;
  }
};

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\\\"";
    else if (c == '\\') out += "\\\\";
    else if (c == '\n') out += "\\n";
    else out += c;
  }
  out += '"';
  return out;
}

RegionSpec parse_region(Cursor& c) {
  if (!c.try_consume("img")) c.fail("expected region 'imgN[...]'");
  RegionSpec r;
  r.image = static_cast<int>(c.integer());
  c.expect('[');
  r.box.x0 = c.number();
  c.expect(',');
  r.box.y0 = c.number();
  c.expect(',');
  r.box.x1 = c.number();
  c.expect(',');
  r.box.y1 = c.number();
  c.expect(']');
  if (r.box.x0 >= r.box.x1 || r.box.y0 >= r.box.y1)
    c.fail("degenerate region");
  if (r.box.x0 < 0 || r.box.y0 < 0 || r.box.x1 > kSceneExtent || r.box.y1 > kSceneExtent)
    c.fail("region outside scene bounds");
  return r;
}

std::string strip_comment(const std::string& line) {
  bool in_str = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (c == '"' && (i == 0 || line[i - 1] != '\\')) in_str = !in_str;
    if (c == '#' && !in_str) return line.substr(0, i);
  }
  return line;
}

}  // namespace

Program parse_program(const std::string& text) {
  Program prog;
  std::set<std::string> defined;
  bool saw_return = false;

  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = strip_comment(raw);
    Cursor c{line, 0, line_no};
    if (c.done()) continue;
    if (saw_return) {
      if (c.try_consume("RETURN"))
        throw Error(ErrorKind::MultipleReturn, "line " + std::to_string(line_no) + ": second RETURN");
      c.fail("instruction after RETURN");
    }

    if (c.try_consume("CALL_TOOL")) {
      CallToolInstr instr;
      c.expect('(');
      instr.tool_id = static_cast<int>(c.integer());
      if (!tool_id_known(instr.tool_id))
        throw Error(ErrorKind::UnknownKind, "line " + std::to_string(line_no) + ": unknown tool id " +
                                                std::to_string(instr.tool_id));
      c.expect(',');
      instr.region = parse_region(c);
      c.expect(',');
      instr.prompt = c.quoted();
      c.expect(')');
      c.expect('-');
      c.expect('>');
      instr.dst = c.ident();
      if (!c.done()) c.fail("trailing tokens");
      if (defined.count(instr.dst)) c.fail("redefinition of " + instr.dst);
      defined.insert(instr.dst);
      prog.push_back(instr);
    } else if (c.try_consume("FUSE")) {
      FuseInstr instr;
      c.expect('(');
      c.expect('[');
      if (c.peek() == ']') c.fail("FUSE needs at least one input");
      while (true) {
        std::string src = c.ident();
        if (!defined.count(src))
          throw Error(ErrorKind::UndefinedNode,
                      "line " + std::to_string(line_no) + ": " + src);
        if (std::find(instr.srcs.begin(), instr.srcs.end(), src) != instr.srcs.end())
          c.fail("duplicate FUSE input " + src);
        instr.srcs.push_back(src);
        if (c.peek() == ',') { c.expect(','); continue; }
        break;
      }
      c.expect(']');
      c.expect(',');
      instr.prompt = c.quoted();
      c.expect(')');
      c.expect('-');
      c.expect('>');
      instr.dst = c.ident();
      if (!c.done()) c.fail("trailing tokens");
      if (defined.count(instr.dst)) c.fail("redefinition of " + instr.dst);
      defined.insert(instr.dst);
      prog.push_back(instr);
    } else if (c.try_consume("RETURN")) {
      ReturnInstr instr;
      c.expect('(');
      instr.src = c.ident();
      c.expect(')');
      if (!c.done()) c.fail("trailing tokens");
      if (!defined.count(instr.src))
        throw Error(ErrorKind::UndefinedNode,
                    "line " + std::to_string(line_no) + ": " + instr.src);
      saw_return = true;
      prog.push_back(instr);
    } else {
      c.fail("expected CALL_TOOL, FUSE or RETURN");
    }
  }
  if (!saw_return) throw Error(ErrorKind::MissingReturn, "program has no RETURN");
  return prog;
}

std::string print_program(const Program& prog) {
  std::string out;
  for (const Instruction& ins : prog) {
    if (const auto* call = std::get_if<CallToolInstr>(&ins)) {
      out += "CALL_TOOL(" + std::to_string(call->tool_id) + ", img" +
             std::to_string(call->region.image) + "[" +
             canonical_number(call->region.box.x0) + "," +
             canonical_number(call->region.box.y0) + "," +
             canonical_number(call->region.box.x1) + "," +
             canonical_number(call->region.box.y1) + "], " + quote(call->prompt) +
             ") -> " + call->dst + "\n";
    } else if (const auto* fuse = std::get_if<FuseInstr>(&ins)) {
      out += "FUSE([";
      for (size_t i = 0; i < fuse->srcs.size(); ++i) {
        if (i) out += ", ";
        out += fuse->srcs[i];
      }
      out += "], " + quote(fuse->prompt) + ") -> " + fuse->dst + "\n";
    } else {
      out += "RETURN(" + std::get<ReturnInstr>(ins).src + ")\n";
    }
  }
  return out;
}

/* ------------------------------------------------------------------ */
/* graph                                                              */
/* ------------------------------------------------------------------ */

const NodeSpec& ReasoningGraph::at(const std::string& id) const {
  auto it = nodes.find(id);
  if (it == nodes.end()) throw Error(ErrorKind::UnknownNode, id);
  return it->second;
}

std::vector<std::string> ReasoningGraph::consumers(const std::string& id) const {
  std::vector<std::string> out;
  for (const auto& [nid, spec] : nodes)
    for (const std::string& p : spec.parents)
      if (p == id) {
        out.push_back(nid);
        break;
      }
  return out;
}

std::vector<std::string> topological_order(const ReasoningGraph& g) {
  std::map<std::string, int> indeg;
  for (const auto& [id, spec] : g.nodes) {
    indeg.emplace(id, 0);
    for (const std::string& p : spec.parents)
      if (!g.nodes.count(p)) throw Error(ErrorKind::DanglingParent, p + " <- " + id);
  }
  for (const auto& [id, spec] : g.nodes) indeg[id] = static_cast<int>(spec.parents.size());

  std::set<std::string> ready;
  for (const auto& [id, d] : indeg)
    if (d == 0) ready.insert(id);

  std::vector<std::string> order;
  order.reserve(g.nodes.size());
  std::map<std::string, int> remaining = indeg;
  while (!ready.empty()) {
    std::string id = *ready.begin();  // lexicographic tie-break
    ready.erase(ready.begin());
    order.push_back(id);
    for (const std::string& c : g.consumers(id)) {
      if (--remaining[c] == 0) ready.insert(c);
    }
  }
  if (order.size() != g.nodes.size())
    throw Error(ErrorKind::CycleDetected, "graph has a cycle");
  return order;
}

void validate(const ReasoningGraph& g) {
  if (g.answer_node.empty() || !g.nodes.count(g.answer_node))
    throw Error(ErrorKind::MissingReturn, "no answer node");
  // edge existence and acyclicity come first: a cyclic graph reports the
  // cycle even when per-node rules are also broken
  for (const auto& [id, spec] : g.nodes) {
    for (const std::string& p : spec.parents) {
      if (!g.nodes.count(p)) throw Error(ErrorKind::DanglingParent, p + " <- " + id);
      if (p == id) throw Error(ErrorKind::CycleDetected, id + " lists itself as parent");
    }
  }
  topological_order(g);  // throws CycleDetected on longer cycles
  for (const auto& [id, spec] : g.nodes) {
    for (size_t i = 0; i < spec.parents.size(); ++i)
      for (size_t k = 0; k < i; ++k)
        if (spec.parents[k] == spec.parents[i])
          throw Error(ErrorKind::InvalidGraph, id + " lists duplicate parent " + spec.parents[i]);
    if (spec.kind == NodeKind::Tool) {
      if (!spec.parents.empty())
        throw Error(ErrorKind::InvalidGraph, "tool node " + id + " has parents");
      if (!tool_id_known(spec.tool_id))
        throw Error(ErrorKind::UnknownKind, "tool node " + id + " has unknown tool id");
      if (spec.type != tool_node_type(spec.tool_id))
        throw Error(ErrorKind::InvalidGraph, "tool node " + id + " type/tool mismatch");
    } else {
      if (spec.type != NodeType::LogicText)
        throw Error(ErrorKind::InvalidGraph, "fuse node " + id + " must be logic-text");
    }
    if (spec.fidelity < 1)
      throw Error(ErrorKind::InvalidGraph, "node " + id + " fidelity < 1");
  }
  const NodeSpec& answer = g.nodes.at(g.answer_node);
  if (answer.kind != NodeKind::Fuse)
    throw Error(ErrorKind::InvalidGraph, "answer node must be a fuse node");
  if (!g.consumers(g.answer_node).empty())
    throw Error(ErrorKind::InvalidGraph, "answer node has consumers");
}

ReasoningGraph build_graph(const Program& prog) {
  ReasoningGraph g;
  for (const Instruction& ins : prog) {
    if (const auto* call = std::get_if<CallToolInstr>(&ins)) {
      NodeSpec spec;
      spec.kind = NodeKind::Tool;
      spec.tool_id = call->tool_id;
      spec.type = tool_node_type(call->tool_id);
      spec.region = call->region;
      spec.prompt = call->prompt;
      g.nodes.emplace(call->dst, std::move(spec));
    } else if (const auto* fuse = std::get_if<FuseInstr>(&ins)) {
      NodeSpec spec;
      spec.kind = NodeKind::Fuse;
      spec.type = NodeType::LogicText;
      spec.parents = fuse->srcs;
      spec.prompt = fuse->prompt;
      g.nodes.emplace(fuse->dst, std::move(spec));
    } else {
      const auto& ret = std::get<ReturnInstr>(ins);
      if (!g.answer_node.empty())
        throw Error(ErrorKind::MultipleReturn, "second RETURN " + ret.src);
      g.answer_node = ret.src;
    }
  }
  validate(g);
  return g;
}

/* ------------------------------------------------------------------ */
/* mutation                                                           */
/* ------------------------------------------------------------------ */

namespace {

std::string fresh_id(ReasoningGraph& g) {
  while (true) {
    std::string id = "x" + std::to_string(g.gen_counter++);
    if (!g.nodes.count(id)) return id;
  }
}

}  // namespace

ReasoningGraph mutate(const ReasoningGraph& g, const Mutation& m) {
  ReasoningGraph out = g;
  if (const auto* retry = std::get_if<RetryMutation>(&m)) {
    auto it = out.nodes.find(retry->node);
    if (it == out.nodes.end()) throw Error(ErrorKind::UnknownNode, retry->node);
    it->second.fidelity += 1;
    validate(out);
    return out;
  }

  const auto& ex = std::get<ExpandMutation>(m);
  auto it = out.nodes.find(ex.node);
  if (it == out.nodes.end()) throw Error(ErrorKind::UnknownNode, ex.node);
  if (ex.node == out.answer_node)
    throw Error(ErrorKind::ExpandOnAnswerNode, ex.node);
  if (it->second.expand_depth >= kExpandDepthCap)
    throw Error(ErrorKind::ExpandDepthExceeded, ex.node);
  if (ex.children.empty())
    throw Error(ErrorKind::InvalidGraph, "expand with no children");

  int child_depth = it->second.expand_depth + 1;
  std::vector<std::string> child_ids;
  for (const NodeSpec& c : ex.children) {
    if (c.kind != NodeKind::Tool)
      throw Error(ErrorKind::InvalidGraph, "expand children must be tool nodes");
    NodeSpec spec = c;
    spec.type = tool_node_type(spec.tool_id);
    spec.parents.clear();
    spec.expand_depth = child_depth;
    std::string id = fresh_id(out);
    child_ids.push_back(id);
    out.nodes.emplace(std::move(id), std::move(spec));
  }

  NodeSpec merge;
  merge.kind = NodeKind::Fuse;
  merge.type = NodeType::LogicText;
  merge.prompt = "merge";
  merge.parents.push_back(ex.node);
  for (const std::string& cid : child_ids) merge.parents.push_back(cid);
  merge.expand_depth = child_depth;
  std::string merge_id = fresh_id(out);

  // Old and new evidence flow through the merge fuse into node's consumers.
  for (const std::string& cid : g.consumers(ex.node)) {
    NodeSpec& consumer = out.nodes.at(cid);
    for (std::string& p : consumer.parents)
      if (p == ex.node) p = merge_id;
  }
  out.nodes.emplace(merge_id, std::move(merge));
  validate(out);
  return out;
}

ReasoningGraph fallback_graph(const std::string& query_text) {
  // Parentless answer fuse: a single direct pass over the raw query. The
  // FUSE-instruction arity rule applies to parsed programs, not here.
  ReasoningGraph g;
  NodeSpec spec;
  spec.kind = NodeKind::Fuse;
  spec.type = NodeType::LogicText;
  spec.prompt = "direct " + query_text;
  g.nodes.emplace("answer", std::move(spec));
  g.answer_node = "answer";
  validate(g);
  return g;
}

/* ------------------------------------------------------------------ */
/* templates                                                          */
/* ------------------------------------------------------------------ */

namespace {

std::string region_text(const Box& b) {
  return "img0[" + canonical_number(b.x0) + "," + canonical_number(b.y0) + "," +
         canonical_number(b.x1) + "," + canonical_number(b.y1) + "]";
}

}  // namespace

std::string plan_dsl(const Query& q) {
  std::string out;
  int v = 0;
  auto next = [&v]() { return "v" + std::to_string(++v); };
  std::vector<std::string> evidence;

  switch (q.kind) {
    case QueryKind::Lookup: {
      if (q.regions.empty()) throw Error(ErrorKind::BadConfig, "lookup query without region");
      int tool = node_type_tool_id(q.lookup_type);
      std::string id = next();
      out += "CALL_TOOL(" + std::to_string(tool) + ", " + region_text(q.regions[0]) +
             ", " + (q.lookup_type == NodeType::OcrString ? "\"read\"" : "\"value\"") +
             ") -> " + id + "\n";
      evidence.push_back(id);
      out += "FUSE([" + id + "], \"lookup\") -> " + next() + "\n";
      break;
    }
    case QueryKind::Sum: {
      if (q.regions.size() != q.keys.size() || q.keys.empty())
        throw Error(ErrorKind::BadConfig, "sum query needs one region per key");
      for (size_t i = 0; i < q.keys.size(); ++i) {
        std::string id = next();
        out += "CALL_TOOL(3, " + region_text(q.regions[i]) + ", \"value\") -> " + id + "\n";
        evidence.push_back(id);
      }
      std::string list;
      for (size_t i = 0; i < evidence.size(); ++i) list += (i ? ", " : "") + evidence[i];
      out += "FUSE([" + list + "], \"sum\") -> " + next() + "\n";
      break;
    }
    case QueryKind::Compare: {
      if (q.keys.size() != 2 || q.regions.size() != 2)
        throw Error(ErrorKind::BadConfig, "compare query needs two keys and regions");
      for (size_t i = 0; i < 2; ++i) {
        std::string id = next();
        out += "CALL_TOOL(3, " + region_text(q.regions[i]) + ", \"value\") -> " + id + "\n";
        evidence.push_back(id);
      }
      out += "FUSE([" + evidence[0] + ", " + evidence[1] + "], \"compare " + q.keys[0] +
             " " + q.keys[1] + "\") -> " + next() + "\n";
      break;
    }
    case QueryKind::Count: {
      if (q.keys.size() != 1 || q.probe_count < 1 ||
          q.regions.size() != static_cast<size_t>(q.probe_count))
        throw Error(ErrorKind::BadConfig, "count query needs a label and probe regions");
      for (int i = 0; i < q.probe_count; ++i) {
        std::string id = next();
        out += "CALL_TOOL(2, " + region_text(q.regions[i]) + ", \"label=" + q.keys[0] +
               ";index=" + std::to_string(i) + "\") -> " + id + "\n";
        evidence.push_back(id);
      }
      std::string list;
      for (size_t i = 0; i < evidence.size(); ++i) list += (i ? ", " : "") + evidence[i];
      out += "FUSE([" + list + "], \"count\") -> " + next() + "\n";
      break;
    }
  }
  out += "RETURN(v" + std::to_string(v) + ")\n";
  return out;
}

/* ------------------------------------------------------------------ */
/* serialization                                                      */
/* ------------------------------------------------------------------ */

std::string graph_to_json(const ReasoningGraph& g) {
  json nodes = json::object();
  for (const auto& [id, spec] : g.nodes) {
    json n;
    n["kind"] = spec.kind == NodeKind::Tool ? "tool" : "fuse";
    n["type"] = node_type_name(spec.type);
    if (spec.kind == NodeKind::Tool) {
      n["tool_id"] = spec.tool_id;
      n["region"] = {{"image", spec.region.image},
                     {"box", {spec.region.box.x0, spec.region.box.y0, spec.region.box.x1,
                              spec.region.box.y1}}};
    }
    n["prompt"] = spec.prompt;
    n["parents"] = spec.parents;
    n["fidelity"] = spec.fidelity;
    n["expand_depth"] = spec.expand_depth;
    nodes[id] = std::move(n);
  }
  json edges = json::array();
  for (const auto& [id, spec] : g.nodes)
    for (const std::string& p : spec.parents) edges.push_back({p, id});
  json out;
  out["nodes"] = std::move(nodes);
  out["edges"] = std::move(edges);
  out["answer_node"] = g.answer_node;
  out["gen_counter"] = g.gen_counter;
  return out.dump(2);
}

ReasoningGraph graph_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw Error(ErrorKind::SyntaxError, std::string("graph json: ") + e.what());
  }
  ReasoningGraph g;
  for (const auto& [id, n] : j.at("nodes").items()) {
    NodeSpec spec;
    spec.kind = n.at("kind") == "tool" ? NodeKind::Tool : NodeKind::Fuse;
    spec.type = node_type_from_name(n.at("type").get<std::string>());
    if (spec.kind == NodeKind::Tool) {
      spec.tool_id = n.at("tool_id").get<int>();
      const auto& r = n.at("region");
      spec.region.image = r.at("image").get<int>();
      const auto& b = r.at("box");
      spec.region.box = Box{b.at(0).get<double>(), b.at(1).get<double>(),
                            b.at(2).get<double>(), b.at(3).get<double>()};
    }
    spec.prompt = n.at("prompt").get<std::string>();
    spec.parents = n.at("parents").get<std::vector<std::string>>();
    spec.fidelity = n.at("fidelity").get<int>();
    spec.expand_depth = n.at("expand_depth").get<int>();
    g.nodes.emplace(id, std::move(spec));
  }
  g.answer_node = j.at("answer_node").get<std::string>();
  g.gen_counter = j.value("gen_counter", 0);
  validate(g);
  return g;
}

}  // namespace certigraph::dsl

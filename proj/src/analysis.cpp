#include "dfsq/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "dfsq/errors.hpp"

namespace dfsq {

std::vector<double> block_scores(const std::vector<std::vector<double>>& blocks) {
  std::vector<double> mass;
  double total = 0.0;
  for (const auto& b : blocks) {
    double s = 0.0;
    for (double w : b) s += std::abs(w);
    mass.push_back(s);
    total += s;
  }
  if (total == 0.0) throw NumericalError("aggregation node has all-zero input weights");
  for (auto& m : mass) m /= total;
  return mass;
}

namespace {

std::string hname(std::size_t l) { return "H" + std::to_string(l); }
std::string aname(std::size_t i) { return "Hhat" + std::to_string(i); }

}  // namespace

template <typename T>
std::vector<ExploitationRow> exploitation_scores(const StackParams<T>& stack, const std::string& side) {
  const auto& s = stack.strategy;
  if (s.tag != StrategyTag::kHierarchical && s.tag != StrategyTag::kIterative) {
    throw ConfigError("exploitation scores need hierarchical or iterative aggregation, " + side +
                      " uses " + std::string(to_string(s.tag)));
  }
  if (s.agg_fn == AggFn::kSelfAttention) {
    throw ConfigError("self-attention aggregation has no per-input weight blocks");
  }
  std::vector<ExploitationRow> rows;
  for (std::size_t n = 0; n < stack.agg_nodes.size(); ++n) {
    const auto& node = stack.agg_nodes[n];
    std::size_t index;
    std::vector<std::string> inputs;
    if (s.tag == StrategyTag::kHierarchical) {
      index = n + 1;
      inputs = {hname(2 * index), hname(2 * index - 1)};
      if (index > 1) inputs.push_back(aname(index - 1));
    } else {
      index = n + 2;  // Hhat^1 = H^1 needs no node
      inputs = {hname(index), index == 2 ? hname(1) : aname(index - 1)};
    }
    std::vector<std::vector<double>> blocks;
    for (std::size_t j = 0; j < node.arity; ++j) {
      const auto b = node.block(j);
      blocks.emplace_back(b.begin(), b.end());
    }
    const auto scores = block_scores(blocks);
    for (std::size_t j = 0; j < scores.size(); ++j) rows.push_back({side, index, inputs[j], scores[j]});
  }
  return rows;
}

template <typename T>
std::vector<ExploitationRow> exploitation_scores(const Seq2SeqModel<T>& model) {
  std::vector<ExploitationRow> rows;
  for (const auto* stack : {&model.encoder(), &model.decoder()}) {
    const auto tag = stack->strategy.tag;
    if (tag != StrategyTag::kHierarchical && tag != StrategyTag::kIterative) continue;
    auto part = exploitation_scores(*stack, stack == &model.encoder() ? "encoder" : "decoder");
    rows.insert(rows.end(), part.begin(), part.end());
  }
  if (rows.empty()) {
    throw ConfigError("model has no hierarchical or iterative aggregation nodes (strategy " +
                      std::string(to_string(model.config().strategy.tag)) + ")");
  }
  return rows;
}

std::string exploitation_csv(const std::vector<ExploitationRow>& rows) {
  std::string out = "# score = share of summed |w| over ffn_in weight blocks; biases excluded\n";
  out += "side,node,input,score\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.12g", r.score);
    out += r.side + "," + std::to_string(r.node) + "," + r.input + "," + buf + "\n";
  }
  return out;
}

Dag describe_dag(std::size_t L, const FusionStrategy& s) {
  if (L == 0) throw ConfigError("a stack needs at least one layer");
  if (s.tag == StrategyTag::kHierarchical && L % 2 != 0) {
    throw ConfigError("hierarchical aggregation needs an even layer count, got L=" + std::to_string(L));
  }
  if (s.tag == StrategyTag::kMultiLayerAttention && (s.k < 1 || s.k > L)) {
    throw ConfigError("multi-layer attention needs 1 <= k <= L");
  }
  Dag g;
  g.L = L;
  g.strategy = s;
  g.nodes.push_back({hname(0), "embedding", 0, 0});
  for (std::size_t l = 1; l <= L; ++l) g.nodes.push_back({hname(l), "layer", l, 0});
  auto edge = [&](std::string from, std::string to, const char* role) {
    g.edges.push_back({std::move(from), std::move(to), role});
  };
  auto agg = [&](std::size_t index, std::size_t depth, const std::vector<std::string>& ins) {
    g.nodes.push_back({aname(index), "aggregate", depth, ins.size()});
    for (const auto& in : ins) edge(in, aname(index), "aggregate");
  };
  switch (s.tag) {
    case StrategyTag::kVanilla:
      for (std::size_t l = 1; l <= L; ++l) edge(hname(l - 1), hname(l), "input");
      g.final_node = hname(L);
      break;
    case StrategyTag::kDense:
      for (std::size_t l = 1; l <= L; ++l) {
        edge(hname(l - 1), hname(l), "input");
        for (std::size_t i = 1; i < l; ++i) edge(hname(i), hname(l), "dense");
      }
      g.final_node = hname(L);
      break;
    case StrategyTag::kLinear:
      for (std::size_t l = 1; l <= L; ++l) edge(hname(l - 1), hname(l), "input");
      g.nodes.push_back({"Hhat", "combination", L, L});
      for (std::size_t l = 1; l <= L; ++l) edge(hname(l), "Hhat", "combine");
      g.final_node = "Hhat";
      break;
    case StrategyTag::kIterative:
      for (std::size_t l = 1; l <= L; ++l) edge(hname(l - 1), hname(l), "input");
      for (std::size_t l = 2; l <= L; ++l) agg(l, l, {hname(l), l == 2 ? hname(1) : aname(l - 1)});
      g.final_node = L == 1 ? hname(1) : aname(L);
      break;
    case StrategyTag::kHierarchical:
      for (std::size_t i = 1; i <= L / 2; ++i) {
        edge(i == 1 ? hname(0) : aname(i - 1), hname(2 * i - 1), "input");
        edge(hname(2 * i - 1), hname(2 * i), "input");
        std::vector<std::string> ins{hname(2 * i), hname(2 * i - 1)};
        if (i > 1) ins.push_back(aname(i - 1));
        agg(i, 2 * i, ins);
      }
      g.final_node = aname(L / 2);
      break;
    case StrategyTag::kMultiLayerAttention:
      for (std::size_t l = 1; l <= L; ++l) {
        edge(hname(l - 1), hname(l), "input");
        for (std::size_t i = 2; i <= std::min(s.k, l); ++i) edge(hname(l - i), hname(l), "attend");
      }
      g.final_node = hname(L);
      break;
  }
  if (auto err = check_dag(g); !err.empty()) throw ConfigError("internal DAG check failed: " + err);
  return g;
}

std::string check_dag(const Dag& g) {
  std::map<std::string, const DagNode*> by_id;
  for (const auto& n : g.nodes)
    if (!by_id.emplace(n.id, &n).second) return "duplicate node " + n.id;
  std::map<std::string, std::size_t> in_degree;
  for (const auto& e : g.edges) {
    if (!by_id.count(e.from) || !by_id.count(e.to)) return "edge references unknown node";
    if (by_id[e.from]->depth > by_id[e.to]->depth) return "edge " + e.from + "->" + e.to + " goes downward";
    if (e.role == "aggregate") ++in_degree[e.to];
  }
  if (!by_id.count(g.final_node)) return "final node missing";
  std::set<std::size_t> agg_depths;
  std::size_t agg_count = 0;
  for (const auto& n : g.nodes) {
    if (n.kind != "aggregate") continue;
    ++agg_count;
    if (in_degree[n.id] != n.arity) return "node " + n.id + " arity does not match its inputs";
    if (g.strategy.tag == StrategyTag::kHierarchical) {
      if (!agg_depths.insert(n.depth).second) return "two aggregation nodes at depth " + std::to_string(n.depth);
      const std::size_t expect = n.id == "Hhat1" ? 2 : 3;
      if (n.arity != expect) return "node " + n.id + " should have arity " + std::to_string(expect);
    }
  }
  if (g.strategy.tag == StrategyTag::kHierarchical && agg_count != g.L / 2) return "expected L/2 aggregation nodes";
  return "";
}

nlohmann::json to_json(const Dag& g) {
  nlohmann::json nodes = nlohmann::json::array(), edges = nlohmann::json::array();
  for (const auto& n : g.nodes) {
    nlohmann::json j{{"id", n.id}, {"kind", n.kind}, {"depth", n.depth}};
    if (n.kind != "layer" && n.kind != "embedding") j["arity"] = n.arity;
    nodes.push_back(std::move(j));
  }
  for (const auto& e : g.edges) edges.push_back({{"from", e.from}, {"to", e.to}, {"role", e.role}});
  nlohmann::json out{{"L", g.L},
                     {"strategy", to_string(g.strategy.tag)},
                     {"nodes", nodes},
                     {"edges", edges},
                     {"final", g.final_node}};
  if (g.strategy.tag == StrategyTag::kMultiLayerAttention) out["k"] = g.strategy.k;
  return out;
}

template std::vector<ExploitationRow> exploitation_scores(const StackParams<float>&, const std::string&);
template std::vector<ExploitationRow> exploitation_scores(const StackParams<double>&, const std::string&);
template std::vector<ExploitationRow> exploitation_scores(const Seq2SeqModel<float>&);
template std::vector<ExploitationRow> exploitation_scores(const Seq2SeqModel<double>&);

}  // namespace dfsq

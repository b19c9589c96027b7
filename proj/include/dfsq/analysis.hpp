#pragma once

#include <string>
#include <vector>

#include "dfsq/model.hpp"
#include "json.hpp"

namespace dfsq {

// ------------------------------------------------------------------ exploitation scores

struct ExploitationRow {
  std::string side;   // encoder | decoder
  std::size_t node;   // Hhat index
  std::string input;  // e.g. H4, H3, Hhat1
  double score;
};

// s_j = sum |w| over block j / sum |w| over all blocks of the node.
std::vector<double> block_scores(const std::vector<std::vector<double>>& blocks);

// Rows for every aggregation node of one stack (Hierarchical or Iterative, FFN aggregation).
template <typename T>
std::vector<ExploitationRow> exploitation_scores(const StackParams<T>& stack, const std::string& side);

// Both sides of a model; sides without aggregation nodes are skipped. Throws ConfigError when
// no side has any.
template <typename T>
std::vector<ExploitationRow> exploitation_scores(const Seq2SeqModel<T>& model);

std::string exploitation_csv(const std::vector<ExploitationRow>& rows);

// ------------------------------------------------------------------ structure

struct DagNode {
  std::string id;    // H0..HL, Hhat1.., or Hhat for the linear combination
  std::string kind;  // embedding | layer | aggregate | combination
  std::size_t depth;
  std::size_t arity;  // inputs of an aggregation node, 0 otherwise
};

struct DagEdge {
  std::string from, to;
  std::string role;  // input | dense | aggregate | attend | combine
  bool operator==(const DagEdge&) const = default;
  auto operator<=>(const DagEdge&) const = default;
};

struct Dag {
  std::size_t L = 0;
  FusionStrategy strategy;
  std::vector<DagNode> nodes;
  std::vector<DagEdge> edges;
  std::string final_node;
};

// Throws ConfigError for an invalid (L, strategy) before building anything.
Dag describe_dag(std::size_t L, const FusionStrategy& strategy);
// Checks the structural invariants; returns a description of the first violation or "".
std::string check_dag(const Dag& dag);
nlohmann::json to_json(const Dag& dag);

}  // namespace dfsq

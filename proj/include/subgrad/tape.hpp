#pragma once

#include <stdexcept>
#include <utility>
#include <vector>

#include "subgrad/meter.hpp"

namespace subgrad {

/// Forward-pass value paired with its one-sided directional derivative.
template <class S>
struct Dual {
  S a{};  // value
  S d{};  // directional derivative along the query direction
};

/// Topologically ordered record of computed nodes with their local partial
/// derivatives. Nodes 1..num_inputs are the (recordless) inputs; records
/// carry strictly increasing node indices above that.
template <class S>
struct Tape {
  struct Record {
    int node = 0;
    std::vector<std::pair<int, S>> partials;  // (parent node, d node / d parent)
  };

  int num_inputs = 0;
  int output = 0;
  std::vector<Record> records;
};

/// Backward recurrence adj[t] = sum over children i of adj[i] * (dx_i/dx_t),
/// seeded with adj[output] = 1. Returns the adjoints of the input nodes.
/// Children contribute in descending node order, so floating-point sums are
/// reproducible. One multiplication and one addition are charged per
/// (child, parent) edge term.
template <class S>
std::vector<S> reverse_mode(const Tape<S>& tape, CostMeter& meter) {
  const int n = tape.num_inputs + static_cast<int>(tape.records.size());
  if (tape.output < 1 || tape.output > n) throw std::invalid_argument("tape output out of range");
  int prev = tape.num_inputs;
  for (const auto& rec : tape.records) {
    if (rec.node <= prev) throw std::invalid_argument("tape is not topologically ordered");
    prev = rec.node;
  }

  std::vector<S> adj(static_cast<std::size_t>(n) + 1, S(0));
  adj[static_cast<std::size_t>(tape.output)] = S(1);
  for (auto it = tape.records.rbegin(); it != tape.records.rend(); ++it) {
    const S& a = adj[static_cast<std::size_t>(it->node)];
    for (const auto& [parent, partial] : it->partials) {
      if (parent >= it->node) throw std::invalid_argument("tape record reads a later node");
      adj[static_cast<std::size_t>(parent)] = adj[static_cast<std::size_t>(parent)] + a * partial;
      meter.multiplications += 1;
      meter.additions += 1;
    }
  }
  return std::vector<S>(adj.begin() + 1, adj.begin() + 1 + tape.num_inputs);
}

}  // namespace subgrad

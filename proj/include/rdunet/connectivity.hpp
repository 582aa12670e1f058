#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rdunet/errors.hpp"

namespace rdunet {

/// Layer-dependency wiring schemes. Layer 0 is the input; layers run 1..L.
enum class Scheme { log_dense, full_dense, chain, residual_chain };

Scheme scheme_from_string(const std::string& name);
std::string scheme_name(Scheme s);

/// Directed dependency graph: edge (i, j) with j < i when layer i reads
/// layer j. Gradients traverse these edges in reverse.
struct ConnectivityGraph {
  int layers = 0;
  Scheme scheme = Scheme::chain;
  std::vector<std::vector<int>> inputs;  // inputs[i] = sorted predecessors of i

  static ConnectivityGraph make(Scheme scheme, int layers);
  std::int64_t edge_count() const;
};

/// Shortest path length from layer i back to layer j (i > j) by BFS.
/// Empty when j is unreachable from i, which indicates a malformed graph
/// for the schemes above.
std::optional<int> backprop_distance(const ConnectivityGraph& g, int i, int j);

/// Maximum backprop distance over all pairs i > j.
int max_backprop_distance(const ConnectivityGraph& g);

/// Edge count of a scheme without materializing the graph. For log-dense
/// this is sum over i of (floor(log2 i) + 1).
std::int64_t connection_count(int layers, Scheme scheme);

/// Multiplicative factor lambda^(L-l) on the direct gradient term of a
/// scaled shortcut chain.
double shortcut_gain(double lambda, int l, int L);

struct ConnectivityRow {
  std::string scheme;
  int layers;
  std::int64_t edges;
  int mbd;
};

ConnectivityRow analyze_scheme(Scheme scheme, int layers);
std::string connectivity_csv(const std::vector<ConnectivityRow>& rows);
std::string connectivity_table(const std::vector<ConnectivityRow>& rows);

}  // namespace rdunet

#include "rdunet/connectivity.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

namespace rdunet {

Scheme scheme_from_string(const std::string& name) {
  if (name == "log-dense") return Scheme::log_dense;
  if (name == "full-dense" || name == "full") return Scheme::full_dense;
  if (name == "chain") return Scheme::chain;
  if (name == "residual-chain") return Scheme::residual_chain;
  throw ValueError("unknown connectivity scheme: " + name);
}

std::string scheme_name(Scheme s) {
  switch (s) {
    case Scheme::log_dense: return "log-dense";
    case Scheme::full_dense: return "full-dense";
    case Scheme::chain: return "chain";
    case Scheme::residual_chain: return "residual-chain";
  }
  return "?";
}

ConnectivityGraph ConnectivityGraph::make(Scheme scheme, int layers) {
  if (layers < 1) throw ValueError("connectivity graph needs at least one layer");
  ConnectivityGraph g;
  g.layers = layers;
  g.scheme = scheme;
  g.inputs.assign(static_cast<std::size_t>(layers) + 1, {});
  for (int i = 1; i <= layers; ++i) {
    auto& in = g.inputs[static_cast<std::size_t>(i)];
    switch (scheme) {
      case Scheme::log_dense:
        for (int step = 1; step <= i; step *= 2) in.push_back(i - step);
        break;
      case Scheme::full_dense:
        for (int j = 0; j < i; ++j) in.push_back(j);
        break;
      case Scheme::chain:
        in.push_back(i - 1);
        break;
      case Scheme::residual_chain:
        // Weighted edge to the predecessor plus the identity skip that
        // bypasses it.
        in.push_back(i - 1);
        if (i >= 2) in.push_back(i - 2);
        break;
    }
    std::sort(in.begin(), in.end());
  }
  return g;
}

std::int64_t ConnectivityGraph::edge_count() const {
  std::int64_t total = 0;
  for (const auto& in : inputs) total += static_cast<std::int64_t>(in.size());
  return total;
}

std::optional<int> backprop_distance(const ConnectivityGraph& g, int i, int j) {
  if (!(i > j) || j < 0 || i > g.layers)
    throw ValueError("backprop_distance: need layers i > j within [0, L]");
  std::vector<int> dist(static_cast<std::size_t>(g.layers) + 1, -1);
  std::deque<int> queue;
  dist[static_cast<std::size_t>(i)] = 0;
  queue.push_back(i);
  while (!queue.empty()) {
    int v = queue.front();
    queue.pop_front();
    if (v == j) return dist[static_cast<std::size_t>(v)];
    for (int u : g.inputs[static_cast<std::size_t>(v)]) {
      if (dist[static_cast<std::size_t>(u)] < 0) {
        dist[static_cast<std::size_t>(u)] = dist[static_cast<std::size_t>(v)] + 1;
        queue.push_back(u);
      }
    }
  }
  return std::nullopt;
}

int max_backprop_distance(const ConnectivityGraph& g) {
  int mbd = 0;
  for (int i = 1; i <= g.layers; ++i) {
    // One BFS from i covers every j < i.
    std::vector<int> dist(static_cast<std::size_t>(g.layers) + 1, -1);
    std::deque<int> queue;
    dist[static_cast<std::size_t>(i)] = 0;
    queue.push_back(i);
    while (!queue.empty()) {
      int v = queue.front();
      queue.pop_front();
      for (int u : g.inputs[static_cast<std::size_t>(v)]) {
        if (dist[static_cast<std::size_t>(u)] < 0) {
          dist[static_cast<std::size_t>(u)] = dist[static_cast<std::size_t>(v)] + 1;
          queue.push_back(u);
        }
      }
    }
    for (int j = 0; j < i; ++j) {
      if (dist[static_cast<std::size_t>(j)] < 0)
        throw Error("layer " + std::to_string(j) + " unreachable from " + std::to_string(i) +
                    " in scheme " + scheme_name(g.scheme));
      mbd = std::max(mbd, dist[static_cast<std::size_t>(j)]);
    }
  }
  return mbd;
}

std::int64_t connection_count(int layers, Scheme scheme) {
  if (layers < 1) throw ValueError("connection_count: need at least one layer");
  std::int64_t L = layers;
  switch (scheme) {
    case Scheme::log_dense: {
      std::int64_t total = 0;
      for (std::int64_t i = 1; i <= L; ++i) {
        std::int64_t density = 0;
        for (std::int64_t step = 1; step <= i; step *= 2) ++density;
        total += density;  // floor(log2 i) + 1
      }
      return total;
    }
    case Scheme::full_dense:
      return L * (L + 1) / 2;
    case Scheme::chain:
      return L;
    case Scheme::residual_chain:
      return L + std::max<std::int64_t>(0, L - 1);
  }
  return 0;
}

double shortcut_gain(double lambda, int l, int L) {
  if (!(L > l) || l < 0) throw ValueError("shortcut_gain: need L > l >= 0");
  double gain = 1.0;
  for (int i = l; i < L; ++i) gain *= lambda;
  return gain;
}

ConnectivityRow analyze_scheme(Scheme scheme, int layers) {
  ConnectivityGraph g = ConnectivityGraph::make(scheme, layers);
  return ConnectivityRow{scheme_name(scheme), layers, g.edge_count(), max_backprop_distance(g)};
}

std::string connectivity_csv(const std::vector<ConnectivityRow>& rows) {
  std::ostringstream out;
  out << "scheme,L,edges,mbd\n";
  for (const auto& r : rows)
    out << r.scheme << "," << r.layers << "," << r.edges << "," << r.mbd << "\n";
  return out.str();
}

std::string connectivity_table(const std::vector<ConnectivityRow>& rows) {
  std::ostringstream out;
  out << "scheme           L     edges   MBD\n";
  for (const auto& r : rows) {
    out << r.scheme;
    for (std::size_t i = r.scheme.size(); i < 15; ++i) out << ' ';
    std::string l = std::to_string(r.layers), e = std::to_string(r.edges),
                m = std::to_string(r.mbd);
    for (std::size_t i = l.size(); i < 6; ++i) out << ' ';
    out << l;
    for (std::size_t i = e.size(); i < 10; ++i) out << ' ';
    out << e;
    for (std::size_t i = m.size(); i < 6; ++i) out << ' ';
    out << m << "\n";
  }
  return out.str();
}

}  // namespace rdunet

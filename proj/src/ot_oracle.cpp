#include "dynkd/ot_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "dynkd/error.hpp"

namespace dynkd {

namespace {

struct Edge {
  int to;
  long long cap;
  real cost;
  int rev;
};

class MinCostFlow {
 public:
  explicit MinCostFlow(int nodes) : graph_(nodes) {}

  void add_edge(int from, int to, long long cap, real cost) {
    graph_[from].push_back({to, cap, cost, static_cast<int>(graph_[to].size())});
    graph_[to].push_back({from, 0, -cost, static_cast<int>(graph_[from].size()) - 1});
  }

  // Successive shortest paths with Bellman-Ford; returns total cost of `flow` units.
  real solve(int source, int sink, long long flow) {
    const int nodes = static_cast<int>(graph_.size());
    real total = 0.0;
    while (flow > 0) {
      std::vector<real> dist(nodes, std::numeric_limits<real>::infinity());
      std::vector<int> prev_node(nodes, -1), prev_edge(nodes, -1);
      dist[source] = 0.0;
      bool updated = true;
      for (int iter = 0; iter < nodes && updated; ++iter) {
        updated = false;
        for (int u = 0; u < nodes; ++u) {
          if (!std::isfinite(dist[u])) continue;
          for (int e = 0; e < static_cast<int>(graph_[u].size()); ++e) {
            const Edge& edge = graph_[u][e];
            if (edge.cap <= 0) continue;
            const real nd = dist[u] + edge.cost;
            // Strict improvement with slack guards against rounding cycles.
            if (nd < dist[edge.to] - 1e-15 * (1.0 + std::abs(nd))) {
              dist[edge.to] = nd;
              prev_node[edge.to] = u;
              prev_edge[edge.to] = e;
              updated = true;
            }
          }
        }
      }
      if (!std::isfinite(dist[sink])) throw Error("transport LP infeasible");
      long long push = flow;
      for (int v = sink; v != source; v = prev_node[v]) {
        push = std::min(push, graph_[prev_node[v]][prev_edge[v]].cap);
      }
      for (int v = sink; v != source; v = prev_node[v]) {
        Edge& edge = graph_[prev_node[v]][prev_edge[v]];
        edge.cap -= push;
        graph_[v][edge.rev].cap += push;
        total += static_cast<real>(push) * edge.cost;
      }
      flow -= push;
    }
    return total;
  }

 private:
  std::vector<std::vector<Edge>> graph_;
};

}  // namespace

real ot_lp_oracle(std::span<const real> x, std::span<const real> y) {
  if (x.empty() || y.empty()) throw InputError("ot_lp_oracle: empty distribution");
  if (x.size() > kOtOracleMaxPoints || y.size() > kOtOracleMaxPoints) {
    throw RefusalError("ot_lp_oracle: instance too large (max " +
                       std::to_string(kOtOracleMaxPoints) + " points per side)");
  }
  for (real v : x)
    if (!std::isfinite(v)) throw InputError("ot_lp_oracle: non-finite value");
  for (real v : y)
    if (!std::isfinite(v)) throw InputError("ot_lp_oracle: non-finite value");

  const int n = static_cast<int>(x.size());
  const int m = static_cast<int>(y.size());
  // Each x point supplies m units, each y point demands n units: uniform
  // masses 1/n and 1/m scaled by n*m.
  const int source = n + m;
  const int sink = n + m + 1;
  MinCostFlow flow(n + m + 2);
  for (int i = 0; i < n; ++i) flow.add_edge(source, i, m, 0.0);
  for (int j = 0; j < m; ++j) flow.add_edge(n + j, sink, n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) flow.add_edge(i, n + j, static_cast<long long>(n) * m, std::abs(x[i] - y[j]));
  const real cost = flow.solve(source, sink, static_cast<long long>(n) * m);
  return cost / (static_cast<real>(n) * m);
}

}  // namespace dynkd

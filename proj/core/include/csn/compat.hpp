#pragma once

#include <array>
#include <cmath>
#include <map>
#include <string>

#include "csn/backbone.hpp"

namespace csn {

// Handles for the shape-compatibility network: its own EdgeConv trunk, the
// pointwise widening linear, and the descriptor query/key maps.
struct CompatRef {
  std::array<EdgeConvRef, 4> trunk;
  NodeId point_weight = -1;  // 512 x 1024 by default
  NodeId point_bias = -1;
  NodeId Vq = -1;  // D' x D'
  NodeId Vk = -1;
};

// g_m = [max_i(y_i); mean_i(y_i)] after the trunk concat and pointwise
// linear; width 2 * point width (2048 with defaults).
template <typename T>
NodeId global_descriptor(GraphT<T>& g, NodeId positions, const Tensor& raw_positions, const CompatRef& p,
                         TrunkWiring wiring = TrunkWiring::sequential) {
  const TrunkNodes trunk = dgcnn_trunk(g, positions, raw_positions, p.trunk, wiring);
  const std::int64_t n = g.value(trunk.concat).rows();
  const NodeId widened = g.add(g.matmul(trunk.concat, p.point_weight), g.broadcast_rows(p.point_bias, n));
  const NodeId mx = g.reduce_max(widened, 0);
  const NodeId mean = g.reduce_mean(widened, 0);
  return g.concat_cols({mx, mean});
}

// s(m,n) = (V_q g_m) . (V_k g_n) / sqrt(D'); query/key roles make it
// asymmetric in general.
template <typename T>
NodeId pairwise_score(GraphT<T>& g, NodeId g_m, NodeId g_n, NodeId vq, NodeId vk) {
  const auto& gm = g.value(g_m);
  const auto& gn = g.value(g_n);
  if (gm.shape != gn.shape || gm.rows() != 1) {
    throw std::invalid_argument("pairwise_score: descriptors must be 1xD' with equal widths");
  }
  const NodeId q = g.matmul(g_m, vq, false, true);
  const NodeId k = g.matmul(g_n, vk, false, true);
  return g.scale(g.matmul(q, k, false, true), static_cast<T>(1.0 / std::sqrt(static_cast<double>(gm.cols()))));
}

// Softmax over a score set that always contains the self score.
inline std::map<std::string, double> normalize_compatibilities(const std::map<std::string, double>& scores) {
  if (scores.empty()) throw std::invalid_argument("normalize_compatibilities: empty score set");
  double mx = scores.begin()->second;
  for (const auto& [k, v] : scores) mx = std::max(mx, v);
  double sum = 0;
  std::map<std::string, double> out;
  for (const auto& [k, v] : scores) {
    const double e = std::exp(v - mx);
    out[k] = e;
    sum += e;
  }
  for (auto& [k, v] : out) v /= sum;
  return out;
}

}  // namespace csn

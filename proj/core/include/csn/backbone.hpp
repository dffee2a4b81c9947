#pragma once

#include <array>
#include <optional>

#include "csn/autodiff.hpp"
#include "csn/geometry.hpp"

namespace csn {

// Node handles for one EdgeConv layer: weight (2*D_in x D_out) plus group
// norm scale/shift of width D_out.
struct EdgeConvRef {
  NodeId weight = -1;
  NodeId gn_scale = -1;
  NodeId gn_shift = -1;
  int edge_k = 20;
  int groups = 8;
};

// Table wiring alternatives for the fourth EdgeConv: consume the previous
// layer's output (sequential) or branch off the second layer's output.
enum class TrunkWiring { sequential, table_literal };

inline constexpr double kLeakySlope = 0.2;

// Edge features [x_i ; x_j - x_i] over the k nearest rows of `knn_source`
// (defaults to the layer input), then linear map, leaky rectifier, group
// norm, and max over each point's neighbors.
template <typename T>
NodeId edge_conv(GraphT<T>& g, NodeId features, const EdgeConvRef& p,
                 const Tensor* knn_source = nullptr) {
  const auto& xv = g.value(features);
  const std::int64_t n = xv.rows();
  const int k = p.edge_k;
  if (k >= n) throw std::invalid_argument("edge_conv: edge_k must be below the point count");

  Tensor source;
  if (knn_source == nullptr) {
    if constexpr (std::is_same_v<T, float>) {
      source = xv;
    } else {
      source = xv.template cast<float>();
    }
    knn_source = &source;
  }
  const IndexMatrix idx = knn_indices(*knn_source, k, /*exclude_self=*/true);

  std::vector<std::int64_t> nb(static_cast<std::size_t>(n * k));
  std::vector<std::int64_t> self(static_cast<std::size_t>(n * k));
  for (std::int64_t i = 0; i < n; ++i) {
    for (int j = 0; j < k; ++j) {
      nb[static_cast<std::size_t>(i * k + j)] = idx.at(i, j);
      self[static_cast<std::size_t>(i * k + j)] = i;
    }
  }
  const NodeId xi = g.gather_rows(features, std::move(self));
  const NodeId xj = g.gather_rows(features, std::move(nb));
  const NodeId edge = g.concat_cols({xi, g.sub(xj, xi)});
  const NodeId lin = g.matmul(edge, p.weight);
  const NodeId act = g.leaky_relu(lin, static_cast<T>(kLeakySlope));
  const NodeId norm = g.group_norm(act, p.gn_scale, p.gn_shift, p.groups);
  const std::int64_t d_out = g.value(norm).cols();
  return g.reduce_max(g.reshape(norm, {n, k, d_out}), 1);
}

struct TrunkNodes {
  std::array<NodeId, 4> per_layer{-1, -1, -1, -1};
  NodeId concat = -1;
};

// Four stacked EdgeConv layers plus the width-wise concatenation of all four
// outputs. The first layer's kNN graph is built on raw positions; later
// layers rebuild it on their input features unless dynamic_graph is off.
template <typename T>
TrunkNodes dgcnn_trunk(GraphT<T>& g, NodeId positions, const Tensor& raw_positions,
                       const std::array<EdgeConvRef, 4>& layers,
                       TrunkWiring wiring = TrunkWiring::sequential, bool dynamic_graph = true) {
  TrunkNodes out;
  NodeId inputs[4];
  inputs[0] = positions;
  for (int l = 0; l < 4; ++l) {
    if (l > 0) {
      inputs[l] = (l == 3 && wiring == TrunkWiring::table_literal) ? out.per_layer[1] : out.per_layer[static_cast<std::size_t>(l - 1)];
    }
    const Tensor* src = (l == 0 || !dynamic_graph) ? &raw_positions : nullptr;
    out.per_layer[static_cast<std::size_t>(l)] = edge_conv(g, inputs[l], layers[static_cast<std::size_t>(l)], src);
  }
  out.concat = g.concat_cols({out.per_layer[0], out.per_layer[1], out.per_layer[2], out.per_layer[3]});
  return out;
}

}  // namespace csn

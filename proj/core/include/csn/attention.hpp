#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "csn/autodiff.hpp"
#include "csn/geometry.hpp"

namespace csn {

// Query/key/value projections for one attention layer; all D x D.
struct CsaParamRef {
  NodeId Wq = -1;
  NodeId Wk = -1;
  NodeId Wv = -1;
};

struct KeySubsample {
  std::int64_t count = 0;
  std::uint64_t seed = 0;
};

// Row-wise linear map q_i = W x_i, the same W for every point.
template <typename T>
NodeId project(GraphT<T>& g, NodeId features, NodeId w) {
  const auto& xv = g.value(features);
  const auto& wv = g.value(w);
  if (wv.rank() != 2 || wv.rows() != wv.cols() || wv.cols() != xv.cols()) {
    throw std::invalid_argument("project: weight must be DxD matching feature width, got " + shape_str(wv.shape) +
                                " for features " + shape_str(xv.shape));
  }
  return g.matmul(features, w, false, true);
}

// softmax_rows(Q K^T / sqrt(D)); not symmetric in general.
template <typename T>
NodeId attention_matrix(GraphT<T>& g, NodeId queries, NodeId keys) {
  const auto& qv = g.value(queries);
  const auto& kv = g.value(keys);
  if (qv.cols() != kv.cols()) {
    throw std::invalid_argument("attention_matrix: width mismatch " + shape_str(qv.shape) + " vs " +
                                shape_str(kv.shape));
  }
  const NodeId logits = g.scale(g.matmul(queries, keys, false, true),
                                static_cast<T>(1.0 / std::sqrt(static_cast<double>(qv.cols()))));
  return g.softmax_rows(logits);
}

// x'_{m,i} = sum_j A[i,j] W_v x_{n,j}; columns skipped by subsampling simply
// do not appear in X_n here.
template <typename T>
NodeId cross_shape_convolve(GraphT<T>& g, NodeId attention, NodeId key_features, NodeId wv) {
  const auto& av = g.value(attention);
  const auto& xv = g.value(key_features);
  if (av.cols() != xv.rows()) {
    throw std::invalid_argument("cross_shape_convolve: attention columns " + shape_str(av.shape) +
                                " do not match key rows " + shape_str(xv.shape));
  }
  return g.matmul(attention, g.matmul(key_features, wv, false, true));
}

struct CsaLayerOut {
  NodeId features = -1;   // P_m x D
  NodeId attention = -1;  // P_m x P_n' (row-stochastic)
  std::vector<std::int64_t> key_index;  // kept keys when subsampled, else empty
};

// One Cross-Shape Attention layer: project -> attention -> convolve. With
// key_features == query_features and the SSA parameter set this is
// Self-Shape Attention. Subsampling keeps a uniform key subset and takes the
// softmax over kept keys only.
template <typename T>
CsaLayerOut csa_layer(GraphT<T>& g, NodeId query_features, NodeId key_features, const CsaParamRef& p,
                      std::optional<KeySubsample> sub = std::nullopt) {
  CsaLayerOut out;
  NodeId keys_in = key_features;
  if (sub.has_value()) {
    const std::int64_t pn = g.value(key_features).rows();
    if (sub->count < pn) {
      out.key_index = subsample_indices(pn, sub->count, sub->seed);
      keys_in = g.gather_rows(key_features, out.key_index);
    }
  }
  const NodeId q = project(g, query_features, p.Wq);
  const NodeId k = project(g, keys_in, p.Wk);
  out.attention = attention_matrix(g, q, k);
  out.features = cross_shape_convolve(g, out.attention, keys_in, p.Wv);
  return out;
}

// Eq-style weighted combination: c_self * X'_self + sum_n c_n * X'_n.
// Weights are scalar nodes so compatibility gradients can flow through them.
template <typename T>
NodeId multi_shape_aggregate(GraphT<T>& g, NodeId self_features, std::span<const NodeId> neighbor_features,
                             NodeId self_weight, std::span<const NodeId> neighbor_weights) {
  if (neighbor_features.size() != neighbor_weights.size()) {
    throw std::invalid_argument("multi_shape_aggregate: neighbor/weight count mismatch");
  }
  double sum = g.value(self_weight).data[0];
  for (NodeId w : neighbor_weights) sum += g.value(w).data[0];
  if (std::abs(sum - 1.0) > 1e-6) {
    throw std::invalid_argument("multi_shape_aggregate: weights sum to " + std::to_string(sum));
  }
  const auto& sv = g.value(self_features);
  for (NodeId f : neighbor_features) {
    if (g.value(f).shape != sv.shape) {
      throw std::invalid_argument("multi_shape_aggregate: feature shape mismatch");
    }
  }
  NodeId acc = g.mul_scalar_node(self_features, self_weight);
  for (std::size_t i = 0; i < neighbor_features.size(); ++i) {
    acc = g.add(acc, g.mul_scalar_node(neighbor_features[i], neighbor_weights[i]));
  }
  return acc;
}

}  // namespace csn

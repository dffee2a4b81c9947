#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "csn/attention.hpp"
#include "csn/backbone.hpp"
#include "csn/compat.hpp"
#include "csn/params.hpp"

namespace csn {

using NodeMap = std::map<std::string, NodeId>;

struct ModelConfig {
  std::array<int, 4> widths{64, 64, 128, 256};
  std::array<int, 4> head_widths{1024, 512, 256, 128};
  std::array<int, 4> compat_widths{64, 128, 128, 256};
  int compat_point_width = 1024;  // descriptor width is twice this
  int classes = 4;
  int edge_k = 20;
  int groups = 8;
  double dropout = 0.5;
  TrunkWiring wiring = TrunkWiring::sequential;
  bool dynamic_graph = true;
  std::int64_t key_subsample = 0;  // 0 disables key subsampling

  int trunk_in_width(int layer) const;         // layer in [0,4)
  int compat_trunk_in_width(int layer) const;
  int head_in_width() const;
  int descriptor_width() const { return 2 * compat_point_width; }
};

// Creates every learnable array under the naming scheme
// backbone.<l>.{weight,gn_scale,gn_shift}, {csa,ssa}.<l>.{Wq,Wk,Wv},
// head.<i>.{weight,bias}, compat.trunk.<l>.*, compat.point.*, compat.{Vq,Vk}.
void init_model_params(ParameterStore& ps, const ModelConfig& cfg, Rng& rng);

inline bool is_compat_param(const std::string& name) { return name.rfind("compat.", 0) == 0; }

std::array<EdgeConvRef, 4> backbone_refs(const NodeMap& pm, const ModelConfig& cfg, int edge_k);
CsaParamRef attention_ref(const NodeMap& pm, const std::string& module, int layer);
CompatRef compat_ref(const NodeMap& pm, const ModelConfig& cfg);

struct ForwardOptions {
  bool training = false;
  std::uint64_t seed = 0;
  int edge_k_query = 0;  // receptive-field adjustment for the query; 0 keeps cfg.edge_k
  bool retain_attention = false;
};

struct ForwardNodes {
  NodeId probs = -1;
  std::array<NodeId, 4> ssa_attention{-1, -1, -1, -1};
  std::vector<std::array<NodeId, 4>> csa_attention;  // one entry per neighbor
  std::array<std::vector<std::int64_t>, 4> ssa_key_index;
  std::vector<std::array<std::vector<std::int64_t>, 4>> csa_key_index;
};

// Full CrossShapeNet pass for one query shape: trunk on query and neighbors,
// per-layer SSA and CSA, compatibility-weighted mixing of the concatenated
// attention blocks, trunk/attention concat, MLP head, row softmax.
// `weights` holds graph-scalar nodes ordered [self, neighbor_0, ...].
template <typename T>
ForwardNodes crossshapenet_forward(GraphT<T>& g, const NodeMap& pm, const ModelConfig& cfg,
                                   const LabeledPointCloud& query,
                                   std::span<const LabeledPointCloud* const> neighbors,
                                   std::span<const NodeId> weights, const ForwardOptions& opt) {
  if (weights.size() != neighbors.size() + 1) {
    throw std::invalid_argument("forward: need one weight per neighbor plus self");
  }
  const int edge_k_query = opt.edge_k_query > 0 ? opt.edge_k_query : cfg.edge_k;

  auto as_leaf = [&](const Tensor& t) {
    if constexpr (std::is_same_v<T, float>) return g.leaf(t);
    else return g.leaf(t.template cast<T>());
  };

  const NodeId qpos = as_leaf(query.positions);
  const TrunkNodes qtrunk = dgcnn_trunk(g, qpos, query.positions, backbone_refs(pm, cfg, edge_k_query),
                                        cfg.wiring, cfg.dynamic_graph);
  std::vector<TrunkNodes> ntrunks;
  ntrunks.reserve(neighbors.size());
  for (const LabeledPointCloud* nb : neighbors) {
    const NodeId npos = as_leaf(nb->positions);
    ntrunks.push_back(dgcnn_trunk(g, npos, nb->positions, backbone_refs(pm, cfg, cfg.edge_k), cfg.wiring,
                                  cfg.dynamic_graph));
  }

  auto subsample_for = [&](std::size_t source, int layer, std::int64_t pn) -> std::optional<KeySubsample> {
    if (cfg.key_subsample <= 0 || cfg.key_subsample >= pn) return std::nullopt;
    return KeySubsample{cfg.key_subsample, mix_seed(opt.seed, 0xabba00 + source * 16 + static_cast<std::uint64_t>(layer))};
  };

  ForwardNodes out;
  std::array<NodeId, 4> ssa_feats;
  for (int l = 0; l < 4; ++l) {
    const NodeId ql = qtrunk.per_layer[static_cast<std::size_t>(l)];
    auto r = csa_layer(g, ql, ql, attention_ref(pm, "ssa", l + 1), subsample_for(0, l, g.value(ql).rows()));
    ssa_feats[static_cast<std::size_t>(l)] = r.features;
    out.ssa_attention[static_cast<std::size_t>(l)] = r.attention;
    out.ssa_key_index[static_cast<std::size_t>(l)] = std::move(r.key_index);
  }
  const NodeId ssa_block = g.concat_cols({ssa_feats[0], ssa_feats[1], ssa_feats[2], ssa_feats[3]});

  std::vector<NodeId> csa_blocks;
  out.csa_attention.resize(neighbors.size());
  out.csa_key_index.resize(neighbors.size());
  for (std::size_t n = 0; n < neighbors.size(); ++n) {
    std::array<NodeId, 4> feats;
    for (int l = 0; l < 4; ++l) {
      const NodeId ql = qtrunk.per_layer[static_cast<std::size_t>(l)];
      const NodeId nl = ntrunks[n].per_layer[static_cast<std::size_t>(l)];
      auto r = csa_layer(g, ql, nl, attention_ref(pm, "csa", l + 1), subsample_for(n + 1, l, g.value(nl).rows()));
      feats[static_cast<std::size_t>(l)] = r.features;
      out.csa_attention[n][static_cast<std::size_t>(l)] = r.attention;
      out.csa_key_index[n][static_cast<std::size_t>(l)] = std::move(r.key_index);
    }
    csa_blocks.push_back(g.concat_cols({feats[0], feats[1], feats[2], feats[3]}));
  }

  const NodeId mixed = multi_shape_aggregate(g, ssa_block, std::span<const NodeId>(csa_blocks), weights[0],
                                             weights.subspan(1));
  NodeId h = g.concat_cols({qtrunk.concat, mixed});

  Rng drop_rng(mix_seed(opt.seed, 0xd120));
  const std::int64_t n_points = query.positions.rows();
  for (int i = 1; i <= 5; ++i) {
    const std::string base = "head." + std::to_string(i) + ".";
    h = g.add(g.matmul(h, pm.at(base + "weight")), g.broadcast_rows(pm.at(base + "bias"), n_points));
    if (i <= 4) h = g.relu(h);
    if (i >= 2 && i <= 4) h = g.dropout(h, cfg.dropout, drop_rng, opt.training);
  }
  out.probs = g.softmax_rows(h);
  return out;
}

struct LayerAttention {
  int layer = 0;               // 1-based
  int source = -1;             // -1 = self, else neighbor position
  Tensor values;               // P_m x P_n'
  std::vector<std::int64_t> key_index;
};

struct ForwardResult {
  Tensor probs;
  std::vector<LayerAttention> attention;  // populated when retain_attention set
};

// Value-level forward with constant compatibility weights ([self, ...]).
ForwardResult forward_eval(const ParameterStore& ps, const ModelConfig& cfg, const LabeledPointCloud& query,
                           const std::vector<const LabeledPointCloud*>& neighbors,
                           const std::vector<float>& weights, const ForwardOptions& opt);

// Column sums of the layer-l (1-based) query/neighbor attention matrix
// restricted to the query rows in `region`; length P_n.
std::vector<float> export_attention(const ParameterStore& ps, const ModelConfig& cfg,
                                    const LabeledPointCloud& query, const LabeledPointCloud& neighbor, int layer,
                                    const std::vector<std::int64_t>& region);

std::vector<int> argmax_rows(const Tensor& probs);

}  // namespace csn

#include "csn/model.hpp"

#include <stdexcept>

namespace csn {

int ModelConfig::trunk_in_width(int layer) const {
  if (layer == 0) return 3;
  if (layer == 3 && wiring == TrunkWiring::table_literal) return widths[1];
  return widths[static_cast<std::size_t>(layer - 1)];
}

int ModelConfig::compat_trunk_in_width(int layer) const {
  if (layer == 0) return 3;
  if (layer == 3 && wiring == TrunkWiring::table_literal) return compat_widths[1];
  return compat_widths[static_cast<std::size_t>(layer - 1)];
}

int ModelConfig::head_in_width() const {
  int sum = 0;
  for (int w : widths) sum += w;
  return 2 * sum;  // trunk concat plus the mixed attention block
}

void init_model_params(ParameterStore& ps, const ModelConfig& cfg, Rng& rng) {
  for (int w : cfg.widths) {
    if (w <= 0 || w % cfg.groups != 0) {
      throw std::invalid_argument("model: trunk width " + std::to_string(w) + " not divisible by " +
                                  std::to_string(cfg.groups) + " groups");
    }
  }
  for (int w : cfg.compat_widths) {
    if (w <= 0 || w % cfg.groups != 0) {
      throw std::invalid_argument("model: compat width " + std::to_string(w) + " not divisible by groups");
    }
  }

  auto edge_conv_params = [&](const std::string& base, int in_w, int out_w) {
    ps.add(base + "weight", uniform_fan_in({2 * in_w, out_w}, 2 * in_w, rng));
    ps.add(base + "gn_scale", Tensor::full({out_w}, 1.0f));
    ps.add(base + "gn_shift", Tensor::zeros({out_w}));
  };

  for (int l = 0; l < 4; ++l) {
    edge_conv_params("backbone." + std::to_string(l + 1) + ".", cfg.trunk_in_width(l),
                     cfg.widths[static_cast<std::size_t>(l)]);
  }
  for (const char* module : {"csa", "ssa"}) {
    for (int l = 0; l < 4; ++l) {
      const int d = cfg.widths[static_cast<std::size_t>(l)];
      const std::string base = std::string(module) + "." + std::to_string(l + 1) + ".";
      for (const char* role : {"Wq", "Wk", "Wv"}) {
        ps.add(base + role, uniform_fan_in({d, d}, d, rng));
      }
    }
  }
  int in_w = cfg.head_in_width();
  for (int i = 1; i <= 5; ++i) {
    const int out_w = i <= 4 ? cfg.head_widths[static_cast<std::size_t>(i - 1)] : cfg.classes;
    const std::string base = "head." + std::to_string(i) + ".";
    ps.add(base + "weight", uniform_fan_in({in_w, out_w}, in_w, rng));
    ps.add(base + "bias", Tensor::zeros({out_w}));
    in_w = out_w;
  }
  for (int l = 0; l < 4; ++l) {
    edge_conv_params("compat.trunk." + std::to_string(l + 1) + ".", cfg.compat_trunk_in_width(l),
                     cfg.compat_widths[static_cast<std::size_t>(l)]);
  }
  int concat_w = 0;
  for (int w : cfg.compat_widths) concat_w += w;
  ps.add("compat.point.weight", uniform_fan_in({concat_w, cfg.compat_point_width}, concat_w, rng));
  ps.add("compat.point.bias", Tensor::zeros({cfg.compat_point_width}));
  const int dw = cfg.descriptor_width();
  ps.add("compat.Vq", uniform_fan_in({dw, dw}, dw, rng));
  ps.add("compat.Vk", uniform_fan_in({dw, dw}, dw, rng));
}

std::array<EdgeConvRef, 4> backbone_refs(const NodeMap& pm, const ModelConfig& cfg, int edge_k) {
  std::array<EdgeConvRef, 4> out;
  for (int l = 0; l < 4; ++l) {
    const std::string base = "backbone." + std::to_string(l + 1) + ".";
    out[static_cast<std::size_t>(l)] = {pm.at(base + "weight"), pm.at(base + "gn_scale"), pm.at(base + "gn_shift"),
                                        edge_k, cfg.groups};
  }
  return out;
}

CsaParamRef attention_ref(const NodeMap& pm, const std::string& module, int layer) {
  const std::string base = module + "." + std::to_string(layer) + ".";
  return {pm.at(base + "Wq"), pm.at(base + "Wk"), pm.at(base + "Wv")};
}

CompatRef compat_ref(const NodeMap& pm, const ModelConfig& cfg) {
  CompatRef out;
  for (int l = 0; l < 4; ++l) {
    const std::string base = "compat.trunk." + std::to_string(l + 1) + ".";
    out.trunk[static_cast<std::size_t>(l)] = {pm.at(base + "weight"), pm.at(base + "gn_scale"),
                                              pm.at(base + "gn_shift"), cfg.edge_k, cfg.groups};
  }
  out.point_weight = pm.at("compat.point.weight");
  out.point_bias = pm.at("compat.point.bias");
  out.Vq = pm.at("compat.Vq");
  out.Vk = pm.at("compat.Vk");
  return out;
}

ForwardResult forward_eval(const ParameterStore& ps, const ModelConfig& cfg, const LabeledPointCloud& query,
                           const std::vector<const LabeledPointCloud*>& neighbors,
                           const std::vector<float>& weights, const ForwardOptions& opt) {
  Graph g;
  const NodeMap pm = ps.make_leaves(g, [](const std::string&) { return false; });
  std::vector<NodeId> weight_nodes;
  weight_nodes.reserve(weights.size());
  for (float w : weights) weight_nodes.push_back(g.leaf(Tensor::scalar(w)));
  const ForwardNodes nodes = crossshapenet_forward<float>(
      g, pm, cfg, query, std::span<const LabeledPointCloud* const>(neighbors.data(), neighbors.size()),
      weight_nodes, opt);
  ForwardResult out;
  out.probs = g.value(nodes.probs);
  if (opt.retain_attention) {
    for (int l = 0; l < 4; ++l) {
      out.attention.push_back({l + 1, -1, g.value(nodes.ssa_attention[static_cast<std::size_t>(l)]),
                               nodes.ssa_key_index[static_cast<std::size_t>(l)]});
    }
    for (std::size_t n = 0; n < nodes.csa_attention.size(); ++n) {
      for (int l = 0; l < 4; ++l) {
        out.attention.push_back({l + 1, static_cast<int>(n), g.value(nodes.csa_attention[n][static_cast<std::size_t>(l)]),
                                 nodes.csa_key_index[n][static_cast<std::size_t>(l)]});
      }
    }
  }
  return out;
}

std::vector<float> export_attention(const ParameterStore& ps, const ModelConfig& cfg,
                                    const LabeledPointCloud& query, const LabeledPointCloud& neighbor, int layer,
                                    const std::vector<std::int64_t>& region) {
  if (layer < 1 || layer > 4) throw std::invalid_argument("export_attention: layer must be in 1..4");
  if (region.empty()) throw std::invalid_argument("export_attention: empty region");
  for (std::int64_t i : region) {
    if (i < 0 || i >= query.size()) throw std::invalid_argument("export_attention: region index out of range");
  }
  Graph g;
  const NodeMap pm = ps.make_leaves(g, [](const std::string&) { return false; });
  const NodeId qpos = g.leaf(query.positions);
  const NodeId npos = g.leaf(neighbor.positions);
  const auto qtrunk = dgcnn_trunk(g, qpos, query.positions, backbone_refs(pm, cfg, cfg.edge_k), cfg.wiring,
                                  cfg.dynamic_graph);
  const auto ntrunk = dgcnn_trunk(g, npos, neighbor.positions, backbone_refs(pm, cfg, cfg.edge_k), cfg.wiring,
                                  cfg.dynamic_graph);
  const auto r = csa_layer(g, qtrunk.per_layer[static_cast<std::size_t>(layer - 1)],
                           ntrunk.per_layer[static_cast<std::size_t>(layer - 1)], attention_ref(pm, "csa", layer));
  const Tensor& a = g.value(r.attention);
  std::vector<float> totals(static_cast<std::size_t>(a.cols()), 0.0f);
  for (std::int64_t i : region) {
    for (std::int64_t j = 0; j < a.cols(); ++j) totals[static_cast<std::size_t>(j)] += a.at(i, j);
  }
  return totals;
}

std::vector<int> argmax_rows(const Tensor& probs) {
  std::vector<int> out(static_cast<std::size_t>(probs.rows()));
  for (std::int64_t i = 0; i < probs.rows(); ++i) {
    int best = 0;
    for (std::int64_t j = 1; j < probs.cols(); ++j) {
      if (probs.at(i, j) > probs.at(i, best)) best = static_cast<int>(j);
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

}  // namespace csn

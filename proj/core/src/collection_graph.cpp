#include "csn/collection_graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace csn {

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  throw std::logic_error("split_name: bad enum");
}

Split split_from_name(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

std::size_t ShapeCollection::add(LabeledPointCloud cloud, Split split) {
  if (index_.count(cloud.shape_id)) throw std::invalid_argument("collection: duplicate id '" + cloud.shape_id + "'");
  const std::size_t idx = shapes.size();
  index_.emplace(cloud.shape_id, idx);
  shapes.push_back(std::move(cloud));
  splits.push_back(split);
  return idx;
}

std::size_t ShapeCollection::index_of(const std::string& shape_id) const {
  auto it = index_.find(shape_id);
  if (it == index_.end()) throw std::invalid_argument("collection: unknown id '" + shape_id + "'");
  return it->second;
}

std::vector<std::size_t> ShapeCollection::split_indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == split) out.push_back(i);
  }
  return out;
}

std::size_t CollectionGraph::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].id == id) return i;
  }
  throw std::invalid_argument("graph: unknown node '" + id + "'");
}

const GraphNode& CollectionGraph::node(const std::string& id) const { return nodes[index_of(id)]; }

float CollectionGraph::self_weight(const std::string& id) const {
  const GraphNode& n = node(id);
  double sum = 0;
  for (const auto& e : n.edges) sum += e.weight;
  return static_cast<float>(1.0 - sum);
}

namespace {

struct Scored {
  double key;         // distance (ascending) or negated score
  std::size_t index;  // collection index, tie-break ascending
  bool operator<(const Scored& o) const { return key < o.key || (key == o.key && index < o.index); }
};

double l2_distance(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) throw std::invalid_argument("init descriptors must share one shape");
  double acc = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    acc += d * d;
  }
  return acc;
}

}  // namespace

CollectionGraph init_graph(const ShapeCollection& collection, int graph_k,
                           const std::vector<Tensor>& init_descriptors) {
  if (init_descriptors.size() != collection.shapes.size()) {
    throw std::invalid_argument("init_graph: one descriptor per shape required");
  }
  const auto train = collection.split_indices(Split::train);
  if (graph_k <= 0 || static_cast<std::size_t>(graph_k) >= train.size()) {
    throw std::invalid_argument("init_graph: graph_k=" + std::to_string(graph_k) + " needs more than " +
                                std::to_string(graph_k) + " train shapes");
  }
  CollectionGraph graph;
  graph.graph_k = graph_k;
  const float uniform = 1.0f / static_cast<float>(graph_k + 1);
  for (std::size_t i = 0; i < collection.shapes.size(); ++i) {
    if (collection.splits[i] == Split::test) continue;  // test nodes arrive via attach
    GraphNode node;
    node.id = collection.shapes[i].shape_id;
    node.split = collection.splits[i];
    std::vector<Scored> cands;
    for (std::size_t t : train) {
      if (t == i) continue;
      cands.push_back({l2_distance(init_descriptors[i], init_descriptors[t]), t});
    }
    std::partial_sort(cands.begin(), cands.begin() + graph_k, cands.end());
    for (int j = 0; j < graph_k; ++j) {
      node.edges.push_back({collection.shapes[cands[static_cast<std::size_t>(j)].index].shape_id, uniform});
    }
    graph.nodes.push_back(std::move(node));
  }
  return graph;
}

Tensor compat_descriptor(const ParameterStore& ps, const ModelConfig& cfg, const LabeledPointCloud& cloud) {
  Graph g;
  const NodeMap pm = ps.make_leaves(g, [](const std::string&) { return false; });
  return g.value(global_descriptor(g, g.leaf(cloud.positions), cloud.positions, compat_ref(pm, cfg), cfg.wiring));
}

const Tensor& DescriptorCache::get_or_compute(const std::string& shape_id, std::uint64_t version,
                                              const LabeledPointCloud& cloud, const ParameterStore& ps,
                                              const ModelConfig& cfg) {
  if (version != version_) {
    store_.clear();
    version_ = version;
  }
  auto it = store_.find(shape_id);
  if (it == store_.end()) {
    it = store_.emplace(shape_id, compat_descriptor(ps, cfg, cloud)).first;
  }
  return it->second;
}

float compat_score(const Tensor& g_m, const Tensor& g_n, const Tensor& vq, const Tensor& vk) {
  const Tensor qm = t_matmul(g_m, vq, false, true);
  const Tensor kn = t_matmul(g_n, vk, false, true);
  double acc = 0;
  for (std::size_t i = 0; i < qm.data.size(); ++i) acc += static_cast<double>(qm.data[i]) * static_cast<double>(kn.data[i]);
  return static_cast<float>(acc / std::sqrt(static_cast<double>(g_m.cols())));
}

namespace {

// Shared rewiring: picks graph_k train neighbors by descending score and
// fills Eq.-7 weights over {neighbors, self}.
void rewire_node(GraphNode& node, std::size_t self_index, const ShapeCollection& collection,
                 const std::vector<std::size_t>& train, const std::map<std::string, Tensor>& descriptors,
                 const Tensor& vq, const Tensor& vk, int graph_k) {
  const Tensor& gm = descriptors.at(node.id);
  std::vector<Scored> cands;
  for (std::size_t t : train) {
    if (t == self_index) continue;
    const double s = compat_score(gm, descriptors.at(collection.shapes[t].shape_id), vq, vk);
    cands.push_back({-s, t});
  }
  if (static_cast<std::size_t>(graph_k) > cands.size()) {
    throw std::invalid_argument("graph: not enough train candidates for node " + node.id);
  }
  std::partial_sort(cands.begin(), cands.begin() + graph_k, cands.end());
  std::map<std::string, double> scores;
  scores[node.id] = compat_score(gm, gm, vq, vk);
  node.edges.clear();
  for (int j = 0; j < graph_k; ++j) {
    const std::string& nid = collection.shapes[cands[static_cast<std::size_t>(j)].index].shape_id;
    node.edges.push_back({nid, 0.0f});
    scores[nid] = -cands[static_cast<std::size_t>(j)].key;
  }
  const auto weights = normalize_compatibilities(scores);
  for (auto& e : node.edges) e.weight = static_cast<float>(weights.at(e.neighbor));
}

std::map<std::string, Tensor> descriptors_for(const CollectionGraph& graph, const ShapeCollection& collection,
                                              const ParameterStore& ps, const ModelConfig& cfg,
                                              DescriptorCache* cache, const std::vector<std::size_t>& extra) {
  std::map<std::string, Tensor> out;
  auto compute = [&](const std::string& id, const LabeledPointCloud& cloud) {
    if (out.count(id)) return;
    if (cache != nullptr) {
      out.emplace(id, cache->get_or_compute(id, graph.parameter_version, cloud, ps, cfg));
    } else {
      out.emplace(id, compat_descriptor(ps, cfg, cloud));
    }
  };
  for (const auto& node : graph.nodes) compute(node.id, collection.shapes[collection.index_of(node.id)]);
  for (std::size_t i : extra) compute(collection.shapes[i].shape_id, collection.shapes[i]);
  return out;
}

}  // namespace

void update_graph(CollectionGraph& graph, const ShapeCollection& collection, const ParameterStore& ps,
                  const ModelConfig& cfg, DescriptorCache* cache) {
  graph.parameter_version += 1;
  const auto train = collection.split_indices(Split::train);
  const auto descriptors = descriptors_for(graph, collection, ps, cfg, cache, {});
  const Tensor& vq = ps.at("compat.Vq").value;
  const Tensor& vk = ps.at("compat.Vk").value;
  // Rewire into a scratch copy so a throw cannot leave a half-updated graph.
  std::vector<GraphNode> next = graph.nodes;
  for (auto& node : next) {
    rewire_node(node, collection.index_of(node.id), collection, train, descriptors, vq, vk, graph.graph_k);
  }
  graph.nodes = std::move(next);
}

void attach_test_shapes(CollectionGraph& graph, const ShapeCollection& collection,
                        const std::vector<std::size_t>& test_indices, const ParameterStore& ps,
                        const ModelConfig& cfg, DescriptorCache* cache) {
  const auto train = collection.split_indices(Split::train);
  if (train.empty()) throw std::invalid_argument("attach: no train nodes");
  const auto descriptors = descriptors_for(graph, collection, ps, cfg, cache, test_indices);
  const Tensor& vq = ps.at("compat.Vq").value;
  const Tensor& vk = ps.at("compat.Vk").value;
  std::vector<GraphNode> added;
  for (std::size_t i : test_indices) {
    GraphNode node;
    node.id = collection.shapes[i].shape_id;
    node.split = Split::test;
    rewire_node(node, i, collection, train, descriptors, vq, vk, graph.graph_k);
    added.push_back(std::move(node));
  }
  for (auto& n : added) graph.nodes.push_back(std::move(n));
}

std::vector<float> forward_weights(const CollectionGraph& graph, const std::string& id) {
  const GraphNode& n = graph.node(id);
  std::vector<float> out;
  out.push_back(graph.self_weight(id));
  for (const auto& e : n.edges) out.push_back(e.weight);
  return out;
}

}  // namespace csn

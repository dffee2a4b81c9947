#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "csn/model.hpp"

namespace csn {

enum class Split { train, val, test };

const char* split_name(Split s);
Split split_from_name(const std::string& s);

// Shapes plus split assignment; insertion order defines the shape index used
// for deterministic tie-breaks.
struct ShapeCollection {
  std::vector<LabeledPointCloud> shapes;
  std::vector<Split> splits;

  std::size_t add(LabeledPointCloud cloud, Split split);
  std::size_t index_of(const std::string& shape_id) const;
  std::vector<std::size_t> split_indices(Split split) const;

 private:
  std::map<std::string, std::size_t> index_;
};

struct GraphEdge {
  std::string neighbor;
  float weight = 0.0f;  // c(m,n); the implicit self weight is 1 - sum
};

struct GraphNode {
  std::string id;
  Split split = Split::train;
  std::vector<GraphEdge> edges;  // exactly graph_k entries, train neighbors only
};

// Shape collection graph: directed edges define each node's compatible set
// C(m). Self-compatibility is implicit (Eq.-7 style weights stored on the
// neighbor edges; the remainder is the self weight).
struct CollectionGraph {
  int graph_k = 1;
  std::uint64_t parameter_version = 0;
  std::vector<GraphNode> nodes;

  std::size_t index_of(const std::string& id) const;
  const GraphNode& node(const std::string& id) const;
  float self_weight(const std::string& id) const;
};

// Neighbors by smallest L2 distance between init descriptors (d2 histograms
// by default); weights start uniform over {C(m), m}.
CollectionGraph init_graph(const ShapeCollection& collection, int graph_k,
                           const std::vector<Tensor>& init_descriptors);

// Descriptors cached per (shape, parameter_version); any compat parameter
// change must bump the version to invalidate.
class DescriptorCache {
 public:
  const Tensor& get_or_compute(const std::string& shape_id, std::uint64_t version, const LabeledPointCloud& cloud,
                               const ParameterStore& ps, const ModelConfig& cfg);
  void clear() { store_.clear(); }

 private:
  std::uint64_t version_ = 0;
  std::map<std::string, Tensor> store_;
};

// One shape's compatibility descriptor under the current parameters
// (evaluation mode; the compat path has no dropout).
Tensor compat_descriptor(const ParameterStore& ps, const ModelConfig& cfg, const LabeledPointCloud& cloud);

// s(m,n) for already-projected descriptor rows.
float compat_score(const Tensor& g_m, const Tensor& g_n, const Tensor& vq, const Tensor& vk);

// Rewires every node to its graph_k best-scoring train neighbors under the
// current compatibility parameters, recomputes Eq.-7 weights including self,
// and bumps parameter_version.
void update_graph(CollectionGraph& graph, const ShapeCollection& collection, const ParameterStore& ps,
                  const ModelConfig& cfg, DescriptorCache* cache = nullptr);

// Adds test nodes wired to train neighbors by maximal score; existing nodes
// are untouched.
void attach_test_shapes(CollectionGraph& graph, const ShapeCollection& collection,
                        const std::vector<std::size_t>& test_indices, const ParameterStore& ps,
                        const ModelConfig& cfg, DescriptorCache* cache = nullptr);

// Compatibility weights for a forward pass, ordered [self, edges...].
std::vector<float> forward_weights(const CollectionGraph& graph, const std::string& id);

}  // namespace csn

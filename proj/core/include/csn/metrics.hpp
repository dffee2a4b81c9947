#pragma once

#include <span>
#include <string>
#include <vector>

#include "csn/collection_graph.hpp"

namespace csn {

struct SegmentationResult {
  std::string shape_id;
  std::vector<int> predicted;
  std::vector<int> truth;
  int part_count = 0;
};

// Aggregate intersection / aggregate union per class over the whole result
// set, averaged over classes whose aggregate union is non-empty.
double part_miou(std::span<const SegmentationResult> results);

// Per shape, mean IoU over classes present in truth or prediction; averaged
// over shapes.
double shape_miou(std::span<const SegmentationResult> results);

// Each high-res point copies the label of its nearest low-res point
// (squared L2, ties to the lower index).
std::vector<int> nn_label_upsample(const Tensor& low_positions, const std::vector<int>& low_labels,
                                   const Tensor& high_positions);

enum class EvalStrategy { direct, upsample };

EvalStrategy strategy_from_name(const std::string& s);
const char* strategy_name(EvalStrategy s);

struct EvalOptions {
  EvalStrategy strategy = EvalStrategy::direct;
  std::int64_t train_points = 512;  // resolution the model was trained at
  std::uint64_t subsample_seed = 0; // upsample strategy's low-res selection
};

struct EvalReport {
  std::vector<SegmentationResult> results;
  std::vector<double> per_class_iou;  // aggregate, NaN-free (absent classes skipped in the mean)
  double part = 0.0;
  double shape = 0.0;
  int edge_k_used = 0;
};

// Runs the model on every test node attached to the graph. Direct strategy
// scales the query's EdgeConv neighbor count by the resolution ratio;
// upsample predicts at train resolution and transfers labels to full
// resolution by nearest neighbor.
EvalReport evaluate(const ParameterStore& ps, const ModelConfig& cfg, const CollectionGraph& graph,
                    const ShapeCollection& collection, const EvalOptions& opt);

}  // namespace csn

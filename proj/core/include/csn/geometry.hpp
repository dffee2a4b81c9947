#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "csn/rng.hpp"
#include "csn/tensor.hpp"

namespace csn {

// Unit of ingestion and prediction: positions are unit-normalized at
// ingestion (centroid at origin, max radius 1).
struct LabeledPointCloud {
  Tensor positions;        // N x 3
  std::vector<int> labels; // empty when unlabeled, else length N with values in [0, part_count)
  int part_count = 0;
  std::string shape_id;

  std::int64_t size() const { return positions.rows(); }
};

// Centers at the centroid and scales the max radius to 1; validates the
// ingestion invariants (N >= 4, finite positions, labels in range).
void ingest(LabeledPointCloud& cloud);

// Row-major P x k neighbor indices, ascending distance, ties to lower index.
struct IndexMatrix {
  std::int64_t rows = 0;
  std::int64_t k = 0;
  std::vector<std::int64_t> data;
  std::int64_t at(std::int64_t i, std::int64_t j) const { return data[static_cast<std::size_t>(i * k + j)]; }
};

enum class KnnBackend { brute_force, grid };

// k nearest rows by squared Euclidean distance. The grid backend is exact and
// produces indices identical to brute force; it requires 3-column input.
IndexMatrix knn_indices(const Tensor& points_or_features, int k, bool exclude_self,
                        KnnBackend backend = KnnBackend::brute_force);

// Uniform without replacement; kept indices returned in ascending order so
// count == N is the identity.
struct Subsample {
  std::vector<std::int64_t> kept;
  LabeledPointCloud cloud;
};
Subsample subsample_points(const LabeledPointCloud& cloud, std::int64_t count, std::uint64_t seed);
std::vector<std::int64_t> subsample_indices(std::int64_t n, std::int64_t count, std::uint64_t seed);

// Normalized histogram of pairwise point distances over [0, 2].
Tensor d2_descriptor(const LabeledPointCloud& cloud, int bins, std::int64_t samples, std::uint64_t seed);

}  // namespace csn

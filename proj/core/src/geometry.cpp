#include "csn/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <stdexcept>

namespace csn {

void ingest(LabeledPointCloud& cloud) {
  const std::int64_t n = cloud.positions.rows();
  if (cloud.positions.rank() != 2 || cloud.positions.cols() != 3) {
    throw std::invalid_argument("ingest: positions must be Nx3");
  }
  if (n < 4) throw std::invalid_argument("ingest: need at least 4 points, got " + std::to_string(n));
  if (!cloud.positions.all_finite()) throw std::runtime_error("ingest: non-finite positions in " + cloud.shape_id);
  if (!cloud.labels.empty()) {
    if (static_cast<std::int64_t>(cloud.labels.size()) != n) {
      throw std::invalid_argument("ingest: label length mismatch");
    }
    for (int l : cloud.labels) {
      if (l < 0 || l >= cloud.part_count) {
        throw std::invalid_argument("ingest: label " + std::to_string(l) + " outside [0," +
                                    std::to_string(cloud.part_count) + ")");
      }
    }
  }
  double cx = 0, cy = 0, cz = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    cx += cloud.positions.at(i, 0);
    cy += cloud.positions.at(i, 1);
    cz += cloud.positions.at(i, 2);
  }
  cx /= static_cast<double>(n);
  cy /= static_cast<double>(n);
  cz /= static_cast<double>(n);
  double max_r2 = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double x = cloud.positions.at(i, 0) - cx;
    const double y = cloud.positions.at(i, 1) - cy;
    const double z = cloud.positions.at(i, 2) - cz;
    max_r2 = std::max(max_r2, x * x + y * y + z * z);
  }
  if (max_r2 == 0) throw std::runtime_error("ingest: degenerate cloud (all points identical)");
  const double inv_r = 1.0 / std::sqrt(max_r2);
  for (std::int64_t i = 0; i < n; ++i) {
    cloud.positions.at(i, 0) = static_cast<float>((cloud.positions.at(i, 0) - cx) * inv_r);
    cloud.positions.at(i, 1) = static_cast<float>((cloud.positions.at(i, 1) - cy) * inv_r);
    cloud.positions.at(i, 2) = static_cast<float>((cloud.positions.at(i, 2) - cz) * inv_r);
  }
}

namespace {

struct Cand {
  float d2;
  std::int64_t idx;
  bool operator<(const Cand& o) const { return d2 < o.d2 || (d2 == o.d2 && idx < o.idx); }
};

// Squared distance with a fixed per-pair summation order, so results are
// independent of row position (needed for exact permutation consistency).
inline float pair_dist2(const Tensor& x, std::int64_t i, std::int64_t j) {
  const std::int64_t d = x.cols();
  const float* a = x.data.data() + i * d;
  const float* b = x.data.data() + j * d;
  float acc = 0.0f;
  for (std::int64_t c = 0; c < d; ++c) {
    const float t = a[c] - b[c];
    acc += t * t;
  }
  return acc;
}

IndexMatrix knn_brute(const Tensor& x, int k, bool exclude_self) {
  const std::int64_t p = x.rows();
  IndexMatrix out{p, k, std::vector<std::int64_t>(static_cast<std::size_t>(p * k))};
  std::vector<Cand> cands;
  cands.reserve(static_cast<std::size_t>(p));
  for (std::int64_t i = 0; i < p; ++i) {
    cands.clear();
    for (std::int64_t j = 0; j < p; ++j) {
      if (exclude_self && j == i) continue;
      cands.push_back({pair_dist2(x, i, j), j});
    }
    std::partial_sort(cands.begin(), cands.begin() + k, cands.end());
    for (int j = 0; j < k; ++j) out.data[static_cast<std::size_t>(i * k + j)] = cands[static_cast<std::size_t>(j)].idx;
  }
  return out;
}

IndexMatrix knn_grid(const Tensor& x, int k, bool exclude_self) {
  const std::int64_t p = x.rows();
  std::array<float, 3> lo{x.at(0, 0), x.at(0, 1), x.at(0, 2)};
  std::array<float, 3> hi = lo;
  for (std::int64_t i = 1; i < p; ++i) {
    for (int c = 0; c < 3; ++c) {
      lo[static_cast<std::size_t>(c)] = std::min(lo[static_cast<std::size_t>(c)], x.at(i, c));
      hi[static_cast<std::size_t>(c)] = std::max(hi[static_cast<std::size_t>(c)], x.at(i, c));
    }
  }
  const float extent = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2], 1e-6f});
  // Aim for a handful of points per cell.
  const int res = std::max(1, static_cast<int>(std::cbrt(static_cast<double>(p) / 4.0)));
  const float cell = extent / static_cast<float>(res) + 1e-7f;

  auto cell_of = [&](std::int64_t i, int c) {
    int v = static_cast<int>((x.at(i, c) - lo[static_cast<std::size_t>(c)]) / cell);
    return std::clamp(v, 0, res - 1);
  };
  std::vector<std::vector<std::int64_t>> cells(static_cast<std::size_t>(res) * res * res);
  auto cell_id = [&](int a, int b, int c) { return (static_cast<std::size_t>(a) * res + b) * res + c; };
  for (std::int64_t i = 0; i < p; ++i) cells[cell_id(cell_of(i, 0), cell_of(i, 1), cell_of(i, 2))].push_back(i);

  IndexMatrix out{p, k, std::vector<std::int64_t>(static_cast<std::size_t>(p * k))};
  std::vector<Cand> heap;
  for (std::int64_t i = 0; i < p; ++i) {
    const int ca = cell_of(i, 0), cb = cell_of(i, 1), cc = cell_of(i, 2);
    heap.clear();
    for (int ring = 0; ring < res; ++ring) {
      // Any point in a ring-r cell is at least (r-1)*cell away, so once the
      // kth best beats that bound no later ring can change the answer.
      if (static_cast<std::int64_t>(heap.size()) >= k && ring >= 1) {
        std::partial_sort(heap.begin(), heap.begin() + k, heap.end());
        heap.resize(static_cast<std::size_t>(k));
        const float bound = static_cast<float>(ring - 1) * cell;
        if (bound * bound > heap.back().d2) break;
      }
      for (int a = std::max(0, ca - ring); a <= std::min(res - 1, ca + ring); ++a) {
        for (int b = std::max(0, cb - ring); b <= std::min(res - 1, cb + ring); ++b) {
          for (int c = std::max(0, cc - ring); c <= std::min(res - 1, cc + ring); ++c) {
            if (std::max({std::abs(a - ca), std::abs(b - cb), std::abs(c - cc)}) != ring) continue;
            for (std::int64_t j : cells[cell_id(a, b, c)]) {
              if (exclude_self && j == i) continue;
              heap.push_back({pair_dist2(x, i, j), j});
            }
          }
        }
      }
    }
    if (static_cast<std::int64_t>(heap.size()) < k) throw std::logic_error("knn grid: candidate shortfall");
    std::partial_sort(heap.begin(), heap.begin() + k, heap.end());
    for (int j = 0; j < k; ++j) out.data[static_cast<std::size_t>(i * k + j)] = heap[static_cast<std::size_t>(j)].idx;
  }
  return out;
}

}  // namespace

IndexMatrix knn_indices(const Tensor& x, int k, bool exclude_self, KnnBackend backend) {
  if (x.rank() != 2) throw std::invalid_argument("knn: rank-2 input required");
  const std::int64_t p = x.rows();
  const std::int64_t avail = exclude_self ? p - 1 : p;
  if (k <= 0 || k > avail) {
    throw std::invalid_argument("knn: k=" + std::to_string(k) + " out of range for " + std::to_string(p) + " points");
  }
  if (backend == KnnBackend::grid) {
    if (x.cols() != 3) throw std::invalid_argument("knn: grid backend requires 3-D positions");
    return knn_grid(x, k, exclude_self);
  }
  return knn_brute(x, k, exclude_self);
}

std::vector<std::int64_t> subsample_indices(std::int64_t n, std::int64_t count, std::uint64_t seed) {
  if (count > n) throw std::invalid_argument("subsample: count exceeds source size");
  if (count <= 0) throw std::invalid_argument("subsample: count must be positive");
  Rng rng(seed);
  return rng.sample_without_replacement(n, count);
}

Subsample subsample_points(const LabeledPointCloud& cloud, std::int64_t count, std::uint64_t seed) {
  Subsample out;
  out.kept = subsample_indices(cloud.size(), count, seed);
  out.cloud.shape_id = cloud.shape_id;
  out.cloud.part_count = cloud.part_count;
  out.cloud.positions = Tensor::zeros({count, 3});
  for (std::int64_t i = 0; i < count; ++i) {
    for (int c = 0; c < 3; ++c) out.cloud.positions.at(i, c) = cloud.positions.at(out.kept[static_cast<std::size_t>(i)], c);
  }
  if (!cloud.labels.empty()) {
    out.cloud.labels.reserve(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) {
      out.cloud.labels.push_back(cloud.labels[static_cast<std::size_t>(out.kept[static_cast<std::size_t>(i)])]);
    }
  }
  return out;
}

Tensor d2_descriptor(const LabeledPointCloud& cloud, int bins, std::int64_t samples, std::uint64_t seed) {
  if (bins < 8) throw std::invalid_argument("d2: need at least 8 bins");
  if (samples <= 0) throw std::invalid_argument("d2: need positive sample count");
  const std::int64_t n = cloud.size();
  if (n < 2) throw std::invalid_argument("d2: need at least two points");
  bool degenerate = true;
  for (std::int64_t i = 1; i < n && degenerate; ++i) {
    for (int c = 0; c < 3; ++c) {
      if (cloud.positions.at(i, c) != cloud.positions.at(0, c)) {
        degenerate = false;
        break;
      }
    }
  }
  if (degenerate) throw std::runtime_error("d2: degenerate cloud (all points identical)");

  Rng rng(seed);
  Tensor hist = Tensor::zeros({bins});
  const double scale = static_cast<double>(bins) / 2.0;  // distances of unit clouds lie in [0, 2]
  for (std::int64_t s = 0; s < samples; ++s) {
    const auto i = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n)));
    auto j = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n - 1)));
    if (j >= i) ++j;
    double d2 = 0;
    for (int c = 0; c < 3; ++c) {
      const double t = cloud.positions.at(i, c) - cloud.positions.at(j, c);
      d2 += t * t;
    }
    const auto bin = std::min<std::int64_t>(bins - 1, static_cast<std::int64_t>(std::sqrt(d2) * scale));
    hist.data[static_cast<std::size_t>(bin)] += 1.0f;
  }
  for (auto& v : hist.data) v /= static_cast<float>(samples);
  return hist;
}

}  // namespace csn

#include <doctest.h>

#include <cmath>

#include "csn/backbone.hpp"
#include "csn/gradcheck.hpp"
#include "csn/model.hpp"

using namespace csn;

namespace {

Tensor random_tensor(std::vector<std::int64_t> shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng(seed);
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

struct EdgeConvRawParams {
  Tensor weight, gn_scale, gn_shift;
  int edge_k, groups;
};

EdgeConvRawParams make_params(int in_w, int out_w, int edge_k, int groups, std::uint64_t seed) {
  return {random_tensor({2 * in_w, out_w}, seed), Tensor::full({out_w}, 1.0f), Tensor::zeros({out_w}), edge_k, groups};
}

Tensor run_edge_conv(const Tensor& feats, const EdgeConvRawParams& p) {
  Graph g;
  EdgeConvRef ref{g.leaf(p.weight), g.leaf(p.gn_scale), g.leaf(p.gn_shift), p.edge_k, p.groups};
  return g.value(edge_conv(g, g.leaf(feats), ref));
}

// Direct per-point loop oracle in double: knn by full sort, edge features,
// linear map, leaky rectifier, group norm over all edges, max per point.
Tensor edge_conv_oracle(const Tensor& feats, const EdgeConvRawParams& p) {
  const std::int64_t n = feats.rows(), din = feats.cols(), dout = p.weight.cols();
  const int k = p.edge_k;
  std::vector<std::vector<std::int64_t>> nbrs(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    std::vector<std::pair<float, std::int64_t>> dist;
    for (std::int64_t j = 0; j < n; ++j) {
      if (j == i) continue;
      float d2 = 0;
      for (std::int64_t c = 0; c < din; ++c) {
        const float t = feats.at(i, c) - feats.at(j, c);
        d2 += t * t;
      }
      dist.emplace_back(d2, j);
    }
    std::sort(dist.begin(), dist.end());
    for (int j = 0; j < k; ++j) nbrs[static_cast<std::size_t>(i)].push_back(dist[static_cast<std::size_t>(j)].second);
  }
  // activations for all n*k edges
  std::vector<std::vector<double>> act(static_cast<std::size_t>(n * k), std::vector<double>(static_cast<std::size_t>(dout)));
  for (std::int64_t i = 0; i < n; ++i) {
    for (int e = 0; e < k; ++e) {
      const std::int64_t j = nbrs[static_cast<std::size_t>(i)][static_cast<std::size_t>(e)];
      for (std::int64_t o = 0; o < dout; ++o) {
        double acc = 0;
        for (std::int64_t c = 0; c < din; ++c) {
          acc += static_cast<double>(feats.at(i, c)) * static_cast<double>(p.weight.at(c, o));
          acc += (static_cast<double>(feats.at(j, c)) - static_cast<double>(feats.at(i, c))) *
                 static_cast<double>(p.weight.at(din + c, o));
        }
        act[static_cast<std::size_t>(i * k + e)][static_cast<std::size_t>(o)] = acc > 0 ? acc : 0.2 * acc;
      }
    }
  }
  // group norm over the full edge slab
  const std::int64_t gw = dout / p.groups;
  for (int gi = 0; gi < p.groups; ++gi) {
    double mean = 0, var = 0;
    const double m = static_cast<double>(n * k * gw);
    for (std::int64_t r = 0; r < n * k; ++r)
      for (std::int64_t c = gi * gw; c < (gi + 1) * gw; ++c) mean += act[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    mean /= m;
    for (std::int64_t r = 0; r < n * k; ++r)
      for (std::int64_t c = gi * gw; c < (gi + 1) * gw; ++c) {
        const double d = act[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] - mean;
        var += d * d;
      }
    var /= m;
    const double istd = 1.0 / std::sqrt(var + 1e-5);
    for (std::int64_t r = 0; r < n * k; ++r)
      for (std::int64_t c = gi * gw; c < (gi + 1) * gw; ++c)
        act[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] =
            (act[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] - mean) * istd;
  }
  Tensor out = Tensor::zeros({n, dout});
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t o = 0; o < dout; ++o) {
      double mx = -1e300;
      for (int e = 0; e < k; ++e) mx = std::max(mx, act[static_cast<std::size_t>(i * k + e)][static_cast<std::size_t>(o)]);
      out.at(i, o) = static_cast<float>(mx);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("constant input features give identical output rows") {
  Tensor feats = Tensor::full({8, 3}, 0.5f);
  const auto p = make_params(3, 4, 3, 2, 1);
  const Tensor out = run_edge_conv(feats, p);
  for (std::int64_t i = 1; i < 8; ++i) {
    for (std::int64_t j = 0; j < 4; ++j) CHECK(out.at(i, j) == out.at(0, j));
  }
}

TEST_CASE("edge_conv matches the per-point loop oracle") {
  Tensor feats = random_tensor({6, 3}, 5);
  const auto p = make_params(3, 4, 2, 2, 6);
  const Tensor got = run_edge_conv(feats, p);
  const Tensor want = edge_conv_oracle(feats, p);
  REQUIRE(got.shape == want.shape);
  for (std::size_t i = 0; i < got.data.size(); ++i) {
    CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-5));
  }
}

TEST_CASE("edge_conv is permutation equivariant") {
  Tensor feats = random_tensor({10, 3}, 7);
  const auto p = make_params(3, 8, 4, 4, 8);
  const Tensor base = run_edge_conv(feats, p);

  const std::int64_t n = 10;
  Tensor perm = Tensor::zeros({n, 3});
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t c = 0; c < 3; ++c) perm.at(n - 1 - i, c) = feats.at(i, c);
  }
  const Tensor out = run_edge_conv(perm, p);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < 8; ++j) {
      CHECK(std::abs(out.at(n - 1 - i, j) - base.at(i, j)) < 1e-6);
    }
  }
}

TEST_CASE("edge_conv rejects edge_k >= P") {
  Tensor feats = random_tensor({4, 3}, 2);
  const auto p = make_params(3, 4, 4, 2, 3);
  Graph g;
  EdgeConvRef ref{g.leaf(p.weight), g.leaf(p.gn_scale), g.leaf(p.gn_shift), p.edge_k, p.groups};
  CHECK_THROWS_AS(edge_conv(g, g.leaf(feats), ref), std::invalid_argument);
}

TEST_CASE("gradients flow through edge_conv within 1e-4") {
  ParameterStore ps;
  Rng rng(9);
  ps.add("x", random_tensor({6, 3}, 10, -2, 2));
  ps.add("w", random_tensor({6, 4}, 11));
  ps.add("gamma", Tensor::full({4}, 1.0f));
  ps.add("beta", Tensor::zeros({4}));
  const auto report = check_gradients(
      ps,
      [](Graph64& g, const std::map<std::string, NodeId>& l) {
        EdgeConvRef ref{l.at("w"), l.at("gamma"), l.at("beta"), 2, 2};
        const NodeId out = edge_conv(g, l.at("x"), ref);
        return g.reduce_sum_all(g.mul(out, out));
      },
      1e-4);
  CHECK(report.worst < 1e-4);
}

TEST_CASE("trunk produces the table widths and a 512-wide concat at N=512") {
  ModelConfig cfg;
  cfg.edge_k = 20;
  Rng rng(12);
  ParameterStore ps;
  init_model_params(ps, cfg, rng);
  Tensor pos = random_tensor({512, 3}, 13);

  Graph g;
  const NodeMap pm = ps.make_leaves(g, [](const std::string&) { return false; });
  const auto trunk = dgcnn_trunk(g, g.leaf(pos), pos, backbone_refs(pm, cfg, cfg.edge_k));
  const std::array<int, 4> widths{64, 64, 128, 256};
  for (int l = 0; l < 4; ++l) {
    CHECK(g.value(trunk.per_layer[static_cast<std::size_t>(l)]).cols() == widths[static_cast<std::size_t>(l)]);
    CHECK(g.value(trunk.per_layer[static_cast<std::size_t>(l)]).rows() == 512);
  }
  CHECK(g.value(trunk.concat).shape == std::vector<std::int64_t>{512, 512});
}

TEST_CASE("trunk is permutation equivariant end to end") {
  ModelConfig cfg;
  cfg.widths = {8, 8, 16, 32};
  cfg.head_widths = {16, 8, 8, 8};
  cfg.compat_widths = {8, 8, 8, 8};
  cfg.compat_point_width = 16;
  cfg.edge_k = 4;
  cfg.groups = 4;
  Rng rng(20);
  ParameterStore ps;
  init_model_params(ps, cfg, rng);
  Tensor pos = random_tensor({24, 3}, 21);

  auto run = [&](const Tensor& p) {
    Graph g;
    const NodeMap pm = ps.make_leaves(g, [](const std::string&) { return false; });
    return g.value(dgcnn_trunk(g, g.leaf(p), p, backbone_refs(pm, cfg, cfg.edge_k)).concat);
  };
  const Tensor base = run(pos);
  Tensor perm = Tensor::zeros({24, 3});
  for (std::int64_t i = 0; i < 24; ++i)
    for (std::int64_t c = 0; c < 3; ++c) perm.at(23 - i, c) = pos.at(i, c);
  const Tensor out = run(perm);
  for (std::int64_t i = 0; i < 24; ++i)
    for (std::int64_t j = 0; j < base.cols(); ++j) CHECK(std::abs(out.at(23 - i, j) - base.at(i, j)) < 1e-5);
}

TEST_CASE("table-literal wiring branches the fourth layer off the second") {
  ModelConfig cfg;
  cfg.widths = {8, 8, 16, 32};
  cfg.head_widths = {16, 8, 8, 8};
  cfg.compat_widths = {8, 8, 8, 8};
  cfg.compat_point_width = 16;
  cfg.edge_k = 3;
  cfg.groups = 4;
  cfg.wiring = TrunkWiring::table_literal;
  CHECK(cfg.trunk_in_width(3) == 8);  // second layer output width
  Rng rng(30);
  ParameterStore ps;
  init_model_params(ps, cfg, rng);
  CHECK(ps.at("backbone.4.weight").value.shape == std::vector<std::int64_t>{16, 32});

  Tensor pos = random_tensor({12, 3}, 31);
  Graph g;
  const NodeMap pm = ps.make_leaves(g, [](const std::string&) { return false; });
  const auto trunk = dgcnn_trunk(g, g.leaf(pos), pos, backbone_refs(pm, cfg, cfg.edge_k), cfg.wiring);
  CHECK(g.value(trunk.concat).cols() == 8 + 8 + 16 + 32);
}

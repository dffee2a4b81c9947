#include <doctest.h>

#include <cmath>

#include "csn/attention.hpp"
#include "csn/gradcheck.hpp"

using namespace csn;

namespace {

Tensor random_tensor(std::vector<std::int64_t> shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng(seed);
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

Tensor identity(std::int64_t d) {
  Tensor t = Tensor::zeros({d, d});
  for (std::int64_t i = 0; i < d; ++i) t.at(i, i) = 1.0f;
  return t;
}

// Triple-loop attention oracle in double: logits, per-row softmax, convolve.
Tensor csa_oracle(const Tensor& xm, const Tensor& xn, const Tensor& wq, const Tensor& wk, const Tensor& wv) {
  const std::int64_t pm = xm.rows(), pn = xn.rows(), d = xm.cols();
  auto proj = [&](const Tensor& x, const Tensor& w, std::int64_t i, std::int64_t o) {
    double acc = 0;
    for (std::int64_t c = 0; c < d; ++c) acc += static_cast<double>(w.at(o, c)) * static_cast<double>(x.at(i, c));
    return acc;
  };
  std::vector<std::vector<double>> a(static_cast<std::size_t>(pm), std::vector<double>(static_cast<std::size_t>(pn)));
  for (std::int64_t i = 0; i < pm; ++i) {
    double mx = -1e300;
    for (std::int64_t j = 0; j < pn; ++j) {
      double dot = 0;
      for (std::int64_t o = 0; o < d; ++o) dot += proj(xm, wq, i, o) * proj(xn, wk, j, o);
      a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = dot / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
    }
    double sum = 0;
    for (std::int64_t j = 0; j < pn; ++j) {
      a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          std::exp(a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] - mx);
      sum += a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    for (std::int64_t j = 0; j < pn; ++j) a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] /= sum;
  }
  Tensor out = Tensor::zeros({pm, d});
  for (std::int64_t i = 0; i < pm; ++i) {
    for (std::int64_t o = 0; o < d; ++o) {
      double acc = 0;
      for (std::int64_t j = 0; j < pn; ++j) {
        acc += a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] * proj(xn, wv, j, o);
      }
      out.at(i, o) = static_cast<float>(acc);
    }
  }
  return out;
}

struct CsaRun {
  Tensor features;
  Tensor attention;
  std::vector<std::int64_t> key_index;
};

CsaRun run_csa(const Tensor& xm, const Tensor& xn, const Tensor& wq, const Tensor& wk, const Tensor& wv,
               std::optional<KeySubsample> sub = std::nullopt) {
  Graph g;
  CsaParamRef p{g.leaf(wq), g.leaf(wk), g.leaf(wv)};
  const auto out = csa_layer(g, g.leaf(xm), g.leaf(xn), p, sub);
  return {g.value(out.features), g.value(out.attention), out.key_index};
}

}  // namespace

TEST_CASE("project with identity and zero weights") {
  Tensor x = random_tensor({5, 4}, 1);
  Graph g;
  const Tensor& same = g.value(project(g, g.leaf(x), g.leaf(identity(4))));
  CHECK(same.data == x.data);
  const Tensor& zero = g.value(project(g, g.leaf(x), g.leaf(Tensor::zeros({4, 4}))));
  for (float v : zero.data) CHECK(v == 0.0f);
  CHECK_THROWS_AS(project(g, g.leaf(x), g.leaf(Tensor::zeros({3, 3}))), std::invalid_argument);
}

TEST_CASE("project matches the per-row matrix-vector oracle") {
  Tensor x = random_tensor({5, 4}, 2);
  Tensor w = random_tensor({4, 4}, 3);
  Graph g;
  const Tensor& got = g.value(project(g, g.leaf(x), g.leaf(w)));
  for (std::int64_t i = 0; i < 5; ++i) {
    for (std::int64_t o = 0; o < 4; ++o) {
      double acc = 0;
      for (std::int64_t c = 0; c < 4; ++c) acc += static_cast<double>(w.at(o, c)) * static_cast<double>(x.at(i, c));
      CHECK(std::abs(got.at(i, o) - acc) < 1e-6);
    }
  }
}

TEST_CASE("attention with a single key is all ones") {
  Graph g;
  const NodeId a = attention_matrix(g, g.leaf(random_tensor({4, 3}, 4)), g.leaf(random_tensor({1, 3}, 5)));
  for (float v : g.value(a).data) CHECK(v == 1.0f);
}

TEST_CASE("orthogonal queries and keys give uniform rows") {
  Tensor q({2, 4}, {1, 0, 0, 0, 0, 1, 0, 0});
  Tensor k({3, 4}, {0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 1, 1});
  Graph g;
  const Tensor& a = g.value(attention_matrix(g, g.leaf(q), g.leaf(k)));
  for (float v : a.data) CHECK(v == doctest::Approx(1.0f / 3.0f).epsilon(1e-6));
}

TEST_CASE("csa layer matches the triple-loop oracle and is asymmetric") {
  Tensor xm = random_tensor({6, 4}, 6, -3, 3);
  Tensor xn = random_tensor({6, 4}, 7, -3, 3);
  Tensor wq = random_tensor({4, 4}, 8), wk = random_tensor({4, 4}, 9), wv = random_tensor({4, 4}, 10);
  const auto got = run_csa(xm, xn, wq, wk, wv);
  const Tensor want = csa_oracle(xm, xn, wq, wk, wv);
  for (std::size_t i = 0; i < want.data.size(); ++i) {
    CHECK(std::abs(got.features.data[i] - want.data[i]) < 1e-6);
  }

  // A_{m,n} != A_{n,m}^T for an asymmetric parameter pair
  const auto fwd = run_csa(xm, xn, wq, wk, wv);
  const auto rev = run_csa(xn, xm, wq, wk, wv);
  float max_diff = 0;
  for (std::int64_t i = 0; i < 6; ++i) {
    for (std::int64_t j = 0; j < 6; ++j) {
      max_diff = std::max(max_diff, std::abs(fwd.attention.at(i, j) - rev.attention.at(j, i)));
    }
  }
  CHECK(max_diff > 0.1f);
}

TEST_CASE("cross_shape_convolve basics") {
  Graph g;
  {
    const NodeId out = cross_shape_convolve(g, g.leaf(Tensor({1, 1}, {1.0f})), g.leaf(Tensor({1, 2}, {1, 2})),
                                            g.leaf(identity(2)));
    CHECK(g.value(out).data == std::vector<float>{1, 2});
  }
  {
    const NodeId out = cross_shape_convolve(g, g.leaf(Tensor({1, 2}, {0.5f, 0.5f})),
                                            g.leaf(Tensor({2, 2}, {0, 0, 2, 4})), g.leaf(identity(2)));
    CHECK(g.value(out).data == std::vector<float>{1, 2});
  }
  CHECK_THROWS_AS(cross_shape_convolve(g, g.leaf(Tensor({1, 3}, {1, 0, 0})), g.leaf(Tensor({2, 2}, {1, 2, 3, 4})),
                                       g.leaf(identity(2))),
                  std::invalid_argument);
}

TEST_CASE("self pairing with shared parameters equals the SSA path exactly") {
  Tensor x = random_tensor({5, 4}, 11);
  Tensor wq = random_tensor({4, 4}, 12), wk = random_tensor({4, 4}, 13), wv = random_tensor({4, 4}, 14);
  const auto csa_self = run_csa(x, x, wq, wk, wv);
  const auto ssa = run_csa(x, x, wq, wk, wv);
  CHECK(csa_self.features.data == ssa.features.data);
}

TEST_CASE("key subsampling at full count is the identity") {
  Tensor xm = random_tensor({5, 4}, 15);
  Tensor xn = random_tensor({7, 4}, 16);
  Tensor wq = random_tensor({4, 4}, 17), wk = random_tensor({4, 4}, 18), wv = random_tensor({4, 4}, 19);
  const auto full = run_csa(xm, xn, wq, wk, wv);
  const auto sub = run_csa(xm, xn, wq, wk, wv, KeySubsample{7, 99});
  CHECK(full.features.data == sub.features.data);
  CHECK(sub.key_index.empty());
}

TEST_CASE("subsampled attention rows are stochastic over kept keys") {
  Tensor xm = random_tensor({6, 4}, 20);
  Tensor xn = random_tensor({10, 4}, 21);
  Tensor wq = random_tensor({4, 4}, 22), wk = random_tensor({4, 4}, 23), wv = random_tensor({4, 4}, 24);
  const auto sub = run_csa(xm, xn, wq, wk, wv, KeySubsample{4, 5});
  CHECK(sub.key_index.size() == 4);
  CHECK(sub.attention.cols() == 4);
  for (std::int64_t i = 0; i < 6; ++i) {
    double sum = 0;
    for (std::int64_t j = 0; j < 4; ++j) sum += sub.attention.at(i, j);
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("key subsampling cuts the layer flop count by the key ratio") {
  // matmul flop model of one layer: Q projection P_m D^2, K/V projections
  // P_n' D^2, logits and convolve P_m P_n' D, each times 2 flops.
  auto layer_flops = [](double pm, double pn, double d) {
    return 2.0 * (pm * d * d + 2.0 * pn * d * d + 2.0 * pm * pn * d);
  };
  const double full = layer_flops(2500, 2500, 64);
  const double sub = layer_flops(2500, 1000, 64);
  CHECK(2500.0 / 1000.0 == doctest::Approx(2.5));
  CHECK(full / sub > 2.4);
}

TEST_CASE("query permutation equivariance and key permutation invariance") {
  Tensor xm = random_tensor({8, 4}, 25);
  Tensor xn = random_tensor({9, 4}, 26);
  Tensor wq = random_tensor({4, 4}, 27), wk = random_tensor({4, 4}, 28), wv = random_tensor({4, 4}, 29);
  const auto base = run_csa(xm, xn, wq, wk, wv);

  Tensor xm_perm = Tensor::zeros({8, 4});
  for (std::int64_t i = 0; i < 8; ++i)
    for (std::int64_t c = 0; c < 4; ++c) xm_perm.at(7 - i, c) = xm.at(i, c);
  const auto qperm = run_csa(xm_perm, xn, wq, wk, wv);
  for (std::int64_t i = 0; i < 8; ++i)
    for (std::int64_t c = 0; c < 4; ++c) CHECK(std::abs(qperm.features.at(7 - i, c) - base.features.at(i, c)) < 1e-6);

  Tensor xn_perm = Tensor::zeros({9, 4});
  for (std::int64_t i = 0; i < 9; ++i)
    for (std::int64_t c = 0; c < 4; ++c) xn_perm.at(8 - i, c) = xn.at(i, c);
  const auto kperm = run_csa(xm, xn_perm, wq, wk, wv);
  for (std::size_t i = 0; i < base.features.data.size(); ++i) {
    CHECK(std::abs(kperm.features.data[i] - base.features.data[i]) < 1e-6);
  }
}

TEST_CASE("multi_shape_aggregate combinations") {
  Tensor self = random_tensor({4, 6}, 30);
  Tensor n1 = random_tensor({4, 6}, 31);
  Tensor n2 = random_tensor({4, 6}, 32);

  {  // empty neighbor set with all weight on self
    Graph g;
    const NodeId s = g.leaf(self);
    const NodeId out = multi_shape_aggregate(g, s, {}, g.leaf(Tensor::scalar(1.0f)), {});
    CHECK(g.value(out).data == self.data);
  }
  {  // two identical inputs at half weight reproduce the input
    Graph g;
    std::vector<NodeId> nf{g.leaf(self)};
    std::vector<NodeId> nw{g.leaf(Tensor::scalar(0.5f))};
    const NodeId out = multi_shape_aggregate(g, g.leaf(self), nf, g.leaf(Tensor::scalar(0.5f)), nw);
    CHECK(g.value(out).data == self.data);
  }
  {  // weighted-sum oracle
    Graph g;
    std::vector<NodeId> nf{g.leaf(n1), g.leaf(n2)};
    std::vector<NodeId> nw{g.leaf(Tensor::scalar(0.3f)), g.leaf(Tensor::scalar(0.5f))};
    const NodeId out = multi_shape_aggregate(g, g.leaf(self), nf, g.leaf(Tensor::scalar(0.2f)), nw);
    const Tensor& got = g.value(out);
    for (std::size_t i = 0; i < got.data.size(); ++i) {
      const double want = 0.2 * self.data[i] + 0.3 * n1.data[i] + 0.5 * n2.data[i];
      CHECK(std::abs(got.data[i] - want) < 1e-6);
    }
  }
  {  // weight-sum violation and width mismatch
    Graph g;
    std::vector<NodeId> nf{g.leaf(n1)};
    std::vector<NodeId> nw{g.leaf(Tensor::scalar(0.6f))};
    CHECK_THROWS_AS(multi_shape_aggregate(g, g.leaf(self), nf, g.leaf(Tensor::scalar(0.6f)), nw),
                    std::invalid_argument);
    std::vector<NodeId> bad{g.leaf(random_tensor({4, 5}, 33))};
    std::vector<NodeId> w1{g.leaf(Tensor::scalar(0.5f))};
    CHECK_THROWS_AS(multi_shape_aggregate(g, g.leaf(self), bad, g.leaf(Tensor::scalar(0.5f)), w1),
                    std::invalid_argument);
  }
}

TEST_CASE("one CSA layer passes the gradient check below 1e-4") {
  ParameterStore ps;
  ps.add("xm", random_tensor({6, 4}, 40));
  ps.add("xn", random_tensor({6, 4}, 41));
  ps.add("Wq", random_tensor({4, 4}, 42));
  ps.add("Wk", random_tensor({4, 4}, 43));
  ps.add("Wv", random_tensor({4, 4}, 44));
  const auto report = check_gradients(
      ps,
      [](Graph64& g, const std::map<std::string, NodeId>& l) {
        CsaParamRef p{l.at("Wq"), l.at("Wk"), l.at("Wv")};
        const auto out = csa_layer(g, l.at("xm"), l.at("xn"), p);
        return g.reduce_sum_all(g.mul(out.features, out.features));
      },
      1e-3);
  CHECK(report.worst < 1e-4);
}

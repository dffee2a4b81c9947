#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "csn/rng.hpp"
#include "csn/tensor.hpp"

namespace csn {

using NodeId = std::int32_t;

// Reverse-mode tape. Nodes are appended in evaluation order, so the record is
// topologically sorted by construction; backward() walks it once in reverse.
// Activations needed by a backward rule are the node values themselves, which
// stay alive on the tape, plus per-op saved state captured in the closure
// (argmax indices, dropout masks, normalization statistics).
template <typename T>
class GraphT {
 public:
  struct Entry {
    const char* op = "leaf";
    std::array<NodeId, 3> inputs{-1, -1, -1};
    int n_inputs = 0;
    std::function<void(GraphT&, NodeId)> backward;  // null for leaves
  };

  NodeId leaf(TensorT<T> value, bool requires_grad = false, std::string name = {}) {
    if (!value.all_finite()) throw std::runtime_error("leaf: non-finite values in '" + name + "'");
    const NodeId id = push(std::move(value), requires_grad, Entry{});
    if (requires_grad) named_leaves_.emplace_back(id, std::move(name));
    return id;
  }

  const TensorT<T>& value(NodeId id) const { return values_[check(id)]; }
  bool requires_grad(NodeId id) const { return needs_grad_[check(id)]; }
  std::size_t size() const { return values_.size(); }

  const TensorT<T>& grad(NodeId id) const {
    const auto i = check(id);
    if (grads_[i].data.empty()) throw std::logic_error("grad: node has no gradient (run backward first)");
    return grads_[i];
  }

  // Accumulates into every reachable gradient; trainable leaves untouched by
  // the loss get explicit zeros so the caller always sees a complete map.
  void backward(NodeId loss) {
    const auto li = check(loss);
    if (values_[li].numel() != 1) {
      throw std::invalid_argument("backward: loss node must be scalar, got " + shape_str(values_[li].shape));
    }
    grads_.assign(values_.size(), TensorT<T>{});
    grads_[li] = TensorT<T>::full(values_[li].shape, T(1));
    for (std::int64_t i = li; i >= 0; --i) {
      auto& e = entries_[static_cast<std::size_t>(i)];
      if (!e.backward || !needs_grad_[static_cast<std::size_t>(i)]) continue;
      if (grads_[static_cast<std::size_t>(i)].data.empty()) continue;  // not reachable from loss
      e.backward(*this, static_cast<NodeId>(i));
    }
    for (auto& [id, name] : named_leaves_) {
      auto& g = grads_[static_cast<std::size_t>(id)];
      if (g.data.empty()) g = TensorT<T>::zeros(values_[static_cast<std::size_t>(id)].shape);
    }
  }

  std::map<std::string, TensorT<T>> gradient_map() const {
    std::map<std::string, TensorT<T>> out;
    for (const auto& [id, name] : named_leaves_) {
      if (!name.empty()) out[name] = grads_[static_cast<std::size_t>(id)];
    }
    return out;
  }

  // ---- primitives ----

  NodeId matmul(NodeId a, NodeId b, bool ta = false, bool tb = false) {
    TensorT<T> out = t_matmul(value(a), value(b), ta, tb);
    return push(std::move(out), requires_grad(a) || requires_grad(b),
                make_entry("matmul", {a, b}, [a, b, ta, tb](GraphT& g, NodeId self) {
                  const auto& gc = g.grad_ref(self);
                  if (g.requires_grad(a)) {
                    auto& ga = g.grad_acc(a);
                    // C = op(A)op(B): accumulate dA in the right orientation.
                    if (!ta) t_matmul_acc(ga, gc, g.value(b), false, !tb);
                    else t_matmul_acc(ga, g.value(b), gc, tb, true);
                  }
                  if (g.requires_grad(b)) {
                    auto& gb = g.grad_acc(b);
                    if (!tb) t_matmul_acc(gb, g.value(a), gc, !ta, false);
                    else t_matmul_acc(gb, gc, g.value(a), true, ta);
                  }
                }));
  }

  NodeId bmm(NodeId a, NodeId b) {
    const auto& av = value(a);
    const auto& bv = value(b);
    if (av.rank() != 3 || bv.rank() != 3 || av.shape[0] != bv.shape[0] || av.shape[2] != bv.shape[1]) {
      throw std::invalid_argument("bmm: incompatible shapes " + shape_str(av.shape) + " x " + shape_str(bv.shape));
    }
    const std::int64_t bt = av.shape[0], m = av.shape[1], k = av.shape[2], n = bv.shape[2];
    TensorT<T> out = TensorT<T>::zeros({bt, m, n});
    for (std::int64_t i = 0; i < bt; ++i) {
      EigenCMap<T> A(av.data.data() + i * m * k, m, k);
      EigenCMap<T> B(bv.data.data() + i * k * n, k, n);
      EigenMap<T> C(out.data.data() + i * m * n, m, n);
      C.noalias() = A * B;
    }
    return push(std::move(out), requires_grad(a) || requires_grad(b),
                make_entry("bmm", {a, b}, [a, b, bt, m, k, n](GraphT& g, NodeId self) {
                  const auto& gc = g.grad_ref(self);
                  for (std::int64_t i = 0; i < bt; ++i) {
                    EigenCMap<T> C(gc.data.data() + i * m * n, m, n);
                    if (g.requires_grad(a)) {
                      EigenCMap<T> B(g.value(b).data.data() + i * k * n, k, n);
                      EigenMap<T> A(g.grad_acc(a).data.data() + i * m * k, m, k);
                      A.noalias() += C * B.transpose();
                    }
                    if (g.requires_grad(b)) {
                      EigenCMap<T> A(g.value(a).data.data() + i * m * k, m, k);
                      EigenMap<T> B(g.grad_acc(b).data.data() + i * k * n, k, n);
                      B.noalias() += A.transpose() * C;
                    }
                  }
                }));
  }

  NodeId add(NodeId a, NodeId b) { return elementwise(a, b, "add"); }
  NodeId sub(NodeId a, NodeId b) { return elementwise(a, b, "sub"); }
  NodeId mul(NodeId a, NodeId b) { return elementwise(a, b, "mul"); }

  NodeId scale(NodeId a, T c) {
    TensorT<T> out = value(a);
    for (auto& v : out.data) v *= c;
    return push(std::move(out), requires_grad(a),
                make_entry("scale", {a}, [a, c](GraphT& g, NodeId self) {
                  if (!g.requires_grad(a)) return;
                  const auto& gc = g.grad_ref(self);
                  auto& ga = g.grad_acc(a);
                  for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += c * gc.data[i];
                }));
  }

  // out = x * s where s is a one-element node; gradients flow into both.
  NodeId mul_scalar_node(NodeId x, NodeId s) {
    const auto& sv = value(s);
    if (sv.numel() != 1) throw std::invalid_argument("mul_scalar_node: scalar operand must have one element");
    TensorT<T> out = value(x);
    const T sc = sv.data[0];
    for (auto& v : out.data) v *= sc;
    return push(std::move(out), requires_grad(x) || requires_grad(s),
                make_entry("mul_scalar", {x, s}, [x, s, sc](GraphT& g, NodeId self) {
                  const auto& gc = g.grad_ref(self);
                  if (g.requires_grad(x)) {
                    auto& gx = g.grad_acc(x);
                    for (std::size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += sc * gc.data[i];
                  }
                  if (g.requires_grad(s)) {
                    const auto& xv = g.value(x);
                    double acc = 0;
                    for (std::size_t i = 0; i < xv.data.size(); ++i)
                      acc += static_cast<double>(xv.data[i]) * static_cast<double>(gc.data[i]);
                    g.grad_acc(s).data[0] += static_cast<T>(acc);
                  }
                }));
  }

  NodeId broadcast_rows(NodeId v, std::int64_t rows) {
    const auto& vv = value(v);
    const std::int64_t d = vv.numel();
    if (vv.rank() > 2 || (vv.rank() == 2 && vv.shape[0] != 1)) {
      throw std::invalid_argument("broadcast_rows: operand must be a vector or 1xD");
    }
    TensorT<T> out = TensorT<T>::zeros({rows, d});
    for (std::int64_t i = 0; i < rows; ++i) {
      std::copy(vv.data.begin(), vv.data.end(), out.data.begin() + i * d);
    }
    return push(std::move(out), requires_grad(v),
                make_entry("broadcast_rows", {v}, [v, rows, d](GraphT& g, NodeId self) {
                  if (!g.requires_grad(v)) return;
                  const auto& gc = g.grad_ref(self);
                  auto& gv = g.grad_acc(v);
                  for (std::int64_t i = 0; i < rows; ++i)
                    for (std::int64_t j = 0; j < d; ++j)
                      gv.data[static_cast<std::size_t>(j)] += gc.data[static_cast<std::size_t>(i * d + j)];
                }));
  }

  NodeId transpose(NodeId a) {
    const auto& av = value(a);
    if (av.rank() != 2) throw std::invalid_argument("transpose: rank-2 required");
    TensorT<T> out = TensorT<T>::zeros({av.cols(), av.rows()});
    as_matrix(out, av.cols(), av.rows()) = as_matrix(av, av.rows(), av.cols()).transpose();
    return push(std::move(out), requires_grad(a),
                make_entry("transpose", {a}, [a](GraphT& g, NodeId self) {
                  if (!g.requires_grad(a)) return;
                  const auto& gc = g.grad_ref(self);
                  auto& ga = g.grad_acc(a);
                  as_matrix(ga, ga.rows(), ga.cols()) += as_matrix(gc, gc.rows(), gc.cols()).transpose();
                }));
  }

  NodeId concat_cols(std::span<const NodeId> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no operands");
    const std::int64_t rows = value(parts[0]).rows();
    std::int64_t total = 0;
    bool ng = false;
    for (NodeId p : parts) {
      const auto& pv = value(p);
      if (pv.rank() != 2 || pv.rows() != rows) {
        throw std::invalid_argument("concat_cols: row mismatch at " + shape_str(pv.shape));
      }
      total += pv.cols();
      ng = ng || requires_grad(p);
    }
    TensorT<T> out = TensorT<T>::zeros({rows, total});
    std::int64_t off = 0;
    for (NodeId p : parts) {
      const auto& pv = value(p);
      for (std::int64_t i = 0; i < rows; ++i) {
        std::copy(pv.data.begin() + i * pv.cols(), pv.data.begin() + (i + 1) * pv.cols(),
                  out.data.begin() + i * total + off);
      }
      off += pv.cols();
    }
    std::vector<NodeId> ps(parts.begin(), parts.end());
    Entry e;
    e.op = "concat_cols";
    e.n_inputs = static_cast<int>(std::min<std::size_t>(ps.size(), 3));
    for (int i = 0; i < e.n_inputs; ++i) e.inputs[static_cast<std::size_t>(i)] = ps[static_cast<std::size_t>(i)];
    e.backward = [ps, rows, total](GraphT& g, NodeId self) {
      const auto& gc = g.grad_ref(self);
      std::int64_t off2 = 0;
      for (NodeId p : ps) {
        const std::int64_t c = g.value(p).cols();
        if (g.requires_grad(p)) {
          auto& gp = g.grad_acc(p);
          for (std::int64_t i = 0; i < rows; ++i)
            for (std::int64_t j = 0; j < c; ++j)
              gp.data[static_cast<std::size_t>(i * c + j)] += gc.data[static_cast<std::size_t>(i * total + off2 + j)];
        }
        off2 += c;
      }
    };
    return push(std::move(out), ng, std::move(e));
  }
  NodeId concat_cols(std::initializer_list<NodeId> parts) {
    return concat_cols(std::span<const NodeId>(parts.begin(), parts.size()));
  }

  NodeId gather_rows(NodeId a, std::vector<std::int64_t> idx) {
    const auto& av = value(a);
    if (av.rank() != 2) throw std::invalid_argument("gather_rows: rank-2 required");
    const std::int64_t d = av.cols();
    TensorT<T> out = TensorT<T>::zeros({static_cast<std::int64_t>(idx.size()), d});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0 || idx[i] >= av.rows()) throw std::invalid_argument("gather_rows: index out of range");
      std::copy(av.data.begin() + idx[i] * d, av.data.begin() + (idx[i] + 1) * d,
                out.data.begin() + static_cast<std::int64_t>(i) * d);
    }
    return push(std::move(out), requires_grad(a),
                make_entry("gather_rows", {a}, [a, idx = std::move(idx), d](GraphT& g, NodeId self) {
                  if (!g.requires_grad(a)) return;
                  const auto& gc = g.grad_ref(self);
                  auto& ga = g.grad_acc(a);
                  for (std::size_t i = 0; i < idx.size(); ++i)
                    for (std::int64_t j = 0; j < d; ++j)
                      ga.data[static_cast<std::size_t>(idx[i] * d + j)] +=
                          gc.data[static_cast<std::size_t>(static_cast<std::int64_t>(i) * d + j)];
                }));
  }

  NodeId reshape(NodeId a, std::vector<std::int64_t> shape) {
    TensorT<T> out(std::move(shape), value(a).data);
    if (out.numel() != value(a).numel()) throw std::invalid_argument("reshape: element count changed");
    return push(std::move(out), requires_grad(a),
                make_entry("reshape", {a}, [a](GraphT& g, NodeId self) {
                  if (!g.requires_grad(a)) return;
                  const auto& gc = g.grad_ref(self);
                  auto& ga = g.grad_acc(a);
                  for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += gc.data[i];
                }));
  }

  // Reduce along `axis`. Rank-2 supports axis 0/1; rank-3 supports axis 1
  // (the neighbor axis in edge aggregation). Ties route to the first index.
  NodeId reduce_max(NodeId a, int axis) { return reduce(a, axis, true); }
  NodeId reduce_mean(NodeId a, int axis) { return reduce(a, axis, false); }

  NodeId reduce_sum_all(NodeId a) {
    const auto& av = value(a);
    double acc = 0;
    for (T v : av.data) acc += static_cast<double>(v);
    return push(TensorT<T>::scalar(static_cast<T>(acc)), requires_grad(a),
                make_entry("reduce_sum_all", {a}, [a](GraphT& g, NodeId self) {
                  if (!g.requires_grad(a)) return;
                  const T gl = g.grad_ref(self).data[0];
                  auto& ga = g.grad_acc(a);
                  for (auto& v : ga.data) v += gl;
                }));
  }

  NodeId relu(NodeId a) {
    TensorT<T> out = value(a);
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    return push(std::move(out), requires_grad(a),
                make_entry("relu", {a}, [a](GraphT& g, NodeId self) {
                  if (!g.requires_grad(a)) return;
                  const auto& gc = g.grad_ref(self);
                  const auto& xv = g.value(a);
                  auto& ga = g.grad_acc(a);
                  for (std::size_t i = 0; i < ga.data.size(); ++i)
                    if (xv.data[i] > T(0)) ga.data[i] += gc.data[i];
                }));
  }

  NodeId leaky_relu(NodeId a, T slope) {
    TensorT<T> out = value(a);
    for (auto& v : out.data) v = v > T(0) ? v : slope * v;
    return push(std::move(out), requires_grad(a),
                make_entry("leaky_relu", {a}, [a, slope](GraphT& g, NodeId self) {
                  if (!g.requires_grad(a)) return;
                  const auto& gc = g.grad_ref(self);
                  const auto& xv = g.value(a);
                  auto& ga = g.grad_acc(a);
                  for (std::size_t i = 0; i < ga.data.size(); ++i)
                    ga.data[i] += (xv.data[i] > T(0) ? gc.data[i] : slope * gc.data[i]);
                }));
  }

  // Row softmax with max-subtraction stabilization.
  NodeId softmax_rows(NodeId a) {
    const auto& av = value(a);
    if (av.rank() != 2) throw std::invalid_argument("softmax_rows: rank-2 required, got " + shape_str(av.shape));
    const std::int64_t r = av.rows(), c = av.cols();
    TensorT<T> out = TensorT<T>::zeros({r, c});
    std::vector<double> row(static_cast<std::size_t>(c));
    for (std::int64_t i = 0; i < r; ++i) {
      // Per-row double accumulation keeps row sums within 1e-6 of one even
      // for thousands of keys.
      double mx = static_cast<double>(av.at(i, 0));
      for (std::int64_t j = 0; j < c; ++j) {
        const double v = static_cast<double>(av.at(i, j));
        if (std::isnan(v)) throw std::runtime_error("softmax_rows: NaN input");
        if (v > mx) mx = v;
      }
      double sum = 0;
      for (std::int64_t j = 0; j < c; ++j) {
        const double e = std::exp(static_cast<double>(av.at(i, j)) - mx);
        row[static_cast<std::size_t>(j)] = e;
        sum += e;
      }
      for (std::int64_t j = 0; j < c; ++j) out.at(i, j) = static_cast<T>(row[static_cast<std::size_t>(j)] / sum);
    }
    return push(std::move(out), requires_grad(a),
                make_entry("softmax_rows", {a}, [a, r, c](GraphT& g, NodeId self) {
                  if (!g.requires_grad(a)) return;
                  const auto& gc = g.grad_ref(self);
                  const auto& y = g.value(self);
                  auto& ga = g.grad_acc(a);
                  for (std::int64_t i = 0; i < r; ++i) {
                    T dot = 0;
                    for (std::int64_t j = 0; j < c; ++j) dot += gc.at(i, j) * y.at(i, j);
                    for (std::int64_t j = 0; j < c; ++j) ga.at(i, j) += y.at(i, j) * (gc.at(i, j) - dot);
                  }
                }));
  }

  // Batch-free normalization: statistics per channel group over all rows,
  // matching group norm with one sample whose spatial extent is the rows.
  NodeId group_norm(NodeId x, NodeId gamma, NodeId beta, int groups, T eps = T(1e-5)) {
    const auto& xv = value(x);
    if (xv.rank() != 2) throw std::invalid_argument("group_norm: rank-2 required");
    const std::int64_t r = xv.rows(), d = xv.cols();
    if (groups <= 0 || d % groups != 0) {
      throw std::invalid_argument("group_norm: group count " + std::to_string(groups) + " must divide width " +
                                  std::to_string(d));
    }
    if (value(gamma).numel() != d || value(beta).numel() != d) {
      throw std::invalid_argument("group_norm: scale/shift width mismatch");
    }
    const std::int64_t gw = d / groups;
    TensorT<T> xhat = TensorT<T>::zeros({r, d});
    std::vector<T> inv_std(static_cast<std::size_t>(groups));
    for (int gi = 0; gi < groups; ++gi) {
      const std::int64_t c0 = gi * gw;
      double mean = 0;
      for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < gw; ++j) mean += static_cast<double>(xv.at(i, c0 + j));
      mean /= static_cast<double>(r * gw);
      double var = 0;
      for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < gw; ++j) {
          const double dv = static_cast<double>(xv.at(i, c0 + j)) - mean;
          var += dv * dv;
        }
      var /= static_cast<double>(r * gw);
      const T istd = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      inv_std[static_cast<std::size_t>(gi)] = istd;
      for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < gw; ++j)
          xhat.at(i, c0 + j) = (xv.at(i, c0 + j) - static_cast<T>(mean)) * istd;
    }
    const auto& gv = value(gamma);
    const auto& bv = value(beta);
    TensorT<T> out = TensorT<T>::zeros({r, d});
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < d; ++j)
        out.at(i, j) = gv.data[static_cast<std::size_t>(j)] * xhat.at(i, j) + bv.data[static_cast<std::size_t>(j)];
    return push(std::move(out), requires_grad(x) || requires_grad(gamma) || requires_grad(beta),
                make_entry("group_norm", {x, gamma, beta},
                           [x, gamma, beta, groups, r, d, gw, xhat = std::move(xhat),
                            inv_std = std::move(inv_std)](GraphT& g, NodeId self) {
                             const auto& gc = g.grad_ref(self);
                             const auto& gam = g.value(gamma);
                             if (g.requires_grad(gamma)) {
                               auto& gg = g.grad_acc(gamma);
                               for (std::int64_t i = 0; i < r; ++i)
                                 for (std::int64_t j = 0; j < d; ++j)
                                   gg.data[static_cast<std::size_t>(j)] += gc.at(i, j) * xhat.at(i, j);
                             }
                             if (g.requires_grad(beta)) {
                               auto& gb = g.grad_acc(beta);
                               for (std::int64_t i = 0; i < r; ++i)
                                 for (std::int64_t j = 0; j < d; ++j)
                                   gb.data[static_cast<std::size_t>(j)] += gc.at(i, j);
                             }
                             if (!g.requires_grad(x)) return;
                             auto& gx = g.grad_acc(x);
                             const double m = static_cast<double>(r * gw);
                             for (int gi = 0; gi < groups; ++gi) {
                               const std::int64_t c0 = gi * gw;
                               double sum_dxhat = 0, sum_dxhat_xhat = 0;
                               for (std::int64_t i = 0; i < r; ++i)
                                 for (std::int64_t j = 0; j < gw; ++j) {
                                   const double dxh = static_cast<double>(gc.at(i, c0 + j)) *
                                                      static_cast<double>(gam.data[static_cast<std::size_t>(c0 + j)]);
                                   sum_dxhat += dxh;
                                   sum_dxhat_xhat += dxh * static_cast<double>(xhat.at(i, c0 + j));
                                 }
                               const double istd = static_cast<double>(inv_std[static_cast<std::size_t>(gi)]);
                               for (std::int64_t i = 0; i < r; ++i)
                                 for (std::int64_t j = 0; j < gw; ++j) {
                                   const double dxh = static_cast<double>(gc.at(i, c0 + j)) *
                                                      static_cast<double>(gam.data[static_cast<std::size_t>(c0 + j)]);
                                   const double v = istd * (dxh - sum_dxhat / m -
                                                            static_cast<double>(xhat.at(i, c0 + j)) * sum_dxhat_xhat / m);
                                   gx.at(i, c0 + j) += static_cast<T>(v);
                                 }
                             }
                           }));
  }

  // Inverted dropout; mask drawn from the caller's seeded generator.
  NodeId dropout(NodeId x, double rate, Rng& rng, bool training) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
    if (!training || rate == 0.0) return reshape(x, value(x).shape);  // identity, keeps the tape explicit
    const auto& xv = value(x);
    TensorT<T> mask = TensorT<T>::zeros(xv.shape);
    const T keep_inv = static_cast<T>(1.0 / (1.0 - rate));
    for (auto& v : mask.data) v = rng.uniform01() >= rate ? keep_inv : T(0);
    TensorT<T> out = xv;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask.data[i];
    return push(std::move(out), requires_grad(x),
                make_entry("dropout", {x}, [x, mask = std::move(mask)](GraphT& g, NodeId self) {
                  if (!g.requires_grad(x)) return;
                  const auto& gc = g.grad_ref(self);
                  auto& gx = g.grad_acc(x);
                  for (std::size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += gc.data[i] * mask.data[i];
                }));
  }

  // Mean over rows of -log p[label], with probabilities clamped at 1e-12.
  NodeId cross_entropy(NodeId probs, std::span<const int> labels) {
    const auto& pv = value(probs);
    if (pv.rank() != 2) throw std::invalid_argument("cross_entropy: rank-2 probabilities required");
    const std::int64_t p = pv.rows(), c = pv.cols();
    if (static_cast<std::int64_t>(labels.size()) != p) {
      throw std::invalid_argument("cross_entropy: label count mismatch");
    }
    constexpr double kClamp = 1e-12;
    double loss = 0;
    for (std::int64_t i = 0; i < p; ++i) {
      double row = 0;
      for (std::int64_t j = 0; j < c; ++j) row += static_cast<double>(pv.at(i, j));
      if (std::abs(row - 1.0) > 1e-5) {
        throw std::invalid_argument("cross_entropy: row " + std::to_string(i) + " sums to " + std::to_string(row));
      }
      const int l = labels[static_cast<std::size_t>(i)];
      if (l < 0 || l >= c) throw std::invalid_argument("cross_entropy: label " + std::to_string(l) + " out of range");
      loss -= std::log(std::max(static_cast<double>(pv.at(i, l)), kClamp));
    }
    loss /= static_cast<double>(p);
    std::vector<int> ls(labels.begin(), labels.end());
    return push(TensorT<T>::scalar(static_cast<T>(loss)), requires_grad(probs),
                make_entry("cross_entropy", {probs}, [probs, ls = std::move(ls), p](GraphT& g, NodeId self) {
                  if (!g.requires_grad(probs)) return;
                  const T gl = g.grad_ref(self).data[0];
                  const auto& pvv = g.value(probs);
                  auto& gp = g.grad_acc(probs);
                  for (std::int64_t i = 0; i < p; ++i) {
                    const int l = ls[static_cast<std::size_t>(i)];
                    const T pr = pvv.at(i, l);
                    if (static_cast<double>(pr) > kClamp) {
                      gp.at(i, l) -= gl / (static_cast<T>(p) * pr);
                    }
                  }
                }));
  }

 private:
  std::vector<TensorT<T>> values_;
  std::vector<TensorT<T>> grads_;
  std::vector<Entry> entries_;
  std::vector<bool> needs_grad_;
  std::vector<std::pair<NodeId, std::string>> named_leaves_;

  std::size_t check(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= values_.size()) {
      throw std::invalid_argument("tape: dangling node reference " + std::to_string(id));
    }
    return static_cast<std::size_t>(id);
  }

  NodeId push(TensorT<T> value, bool needs_grad, Entry entry) {
    values_.push_back(std::move(value));
    entries_.push_back(std::move(entry));
    needs_grad_.push_back(needs_grad);
    return static_cast<NodeId>(values_.size() - 1);
  }

  template <typename F>
  Entry make_entry(const char* op, std::initializer_list<NodeId> inputs, F&& fn) {
    Entry e;
    e.op = op;
    e.n_inputs = static_cast<int>(inputs.size());
    int i = 0;
    for (NodeId id : inputs) e.inputs[static_cast<std::size_t>(i++)] = id;
    e.backward = std::forward<F>(fn);
    return e;
  }

  const TensorT<T>& grad_ref(NodeId id) { return grads_[check(id)]; }

  TensorT<T>& grad_acc(NodeId id) {
    const auto i = check(id);
    if (grads_[i].data.empty()) grads_[i] = TensorT<T>::zeros(values_[i].shape);
    return grads_[i];
  }

  NodeId elementwise(NodeId a, NodeId b, const char* op) {
    const auto& av = value(a);
    const auto& bv = value(b);
    if (av.shape != bv.shape) {
      throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(av.shape) + " vs " +
                                  shape_str(bv.shape));
    }
    TensorT<T> out = av;
    const char k = op[0];  // 'a', 's', 'm'
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      if (k == 'a') out.data[i] += bv.data[i];
      else if (k == 's') out.data[i] -= bv.data[i];
      else out.data[i] *= bv.data[i];
    }
    return push(std::move(out), requires_grad(a) || requires_grad(b),
                make_entry(op, {a, b}, [a, b, k](GraphT& g, NodeId self) {
                  const auto& gc = g.grad_ref(self);
                  if (g.requires_grad(a)) {
                    auto& ga = g.grad_acc(a);
                    if (k == 'm') {
                      const auto& bvv = g.value(b);
                      for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += gc.data[i] * bvv.data[i];
                    } else {
                      for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += gc.data[i];
                    }
                  }
                  if (g.requires_grad(b)) {
                    auto& gb = g.grad_acc(b);
                    if (k == 'm') {
                      const auto& avv = g.value(a);
                      for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += gc.data[i] * avv.data[i];
                    } else if (k == 's') {
                      for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] -= gc.data[i];
                    } else {
                      for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += gc.data[i];
                    }
                  }
                }));
  }

  NodeId reduce(NodeId a, int axis, bool is_max) {
    const auto& av = value(a);
    std::int64_t b = 1, r, c;
    if (av.rank() == 2 && (axis == 0 || axis == 1)) {
      r = av.shape[0];
      c = av.shape[1];
      if (axis == 0) {
        b = 1;  // reduce rows: treat as 1 x r x c reducing middle
      } else {
        // reduce cols: transpose view handled below
      }
    } else if (av.rank() == 3 && axis == 1) {
      b = av.shape[0];
      r = av.shape[1];
      c = av.shape[2];
    } else {
      throw std::invalid_argument("reduce: unsupported rank/axis for " + shape_str(av.shape));
    }

    const char* op = is_max ? "reduce_max" : "reduce_mean";
    if (av.rank() == 2 && axis == 1) {
      // out: R x 1
      const std::int64_t rows = av.shape[0], cols = av.shape[1];
      TensorT<T> out = TensorT<T>::zeros({rows, 1});
      std::vector<std::int64_t> arg(static_cast<std::size_t>(rows), 0);
      for (std::int64_t i = 0; i < rows; ++i) {
        if (is_max) {
          T mx = av.at(i, 0);
          std::int64_t mj = 0;
          for (std::int64_t j = 1; j < cols; ++j)
            if (av.at(i, j) > mx) { mx = av.at(i, j); mj = j; }
          out.data[static_cast<std::size_t>(i)] = mx;
          arg[static_cast<std::size_t>(i)] = mj;
        } else {
          double s = 0;
          for (std::int64_t j = 0; j < cols; ++j) s += static_cast<double>(av.at(i, j));
          out.data[static_cast<std::size_t>(i)] = static_cast<T>(s / static_cast<double>(cols));
        }
      }
      return push(std::move(out), requires_grad(a),
                  make_entry(op, {a}, [a, rows, cols, is_max, arg = std::move(arg)](GraphT& g, NodeId self) {
                    if (!g.requires_grad(a)) return;
                    const auto& gc = g.grad_ref(self);
                    auto& ga = g.grad_acc(a);
                    for (std::int64_t i = 0; i < rows; ++i) {
                      const T gi = gc.data[static_cast<std::size_t>(i)];
                      if (is_max) ga.at(i, arg[static_cast<std::size_t>(i)]) += gi;
                      else
                        for (std::int64_t j = 0; j < cols; ++j) ga.at(i, j) += gi / static_cast<T>(cols);
                    }
                  }));
    }

    // Remaining cases reduce the middle axis of a b x r x c view.
    if (av.rank() == 2) { b = 1; r = av.shape[0]; c = av.shape[1]; }
    TensorT<T> out = TensorT<T>::zeros(av.rank() == 2 ? std::vector<std::int64_t>{1, c}
                                                      : std::vector<std::int64_t>{b, c});
    std::vector<std::int64_t> arg(is_max ? static_cast<std::size_t>(b * c) : 0, 0);
    for (std::int64_t bi = 0; bi < b; ++bi) {
      for (std::int64_t j = 0; j < c; ++j) {
        const std::int64_t base = bi * r * c;
        if (is_max) {
          T mx = av.data[static_cast<std::size_t>(base + j)];
          std::int64_t mi = 0;
          for (std::int64_t i = 1; i < r; ++i) {
            const T v = av.data[static_cast<std::size_t>(base + i * c + j)];
            if (v > mx) { mx = v; mi = i; }
          }
          out.data[static_cast<std::size_t>(bi * c + j)] = mx;
          arg[static_cast<std::size_t>(bi * c + j)] = mi;
        } else {
          double s = 0;
          for (std::int64_t i = 0; i < r; ++i) s += static_cast<double>(av.data[static_cast<std::size_t>(base + i * c + j)]);
          out.data[static_cast<std::size_t>(bi * c + j)] = static_cast<T>(s / static_cast<double>(r));
        }
      }
    }
    return push(std::move(out), requires_grad(a),
                make_entry(op, {a}, [a, b, r, c, is_max, arg = std::move(arg)](GraphT& g, NodeId self) {
                  if (!g.requires_grad(a)) return;
                  const auto& gc = g.grad_ref(self);
                  auto& ga = g.grad_acc(a);
                  for (std::int64_t bi = 0; bi < b; ++bi)
                    for (std::int64_t j = 0; j < c; ++j) {
                      const T gi = gc.data[static_cast<std::size_t>(bi * c + j)];
                      const std::int64_t base = bi * r * c;
                      if (is_max) {
                        ga.data[static_cast<std::size_t>(base + arg[static_cast<std::size_t>(bi * c + j)] * c + j)] += gi;
                      } else {
                        for (std::int64_t i = 0; i < r; ++i)
                          ga.data[static_cast<std::size_t>(base + i * c + j)] += gi / static_cast<T>(r);
                      }
                    }
                }));
  }
};

using Graph = GraphT<float>;
using Graph64 = GraphT<double>;

}  // namespace csn

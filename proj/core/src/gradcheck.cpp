#include "csn/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace csn {

namespace {

double eval_loss(const std::map<std::string, Tensor64>& values, const LossBuilder64& loss_fn) {
  Graph64 g;
  std::map<std::string, NodeId> leaves;
  for (const auto& [name, t] : values) leaves[name] = g.leaf(t, false, name);
  const NodeId loss = loss_fn(g, leaves);
  return g.value(loss).data[0];
}

}  // namespace

GradCheckReport check_gradients(const ParameterStore& params, const LossBuilder64& loss_fn, double step) {
  if (step <= 0) throw std::invalid_argument("check_gradients: step must be positive");

  std::map<std::string, Tensor64> shadow;
  for (const auto& [name, e] : params.entries()) {
    if (e.trainable) shadow[name] = e.value.cast<double>();
  }

  // Analytic gradients on the double tape.
  Graph64 g;
  std::map<std::string, NodeId> leaves;
  for (const auto& [name, t] : shadow) leaves[name] = g.leaf(t, true, name);
  const NodeId loss = loss_fn(g, leaves);
  const double base = g.value(loss).data[0];
  if (eval_loss(shadow, loss_fn) != base) {
    throw std::runtime_error("check_gradients: loss is not deterministic (disable dropout or pin its seed)");
  }
  g.backward(loss);
  const auto analytic = g.gradient_map();

  GradCheckReport report;
  for (auto& [name, t] : shadow) {
    const auto& ag = analytic.at(name);
    double worst = 0.0;
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      const double keep = t.data[i];
      t.data[i] = keep + step;
      const double up = eval_loss(shadow, loss_fn);
      t.data[i] = keep - step;
      const double dn = eval_loss(shadow, loss_fn);
      t.data[i] = keep;
      const double numeric = (up - dn) / (2.0 * step);
      const double a = ag.data[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      if (rel > worst) worst = rel;
    }
    report.max_rel_error[name] = worst;
    if (worst > report.worst) {
      report.worst = worst;
      report.worst_param = name;
    }
  }
  return report;
}

}  // namespace csn

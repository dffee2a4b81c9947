#pragma once

#include <functional>
#include <map>
#include <string>

#include "csn/autodiff.hpp"
#include "csn/params.hpp"

namespace csn {

// Builds a scalar loss node from parameter leaves. The whole check runs in a
// 64-bit shadow evaluation so central differences stay tight.
using LossBuilder64 = std::function<NodeId(Graph64&, const std::map<std::string, NodeId>&)>;

struct GradCheckReport {
  std::map<std::string, double> max_rel_error;  // per trainable parameter
  double worst = 0.0;
  std::string worst_param;
};

// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8), maximized per
// parameter entry; numeric side is central differences with the given step.
// Throws if two base evaluations disagree (non-deterministic loss).
GradCheckReport check_gradients(const ParameterStore& params, const LossBuilder64& loss_fn, double step = 1e-3);

}  // namespace csn

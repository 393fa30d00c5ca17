#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stsc/nn.hpp"

namespace stsc {

struct GradcheckOptions {
  double tol = 1e-5;
  double eps = 1e-6;
  /// Minimum number of checked (non-skipped) coordinates per component.
  int coords = 100;
  /// Denominator floor of the relative error.
  double rel_floor = 1e-3;
  Precision precision = Precision::f64;
  std::uint64_t seed = 20240601;
};

/// A scalar function of named leaves. Entries frozen in `leaves` are held
/// constant and never probed.
struct GradComponent {
  std::string name;
  bool primitive = true;  // single op rather than a composite block
  ParamStore leaves;
  std::function<Var(ParamBinder&)> fn;
};

struct ComponentResult {
  std::string name;
  bool primitive = true;
  double max_rel_error = 0.0;
  std::string worst_coordinate;
  int checked = 0;
  /// Coordinates dropped because the one-sided differences disagree (a
  /// non-differentiable point lies within eps).
  int skipped = 0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<ComponentResult> components;
  bool passed() const;
  /// Worst failing primitive op if any fails, otherwise the worst failing
  /// composite; nullptr when everything passed.
  const ComponentResult* worst_offender() const;
};

double relative_error(double analytic, double numeric, double floor);

ComponentResult check_component(const GradComponent& component, const GradcheckOptions& opts);

/// Per-op components plus the composite blocks and the full network with loss
/// (c0=4, sem=8, 1x3x16x16).
std::vector<GradComponent> gradcheck_components(const GradcheckOptions& opts);

GradcheckReport run_gradcheck(const GradcheckOptions& opts,
                              const std::function<void(const ComponentResult&)>& on_result = {});

}  // namespace stsc

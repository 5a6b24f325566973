#pragma once

#include "celltopo/grid.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace celltopo {

/// A learnable array together with the name used in diagnostics.
struct ParamRef {
  std::string name;
  Grid* value = nullptr;
};

struct AdamConfig {
  double learning_rate = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive-moment optimizer state for one parameter set.
struct OptimState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<Grid> first_moment;
  std::vector<Grid> second_moment;

  /// Zero moments shaped like `params`.
  static OptimState for_params(std::span<const ParamRef> params, AdamConfig config = {});
};

/// One bias-corrected adaptive-moment update, in place. Throws
/// std::runtime_error naming the offending parameter if a gradient is not
/// finite; parameters are left untouched in that case.
void optim_step(std::span<const ParamRef> params, std::span<const Grid* const> grads,
                OptimState& state);

}  // namespace celltopo

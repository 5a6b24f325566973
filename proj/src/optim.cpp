#include "celltopo/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace celltopo {

OptimState OptimState::for_params(std::span<const ParamRef> params, AdamConfig config) {
  OptimState state;
  state.config = config;
  for (const ParamRef& p : params) {
    state.first_moment.push_back(Grid::zeros_like(*p.value));
    state.second_moment.push_back(Grid::zeros_like(*p.value));
  }
  return state;
}

void optim_step(std::span<const ParamRef> params, std::span<const Grid* const> grads,
                OptimState& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size() ||
      params.size() != state.second_moment.size()) {
    throw std::invalid_argument("optim_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Grid& g = *grads[i];
    if (!g.same_shape(*params[i].value) || !state.first_moment[i].same_shape(g)) {
      throw std::invalid_argument("optim_step: shape mismatch for " + params[i].name);
    }
    if (!g.all_finite()) {
      throw std::runtime_error("non-finite gradient in layer " + params[i].name);
    }
  }

  const AdamConfig& cfg = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Grid& p = *params[i].value;
    const Grid& g = *grads[i];
    Grid& m = state.first_moment[i];
    Grid& v = state.second_moment[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      p[j] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

}  // namespace celltopo

#include "prime/adam.hpp"

#include <cmath>

#include "prime/errors.hpp"

namespace prime {

void adam_step(Tensor& params, const Tensor& grads, AdamState& state) {
  require(params.same_shape(grads), "adam_step: gradient shape " +
                                        shape_string(grads.shape()) +
                                        " does not match parameter shape " +
                                        shape_string(params.shape()));
  require(state.cfg.lr >= 0.0, "adam_step: negative learning rate");
  if (state.m.size() == 0) {
    state.m = Tensor::zeros_like(params);
    state.v = Tensor::zeros_like(params);
  }
  require(state.m.same_shape(params) && state.v.same_shape(params),
          "adam_step: moment shapes do not match parameters");

  const AdamConfig& c = state.cfg;
  state.t += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  const double decay = 1.0 - c.lr * c.weight_decay;

  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    if (c.weight_decay > 0.0) params[i] *= decay;
    params[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
  }
}

}  // namespace prime

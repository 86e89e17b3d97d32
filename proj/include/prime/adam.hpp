#pragma once

#include <cstdint>

#include "prime/tensor.hpp"

namespace prime {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Moments for one parameter tensor. Empty moments are sized on first use.
struct AdamState {
  AdamConfig cfg;
  Tensor m;
  Tensor v;
  std::int64_t t = 0;
};

// AdamW: bias-corrected moments, decoupled multiplicative weight decay.
void adam_step(Tensor& params, const Tensor& grads, AdamState& state);

}  // namespace prime

#pragma once

#include <string>
#include <vector>

#include "cdseg/segnet.hpp"

namespace cdseg {

struct TrainConfig {
  double lr0 = 0.01;
  double momentum = 0.90;
  double decay = 0.95;  // per-epoch learning-rate decay
  int epochs = 30;
  int batch_size = 4;
  double tau = 0.5;
  std::uint64_t seed = 0;
  bool use_cdfm = true;  // Stage II only: add the contrastive alignment term

  void validate(int stage) const;
};

/// lr0 * decay^epoch
double lr_at(int epoch, const TrainConfig& cfg);

/// Momentum buffers keyed by parameter name, zero until the first step.
class OptimizerState {
 public:
  OptimizerState() = default;
  explicit OptimizerState(NetworkParams velocity) : velocity_(std::move(velocity)) {}

  const NetworkParams& velocity() const { return velocity_; }
  NetworkParams& velocity() { return velocity_; }
  bool empty() const { return velocity_.size() == 0; }

 private:
  NetworkParams velocity_;
};

/// Heavy-ball SGD over the named trainable parameters:
///   v <- momentum * v + g;  p <- p - lr * v.
/// Every gradient is checked first; a non-finite entry throws kDivergence
/// and leaves parameters and state untouched.
void sgd_step(NetworkParams& params, const std::vector<std::string>& trainable,
              OptimizerState& state, double lr, double momentum);

}  // namespace cdseg

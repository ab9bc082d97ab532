#include "cdseg/optim.hpp"

#include <cmath>

#include "cdseg/error.hpp"

namespace cdseg {

void TrainConfig::validate(int stage) const {
  if (!(lr0 > 0.0)) fail(ErrorKind::kConfig, "lr0 must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail(ErrorKind::kConfig, "momentum must lie in [0, 1)");
  if (!(decay > 0.0 && decay <= 1.0)) fail(ErrorKind::kConfig, "decay must lie in (0, 1]");
  if (epochs < 0) fail(ErrorKind::kConfig, "epochs must be non-negative");
  if (batch_size < 1) fail(ErrorKind::kConfig, "batch_size must be positive");
  if (stage == 2 && batch_size < 2) {
    fail(ErrorKind::kConfig, "stage 2 needs batch_size >= 2 for the contrastive denominator");
  }
  if (!(tau > 0.0)) fail(ErrorKind::kConfig, "tau must be positive");
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) fail(ErrorKind::kDomain, "lr_at: negative epoch");
  return cfg.lr0 * std::pow(cfg.decay, epoch);
}

void sgd_step(NetworkParams& params, const std::vector<std::string>& trainable,
              OptimizerState& state, double lr, double momentum) {
  for (const auto& name : trainable) {
    const auto& p = params.at(name);
    if (!p.has_grad()) fail(ErrorKind::kShapeMismatch, "sgd_step: no gradient for " + name);
    for (double g : p.grad()) {
      if (!std::isfinite(g)) fail(ErrorKind::kDivergence, "non-finite gradient for " + name);
    }
  }
  for (const auto& name : trainable) {
    auto& p = params.at(name);
    if (!state.velocity().contains(name)) {
      state.velocity().add(name, ad::Tensor::zeros(p.shape()));
    }
    auto& v = state.velocity().at(name);
    if (v.shape() != p.shape()) fail(ErrorKind::kShapeMismatch, "sgd_step: velocity shape for " + name);
    auto vd = v.mutable_data();
    auto pd = p.mutable_data();
    auto g = p.grad();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      vd[i] = momentum * vd[i] + g[i];
      pd[i] -= lr * vd[i];
    }
  }
}

}  // namespace cdseg

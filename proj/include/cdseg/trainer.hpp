#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cdseg/io_store.hpp"
#include "cdseg/optim.hpp"
#include "cdseg/segnet.hpp"

namespace cdseg {

struct EpochRecord {
  int epoch = 0;
  double l_ls = 0.0;
  double l_cont = 0.0;
  double total = 0.0;
  double lr = 0.0;
  double wall_s = 0.0;
  // stage-2 samples left out of l_cont because a feature row was all zero
  int cont_skipped = 0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
};

/// `epoch=<e> l_ls=<v> l_cont=<v> total=<v> lr=<v>`, plus `l_cont_skipped=<k>` when k > 0
std::string format_epoch_line(const EpochRecord& rec);

struct TrainResult {
  NetworkParams params;
  OptimizerState optimizer;
  TrainLog log;
};

using ProgressFn = std::function<void(const EpochRecord&)>;

enum class Modality { kRgb, kDepth };

/// Single-encoder training minimizing the Lovasz-Softmax loss. The default
/// RGB modality is Stage I; depth is the depth-only ablation.
TrainResult train_stage1(const std::vector<SegSample>& data, const TrainConfig& cfg,
                         const EncoderConfig& enc, Modality modality = Modality::kRgb,
                         const ProgressFn& progress = {});

/// Builds the Stage-II parameter set from a Stage-I network: the RGB encoder
/// and decoder are warm-started copies, the depth encoder is freshly seeded,
/// and a frozen verbatim copy of the RGB encoder becomes the reference.
NetworkParams init_stage2(const NetworkParams& stage1, std::uint64_t seed);

/// Dual-encoder training with objective L_ls + L_cont (L_ls alone when
/// cfg.use_cdfm is off). Reference-encoder tensors are never updated.
TrainResult train_stage2(const std::vector<SegSample>& data, const NetworkParams& stage1,
                         const TrainConfig& cfg, const ProgressFn& progress = {});

/// Names the optimizer updates: every entry except the frozen reference encoder.
std::vector<std::string> trainable_names(const NetworkParams& params);

/// Batches of sample indices for one epoch: seeded shuffle, fixed size, last
/// partial batch kept or dropped.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch_size,
                                                    std::uint64_t seed, int epoch,
                                                    bool drop_last);

}  // namespace cdseg

#include "cdseg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "cdseg/error.hpp"
#include "cdseg/losses.hpp"
#include "cdseg/ops.hpp"
#include "cdseg/rng.hpp"

namespace cdseg {
namespace {

using Clock = std::chrono::steady_clock;

void check_dataset(const std::vector<SegSample>& data) {
  if (data.empty()) fail(ErrorKind::kValidation, "training dataset is empty");
  for (const auto& s : data) {
    if (s.height % 32 != 0 || s.width % 32 != 0) {
      fail(ErrorKind::kResolution, s.id + ": resolution not divisible by 32");
    }
  }
}

void check_finite(double v, const char* what, int epoch, std::size_t batch) {
  if (!std::isfinite(v)) {
    fail(ErrorKind::kDivergence, std::string("non-finite ") + what + " at epoch " +
                                     std::to_string(epoch) + " batch " + std::to_string(batch));
  }
}

void check_finite(const ad::Tensor& t, const char* what, int epoch, std::size_t batch) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) check_finite(v, what, epoch, batch);
  }
}

// Applies one optimizer step, re-raising divergence with the batch location.
void step(NetworkParams& params, const std::vector<std::string>& names, OptimizerState& state,
          double lr, double momentum, int epoch, std::size_t batch) {
  try {
    sgd_step(params, names, state, lr, momentum);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kDivergence) throw;
    fail(ErrorKind::kDivergence, std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                                     " batch " + std::to_string(batch));
  }
}

std::vector<std::span<const std::uint8_t>> label_views(const std::vector<SegSample>& data,
                                                       const std::vector<std::size_t>& batch) {
  std::vector<std::span<const std::uint8_t>> out;
  for (auto i : batch) out.emplace_back(data[i].labels);
  return out;
}

bool all_zero(const ad::Tensor& t) {
  const auto d = t.data();
  return std::all_of(d.begin(), d.end(), [](double v) { return v == 0.0; });
}

}  // namespace

std::string format_epoch_line(const EpochRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "epoch=%d l_ls=%.9g l_cont=%.9g total=%.9g lr=%.9g", r.epoch,
                r.l_ls, r.l_cont, r.total, r.lr);
  std::string line = buf;
  if (r.cont_skipped > 0) line += " l_cont_skipped=" + std::to_string(r.cont_skipped);
  return line;
}

std::vector<std::string> trainable_names(const NetworkParams& params) {
  const std::string frozen = std::string(kRefEncoder) + ".";
  std::vector<std::string> names;
  for (const auto& [name, _] : params) {
    if (!name.starts_with(frozen)) names.push_back(name);
  }
  return names;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch_size,
                                                    std::uint64_t seed, int epoch,
                                                    bool drop_last) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0x5000 + static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  const auto bs = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < n; start += bs) {
    const std::size_t end = std::min(n, start + bs);
    if (drop_last && end - start < bs) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

TrainResult train_stage1(const std::vector<SegSample>& data, const TrainConfig& cfg,
                         const EncoderConfig& enc_in, Modality modality,
                         const ProgressFn& progress) {
  cfg.validate(1);
  check_dataset(data);
  EncoderConfig enc = enc_in;
  enc.in_channels = modality == Modality::kRgb ? 3 : 1;
  const auto encoder = modality == Modality::kRgb ? kRgbEncoder : kDepthEncoder;

  TrainResult res;
  res.params = build_network(enc, kNumClasses, cfg.seed);
  const auto names = trainable_names(res.params);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    const double lr = lr_at(epoch, cfg);
    const auto batches = epoch_batches(data.size(), cfg.batch_size, cfg.seed, epoch, false);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      res.params.zero_grad();
      std::vector<ad::Tensor> probs;
      for (auto i : batches[b]) {
        const auto& input = modality == Modality::kRgb ? data[i].rgb : data[i].depth;
        const auto logits = forward_stage1(res.params, input, encoder).logits;
        check_finite(logits, "logits", epoch, b);
        probs.push_back(ad::softmax_channels(logits));
      }
      const ad::Tensor loss = lovasz_softmax(probs, label_views(data, batches[b]));
      check_finite(loss.item(), "loss", epoch, b);
      ad::backward(loss);
      step(res.params, names, res.optimizer, lr, cfg.momentum, epoch, b);
      loss_sum += loss.item();
    }
    EpochRecord rec;
    rec.epoch = epoch;
    const auto parts = total_loss(loss_sum / static_cast<double>(batches.size()), std::nullopt);
    rec.l_ls = parts.l_ls;
    rec.l_cont = parts.l_cont;
    rec.total = parts.total;
    rec.lr = lr;
    rec.wall_s = std::chrono::duration<double>(Clock::now() - t0).count();
    res.log.epochs.push_back(rec);
    if (progress) progress(rec);
  }
  return res;
}

NetworkParams init_stage2(const NetworkParams& stage1, std::uint64_t seed) {
  if (network_kind(stage1) != NetworkKind::kStage1Rgb) {
    fail(ErrorKind::kStructureMismatch, "stage 2 needs a stage-1 RGB checkpoint");
  }
  EncoderConfig enc = infer_encoder_config(stage1, kRgbEncoder);
  if (enc.in_channels != 3) {
    fail(ErrorKind::kStructureMismatch, "stage-1 RGB encoder must take 3 input channels");
  }
  // Exercise the decoder against the encoder widths before training starts.
  {
    ad::NoGradGuard no_grad;
    const ad::Tensor probe = ad::Tensor::zeros({3, 32, 32});
    try {
      forward_stage1(stage1, probe);
    } catch (const Error& e) {
      fail(ErrorKind::kStructureMismatch, std::string("stage-1 network is inconsistent: ") + e.what());
    }
  }
  NetworkParams p;
  p.copy_prefix(stage1, kRgbEncoder, kRgbEncoder, true);
  enc.in_channels = 1;
  add_encoder(p, kDepthEncoder, enc, derive_seed(seed, 0xde97));
  p.copy_prefix(stage1, kDecoder, kDecoder, true);
  p.copy_prefix(stage1, kRgbEncoder, kRefEncoder, false);
  return p;
}

TrainResult train_stage2(const std::vector<SegSample>& data, const NetworkParams& stage1,
                         const TrainConfig& cfg, const ProgressFn& progress) {
  cfg.validate(2);
  check_dataset(data);
  if (data.size() < static_cast<std::size_t>(cfg.batch_size)) {
    fail(ErrorKind::kValidation, "stage 2 needs at least one full batch of samples");
  }

  TrainResult res;
  res.params = init_stage2(stage1, cfg.seed);
  const auto names = trainable_names(res.params);
  const Temperature tau(cfg.tau);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    const double lr = lr_at(epoch, cfg);
    const auto batches = epoch_batches(data.size(), cfg.batch_size, cfg.seed, epoch, true);
    double ls_sum = 0.0, cont_sum = 0.0;
    int skipped = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      res.params.zero_grad();
      std::vector<ad::Tensor> rgb, depth;
      for (auto i : batches[b]) {
        rgb.push_back(data[i].rgb);
        depth.push_back(data[i].depth);
      }
      const auto out = forward_stage2_batch(res.params, rgb, depth, cfg.use_cdfm);
      std::vector<ad::Tensor> probs;
      for (const auto& l : out.logits) {
        check_finite(l, "logits", epoch, b);
        probs.push_back(ad::softmax_channels(l));
      }
      const ad::Tensor l_ls = lovasz_softmax(probs, label_views(data, batches[b]));
      ad::Tensor total = l_ls;
      double cont = 0.0;
      ad::Tensor l_cont;
      if (out.contrast) {
        // A sample whose stage-5 units are all inactive has no direction to
        // align, so it sits out the contrastive term for this batch. The
        // count is reported in the epoch line.
        const auto& c = *out.contrast;
        std::vector<ad::Tensor> dk, rk;
        for (std::size_t i = 0; i < c.depth_rows.size(); ++i) {
          if (all_zero(c.depth_rows[i]) || all_zero(c.ref_rows[i])) continue;
          dk.push_back(c.depth_rows[i]);
          rk.push_back(c.ref_rows[i]);
        }
        skipped += static_cast<int>(c.depth_rows.size() - dk.size());
        if (dk.size() == c.depth_rows.size()) {
          l_cont = ntxent(c.f_depth, c.f_rgb_ref, tau);
        } else if (dk.size() >= 2) {
          l_cont = ntxent(ad::stack_rows(dk), ad::stack_rows(rk), tau);
        }
      }
      if (l_cont.defined()) {
        cont = l_cont.item();
        total = ad::add(l_ls, l_cont);
      }
      check_finite(total.item(), "loss", epoch, b);
      ad::backward(total);
      step(res.params, names, res.optimizer, lr, cfg.momentum, epoch, b);
      ls_sum += l_ls.item();
      cont_sum += cont;
    }
    const double nb = static_cast<double>(batches.size());
    const auto parts = total_loss(ls_sum / nb, cont_sum / nb);
    EpochRecord rec{epoch, parts.l_ls, parts.l_cont, parts.total, lr,
                    std::chrono::duration<double>(Clock::now() - t0).count(), skipped};
    res.log.epochs.push_back(rec);
    if (progress) progress(rec);
  }
  return res;
}

}  // namespace cdseg

#include "cdseg/segnet.hpp"

#include <algorithm>
#include <cmath>

#include "cdseg/error.hpp"
#include "cdseg/ops.hpp"
#include "cdseg/rng.hpp"

namespace cdseg {
namespace {

std::string stage_name(std::string_view prefix, int stage, std::string_view part) {
  return param_name(prefix, "s" + std::to_string(stage) + "." + std::string(part));
}

ad::Tensor uniform_tensor(ad::Shape shape, double bound, Rng& rng) {
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return ad::Tensor(std::move(shape), std::move(v), /*requires_grad=*/true);
}

void add_conv(NetworkParams& params, const std::string& base, int cout, int cin, int k,
              Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(cin * k * k));
  const auto uc = static_cast<std::size_t>(cout), ui = static_cast<std::size_t>(cin),
             uk = static_cast<std::size_t>(k);
  params.add(base + ".weight", uniform_tensor({uc, ui, uk, uk}, bound, rng));
  // zero bias: with a uniform bias the deepest features end up bias-dominated
  // and nearly identical across inputs, which flattens the contrastive loss
  params.add(base + ".bias", ad::Tensor({uc}, std::vector<double>(uc, 0.0), true));
}

ad::Tensor conv_named(const NetworkParams& params, const std::string& base, const ad::Tensor& x,
                      int stride) {
  const auto& w = params.at(base + ".weight");
  const int pad = static_cast<int>(w.dim(2)) / 2;
  return ad::conv2d(x, w, params.at(base + ".bias"), stride, pad);
}

int decoder_width(int channels, int min_channels) {
  return std::max(channels / 2, min_channels);
}

}  // namespace

std::string param_name(std::string_view prefix, std::string_view part) {
  return std::string(prefix) + "." + std::string(part);
}

void EncoderConfig::validate() const {
  if (in_channels < 1) fail(ErrorKind::kConfig, "encoder in_channels must be positive");
  for (int c : stage_channels) {
    if (c < 1) fail(ErrorKind::kConfig, "encoder stage channels must be positive");
  }
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    fail(ErrorKind::kConfig, "encoder kernel_size must be a positive odd integer");
  }
  if (decoder_min_channels < 1) fail(ErrorKind::kConfig, "decoder_min_channels must be positive");
}

// ---------------------------------------------------------------- NetworkParams

void NetworkParams::add(std::string name, ad::Tensor tensor) {
  if (index_.contains(name)) fail(ErrorKind::kStructureMismatch, "duplicate parameter " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(tensor));
}

bool NetworkParams::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

const ad::Tensor& NetworkParams::at(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) fail(ErrorKind::kStructureMismatch, "missing parameter " + std::string(name));
  return entries_[it->second].second;
}

ad::Tensor& NetworkParams::at(std::string_view name) {
  return const_cast<ad::Tensor&>(std::as_const(*this).at(name));
}

std::size_t NetworkParams::element_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

bool NetworkParams::has_prefix(std::string_view prefix) const {
  const std::string p = std::string(prefix) + ".";
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return e.first.starts_with(p); });
}

NetworkParams NetworkParams::clone() const {
  NetworkParams out;
  for (const auto& [name, t] : entries_) out.add(name, t.detach_copy(t.requires_grad()));
  return out;
}

NetworkParams NetworkParams::subset(std::string_view prefix) const {
  NetworkParams out;
  const std::string p = std::string(prefix) + ".";
  for (const auto& [name, t] : entries_) {
    if (name.starts_with(p)) out.add(name, t);
  }
  return out;
}

void NetworkParams::copy_prefix(const NetworkParams& src, std::string_view from,
                                std::string_view to, bool requires_grad) {
  const std::string p = std::string(from) + ".";
  for (const auto& [name, t] : src) {
    if (!name.starts_with(p)) continue;
    add(std::string(to) + "." + name.substr(p.size()), t.detach_copy(requires_grad));
  }
}

void NetworkParams::set_requires_grad(std::string_view prefix, bool flag) {
  const std::string p = std::string(prefix) + ".";
  for (auto& [name, t] : entries_) {
    if (name.starts_with(p)) t.set_requires_grad(flag);
  }
}

void NetworkParams::zero_grad() {
  for (auto& [_, t] : entries_) {
    if (t.requires_grad()) t.zero_grad();
  }
}

// ---------------------------------------------------------------- construction

void add_encoder(NetworkParams& params, std::string_view prefix, const EncoderConfig& cfg,
                 std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  int cin = cfg.in_channels;
  for (int s = 0; s < kNumStages; ++s) {
    const int cout = cfg.stage_channels[s];
    add_conv(params, stage_name(prefix, s + 1, "conv"), cout, cin, cfg.kernel_size, rng);
    cin = cout;
  }
}

void add_decoder(NetworkParams& params, const EncoderConfig& cfg, int num_classes,
                 std::uint64_t seed) {
  cfg.validate();
  if (num_classes < 2) fail(ErrorKind::kConfig, "num_classes must be at least 2");
  Rng rng(seed);
  int width = cfg.stage_channels[kNumStages - 1];
  for (int s = 1; s <= kNumStages; ++s) {
    const int skip_level = kNumStages - s;  // e4, e3, e2, e1, none
    if (skip_level >= 1) {
      add_conv(params, stage_name(kDecoder, s, "skip"), width, cfg.stage_channels[skip_level - 1],
               1, rng);
    }
    const int out = decoder_width(width, cfg.decoder_min_channels);
    add_conv(params, stage_name(kDecoder, s, "conv"), out, width, cfg.kernel_size, rng);
    width = out;
  }
  add_conv(params, param_name(kDecoder, "cls"), num_classes, width, 1, rng);
}

NetworkParams build_network(const EncoderConfig& cfg, int num_classes, std::uint64_t seed) {
  NetworkParams params;
  const auto prefix = cfg.in_channels == 1 ? kDepthEncoder : kRgbEncoder;
  add_encoder(params, prefix, cfg, derive_seed(seed, 1));
  add_decoder(params, cfg, num_classes, derive_seed(seed, 2));
  return params;
}

EncoderConfig infer_encoder_config(const NetworkParams& params, std::string_view prefix) {
  EncoderConfig cfg;
  for (int s = 0; s < kNumStages; ++s) {
    const auto& w = params.at(stage_name(prefix, s + 1, "conv.weight"));
    if (w.rank() != 4) fail(ErrorKind::kStructureMismatch, "encoder kernel must be rank 4");
    cfg.stage_channels[s] = static_cast<int>(w.dim(0));
    if (s == 0) {
      cfg.in_channels = static_cast<int>(w.dim(1));
      cfg.kernel_size = static_cast<int>(w.dim(2));
    }
  }
  const auto& last = params.at(stage_name(kDecoder, kNumStages, "conv.weight"));
  cfg.decoder_min_channels = static_cast<int>(last.dim(0));
  return cfg;
}

// ---------------------------------------------------------------- forward

FeatureStack encode(const NetworkParams& params, std::string_view prefix, const ad::Tensor& image) {
  if (image.rank() != 3) fail(ErrorKind::kShapeMismatch, "encode expects [C,H,W]");
  constexpr std::size_t kFactor = 1u << kNumStages;
  if (image.dim(1) % kFactor != 0 || image.dim(2) % kFactor != 0) {
    fail(ErrorKind::kResolution, "input " + std::to_string(image.dim(1)) + "x" +
                                     std::to_string(image.dim(2)) + " not divisible by 32");
  }
  FeatureStack out;
  ad::Tensor x = image;
  for (int s = 0; s < kNumStages; ++s) {
    x = ad::relu(conv_named(params, stage_name(prefix, s + 1, "conv"), x, 2));
    out.stages[s] = x;
  }
  return out;
}

ad::Tensor decode(const NetworkParams& params, const FeatureStack& skips) {
  ad::Tensor x = skips.stages[kNumStages - 1];
  for (int s = 1; s <= kNumStages; ++s) {
    x = ad::upsample_nearest(x, 2);
    const int skip_level = kNumStages - s;
    if (skip_level >= 1) {
      const auto base = stage_name(kDecoder, s, "skip");
      const auto& skip = skips.stages[skip_level - 1];
      if (skip.dim(1) != x.dim(1) || skip.dim(2) != x.dim(2)) {
        fail(ErrorKind::kShapeMismatch, "decoder stage " + std::to_string(s) +
                                            ": skip resolution does not match");
      }
      ad::Tensor matched = conv_named(params, base, skip, 1);
      if (matched.dim(0) != x.dim(0)) {
        fail(ErrorKind::kShapeMismatch, "decoder stage " + std::to_string(s) + ": skip has " +
                                            std::to_string(matched.dim(0)) +
                                            " channels after matching, decoder has " +
                                            std::to_string(x.dim(0)));
      }
      x = ad::add(x, matched);
    }
    x = ad::relu(conv_named(params, stage_name(kDecoder, s, "conv"), x, 1));
  }
  return conv_named(params, param_name(kDecoder, "cls"), x, 1);
}

FeatureStack fuse(const FeatureStack& a, const FeatureStack& b) {
  FeatureStack out;
  for (int s = 0; s < kNumStages; ++s) out.stages[s] = ad::add(a.stages[s], b.stages[s]);
  return out;
}

Stage1Output forward_stage1(const NetworkParams& params, const ad::Tensor& image,
                            std::string_view encoder) {
  Stage1Output out;
  out.features = encode(params, encoder, image);
  out.logits = decode(params, out.features);
  return out;
}

Stage2Output forward_stage2(const NetworkParams& params, const ad::Tensor& rgb,
                            const ad::Tensor& depth, bool training) {
  if (rgb.rank() != 3 || depth.rank() != 3 || rgb.dim(1) != depth.dim(1) ||
      rgb.dim(2) != depth.dim(2)) {
    fail(ErrorKind::kShapeMismatch, "forward_stage2: rgb " + ad::shape_str(rgb.shape()) +
                                        " and depth " + ad::shape_str(depth.shape()) +
                                        " are not aligned");
  }
  const FeatureStack rgb_feat = encode(params, kRgbEncoder, rgb);
  const FeatureStack depth_feat = encode(params, kDepthEncoder, depth);
  Stage2Output out;
  out.logits = decode(params, fuse(rgb_feat, depth_feat));
  if (training) {
    const FeatureStack ref = encode(params, kRefEncoder, rgb);
    ad::Tensor d = ad::stack_rows({depth_feat.stages[kNumStages - 1]});
    ad::Tensor r = ad::stack_rows({ref.stages[kNumStages - 1]});
    out.contrast = ContrastFeatures{d, r, {d}, {r}};
  }
  return out;
}

Stage2BatchOutput forward_stage2_batch(const NetworkParams& params,
                                       const std::vector<ad::Tensor>& rgb,
                                       const std::vector<ad::Tensor>& depth, bool training) {
  if (rgb.size() != depth.size() || rgb.empty()) {
    fail(ErrorKind::kShapeMismatch, "forward_stage2_batch: rgb and depth batches differ");
  }
  Stage2BatchOutput out;
  std::vector<ad::Tensor> depth_rows, ref_rows;
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    auto r = forward_stage2(params, rgb[i], depth[i], training);
    out.logits.push_back(r.logits);
    if (r.contrast) {
      depth_rows.push_back(r.contrast->f_depth);
      ref_rows.push_back(r.contrast->f_rgb_ref);
    }
  }
  if (training) {
    out.contrast = ContrastFeatures{ad::stack_rows(depth_rows), ad::stack_rows(ref_rows), depth_rows, ref_rows};
  }
  return out;
}

NetworkKind network_kind(const NetworkParams& params) {
  const bool rgb = params.has_prefix(kRgbEncoder);
  const bool depth = params.has_prefix(kDepthEncoder);
  if (!params.has_prefix(kDecoder) || (!rgb && !depth)) {
    fail(ErrorKind::kStructureMismatch, "parameter set lacks an encoder or decoder");
  }
  if (rgb && depth) return NetworkKind::kStage2;
  return rgb ? NetworkKind::kStage1Rgb : NetworkKind::kStage1Depth;
}

ad::Tensor predict_logits(const NetworkParams& params, const ad::Tensor& rgb,
                          const ad::Tensor& depth) {
  switch (network_kind(params)) {
    case NetworkKind::kStage1Rgb:
      return forward_stage1(params, rgb, kRgbEncoder).logits;
    case NetworkKind::kStage1Depth:
      return forward_stage1(params, depth, kDepthEncoder).logits;
    case NetworkKind::kStage2:
      return forward_stage2(params, rgb, depth, /*training=*/false).logits;
  }
  return {};
}

}  // namespace cdseg

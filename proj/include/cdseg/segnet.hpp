#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cdseg/tensor.hpp"

namespace cdseg {

inline constexpr int kNumStages = 5;

// Parameter-name prefixes of the encoders and the decoder.
inline constexpr std::string_view kRgbEncoder = "rgb_enc";
inline constexpr std::string_view kDepthEncoder = "depth_enc";
inline constexpr std::string_view kRefEncoder = "ref_enc";  // frozen Stage-I copy
inline constexpr std::string_view kDecoder = "dec";

struct EncoderConfig {
  int in_channels = 3;
  std::array<int, kNumStages> stage_channels{8, 16, 24, 32, 40};
  int kernel_size = 3;
  // Decoder stages halve the channel count but never go below this width.
  int decoder_min_channels = 8;

  void validate() const;
};

/// Ordered name -> tensor map holding every learnable weight of a network.
class NetworkParams {
 public:
  void add(std::string name, ad::Tensor tensor);
  bool contains(std::string_view name) const;
  const ad::Tensor& at(std::string_view name) const;
  ad::Tensor& at(std::string_view name);

  std::size_t size() const { return entries_.size(); }
  std::size_t element_count() const;
  bool has_prefix(std::string_view prefix) const;

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  /// Deep copy. Freshly allocated tensors keep each original requires_grad.
  NetworkParams clone() const;

  /// Entries whose names start with `prefix` followed by '.'.
  NetworkParams subset(std::string_view prefix) const;

  /// Copies `src` entries under prefix `from` into new entries under `to`.
  void copy_prefix(const NetworkParams& src, std::string_view from, std::string_view to,
                   bool requires_grad);

  void set_requires_grad(std::string_view prefix, bool flag);
  void zero_grad();

 private:
  std::vector<std::pair<std::string, ad::Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Encoder outputs e1..e5 at H/2 .. H/32.
struct FeatureStack {
  std::array<ad::Tensor, kNumStages> stages;
};

/// Flattened deepest features, one row per batch sample.
struct ContrastFeatures {
  ad::Tensor f_depth;    // [N,D]
  ad::Tensor f_rgb_ref;  // [N,D]
  // the same rows per sample, before stacking
  std::vector<ad::Tensor> depth_rows, ref_rows;
};

/// Seeded uniform fan-in initialization of one encoder, stored under `prefix`.
void add_encoder(NetworkParams& params, std::string_view prefix, const EncoderConfig& cfg,
                 std::uint64_t seed);
void add_decoder(NetworkParams& params, const EncoderConfig& cfg, int num_classes,
                 std::uint64_t seed);

/// Stage-I network: RGB (or depth, when cfg.in_channels == 1) encoder plus decoder.
NetworkParams build_network(const EncoderConfig& cfg, int num_classes, std::uint64_t seed);

/// Encoder geometry recovered from stored tensor shapes.
EncoderConfig infer_encoder_config(const NetworkParams& params, std::string_view prefix);

FeatureStack encode(const NetworkParams& params, std::string_view prefix, const ad::Tensor& image);

/// Decoder: per stage upsample x2, add the 1x1-matched skip of equal
/// resolution, then 3x3 conv + relu; a final 1x1 conv yields class logits.
ad::Tensor decode(const NetworkParams& params, const FeatureStack& skips);

/// Elementwise sum of two encoder stacks.
FeatureStack fuse(const FeatureStack& a, const FeatureStack& b);

struct Stage1Output {
  ad::Tensor logits;
  FeatureStack features;
};

Stage1Output forward_stage1(const NetworkParams& params, const ad::Tensor& image,
                            std::string_view encoder = kRgbEncoder);

struct Stage2Output {
  ad::Tensor logits;
  // Present only when `training` is set: deepest depth-encoder and frozen
  // reference-encoder features of this sample, each flattened to [1,D].
  std::optional<ContrastFeatures> contrast;
};

Stage2Output forward_stage2(const NetworkParams& params, const ad::Tensor& rgb,
                            const ad::Tensor& depth, bool training);

/// Stage-II batch: logits per sample, and with `training` set the stacked
/// [N,D] contrast features of the whole batch.
struct Stage2BatchOutput {
  std::vector<ad::Tensor> logits;
  std::optional<ContrastFeatures> contrast;
};

Stage2BatchOutput forward_stage2_batch(const NetworkParams& params,
                                       const std::vector<ad::Tensor>& rgb,
                                       const std::vector<ad::Tensor>& depth, bool training);

enum class NetworkKind { kStage1Rgb, kStage1Depth, kStage2 };

/// Classifies a parameter set by which encoders it contains.
NetworkKind network_kind(const NetworkParams& params);

/// Inference logits for any network kind. Never evaluates the reference encoder.
ad::Tensor predict_logits(const NetworkParams& params, const ad::Tensor& rgb,
                          const ad::Tensor& depth);

std::string param_name(std::string_view prefix, std::string_view part);

}  // namespace cdseg

#include <doctest.h>

#include <algorithm>

#include "cdseg/gradcheck.hpp"
#include "cdseg/losses.hpp"
#include "cdseg/ops.hpp"
#include "cdseg/segnet.hpp"
#include "cdseg/trainer.hpp"
#include "helpers.hpp"

using namespace cdseg;
using ad::Tensor;
using testing::bit_equal;
using testing::error_kind_of;
using testing::random_tensor;

namespace {

std::size_t conv_params(std::size_t in, std::size_t out, std::size_t k) { return in * out * k * k + out; }

NetworkParams stage2_params(std::uint64_t seed) {
  return init_stage2(build_network(EncoderConfig{}, kNumClasses, seed), seed);
}

}  // namespace

TEST_SUITE("segnet") {

TEST_CASE("build_network is deterministic per seed") {
  const auto a = build_network(EncoderConfig{}, 3, 5), b = build_network(EncoderConfig{}, 3, 5);
  const auto c = build_network(EncoderConfig{}, 3, 6);
  REQUIRE(a.size() == b.size());
  bool any_diff = false;
  for (const auto& [name, t] : a) {
    CHECK(bit_equal(t, b.at(name)));
    any_diff |= !bit_equal(t, c.at(name));
  }
  CHECK(any_diff);
}

TEST_CASE("parameter count has the closed form") {
  // encoder: five stride-2 3x3 stages
  const std::size_t enc = conv_params(3, 8, 3) + conv_params(8, 16, 3) + conv_params(16, 24, 3) +
                          conv_params(24, 32, 3) + conv_params(32, 40, 3);
  // decoder widths halve from 40 with a floor of 8: 20, 10, 8, 8, 8;
  // 1x1 skip projections onto the current width at stages 1-4
  const std::size_t dec = conv_params(32, 40, 1) + conv_params(40, 20, 3) +  //
                          conv_params(24, 20, 1) + conv_params(20, 10, 3) +  //
                          conv_params(16, 10, 1) + conv_params(10, 8, 3) +   //
                          conv_params(8, 8, 1) + conv_params(8, 8, 3) +      //
                          conv_params(8, 8, 3) +                             //
                          conv_params(8, 3, 1);
  const auto p = build_network(EncoderConfig{}, 3, 0);
  CHECK(p.subset(kRgbEncoder).element_count() == enc);
  CHECK(p.element_count() == enc + dec);
}

TEST_CASE("classifier width equals num_classes; weights respect the fan-in bound") {
  const auto p = build_network(EncoderConfig{}, 3, 1);
  CHECK(p.at("dec.cls.weight").dim(0) == 3);
  CHECK(p.at("dec.cls.bias").size() == 3);
  CHECK(build_network(EncoderConfig{}, 5, 1).at("dec.cls.weight").dim(0) == 5);
  for (const auto& [name, t] : p) {
    CHECK(t.requires_grad());
    const auto& w = p.at(name.substr(0, name.rfind('.')) + ".weight");
    const double fan_in = static_cast<double>(w.size() / w.dim(0));
    const double bound = std::sqrt(1.0 / fan_in);
    for (double v : t.data()) CHECK(std::abs(v) <= bound);
  }
  CHECK(error_kind_of([] { build_network(EncoderConfig{}, 1, 0); }) == ErrorKind::kConfig);
  EncoderConfig zero;
  zero.stage_channels[2] = 0;
  CHECK(error_kind_of([&] { build_network(zero, 3, 0); }) == ErrorKind::kConfig);
}

TEST_CASE("encode resolution ladder") {
  const auto p = build_network(EncoderConfig{}, 3, 2);
  Rng rng(1);
  for (std::size_t side : {96u, 64u}) {
    const auto f = encode(p, kRgbEncoder, random_tensor({3, side, side}, rng, 0, 1));
    for (int s = 0; s < kNumStages; ++s) {
      CHECK(f.stages[s].dim(0) == static_cast<std::size_t>(EncoderConfig{}.stage_channels[s]));
      CHECK(f.stages[s].dim(1) == side >> (s + 1));
      CHECK(f.stages[s].dim(2) == side >> (s + 1));
    }
  }
  const auto f = encode(p, kRgbEncoder, random_tensor({3, 64, 96}, rng, 0, 1));
  CHECK(f.stages[4].dim(1) == 2);
  CHECK(f.stages[4].dim(2) == 3);
  CHECK(error_kind_of([&] { encode(p, kRgbEncoder, Tensor::zeros({3, 100, 100})); }) == ErrorKind::kResolution);
}

TEST_CASE("decode produces full-resolution logits") {
  const auto p = build_network(EncoderConfig{}, 3, 3);
  Rng rng(2);
  const auto out = forward_stage1(p, random_tensor({3, 96, 96}, rng, 0, 1));
  CHECK(out.logits.shape() == ad::Shape{3, 96, 96});
}

TEST_CASE("zero weights give zero logits and a uniform softmax") {
  auto p = build_network(EncoderConfig{}, 3, 4);
  for (auto& [name, t] : p) std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
  FeatureStack zeros;
  const auto f = encode(p, kRgbEncoder, Tensor::zeros({3, 32, 32}));
  for (int s = 0; s < kNumStages; ++s) zeros.stages[s] = Tensor::zeros(f.stages[s].shape());
  const Tensor logits = decode(p, zeros);
  for (double v : logits.data()) CHECK(v == 0.0);
  const Tensor probs = ad::softmax_channels(logits);
  for (double v : probs.data()) CHECK(v == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("decode rejects skips from an incompatible encoder") {
  const auto p = build_network(EncoderConfig{}, 3, 5);
  EncoderConfig other;
  other.stage_channels = {8, 16, 24, 32, 48};
  const auto q = build_network(other, 3, 5);
  const auto f = encode(q, kRgbEncoder, Tensor::zeros({3, 32, 32}));
  CHECK(error_kind_of([&] { decode(p, f); }) == ErrorKind::kShapeMismatch);
}

TEST_CASE("forward_stage1 is deterministic") {
  const auto p = build_network(EncoderConfig{}, 3, 6);
  Rng rng(3);
  const Tensor x = random_tensor({3, 64, 64}, rng, 0, 1);
  CHECK(bit_equal(forward_stage1(p, x).logits, forward_stage1(p, x).logits));
}

TEST_CASE("Lovasz loss on network logits passes grad_check") {
  EncoderConfig small;
  small.stage_channels = {2, 2, 3, 3, 4};
  small.decoder_min_channels = 2;
  const auto p = build_network(small, 3, 7);
  Rng rng(4);
  const Tensor x = random_tensor({3, 32, 32}, rng, 0, 1);
  LabelMask gt(32 * 32);
  for (auto& v : gt) v = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
  // perturb the classifier parameters; everything upstream is a constant
  for (const char* name : {"dec.cls.bias", "dec.cls.weight"}) {
    auto f = [&](const Tensor& v) {
      NetworkParams q = p.clone();
      q.at(name) = v;
      return lovasz_softmax(ad::softmax_channels(forward_stage1(q, x).logits), gt);
    };
    CHECK(ad::grad_check(f, p.at(name)) < 1e-4);
  }
}

TEST_CASE("fuse is an elementwise sum") {
  Rng rng(5);
  FeatureStack a, b, z;
  for (int s = 0; s < kNumStages; ++s) {
    a.stages[s] = random_tensor({2, 3, 3}, rng);
    b.stages[s] = random_tensor({2, 3, 3}, rng);
    z.stages[s] = Tensor::zeros({2, 3, 3});
  }
  const auto az = fuse(a, z), ab = fuse(a, b), ba = fuse(b, a);
  for (int s = 0; s < kNumStages; ++s) {
    CHECK(bit_equal(az.stages[s], a.stages[s]));
    CHECK(bit_equal(ab.stages[s], ba.stages[s]));
  }
}

TEST_CASE("stage 2 inference skips the contrastive branch and matches a variant without it") {
  const auto p = stage2_params(8);
  // the variant with the frozen reference encoder physically removed
  NetworkParams pruned;
  for (const auto& [name, t] : p) {
    if (!name.starts_with(std::string(kRefEncoder) + ".")) pruned.add(name, t);
  }
  Rng rng(6);
  for (int t = 0; t < 3; ++t) {
    const Tensor rgb = random_tensor({3, 32, 32}, rng, 0, 1), depth = random_tensor({1, 32, 32}, rng, 0, 1);
    const auto full = forward_stage2(p, rgb, depth, false);
    CHECK_FALSE(full.contrast.has_value());
    CHECK(bit_equal(full.logits, forward_stage2(pruned, rgb, depth, false).logits));
  }
  CHECK(error_kind_of([&] { forward_stage2(pruned, Tensor::zeros({3, 32, 32}), Tensor::zeros({1, 32, 32}), true); }) ==
        ErrorKind::kStructureMismatch);
}

TEST_CASE("zero depth features leave the RGB skips unchanged") {
  const auto p = stage2_params(9);
  Rng rng(7);
  const Tensor rgb = random_tensor({3, 32, 32}, rng, 0, 1);
  const auto r = encode(p, kRgbEncoder, rgb);
  FeatureStack zeros;
  for (int s = 0; s < kNumStages; ++s) zeros.stages[s] = Tensor::zeros(r.stages[s].shape());
  const auto fused = fuse(r, zeros);
  for (int s = 0; s < kNumStages; ++s) CHECK(bit_equal(fused.stages[s], r.stages[s]));
}

TEST_CASE("frozen reference features equal the Stage-I encoder output") {
  const auto s1 = build_network(EncoderConfig{}, kNumClasses, 10);
  const auto p = init_stage2(s1, 10);
  Rng rng(8);
  const Tensor rgb = random_tensor({3, 32, 32}, rng, 0, 1), depth = random_tensor({1, 32, 32}, rng, 0, 1);
  const auto out = forward_stage2(p, rgb, depth, true);
  REQUIRE(out.contrast.has_value());
  const Tensor e5 = encode(s1, kRgbEncoder, rgb).stages[4];
  CHECK(out.contrast->f_rgb_ref.shape() == ad::Shape{1, e5.size()});
  CHECK(out.contrast->f_depth.shape() == out.contrast->f_rgb_ref.shape());
  for (std::size_t i = 0; i < e5.size(); ++i) CHECK(out.contrast->f_rgb_ref[i] == e5[i]);
  for (const auto& [name, t] : p) {
    if (name.starts_with("ref_enc.")) CHECK_FALSE(t.requires_grad());
  }
}

TEST_CASE("forward_stage2 rejects misaligned inputs") {
  const auto p = stage2_params(11);
  CHECK(error_kind_of([&] { forward_stage2(p, Tensor::zeros({3, 32, 32}), Tensor::zeros({1, 64, 32}), false); }) ==
        ErrorKind::kShapeMismatch);
}

TEST_CASE("batched stage 2 stacks one contrast row per sample") {
  const auto p = stage2_params(12);
  Rng rng(9);
  std::vector<Tensor> rgb, depth;
  for (int i = 0; i < 3; ++i) {
    rgb.push_back(random_tensor({3, 32, 32}, rng, 0, 1));
    depth.push_back(random_tensor({1, 32, 32}, rng, 0, 1));
  }
  const auto out = forward_stage2_batch(p, rgb, depth, true);
  REQUIRE(out.contrast.has_value());
  CHECK(out.contrast->f_depth.dim(0) == 3);
  CHECK(out.logits.size() == 3);
  const auto single = forward_stage2(p, rgb[1], depth[1], false);
  CHECK(bit_equal(out.logits[1], single.logits));
}

TEST_CASE("network kind and config inference") {
  EncoderConfig cfg;
  cfg.stage_channels = {4, 6, 8, 10, 12};
  const auto p = build_network(cfg, 3, 0);
  CHECK(network_kind(p) == NetworkKind::kStage1Rgb);
  const auto inferred = infer_encoder_config(p, kRgbEncoder);
  CHECK(inferred.stage_channels == cfg.stage_channels);
  CHECK(inferred.in_channels == 3);
  CHECK(network_kind(init_stage2(p, 0)) == NetworkKind::kStage2);
  cfg.in_channels = 1;
  CHECK(network_kind(build_network(cfg, 3, 0)) == NetworkKind::kStage1Depth);
}

}  // TEST_SUITE

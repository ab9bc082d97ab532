#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cdseg/losses.hpp"
#include "cdseg/optim.hpp"
#include "cdseg/segnet.hpp"

namespace cdseg {

namespace fs = std::filesystem;

// ------------------------------------------------------------- checkpoints
//
// Layout, all integers little-endian:
//   "LUSG" | u32 version | u64 entry count
//   per entry: u32 name length | name bytes | u32 rank | u64 dims[rank]
//              | u32 dtype (1 = float64) | float64 values[prod(dims)]
//   u64 FNV-1a checksum of every preceding byte
//
// Optimizer velocities are stored as ordinary entries named "velocity/<param>".

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kDtypeFloat64 = 1;

struct Checkpoint {
  NetworkParams params;
  std::optional<OptimizerState> optimizer;
};

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n);

std::vector<std::uint8_t> encode_checkpoint(const NetworkParams& params,
                                            const OptimizerState* optimizer = nullptr);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Writes to a temporary sibling and renames it over `path`.
void save_checkpoint(const NetworkParams& params, const OptimizerState* optimizer,
                     const fs::path& path);
Checkpoint load_checkpoint(const fs::path& path);

// ------------------------------------------------------------- image codecs

struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 or 3
  std::vector<std::uint8_t> pixels;  // row-major, interleaved
};

struct Image16 {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> pixels;
};

void write_png(const fs::path& path, const Image8& image);
void write_png(const fs::path& path, const Image16& image);
Image8 read_png8(const fs::path& path);
Image16 read_png16(const fs::path& path);

/// Writes bytes via a temporary file and an atomic rename.
void write_file_atomic(const fs::path& path, const std::vector<std::uint8_t>& bytes);

// ------------------------------------------------------------- dataset layout

/// One generated or converted frame in its on-disk representation.
struct RenderedSample {
  Image8 rgb;      // 3 channels
  Image16 depth;   // 65535 = far plane
  Image8 labels;   // 1 channel, values 0/1/2
};

/// One frame in network-ready form.
struct SegSample {
  std::string id;
  std::string preset;
  ad::Tensor rgb;    // [3,H,W] in [0,1]
  ad::Tensor depth;  // [1,H,W] in [0,1]
  LabelMask labels;  // H*W
  int height = 0;
  int width = 0;
};

void write_sample(const fs::path& root, const std::string& split, const std::string& id,
                  const RenderedSample& sample);
SegSample read_sample(const fs::path& root, const std::string& split, const std::string& id);
SegSample to_seg_sample(const RenderedSample& sample, std::string id, std::string preset);

/// Center-crops a sample whose sides are not multiples of 32, e.g. 640x480 -> 640x448.
/// Returns true when the sample was cropped.
bool center_crop_to_multiple(SegSample& sample, int multiple = 32);

struct ManifestRow {
  std::string id;
  std::string split;
  std::string preset;
  double crater_px_ratio = 0.0;
  double rock_px_ratio = 0.0;
};

void write_manifest(const fs::path& root, const std::vector<ManifestRow>& rows);
std::vector<ManifestRow> read_manifest(const fs::path& root);

/// Every sample of `split` listed in the manifest, in manifest order. Frames
/// with sides not divisible by 32 are center-cropped with a warning on stderr.
std::vector<SegSample> load_split(const fs::path& root, const std::string& split);

}  // namespace cdseg

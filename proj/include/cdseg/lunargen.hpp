#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "cdseg/io_store.hpp"

namespace cdseg::lunar {

enum class Illumination { kHigh, kLow };
enum class Roughness { kFlat, kRough };

// Calibration constants that make the four presets distinct. They are not
// measurements of any real scene.
inline constexpr double kSunElevationHighDeg = 55.0;
inline constexpr double kSunElevationLowDeg = 15.0;
inline constexpr double kSceneScale = 5.0;  // meters
inline constexpr double kNoiseAmplitudeFlat = 0.02;   // fraction of scene scale
inline constexpr double kNoiseAmplitudeRough = 0.12;  // fraction of scene scale

inline constexpr double kPatchExtent = 32.0;  // meters per side
inline constexpr int kGridResolution = 513;   // samples per side
inline constexpr double kFarPlane = 40.0;     // meters, maps to depth 65535

struct IntRange {
  int min = 0;
  int max = 0;
};

struct RealRange {
  double min = 0.0;
  double max = 0.0;
};

struct SceneSpec {
  int width = 96;
  int height = 96;
  Illumination illumination = Illumination::kHigh;
  Roughness roughness = Roughness::kFlat;
  IntRange craters{2, 5};
  IntRange rocks{3, 8};
  RealRange crater_radius{0.8, 2.2};  // meters, bowl radius
  RealRange rock_radius{0.25, 0.7};   // meters, major semi-axis
  std::uint64_t seed = 0;

  /// "HF", "HR", "LF" or "LR".
  std::string tag() const;
  double noise_amplitude() const;
  double sun_elevation_deg() const;
  void validate() const;
};

/// Preset by tag with default counts at the given resolution.
SceneSpec preset(std::string_view tag, int width = 96, int height = 96);
std::vector<SceneSpec> all_presets(int width = 96, int height = 96);

enum class ObstacleType { kCrater, kRock };

struct Footprint {
  ObstacleType type = ObstacleType::kCrater;
  double cx = 0.0;
  double cy = 0.0;
  double radius = 0.0;    // crater bowl radius, or rock major semi-axis
  double radius_b = 0.0;  // rock minor semi-axis (craters: == radius)
  double angle = 0.0;     // rock orientation, radians
  double size = 0.0;      // crater depth or rock height, meters

  bool contains(double x, double y) const;
  /// Largest distance from the center at which the shape alters elevation.
  double influence_radius() const;
};

/// Radially symmetric cosine bowl of depth `depth` and radius `radius` with
/// a raised rim out to 1.5 radius; `distance` is measured from the center.
double crater_profile(double distance, double radius, double depth);
/// Ellipsoidal cap height at normalized radius q = (u/a)^2 + (v/b)^2.
double rock_profile(double q, double height);

struct Heightfield {
  int resolution = kGridResolution;
  double extent = kPatchExtent;
  double base_level = 0.0;
  std::vector<double> elevation;  // resolution x resolution, row = y
  std::vector<Footprint> obstacles;

  double spacing() const { return extent / (resolution - 1); }
  double at_grid(int ix, int iy) const { return elevation[static_cast<std::size_t>(iy) * resolution + ix]; }
  /// Bilinear elevation; points outside the patch clamp to the border.
  double height_at(double x, double y) const;
  bool inside(double x, double y) const;
  /// 2 inside any rock, else 1 inside any crater, else 0.
  std::uint8_t label_at(double x, double y) const;

  static Heightfield flat(double level = 0.0);
};

Heightfield gen_heightfield(const SceneSpec& spec);

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

/// Forward-tilted pinhole camera at a fixed height above the terrain near
/// the patch's south edge, looking north.
struct Camera {
  Vec3 origin;
  double pitch_rad = 0.0;
  double tan_half_fov = 0.0;
  int width = 0;
  int height = 0;

  /// Unit ray through the center of pixel (px, py); py = 0 is the top row.
  Vec3 ray(int px, int py) const;
};

inline constexpr double kCameraHeight = 1.5;
inline constexpr double kCameraPitchDeg = 20.0;
inline constexpr double kCameraFovDeg = 60.0;
inline constexpr double kCameraY = 1.0;

Camera make_camera(const Heightfield& hf, const SceneSpec& spec);

/// Unquantized per-pixel ray distance; +inf marks a miss.
struct RenderDiagnostics {
  std::vector<double> distance;
};

RenderedSample render(const Heightfield& hf, const SceneSpec& spec,
                      RenderDiagnostics* diagnostics = nullptr);

/// Heightfield plus render for one spec.
RenderedSample generate_sample(const SceneSpec& spec);

struct PresetRatios {
  std::string preset;
  std::uint64_t pixels = 0;
  std::array<std::uint64_t, 3> class_pixels{};
  double ratio(int c) const;
};

struct GenOptions {
  int n_per_preset = 60;       // train split
  int test_per_preset = 0;     // test split
  std::uint64_t seed = 0;
  int threads = 1;
};

struct GenResult {
  std::vector<ManifestRow> manifest;
  std::vector<PresetRatios> ratios;  // one per preset, both splits
};

/// Child seed for one frame; independent of generation order.
std::uint64_t sample_seed(std::uint64_t master, std::string_view split, std::string_view tag,
                          int index);

/// Writes `<out>/<split>/{rgb,depth,label}/<id>.png` and `<out>/manifest.tsv`.
GenResult gen_dataset(const std::vector<SceneSpec>& presets, const GenOptions& options,
                      const fs::path& out_dir);

std::string format_ratios(const std::vector<PresetRatios>& ratios);

}  // namespace cdseg::lunar

#include "cdseg/lunargen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <thread>

#include "cdseg/error.hpp"
#include "cdseg/rng.hpp"

namespace cdseg::lunar {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kCraterRimOuter = 1.5;  // rim ends at 1.5 bowl radii
constexpr double kCraterRimHeight = 0.15;  // fraction of bowl depth

double deg2rad(double d) { return d * kPi / 180.0; }

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

// Lattice value in [-0.5, 0.5].
double lattice(std::uint64_t seed, std::int64_t ix, std::int64_t iy, int octave) {
  std::uint64_t h = mix64(seed ^ mix64(static_cast<std::uint64_t>(ix) * 0x9E3779B185EBCA87ULL) ^
                          mix64(static_cast<std::uint64_t>(iy) * 0xC2B2AE3D27D4EB4FULL + octave));
  return static_cast<double>(h >> 11) * 0x1.0p-53 - 0.5;
}

double value_noise(std::uint64_t seed, double x, double y, int octave) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  const double tx = smooth(x - fx), ty = smooth(y - fy);
  const double a = lattice(seed, ix, iy, octave), b = lattice(seed, ix + 1, iy, octave);
  const double c = lattice(seed, ix, iy + 1, octave), d = lattice(seed, ix + 1, iy + 1, octave);
  return (a + (b - a) * tx) * (1.0 - ty) + (c + (d - c) * tx) * ty;
}

// Octave sum normalized so the result stays in [-0.5, 0.5].
double fractal_noise(std::uint64_t seed, double x, double y, double base_period, int octaves) {
  double sum = 0.0, norm = 0.0, weight = 1.0, period = base_period;
  for (int o = 0; o < octaves; ++o) {
    sum += weight * value_noise(seed, x / period, y / period, o);
    norm += weight;
    weight *= 0.5;
    period *= 0.5;
  }
  return sum / norm;
}

Vec3 normalize(Vec3 v) {
  const double n = std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z);
  return {v.x / n, v.y / n, v.z / n};
}

double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

// Center for an obstacle somewhere inside the camera's ground wedge.
void place_in_view(Rng& rng, double margin, double near, double far, double& cx, double& cy) {
  const double ahead = rng.uniform(near, far);
  const double half_width = ahead * std::tan(deg2rad(kCameraFovDeg / 2)) * 0.85;
  cy = std::clamp(kCameraY + ahead, margin, kPatchExtent - margin);
  cx = std::clamp(kPatchExtent / 2 + rng.uniform(-half_width, half_width), margin,
                  kPatchExtent - margin);
}

}  // namespace

// ---------------------------------------------------------------- SceneSpec

std::string SceneSpec::tag() const {
  std::string t;
  t += illumination == Illumination::kHigh ? 'H' : 'L';
  t += roughness == Roughness::kFlat ? 'F' : 'R';
  return t;
}

double SceneSpec::noise_amplitude() const {
  return kSceneScale * (roughness == Roughness::kFlat ? kNoiseAmplitudeFlat : kNoiseAmplitudeRough);
}

double SceneSpec::sun_elevation_deg() const {
  return illumination == Illumination::kHigh ? kSunElevationHighDeg : kSunElevationLowDeg;
}

void SceneSpec::validate() const {
  if (width <= 0 || height <= 0 || width % 32 != 0 || height % 32 != 0) {
    fail(ErrorKind::kResolution, "scene resolution " + std::to_string(width) + "x" +
                                     std::to_string(height) + " must be positive multiples of 32");
  }
  if (craters.min < 0 || craters.max < craters.min || rocks.min < 0 || rocks.max < rocks.min) {
    fail(ErrorKind::kConfig, "obstacle count ranges must satisfy 0 <= min <= max");
  }
  if (!(crater_radius.min > 0) || crater_radius.max < crater_radius.min ||
      !(rock_radius.min > 0) || rock_radius.max < rock_radius.min) {
    fail(ErrorKind::kConfig, "obstacle radius ranges must satisfy 0 < min <= max");
  }
  if (2 * kCraterRimOuter * crater_radius.max >= kPatchExtent || 2 * rock_radius.max >= kPatchExtent) {
    fail(ErrorKind::kDomain, "obstacle radius exceeds the terrain patch");
  }
}

SceneSpec preset(std::string_view tag, int width, int height) {
  if (tag.size() != 2 || (tag[0] != 'H' && tag[0] != 'L') || (tag[1] != 'F' && tag[1] != 'R')) {
    fail(ErrorKind::kConfig, "unknown scenario preset '" + std::string(tag) + "' (HF, HR, LF, LR)");
  }
  SceneSpec s;
  s.width = width;
  s.height = height;
  s.illumination = tag[0] == 'H' ? Illumination::kHigh : Illumination::kLow;
  s.roughness = tag[1] == 'F' ? Roughness::kFlat : Roughness::kRough;
  s.validate();
  return s;
}

std::vector<SceneSpec> all_presets(int width, int height) {
  return {preset("HF", width, height), preset("HR", width, height), preset("LF", width, height),
          preset("LR", width, height)};
}

// ---------------------------------------------------------------- geometry

bool Footprint::contains(double x, double y) const {
  const double dx = x - cx, dy = y - cy;
  if (type == ObstacleType::kCrater) return dx * dx + dy * dy < radius * radius;
  const double c = std::cos(angle), s = std::sin(angle);
  const double u = (c * dx + s * dy) / radius, v = (-s * dx + c * dy) / radius_b;
  return u * u + v * v < 1.0;
}

double Footprint::influence_radius() const {
  return type == ObstacleType::kCrater ? kCraterRimOuter * radius : radius;
}

double crater_profile(double distance, double radius, double depth) {
  const double rho = distance / radius;
  if (rho <= 1.0) return -depth * 0.5 * (1.0 + std::cos(kPi * rho));
  if (rho < kCraterRimOuter) {
    const double t = (rho - 1.0) / (kCraterRimOuter - 1.0);
    return kCraterRimHeight * depth * 0.5 * (1.0 - std::cos(2.0 * kPi * t));
  }
  return 0.0;
}

double rock_profile(double q, double height) {
  return q < 1.0 ? height * std::sqrt(1.0 - q) : 0.0;
}

double Heightfield::height_at(double x, double y) const {
  const double h = spacing();
  const double gx = std::clamp(x / h, 0.0, resolution - 1.0);
  const double gy = std::clamp(y / h, 0.0, resolution - 1.0);
  const int ix = std::min(static_cast<int>(gx), resolution - 2);
  const int iy = std::min(static_cast<int>(gy), resolution - 2);
  const double tx = gx - ix, ty = gy - iy;
  const double a = at_grid(ix, iy), b = at_grid(ix + 1, iy);
  const double c = at_grid(ix, iy + 1), d = at_grid(ix + 1, iy + 1);
  return (a + (b - a) * tx) * (1.0 - ty) + (c + (d - c) * tx) * ty;
}

bool Heightfield::inside(double x, double y) const {
  return x >= 0.0 && y >= 0.0 && x <= extent && y <= extent;
}

std::uint8_t Heightfield::label_at(double x, double y) const {
  std::uint8_t label = 0;
  for (const auto& f : obstacles) {
    if (!f.contains(x, y)) continue;
    if (f.type == ObstacleType::kRock) return 2;
    label = 1;
  }
  return label;
}

Heightfield Heightfield::flat(double level) {
  Heightfield hf;
  hf.base_level = level;
  hf.elevation.assign(static_cast<std::size_t>(hf.resolution) * hf.resolution, level);
  return hf;
}

Heightfield gen_heightfield(const SceneSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, 0x7e7a));
  Heightfield hf = Heightfield::flat(0.0);
  const int n = hf.resolution;
  const double h = hf.spacing();
  const double amp = spec.noise_amplitude();
  const std::uint64_t noise_seed = rng.next_u64();

  for (int iy = 0; iy < n; ++iy) {
    for (int ix = 0; ix < n; ++ix) {
      hf.elevation[static_cast<std::size_t>(iy) * n + ix] =
          hf.base_level + amp * fractal_noise(noise_seed, ix * h, iy * h, 16.0, 5);
    }
  }

  const int n_craters = static_cast<int>(rng.uniform_int(spec.craters.min, spec.craters.max));
  for (int i = 0; i < n_craters; ++i) {
    Footprint f;
    f.type = ObstacleType::kCrater;
    f.radius = f.radius_b = rng.uniform(spec.crater_radius.min, spec.crater_radius.max);
    f.size = f.radius * rng.uniform(0.25, 0.4);
    place_in_view(rng, f.influence_radius(), 3.0, 16.0, f.cx, f.cy);
    hf.obstacles.push_back(f);
  }
  const int n_rocks = static_cast<int>(rng.uniform_int(spec.rocks.min, spec.rocks.max));
  for (int i = 0; i < n_rocks; ++i) {
    Footprint f;
    f.type = ObstacleType::kRock;
    f.radius = rng.uniform(spec.rock_radius.min, spec.rock_radius.max);
    f.radius_b = f.radius * rng.uniform(0.6, 1.0);
    f.angle = rng.uniform(0.0, kPi);
    f.size = f.radius * rng.uniform(0.6, 1.0);
    place_in_view(rng, f.influence_radius(), 2.5, 14.0, f.cx, f.cy);
    hf.obstacles.push_back(f);
  }

  std::vector<double> rock_bump(hf.elevation.size(), 0.0);
  for (const auto& f : hf.obstacles) {
    const double r = f.influence_radius();
    const int x0 = std::max(0, static_cast<int>(std::floor((f.cx - r) / h)));
    const int x1 = std::min(n - 1, static_cast<int>(std::ceil((f.cx + r) / h)));
    const int y0 = std::max(0, static_cast<int>(std::floor((f.cy - r) / h)));
    const int y1 = std::min(n - 1, static_cast<int>(std::ceil((f.cy + r) / h)));
    const double c = std::cos(f.angle), s = std::sin(f.angle);
    for (int iy = y0; iy <= y1; ++iy) {
      for (int ix = x0; ix <= x1; ++ix) {
        const double dx = ix * h - f.cx, dy = iy * h - f.cy;
        const std::size_t k = static_cast<std::size_t>(iy) * n + ix;
        if (f.type == ObstacleType::kCrater) {
          hf.elevation[k] += crater_profile(std::hypot(dx, dy), f.radius, f.size);
        } else {
          const double u = (c * dx + s * dy) / f.radius, v = (-s * dx + c * dy) / f.radius_b;
          rock_bump[k] = std::max(rock_bump[k], rock_profile(u * u + v * v, f.size));
        }
      }
    }
  }
  for (std::size_t k = 0; k < rock_bump.size(); ++k) hf.elevation[k] += rock_bump[k];
  return hf;
}

// ---------------------------------------------------------------- rendering

Vec3 Camera::ray(int px, int py) const {
  const double xc = (2.0 * (px + 0.5) / width - 1.0) * tan_half_fov * width / height;
  const double yc = (1.0 - 2.0 * (py + 0.5) / height) * tan_half_fov;
  const double cp = std::cos(pitch_rad), sp = std::sin(pitch_rad);
  // forward = (0, cp, -sp), up = (0, sp, cp), right = (1, 0, 0)
  return normalize({xc, cp + yc * sp, -sp + yc * cp});
}

Camera make_camera(const Heightfield& hf, const SceneSpec& spec) {
  Camera cam;
  const double x = hf.extent / 2;
  cam.origin = {x, kCameraY, hf.height_at(x, kCameraY) + kCameraHeight};
  cam.pitch_rad = deg2rad(kCameraPitchDeg);
  cam.tan_half_fov = std::tan(deg2rad(kCameraFovDeg / 2));
  cam.width = spec.width;
  cam.height = spec.height;
  return cam;
}

RenderedSample render(const Heightfield& hf, const SceneSpec& spec, RenderDiagnostics* diag) {
  spec.validate();
  const Camera cam = make_camera(hf, spec);
  const int w = spec.width, ht = spec.height;
  const std::size_t npx = static_cast<std::size_t>(w) * ht;

  Rng rng(derive_seed(spec.seed, 0x5a11));
  const double azimuth = rng.uniform(0.0, 2.0 * kPi);
  const std::uint64_t albedo_seed = rng.next_u64();
  const double elev = deg2rad(spec.sun_elevation_deg());
  const Vec3 sun{std::cos(elev) * std::cos(azimuth), std::cos(elev) * std::sin(azimuth),
                 std::sin(elev)};
  const double max_elev = *std::max_element(hf.elevation.begin(), hf.elevation.end());
  const double grid = hf.spacing();

  RenderedSample out;
  out.rgb = Image8{w, ht, 3, std::vector<std::uint8_t>(3 * npx, 0)};
  out.depth = Image16{w, ht, std::vector<std::uint16_t>(npx, 65535)};
  out.labels = Image8{w, ht, 1, std::vector<std::uint8_t>(npx, 0)};
  if (diag) diag->distance.assign(npx, std::numeric_limits<double>::infinity());

  for (int py = 0; py < ht; ++py) {
    for (int px = 0; px < w; ++px) {
      const Vec3 d = cam.ray(px, py);
      auto point = [&](double t) {
        return Vec3{cam.origin.x + d.x * t, cam.origin.y + d.y * t, cam.origin.z + d.z * t};
      };
      double t = 0.05, hit = -1.0;
      while (t < kFarPlane) {
        const double t_next = std::min(kFarPlane, t + std::max(0.03, 0.02 * t));
        const Vec3 p = point(t_next);
        if (!hf.inside(p.x, p.y)) break;
        if (d.z >= 0.0 && p.z > max_elev) break;
        if (p.z - hf.height_at(p.x, p.y) <= 0.0) {
          double lo = t, hi = t_next;
          for (int it = 0; it < 40; ++it) {
            const double mid = 0.5 * (lo + hi);
            const Vec3 q = point(mid);
            (q.z - hf.height_at(q.x, q.y) > 0.0 ? lo : hi) = mid;
          }
          hit = hi;
          break;
        }
        if (t_next >= kFarPlane) break;
        t = t_next;
      }
      if (hit < 0.0) continue;  // sky: black, far depth, background label

      const std::size_t k = static_cast<std::size_t>(py) * w + px;
      const Vec3 p = point(hit);
      const double dzdx = (hf.height_at(p.x + grid, p.y) - hf.height_at(p.x - grid, p.y)) / (2 * grid);
      const double dzdy = (hf.height_at(p.x, p.y + grid) - hf.height_at(p.x, p.y - grid)) / (2 * grid);
      const Vec3 normal = normalize({-dzdx, -dzdy, 1.0});
      const std::uint8_t label = hf.label_at(p.x, p.y);

      double albedo = 0.5 + 0.3 * (fractal_noise(albedo_seed, p.x, p.y, 2.0, 3) + 0.5);
      if (label == 2) albedo = std::min(1.0, albedo * 1.15);
      const double lum = albedo * (0.04 + 0.96 * std::max(0.0, dot(normal, sun)));
      constexpr double tint[3] = {1.0, 0.97, 0.92};
      for (int c = 0; c < 3; ++c) {
        const double v = std::pow(std::clamp(lum * tint[c], 0.0, 1.0), 1.0 / 2.2);
        out.rgb.pixels[3 * k + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
      out.depth.pixels[k] =
          static_cast<std::uint16_t>(std::lround(std::min(hit, kFarPlane) / kFarPlane * 65535.0));
      out.labels.pixels[k] = label;
      if (diag) diag->distance[k] = hit;
    }
  }
  return out;
}

RenderedSample generate_sample(const SceneSpec& spec) {
  return render(gen_heightfield(spec), spec);
}

// ---------------------------------------------------------------- dataset

double PresetRatios::ratio(int c) const {
  return pixels == 0 ? 0.0 : static_cast<double>(class_pixels.at(c)) / static_cast<double>(pixels);
}

std::uint64_t sample_seed(std::uint64_t master, std::string_view split, std::string_view tag,
                          int index) {
  std::uint64_t stream = fnv1a64(reinterpret_cast<const std::uint8_t*>(split.data()), split.size());
  stream = mix64(stream ^ fnv1a64(reinterpret_cast<const std::uint8_t*>(tag.data()), tag.size()));
  return derive_seed(master, stream ^ static_cast<std::uint64_t>(index));
}

GenResult gen_dataset(const std::vector<SceneSpec>& presets, const GenOptions& opt,
                      const fs::path& out_dir) {
  if (presets.empty()) fail(ErrorKind::kConfig, "no scenario presets given");
  if (opt.n_per_preset < 0 || opt.test_per_preset < 0) fail(ErrorKind::kConfig, "negative sample count");
  for (const auto& p : presets) p.validate();

  struct Job {
    SceneSpec spec;
    std::string split;
    std::string id;
    std::size_t preset_index;
  };
  std::vector<Job> jobs;
  for (std::size_t pi = 0; pi < presets.size(); ++pi) {
    const std::string tag = presets[pi].tag();
    for (const auto& [split, count] : {std::pair<std::string, int>{"train", opt.n_per_preset},
                                       std::pair<std::string, int>{"test", opt.test_per_preset}}) {
      for (int i = 0; i < count; ++i) {
        Job j{presets[pi], split, {}, pi};
        char id[64];
        std::snprintf(id, sizeof id, "%s_%04d", tag.c_str(), i);
        j.id = id;
        j.spec.seed = sample_seed(opt.seed, split, tag, i);
        jobs.push_back(std::move(j));
      }
    }
  }

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) {
    fail(ErrorKind::kIo, "cannot create output directory " + out_dir.string() +
                             (ec ? ": " + ec.message() : ""));
  }

  std::vector<ManifestRow> rows(jobs.size());
  std::vector<std::array<std::uint64_t, 3>> counts(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size() && !failed; i = next++) {
      try {
        const Job& j = jobs[i];
        const RenderedSample s = generate_sample(j.spec);
        write_sample(out_dir, j.split, j.id, s);
        auto& c = counts[i];
        for (auto v : s.labels.pixels) ++c[v];
        const double n = static_cast<double>(s.labels.pixels.size());
        rows[i] = ManifestRow{j.id, j.split, presets[j.preset_index].tag(), c[1] / n, c[2] / n};
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
      }
    }
  };
  const int nthreads = std::max(1, opt.threads);
  std::vector<std::thread> pool;
  for (int t = 1; t < nthreads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);

  write_manifest(out_dir, rows);

  GenResult result;
  result.manifest = std::move(rows);
  for (const auto& p : presets) result.ratios.push_back(PresetRatios{p.tag(), 0, {}});
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    auto& r = result.ratios[jobs[i].preset_index];
    for (int c = 0; c < 3; ++c) {
      r.class_pixels[c] += counts[i][c];
      r.pixels += counts[i][c];
    }
  }
  return result;
}

std::string format_ratios(const std::vector<PresetRatios>& ratios) {
  std::string out;
  char buf[160];
  for (const auto& r : ratios) {
    std::snprintf(buf, sizeof buf, "preset=%s background=%.6f crater=%.6f rock=%.6f\n",
                  r.preset.c_str(), r.ratio(0), r.ratio(1), r.ratio(2));
    out += buf;
  }
  return out;
}

}  // namespace cdseg::lunar

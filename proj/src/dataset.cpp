#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cdseg/error.hpp"
#include "cdseg/io_store.hpp"

namespace cdseg {
namespace {

fs::path sample_path(const fs::path& root, const std::string& split, const char* kind,
                     const std::string& id) {
  return root / split / kind / (id + ".png");
}

void check_labels(const Image8& labels, const std::string& where) {
  for (auto v : labels.pixels) {
    if (v >= kNumClasses) {
      fail(ErrorKind::kValidation, where + ": label value " + std::to_string(v) + " out of range");
    }
  }
}

}  // namespace

void write_sample(const fs::path& root, const std::string& split, const std::string& id,
                  const RenderedSample& s) {
  if (s.rgb.channels != 3 || s.labels.channels != 1) {
    fail(ErrorKind::kValidation, "write_sample: rgb needs 3 channels and labels 1");
  }
  if (s.rgb.width != s.depth.width || s.rgb.width != s.labels.width ||
      s.rgb.height != s.depth.height || s.rgb.height != s.labels.height) {
    fail(ErrorKind::kResolution, "write_sample: rgb, depth and labels differ in resolution");
  }
  check_labels(s.labels, id);
  for (const char* kind : {"rgb", "depth", "label"}) {
    std::error_code ec;
    fs::create_directories(root / split / kind, ec);
    if (ec) fail(ErrorKind::kIo, "cannot create " + (root / split / kind).string() + ": " + ec.message());
  }
  write_png(sample_path(root, split, "rgb", id), s.rgb);
  write_png(sample_path(root, split, "depth", id), s.depth);
  write_png(sample_path(root, split, "label", id), s.labels);
}

SegSample to_seg_sample(const RenderedSample& s, std::string id, std::string preset) {
  const int w = s.rgb.width, h = s.rgb.height;
  const std::size_t hw = static_cast<std::size_t>(w) * h;
  if (s.depth.width != w || s.depth.height != h || s.labels.width != w || s.labels.height != h) {
    fail(ErrorKind::kResolution, id + ": rgb, depth and labels differ in resolution");
  }
  if (s.rgb.channels != 3 || s.labels.channels != 1) {
    fail(ErrorKind::kFormat, id + ": expected 3-channel rgb and 1-channel labels");
  }
  check_labels(s.labels, id);
  std::vector<double> rgb(3 * hw), depth(hw);
  for (std::size_t p = 0; p < hw; ++p) {
    for (int c = 0; c < 3; ++c) rgb[c * hw + p] = s.rgb.pixels[3 * p + c] / 255.0;
    depth[p] = s.depth.pixels[p] / 65535.0;
  }
  SegSample out;
  out.id = std::move(id);
  out.preset = std::move(preset);
  out.height = h;
  out.width = w;
  const auto uh = static_cast<std::size_t>(h), uw = static_cast<std::size_t>(w);
  out.rgb = ad::Tensor({3, uh, uw}, std::move(rgb));
  out.depth = ad::Tensor({1, uh, uw}, std::move(depth));
  out.labels = s.labels.pixels;
  return out;
}

SegSample read_sample(const fs::path& root, const std::string& split, const std::string& id) {
  RenderedSample s;
  s.rgb = read_png8(sample_path(root, split, "rgb", id));
  s.depth = read_png16(sample_path(root, split, "depth", id));
  s.labels = read_png8(sample_path(root, split, "label", id));
  return to_seg_sample(s, id, "");
}

bool center_crop_to_multiple(SegSample& s, int multiple) {
  const int nh = s.height / multiple * multiple, nw = s.width / multiple * multiple;
  if (nh == s.height && nw == s.width) return false;
  if (nh == 0 || nw == 0) fail(ErrorKind::kResolution, s.id + ": frame smaller than " + std::to_string(multiple));
  const int oy = (s.height - nh) / 2, ox = (s.width - nw) / 2;
  auto crop = [&](const ad::Tensor& t) {
    const std::size_t c = t.dim(0);
    std::vector<double> v(c * nh * nw);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (int y = 0; y < nh; ++y) {
        for (int x = 0; x < nw; ++x) {
          v[(ch * nh + y) * nw + x] = t[(ch * s.height + y + oy) * s.width + x + ox];
        }
      }
    }
    return ad::Tensor({c, static_cast<std::size_t>(nh), static_cast<std::size_t>(nw)}, std::move(v));
  };
  LabelMask labels(static_cast<std::size_t>(nh) * nw);
  for (int y = 0; y < nh; ++y) {
    for (int x = 0; x < nw; ++x) labels[y * nw + x] = s.labels[(y + oy) * s.width + x + ox];
  }
  s.rgb = crop(s.rgb);
  s.depth = crop(s.depth);
  s.labels = std::move(labels);
  s.height = nh;
  s.width = nw;
  return true;
}

void write_manifest(const fs::path& root, const std::vector<ManifestRow>& rows) {
  std::string text = "id\tsplit\tpreset\tcrater_px_ratio\trock_px_ratio\n";
  char buf[64];
  for (const auto& r : rows) {
    text += r.id + "\t" + r.split + "\t" + r.preset + "\t";
    std::snprintf(buf, sizeof buf, "%.17g\t", r.crater_px_ratio);
    text += buf;
    std::snprintf(buf, sizeof buf, "%.17g\n", r.rock_px_ratio);
    text += buf;
  }
  write_file_atomic(root / "manifest.tsv", std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::vector<ManifestRow> read_manifest(const fs::path& root) {
  std::ifstream in(root / "manifest.tsv");
  if (!in) fail(ErrorKind::kIo, "cannot open " + (root / "manifest.tsv").string());
  std::vector<ManifestRow> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.starts_with("id\t")) continue;
    }
    std::istringstream ls(line);
    ManifestRow r;
    std::string crater, rock;
    if (!std::getline(ls, r.id, '\t') || !std::getline(ls, r.split, '\t') ||
        !std::getline(ls, r.preset, '\t') || !std::getline(ls, crater, '\t') ||
        !std::getline(ls, rock, '\t')) {
      fail(ErrorKind::kFormat, "malformed manifest row: " + line);
    }
    try {
      r.crater_px_ratio = std::stod(crater);
      r.rock_px_ratio = std::stod(rock);
    } catch (const std::exception&) {
      fail(ErrorKind::kFormat, "malformed manifest ratios: " + line);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<SegSample> load_split(const fs::path& root, const std::string& split) {
  std::vector<SegSample> out;
  for (const auto& row : read_manifest(root)) {
    if (row.split != split) continue;
    SegSample s = read_sample(root, split, row.id);
    s.preset = row.preset;
    if (center_crop_to_multiple(s)) {
      std::cerr << "warning: " << row.id << " center-cropped to " << s.width << "x" << s.height
                << "\n";
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) fail(ErrorKind::kValidation, "split '" + split + "' has no samples under " + root.string());
  return out;
}

}  // namespace cdseg

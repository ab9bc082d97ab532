#pragma once

#include <doctest.h>

#include <unistd.h>

#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "cdseg/error.hpp"
#include "cdseg/rng.hpp"
#include "cdseg/tensor.hpp"

namespace testing {

inline cdseg::ad::Tensor random_tensor(cdseg::ad::Shape shape, cdseg::Rng& rng, double lo = -1.0,
                                       double hi = 1.0, bool requires_grad = false) {
  std::vector<double> v(cdseg::ad::numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return cdseg::ad::Tensor(std::move(shape), std::move(v), requires_grad);
}

inline std::vector<double> values(const cdseg::ad::Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline std::vector<double> grads(const cdseg::ad::Tensor& t) {
  if (!t.has_grad()) return std::vector<double>(t.size(), 0.0);
  return {t.grad().begin(), t.grad().end()};
}

inline bool bit_equal(const cdseg::ad::Tensor& a, const cdseg::ad::Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  }
  return true;
}

template <typename Fn>
cdseg::ErrorKind error_kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const cdseg::Error& e) {
    return e.kind();
  }
  FAIL("expected a cdseg::Error");
  return cdseg::ErrorKind::kUsage;
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("cdseg_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing

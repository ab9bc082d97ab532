#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unistd.h>

#include "cdseg/error.hpp"
#include "cdseg/io_store.hpp"

namespace cdseg {
namespace {

constexpr char kMagic[4] = {'L', 'U', 'S', 'G'};
constexpr std::string_view kVelocityPrefix = "velocity/";

static_assert(std::endian::native == std::endian::little,
              "checkpoint codec assumes a little-endian host");

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t n) : data_(data), n_(n) {}

  template <typename T>
  T get() {
    T v;
    get_bytes(&v, sizeof(T));
    return v;
  }
  void get_bytes(void* out, std::size_t n) {
    if (n > n_ - pos_) fail(ErrorKind::kCorruption, "checkpoint entry runs past end of payload");
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return n_ - pos_; }

 private:
  const std::uint8_t* data_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

void write_entry(Writer& w, const std::string& name, const ad::Tensor& t) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
  w.put_bytes(name.data(), name.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) w.put<std::uint64_t>(d);
  w.put<std::uint32_t>(kDtypeFloat64);
  w.put_bytes(t.data().data(), t.size() * sizeof(double));
}

}  // namespace

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint8_t> encode_checkpoint(const NetworkParams& params,
                                            const OptimizerState* optimizer) {
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  std::uint64_t count = params.size();
  if (optimizer) count += optimizer->velocity().size();
  w.put<std::uint64_t>(count);
  for (const auto& [name, t] : params) {
    if (name.starts_with(kVelocityPrefix)) {
      fail(ErrorKind::kStructureMismatch, "parameter name collides with optimizer prefix: " + name);
    }
    write_entry(w, name, t);
  }
  if (optimizer) {
    for (const auto& [name, t] : optimizer->velocity()) {
      write_entry(w, std::string(kVelocityPrefix) + name, t);
    }
  }
  const auto sum = fnv1a64(w.bytes().data(), w.bytes().size());
  w.put<std::uint64_t>(sum);
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  constexpr std::size_t kHeader = 4 + 4 + 8;
  if (bytes.size() < 4) fail(ErrorKind::kCorruption, "checkpoint truncated before magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) fail(ErrorKind::kFormat, "bad checkpoint magic");
  if (bytes.size() < kHeader + 8) fail(ErrorKind::kCorruption, "checkpoint truncated in header");

  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 4, 4);
  const std::size_t payload = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + payload, 8);
  if (fnv1a64(bytes.data(), payload) != stored) {
    fail(ErrorKind::kCorruption, "checkpoint checksum mismatch");
  }
  if (version != kCheckpointVersion) {
    fail(ErrorKind::kVersion, "unsupported checkpoint version " + std::to_string(version));
  }

  Reader r(bytes.data() + 4 + 4, payload - 8);
  const auto count = r.get<std::uint64_t>();
  NetworkParams params, velocity;
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto name_len = r.get<std::uint32_t>();
    if (name_len > r.remaining()) fail(ErrorKind::kCorruption, "checkpoint name length out of range");
    std::string name(name_len, '\0');
    r.get_bytes(name.data(), name_len);
    const auto rank = r.get<std::uint32_t>();
    if (rank == 0 || rank > 8) fail(ErrorKind::kCorruption, "checkpoint entry has invalid rank");
    ad::Shape shape(rank);
    std::uint64_t n = 1;
    for (auto& d : shape) {
      d = r.get<std::uint64_t>();
      if (d == 0 || d > r.remaining()) fail(ErrorKind::kCorruption, "checkpoint dimension out of range");
      n *= d;
    }
    if (r.get<std::uint32_t>() != kDtypeFloat64) fail(ErrorKind::kFormat, "unknown dtype tag in " + name);
    if (n > r.remaining() / sizeof(double)) fail(ErrorKind::kCorruption, "checkpoint values truncated");
    std::vector<double> values(n);
    r.get_bytes(values.data(), n * sizeof(double));
    if (name.starts_with(kVelocityPrefix)) {
      velocity.add(name.substr(kVelocityPrefix.size()), ad::Tensor(std::move(shape), std::move(values)));
    } else {
      params.add(std::move(name), ad::Tensor(std::move(shape), std::move(values), true));
    }
  }
  if (r.remaining() != 0) fail(ErrorKind::kCorruption, "trailing bytes after checkpoint entries");

  Checkpoint ck{std::move(params), std::nullopt};
  if (velocity.size() > 0) ck.optimizer = OptimizerState(std::move(velocity));
  return ck;
}

void write_file_atomic(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::kIo, "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::kIo, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    fail(ErrorKind::kIo, "cannot rename to " + path.string() + ": " + ec.message());
  }
}

void save_checkpoint(const NetworkParams& params, const OptimizerState* optimizer,
                     const fs::path& path) {
  write_file_atomic(path, encode_checkpoint(params, optimizer));
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const Error& e) {
    fail(e.kind(), path.string() + ": " + e.what());
  }
}

}  // namespace cdseg

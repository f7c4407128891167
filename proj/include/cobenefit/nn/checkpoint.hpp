#ifndef COBENEFIT_NN_CHECKPOINT_HPP
#define COBENEFIT_NN_CHECKPOINT_HPP

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cobenefit/nn/tensor.hpp"

namespace cobenefit::nn {

// Checkpoint layout (little-endian):
//
//   char[4]  magic "CBNN"
//   u32      version (1)
//   u32      entry count
//   per entry:
//     u32    name length, then name bytes
//     u32    rank, then rank x u64 dims
//     f64    values, row-major
//   u32      CRC-32 of every preceding byte

inline constexpr char kCheckpointMagic[4] = {'C', 'B', 'N', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

namespace detail {

template <typename T>
void put(std::string& buf, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  buf.append(bytes, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& buf) : buf_(buf) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > buf_.size()) throw CheckpointError("checkpoint truncated");
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string bytes(std::size_t n) {
    if (pos_ + n > buf_.size()) throw CheckpointError("checkpoint truncated");
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }

 private:
  const std::string& buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::uint32_t crc32_of(const void* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      ::crc32(::crc32(0L, Z_NULL, 0), static_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

inline std::string encode_checkpoint(const std::vector<NamedTensor>& entries) {
  std::string buf(kCheckpointMagic, 4);
  detail::put<std::uint32_t>(buf, kCheckpointVersion);
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(e.name.size()));
    buf += e.name;
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(e.tensor.rank()));
    for (std::size_t d : e.tensor.shape()) detail::put<std::uint64_t>(buf, d);
    buf.append(reinterpret_cast<const char*>(e.tensor.data()), e.tensor.size() * sizeof(double));
  }
  detail::put<std::uint32_t>(buf, crc32_of(buf.data(), buf.size()));
  return buf;
}

inline std::vector<NamedTensor> decode_checkpoint(const std::string& buf) {
  if (buf.size() < 16 || std::memcmp(buf.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointError("not a checkpoint (bad magic)");
  }
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  if (stored_crc != crc32_of(buf.data(), buf.size() - 4)) throw CheckpointError("checkpoint CRC mismatch");

  detail::Reader r(buf);
  r.bytes(4);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor e;
    e.name = r.bytes(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    if (rank > Tensor::kMaxRank) throw CheckpointError("checkpoint entry '" + e.name + "' has rank > 4");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    const std::size_t n = Tensor::count_of(shape);
    std::vector<double> values(n);
    const std::string raw = r.bytes(n * sizeof(double));
    std::memcpy(values.data(), raw.data(), raw.size());
    e.tensor = Tensor(std::move(shape), std::move(values));
    out.push_back(std::move(e));
  }
  if (r.pos() != buf.size() - 4) throw CheckpointError("trailing bytes in checkpoint");
  return out;
}

inline void write_checkpoint(const std::string& path, const std::vector<NamedTensor>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open " + path + " for writing");
  const std::string buf = encode_checkpoint(entries);
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw CheckpointError("write failed: " + path);
}

inline std::vector<NamedTensor> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint(buf);
}

}  // namespace cobenefit::nn

#endif  // COBENEFIT_NN_CHECKPOINT_HPP

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "sne/ad/params.hpp"
#include "sne/error.hpp"

// Flat binary container of named float64 arrays:
//
//   "SNEW" | u64 version | u64 entry_count
//   per entry: u64 name_len | name bytes | u64 rank | u64 dims[rank] | f64 payload[prod(dims)]
//
// All integers and floats are little-endian.
namespace sne::ad {

inline constexpr char kCheckpointMagic[4] = {'S', 'N', 'E', 'W'};
inline constexpr std::uint64_t kCheckpointVersion = 1;

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  Reader(const std::string& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("checkpoint '" + source_ + "' is truncated");
  }
  const std::string& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const ParameterSet& params) {
  std::string out(kCheckpointMagic, 4);
  detail::put_u64(out, kCheckpointVersion);
  detail::put_u64(out, params.size());
  for (const auto& p : params) {
    detail::put_u64(out, p.name.size());
    out += p.name;
    detail::put_u64(out, p.value.shape.size());
    for (std::size_t d : p.value.shape) detail::put_u64(out, d);
    for (double v : p.value.data) detail::put_f64(out, v);
  }
  return out;
}

inline ParameterSet deserialize_checkpoint(const std::string& bytes, const std::string& source = "<memory>") {
  detail::Reader in(bytes, source);
  if (in.raw(4) != std::string(kCheckpointMagic, 4))
    throw DataError("'" + source + "' is not a checkpoint (bad magic)");
  const std::uint64_t version = in.u64();
  if (version != kCheckpointVersion)
    throw DataError("'" + source + "' has unsupported checkpoint version " + std::to_string(version));
  const std::uint64_t count = in.u64();
  ParameterSet params;
  for (std::uint64_t e = 0; e < count; ++e) {
    const std::uint64_t name_len = in.u64();
    std::string name = in.raw(name_len);
    const std::uint64_t rank = in.u64();
    if (rank > 8) throw DataError("'" + source + "': implausible rank for '" + name + "'");
    Shape shape;
    for (std::uint64_t r = 0; r < rank; ++r) shape.push_back(in.u64());
    std::vector<double> data(element_count(shape));
    for (double& v : data) v = in.f64();
    params.add(std::move(name), Array(std::move(shape), std::move(data)));
  }
  if (!in.done()) throw DataError("'" + source + "' has trailing bytes");
  return params;
}

inline void save_checkpoint(const std::string& path, const ParameterSet& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  const std::string bytes = serialize_checkpoint(params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failure on '" + path + "'");
}

inline ParameterSet load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, path);
}

}  // namespace sne::ad

#ifndef FLDM_CHECKPOINT_HPP
#define FLDM_CHECKPOINT_HPP

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "fldm/tensor.hpp"

// Binary tensor container, all integers and floats little-endian:
//
//   "FLDM"                      4-byte magic
//   u32 version                 currently 1
//   u32 count
//   count x {
//     u32 name_length, name     UTF-8, no terminator
//     u32 rank
//     u64 dims[rank]
//     f64 values[prod(dims)]    row-major
//   }

namespace fldm {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

template <class T>
void put(std::ostream& os, T v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("checkpoint truncated");
  return to_little(v);
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const NamedTensors& tensors) {
  os.write("FLDM", 4);
  detail::put<std::uint32_t>(os, kCheckpointVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put<std::uint64_t>(os, d);
    for (double v : t.values()) detail::put<double>(os, v);
  }
  if (!os) throw DataError("checkpoint write failed");
}

inline NamedTensors read_checkpoint(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "FLDM", 4) != 0) throw DataError("not an FLDM checkpoint");
  const auto version = detail::get<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = detail::get<std::uint32_t>(is);
  NamedTensors out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::get<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw DataError("checkpoint truncated");
    const auto rank = detail::get<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(detail::get<std::uint64_t>(is));
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = detail::get<double>(is);
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return out;
}

inline void save_checkpoint(const std::string& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  write_checkpoint(os, tensors);
}

inline NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(is);
}

}  // namespace fldm

#endif  // FLDM_CHECKPOINT_HPP

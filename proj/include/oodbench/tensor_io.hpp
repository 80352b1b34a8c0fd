#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "oodbench/error.hpp"

namespace oodbench::io {

// Payload layout (little-endian):
//   8 bytes  magic "OODBNCH1"
//   u64      rank
//   u64[rank] dimensions
//   f32[prod(dimensions)] row-major values
inline constexpr std::array<char, 8> kTensorMagic = {'O', 'O', 'D', 'B', 'N', 'C', 'H', '1'};

struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<float> values;

  std::uint64_t element_count() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<unsigned char, 8> bytes{};
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes.data()), 8);
}

inline std::uint64_t get_u64(std::istream& in, const std::string& path) {
  std::array<unsigned char, 8> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), 8)) throw IoError(path + ": truncated tensor header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void write_tensor(const std::filesystem::path& path, std::span<const std::uint64_t> dims,
                         std::span<const float> values) {
  std::uint64_t count = 1;
  for (auto d : dims) count *= d;
  require(count == values.size(), path.string() + ": dimensions describe " + std::to_string(count) +
                                      " values but " + std::to_string(values.size()) + " were given");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kTensorMagic.data(), kTensorMagic.size());
  detail::put_u64(out, dims.size());
  for (auto d : dims) detail::put_u64(out, d);
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
  } else {
    for (float f : values) {
      const auto bits = std::bit_cast<std::uint32_t>(f);
      const std::array<unsigned char, 4> bytes = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                                  static_cast<unsigned char>(bits >> 16),
                                                  static_cast<unsigned char>(bits >> 24)};
      out.write(reinterpret_cast<const char*>(bytes.data()), 4);
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

inline Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing file: " + path.string());
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kTensorMagic) {
    throw IoError(path.string() + ": bad magic, expected OODBNCH1");
  }
  Tensor t;
  const std::uint64_t rank = detail::get_u64(in, path.string());
  if (rank == 0 || rank > 8) throw IoError(path.string() + ": unsupported rank " + std::to_string(rank));
  t.dims.resize(rank);
  for (auto& d : t.dims) d = detail::get_u64(in, path.string());
  const std::uint64_t count = t.element_count();

  const auto header = static_cast<std::uint64_t>(in.tellg());
  const auto file_size = static_cast<std::uint64_t>(std::filesystem::file_size(path));
  if (file_size - header != count * sizeof(float)) {
    throw IoError(path.string() + ": header declares " + std::to_string(count) + " floats but payload holds " +
                  std::to_string((file_size - header) / sizeof(float)));
  }
  t.values.resize(count);
  in.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(count * sizeof(float)));
  if (!in) throw IoError(path.string() + ": truncated payload");
  if constexpr (std::endian::native != std::endian::little) {
    for (float& f : t.values) {
      auto bits = std::bit_cast<std::uint32_t>(f);
      bits = ((bits & 0xffu) << 24) | ((bits & 0xff00u) << 8) | ((bits >> 8) & 0xff00u) | (bits >> 24);
      f = std::bit_cast<float>(bits);
    }
  }
  return t;
}

}  // namespace oodbench::io

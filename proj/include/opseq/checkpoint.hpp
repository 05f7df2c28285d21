#pragma once

// Checkpoint layout, all integers little-endian:
//
//   "OPSC"                       4 bytes
//   format version               u32 (currently 1)
//   vocab_size, embed_dim,
//   hidden1, hidden2, max_len    5 x u32
//   tensors                      IEEE-754 binary64, little-endian, each
//                                tensor row-major, in this order:
//                                  embedding       embed_dim x vocab_size
//                                  layer1 W_xi W_xf W_xo W_xg   (4*h1 x embed_dim)
//                                  layer1 W_hi W_hf W_ho W_hg   (4*h1 x h1)
//                                  layer1 b_i b_f b_o b_g       (4*h1)
//                                  layer2 W_x*, W_h*, b_*       (same scheme, h2)
//                                  W_out                        (h2)
//                                  b_out                        (1)
//   CRC-32 (zlib polynomial)     u32 over every preceding byte

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <zlib.h>

#include "opseq/error.hpp"
#include "opseq/lstm.hpp"

namespace opseq {

inline constexpr std::array<char, 4> kCheckpointMagic = {'O', 'P', 'S', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f64(std::vector<std::uint8_t>& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

inline double get_f64(const std::uint8_t* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const ModelParams& params) {
  std::vector<std::uint8_t> out;
  out.reserve(4 + 4 * 6 + params.parameter_count() * 8 + 4);
  out.insert(out.end(), kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u32(out, kCheckpointVersion);
  const ModelDims& d = params.dims;
  for (std::size_t v : {d.vocab_size, d.embed_dim, d.hidden1, d.hidden2, d.max_len}) {
    detail::put_u32(out, static_cast<std::uint32_t>(v));
  }
  for (const auto& [name, m] : params.tensors()) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) detail::put_f64(out, m(r, c));
  }
  detail::put_u32(out, detail::crc32_of(out.data(), out.size()));
  return out;
}

inline ModelParams deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  auto fail = [](const std::string& why) { return Error(ErrorCode::kCheckpointLoadFailure, why); };
  constexpr std::size_t kHeader = 4 + 4 + 5 * 4;
  if (bytes.size() < kHeader + 4) throw fail("file too short");
  if (std::memcmp(bytes.data(), kCheckpointMagic.data(), 4) != 0) throw fail("bad magic");
  const std::uint32_t version = detail::get_u32(bytes.data() + 4);
  if (version != kCheckpointVersion) throw fail("unsupported format version " + std::to_string(version));
  const std::uint32_t stored_crc = detail::get_u32(bytes.data() + bytes.size() - 4);
  if (stored_crc != detail::crc32_of(bytes.data(), bytes.size() - 4)) throw fail("checksum mismatch");

  ModelDims dims;
  const std::uint8_t* p = bytes.data() + 8;
  dims.vocab_size = detail::get_u32(p);
  dims.embed_dim = detail::get_u32(p + 4);
  dims.hidden1 = detail::get_u32(p + 8);
  dims.hidden2 = detail::get_u32(p + 12);
  dims.max_len = detail::get_u32(p + 16);
  if (dims.vocab_size < 2 || dims.embed_dim == 0 || dims.hidden1 == 0 || dims.hidden2 == 0 || dims.max_len == 0) {
    throw fail("invalid dimensions");
  }
  ModelParams params = ModelParams::zeros(dims);
  if (bytes.size() != kHeader + params.parameter_count() * 8 + 4) throw fail("size does not match dimensions");
  p = bytes.data() + kHeader;
  for (auto& [name, m] : params.tensors()) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        m(r, c) = detail::get_f64(p);
        p += 8;
      }
    }
  }
  return params;
}

inline void save_checkpoint(const ModelParams& params, const std::string& path) {
  const std::vector<std::uint8_t> bytes = serialize_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoError, "short write to " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kCheckpointLoadFailure, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace opseq

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "wplus/latent.hpp"

namespace wplus {

/// WLAT layout (little-endian):
///   "WLAT" | version u8 = 1 | dtype u8 (0 = f32, 1 = f16) | n_codes u16 | dim u16 |
///   reserved u16 = 0 | n_codes * dim values, row-major | CRC32 (IEEE) of all prior bytes, u32
inline constexpr std::size_t kWlatHeaderBytes = 12;
inline constexpr std::size_t kWlatCrcBytes = 4;
inline constexpr std::uint8_t kWlatVersion = 1;

std::size_t wlat_value_bytes(Dtype dtype);
/// Header + values, without the CRC trailer.
std::size_t wlat_body_size(int n_codes, int dim, Dtype dtype);
/// Complete file size including the CRC trailer.
std::size_t wlat_file_size(int n_codes, int dim, Dtype dtype);

/// Serializes `code`; the CRC trailer is appended when `with_crc` is set.
std::vector<std::uint8_t> encode_latent(const LatentCode& code, Dtype dtype = Dtype::F32, bool with_crc = true);
/// Parses a complete WLAT file (CRC verified).
LatentCode decode_latent(std::span<const std::uint8_t> bytes);
/// Parses header + values without a trailer; the caller vouches for integrity.
LatentCode decode_latent_body(std::span<const std::uint8_t> bytes);

/// Returns the number of bytes written.
std::size_t write_latent(const LatentCode& code, std::ostream& sink, Dtype dtype = Dtype::F32);
LatentCode read_latent(std::istream& source);

void save_latent(const LatentCode& code, const std::filesystem::path& path, Dtype dtype = Dtype::F32);
LatentCode load_latent(const std::filesystem::path& path);

}  // namespace wplus

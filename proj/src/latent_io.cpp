#include "wplus/latent_io.hpp"

#include <Eigen/Core>

#include <bit>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>

#include "binary.hpp"
#include "wplus/error.hpp"

namespace wplus {

namespace detail {

std::vector<std::uint8_t> read_all(std::istream& in) {
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure");
  return bytes;
}

}  // namespace detail

std::size_t wlat_value_bytes(Dtype dtype) { return dtype == Dtype::F16 ? 2 : 4; }

std::size_t wlat_body_size(int n_codes, int dim, Dtype dtype) {
  return kWlatHeaderBytes + static_cast<std::size_t>(n_codes) * dim * wlat_value_bytes(dtype);
}

std::size_t wlat_file_size(int n_codes, int dim, Dtype dtype) {
  return wlat_body_size(n_codes, dim, dtype) + kWlatCrcBytes;
}

std::vector<std::uint8_t> encode_latent(const LatentCode& code, Dtype dtype, bool with_crc) {
  code.validate();
  std::vector<std::uint8_t> out;
  out.reserve(wlat_file_size(code.n_codes(), code.dim(), dtype));
  detail::ByteWriter w(out);
  w.text("WLAT");
  w.u8(kWlatVersion);
  w.u8(static_cast<std::uint8_t>(dtype));
  w.u16(static_cast<std::uint16_t>(code.n_codes()));
  w.u16(static_cast<std::uint16_t>(code.dim()));
  w.u16(0);
  const float* v = code.data();
  for (Eigen::Index i = 0; i < code.size(); ++i) {
    if (dtype == Dtype::F16) {
      w.u16(std::bit_cast<std::uint16_t>(Eigen::half(v[i])));
    } else {
      w.f32(v[i]);
    }
  }
  if (with_crc) w.u32(detail::crc32_of(out));
  return out;
}

namespace {

LatentCode parse_body(detail::ByteReader& r) {
  if (r.remaining() < 4 || r.text(4) != "WLAT") throw FormatError("not a WLAT latent (bad magic)");
  const std::uint8_t version = r.u8();
  if (version != kWlatVersion) throw FormatError("unsupported WLAT version " + std::to_string(version));
  const std::uint8_t dt = r.u8();
  if (dt > 1) throw FormatError("unknown WLAT dtype " + std::to_string(dt));
  const Dtype dtype = static_cast<Dtype>(dt);
  const int n_codes = r.u16();
  const int dim = r.u16();
  if (r.u16() != 0) throw FormatError("WLAT reserved field is not zero");
  if (n_codes < 1 || dim < 1) throw FormatError("WLAT header declares an empty latent");
  r.need(static_cast<std::size_t>(n_codes) * dim * wlat_value_bytes(dtype));
  LatentCode code(n_codes, dim);
  float* v = code.data();
  for (Eigen::Index i = 0; i < code.size(); ++i) {
    v[i] = dtype == Dtype::F16 ? static_cast<float>(std::bit_cast<Eigen::half>(r.u16())) : r.f32();
  }
  return code;
}

}  // namespace

LatentCode decode_latent(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  LatentCode code = parse_body(r);
  const std::size_t body = r.position();
  const std::uint32_t stored = r.u32();
  if (stored != detail::crc32_of(bytes.first(body))) throw CorruptionError("WLAT checksum mismatch");
  return code;
}

LatentCode decode_latent_body(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  return parse_body(r);
}

std::size_t write_latent(const LatentCode& code, std::ostream& sink, Dtype dtype) {
  const auto bytes = encode_latent(code, dtype);
  sink.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!sink) throw IoError("failed to write latent");
  return bytes.size();
}

LatentCode read_latent(std::istream& source) {
  const auto bytes = detail::read_all(source);
  return decode_latent(bytes);
}

void save_latent(const LatentCode& code, const std::filesystem::path& path, Dtype dtype) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_latent(code, out, dtype);
}

LatentCode load_latent(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_latent(in);
}

}  // namespace wplus

#include "wplus/tensor_archive.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "binary.hpp"

namespace wplus {

void TensorArchive::put(const std::string& name, std::array<int, 3> dims, Eigen::ArrayXf values) {
  if (static_cast<Eigen::Index>(dims[0]) * dims[1] * dims[2] != values.size())
    throw ValidationError("tensor " + name + ": dims do not match value count");
  tensors_[name] = Tensor{dims, std::move(values)};
}

const TensorArchive::Tensor& TensorArchive::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw FormatError("archive has no tensor named '" + name + "'");
  return it->second;
}

void TensorArchive::merge(const TensorArchive& other) {
  for (const auto& [k, v] : other.tensors_) tensors_[k] = v;
}

void TensorArchive::write(std::ostream& out) const {
  std::vector<std::uint8_t> bytes;
  detail::ByteWriter w(bytes);
  w.text("WTAR");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(tensors_.size()));
  for (const auto& [name, t] : tensors_) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.text(name);
    for (int d : t.dims) w.u32(static_cast<std::uint32_t>(d));
    for (Eigen::Index i = 0; i < t.values.size(); ++i) w.f32(t.values[i]);
  }
  w.u32(detail::crc32_of(bytes));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed to write tensor archive");
}

TensorArchive TensorArchive::read(std::istream& in) {
  const auto bytes = detail::read_all(in);
  detail::ByteReader r(bytes);
  if (r.remaining() < 4 || r.text(4) != "WTAR") throw FormatError("not a tensor archive (bad magic)");
  if (r.u32() != 1) throw FormatError("unsupported tensor archive version");
  const std::uint32_t count = r.u32();
  TensorArchive ar;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32();
    std::string name = r.text(len);
    std::array<int, 3> dims{};
    for (int& d : dims) d = static_cast<int>(r.u32());
    const Eigen::Index n = static_cast<Eigen::Index>(dims[0]) * dims[1] * dims[2];
    r.need(static_cast<std::size_t>(n) * 4);
    Eigen::ArrayXf values(n);
    for (Eigen::Index k = 0; k < n; ++k) values[k] = r.f32();
    ar.tensors_[std::move(name)] = Tensor{dims, std::move(values)};
  }
  const std::size_t body = r.position();
  if (r.u32() != detail::crc32_of(std::span(bytes).first(body))) throw CorruptionError("tensor archive checksum mismatch");
  return ar;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write(out);
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read(in);
}

}  // namespace wplus

#pragma once

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "wplus/error.hpp"

namespace wplus {

/// Named f32 tensors, the on-disk container for network weights.
///
/// Layout (little-endian): magic "WTAR", version u32 = 1, count u32, then per
/// tensor: name length u32, name bytes, three u32 dims (c, h, w), c*h*w f32
/// values. A CRC32 of everything before it closes the file.
class TensorArchive {
 public:
  struct Tensor {
    std::array<int, 3> dims{};
    Eigen::ArrayXf values;
  };

  void put(const std::string& name, std::array<int, 3> dims, Eigen::ArrayXf values);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  /// Throws FormatError when the name is absent.
  const Tensor& get(const std::string& name) const;
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }

  void merge(const TensorArchive& other);

  void write(std::ostream& out) const;
  static TensorArchive read(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  std::map<std::string, Tensor> tensors_;
};

}  // namespace wplus

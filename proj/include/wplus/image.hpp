#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

namespace wplus {

/// Planar image (channel-major, then rows) with values in [-1, 1].
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(int height, int width, int channels = 3);  // zero-filled
  ImageTensor(int height, int width, int channels, Eigen::ArrayXf values);

  static ImageTensor Constant(int height, int width, float value, int channels = 3);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  Eigen::Index size() const { return values_.size(); }
  int plane() const { return height_ * width_; }

  const Eigen::ArrayXf& values() const { return values_; }
  Eigen::ArrayXf& values() { return values_; }

  float& at(int c, int y, int x) { return values_[(static_cast<Eigen::Index>(c) * height_ + y) * width_ + x]; }
  float at(int c, int y, int x) const { return values_[(static_cast<Eigen::Index>(c) * height_ + y) * width_ + x]; }

  bool same_shape(const ImageTensor& o) const {
    return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
  }

  /// Clamps every value into [-1, 1].
  ImageTensor& clamp();

  friend bool operator==(const ImageTensor& a, const ImageTensor& b) {
    return a.same_shape(b) && (a.values_ == b.values_).all();
  }

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  Eigen::ArrayXf values_;
};

/// Interleaved 8-bit RGB buffer, the form images take on disk.
struct Rgb8Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3, row-major RGB
};

/// v / 127.5 - 1
ImageTensor from_rgb8(const Rgb8Image& img);
/// Inverse of from_rgb8 with rounding to nearest and clamping.
Rgb8Image to_rgb8(const ImageTensor& img);

ImageTensor hflip(const ImageTensor& img);
/// Rec. 601 luminance replicated into all three channels.
ImageTensor grayscale(const ImageTensor& img);
Eigen::ArrayXf luminance(const ImageTensor& img);
/// Box-filter downsample by an integer factor that divides both sides.
ImageTensor downsample(const ImageTensor& img, int factor);
/// Nearest-neighbour upsample by an integer factor.
ImageTensor upsample_nearest(const ImageTensor& img, int factor);
/// Bilinear resize (align_corners = false) to an arbitrary size.
ImageTensor resize_bilinear(const ImageTensor& img, int height, int width);
/// Stacks the channels of a then b.
ImageTensor concat_channels(const ImageTensor& a, const ImageTensor& b);

}  // namespace wplus

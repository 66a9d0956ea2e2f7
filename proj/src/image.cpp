#include "wplus/image.hpp"

#include <algorithm>
#include <cmath>

#include "wplus/error.hpp"

namespace wplus {

ImageTensor::ImageTensor(int height, int width, int channels)
    : height_(height), width_(width), channels_(channels) {
  if (height < 1 || width < 1 || channels < 1) throw ValidationError("image dimensions must be positive");
  values_ = Eigen::ArrayXf::Zero(static_cast<Eigen::Index>(height) * width * channels);
}

ImageTensor::ImageTensor(int height, int width, int channels, Eigen::ArrayXf values)
    : height_(height), width_(width), channels_(channels), values_(std::move(values)) {
  if (height < 1 || width < 1 || channels < 1) throw ValidationError("image dimensions must be positive");
  if (values_.size() != static_cast<Eigen::Index>(height) * width * channels)
    throw ValidationError("image value count does not match its dimensions");
}

ImageTensor ImageTensor::Constant(int height, int width, float value, int channels) {
  ImageTensor img(height, width, channels);
  img.values_.setConstant(value);
  return img;
}

ImageTensor& ImageTensor::clamp() {
  values_ = values_.max(-1.0f).min(1.0f);
  return *this;
}

ImageTensor from_rgb8(const Rgb8Image& img) {
  ImageTensor out(img.height, img.width, 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(c, y, x) = img.pixels[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] / 127.5f - 1.0f;
  return out;
}

Rgb8Image to_rgb8(const ImageTensor& img) {
  if (img.channels() != 3) throw ValidationError("to_rgb8 needs a 3-channel image");
  Rgb8Image out{img.height(), img.width(), {}};
  out.pixels.resize(static_cast<std::size_t>(img.height()) * img.width() * 3);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp((img.at(c, y, x) + 1.0f) * 127.5f, 0.0f, 255.0f);
        out.pixels[(static_cast<std::size_t>(y) * img.width() + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v));
      }
  return out;
}

ImageTensor hflip(const ImageTensor& img) {
  ImageTensor out(img.height(), img.width(), img.channels());
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) out.at(c, y, x) = img.at(c, y, img.width() - 1 - x);
  return out;
}

Eigen::ArrayXf luminance(const ImageTensor& img) {
  if (img.channels() != 3) throw ValidationError("luminance needs a 3-channel image");
  const Eigen::Index p = img.plane();
  const auto& v = img.values();
  const auto r = v.segment(0, p), g = v.segment(p, p), b = v.segment(2 * p, p);
  // gray pixels map to themselves exactly
  return (r == g && g == b).select(r, 0.299f * r + 0.587f * g + 0.114f * b);
}

ImageTensor grayscale(const ImageTensor& img) {
  const Eigen::ArrayXf y = luminance(img);
  const Eigen::Index p = img.plane();
  Eigen::ArrayXf v(3 * p);
  v << y, y, y;
  return ImageTensor(img.height(), img.width(), 3, std::move(v));
}

ImageTensor downsample(const ImageTensor& img, int factor) {
  if (factor < 1 || img.height() % factor || img.width() % factor)
    throw ValidationError("downsample factor must divide the image sides");
  if (factor == 1) return img;
  const int h = img.height() / factor, w = img.width() / factor;
  ImageTensor out(h, w, img.channels());
  const float norm = 1.0f / static_cast<float>(factor * factor);
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float acc = 0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) acc += img.at(c, y * factor + dy, x * factor + dx);
        out.at(c, y, x) = acc * norm;
      }
  return out;
}

ImageTensor upsample_nearest(const ImageTensor& img, int factor) {
  if (factor < 1) throw ValidationError("upsample factor must be positive");
  if (factor == 1) return img;
  ImageTensor out(img.height() * factor, img.width() * factor, img.channels());
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x) out.at(c, y, x) = img.at(c, y / factor, x / factor);
  return out;
}

ImageTensor resize_bilinear(const ImageTensor& img, int height, int width) {
  if (height < 1 || width < 1) throw ValidationError("resize target must be positive");
  if (height == img.height() && width == img.width()) return img;
  // Box-filter first when shrinking by an exact integer factor.
  if (img.height() % height == 0 && img.width() % width == 0 && img.height() / height == img.width() / width)
    return downsample(img, img.height() / height);
  ImageTensor out(height, width, img.channels());
  const float sy = static_cast<float>(img.height()) / height;
  const float sx = static_cast<float>(img.width()) / width;
  for (int y = 0; y < height; ++y) {
    const float fy = std::max(0.0f, (y + 0.5f) * sy - 0.5f);
    const int y0 = std::min(static_cast<int>(fy), img.height() - 1);
    const int y1 = std::min(y0 + 1, img.height() - 1);
    const float ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const float fx = std::max(0.0f, (x + 0.5f) * sx - 0.5f);
      const int x0 = std::min(static_cast<int>(fx), img.width() - 1);
      const int x1 = std::min(x0 + 1, img.width() - 1);
      const float tx = fx - x0;
      for (int c = 0; c < img.channels(); ++c) {
        const float top = img.at(c, y0, x0) * (1 - tx) + img.at(c, y0, x1) * tx;
        const float bot = img.at(c, y1, x0) * (1 - tx) + img.at(c, y1, x1) * tx;
        out.at(c, y, x) = top * (1 - ty) + bot * ty;
      }
    }
  }
  return out;
}

ImageTensor concat_channels(const ImageTensor& a, const ImageTensor& b) {
  if (a.height() != b.height() || a.width() != b.width()) throw ValidationError("concat_channels: resolution mismatch");
  Eigen::ArrayXf v(a.size() + b.size());
  v << a.values(), b.values();
  return ImageTensor(a.height(), a.width(), a.channels() + b.channels(), std::move(v));
}

}  // namespace wplus

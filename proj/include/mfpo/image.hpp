#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <png.h>

#include <json.hpp>

#include "mfpo/error.hpp"

namespace mfpo {

/// Dense H x W x C raster, row-major, channel-interleaved. Every element is
/// clamped into [0, 1] when written.
class ImageTensor {
 public:
  ImageTensor(int height, int width, int channels, std::vector<double> data)
      : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
    check_shape(height_, width_, channels_);
    if (data_.size() != element_count(height_, width_, channels_)) {
      throw ValidationError("image data length " + std::to_string(data_.size()) + " does not match " +
                            std::to_string(height_) + "x" + std::to_string(width_) + "x" +
                            std::to_string(channels_));
    }
    for (double& v : data_) {
      if (!std::isfinite(v)) throw ValidationError("image contains a non-finite value");
      v = std::clamp(v, 0.0, 1.0);
    }
  }

  static ImageTensor filled(int height, int width, int channels, double value) {
    check_shape(height, width, channels);
    return {height, width, channels, std::vector<double>(element_count(height, width, channels), value)};
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::span<const double> data() const noexcept { return data_; }

  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }
  double at(int y, int x, int c) const { return data_.at(index(y, x, c)); }
  void set(int y, int x, int c, double v) {
    if (!std::isfinite(v)) throw ValidationError("image write of a non-finite value");
    data_.at(index(y, x, c)) = std::clamp(v, 0.0, 1.0);
  }

  bool same_shape(const ImageTensor& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  static void check_shape(int h, int w, int c) {
    if (h <= 0 || w <= 0) throw ValidationError("image dimensions must be positive");
    if (c != 1 && c != 3) throw ValidationError("image channels must be 1 or 3, got " + std::to_string(c));
  }
  static std::size_t element_count(int h, int w, int c) {
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * static_cast<std::size_t>(c);
  }

  int height_;
  int width_;
  int channels_;
  std::vector<double> data_;
};

/// Binary per-pixel selection over an H x W image, tagged with the keyword
/// that produced it. Never empty.
class RegionMask {
 public:
  RegionMask(int height, int width, std::vector<std::uint8_t> bits, std::string keyword)
      : height_(height), width_(width), bits_(std::move(bits)), keyword_(std::move(keyword)) {
    if (height_ <= 0 || width_ <= 0) throw ValidationError("mask dimensions must be positive");
    if (bits_.size() != static_cast<std::size_t>(height_) * width_) {
      throw ValidationError("mask bit count does not match its dimensions");
    }
    for (auto& b : bits_) b = b ? 1 : 0;
    if (std::none_of(bits_.begin(), bits_.end(), [](std::uint8_t b) { return b != 0; })) {
      throw ValidationError("mask for '" + keyword_ + "' selects no pixels");
    }
  }

  static RegionMask full(int height, int width, std::string keyword) {
    return {height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width, 1),
            std::move(keyword)};
  }

  /// Rasterizes the rectangle [x, x+w) x [y, y+h), clipped to the image.
  /// Absent when nothing of it lies inside.
  static std::optional<RegionMask> from_rect(int height, int width, int x, int y, int w, int h,
                                             std::string keyword) {
    const int x0 = std::max(x, 0), y0 = std::max(y, 0);
    const int x1 = std::min(x + w, width), y1 = std::min(y + h, height);
    if (w <= 0 || h <= 0 || x0 >= x1 || y0 >= y1) return std::nullopt;
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(height) * width, 0);
    for (int r = y0; r < y1; ++r)
      for (int c = x0; c < x1; ++c) bits[static_cast<std::size_t>(r) * width + c] = 1;
    return RegionMask(height, width, std::move(bits), std::move(keyword));
  }

  /// Pixels with value > 0.5 in the (single-channel) image are in region.
  static std::optional<RegionMask> from_image(const ImageTensor& img, std::string keyword) {
    if (img.channels() != 1) throw ValidationError("mask images must be single-channel");
    std::vector<std::uint8_t> bits(img.pixel_count());
    for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = img.data()[i] > 0.5 ? 1 : 0;
    if (std::none_of(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; })) return std::nullopt;
    return RegionMask(img.height(), img.width(), std::move(bits), std::move(keyword));
  }

  /// Pixelwise OR of nonempty, same-sized masks.
  static RegionMask unite(std::span<const RegionMask> masks, std::string keyword) {
    if (masks.empty()) throw ValidationError("cannot unite zero masks");
    std::vector<std::uint8_t> bits(masks.front().bits_.size(), 0);
    for (const auto& m : masks) {
      if (!m.same_shape(masks.front())) throw ValidationError("mask union over mismatched shapes");
      for (std::size_t i = 0; i < bits.size(); ++i) bits[i] |= m.bits_[i];
    }
    return {masks.front().height_, masks.front().width_, std::move(bits), std::move(keyword)};
  }

  ImageTensor to_image() const {
    std::vector<double> data(bits_.begin(), bits_.end());
    return {height_, width_, 1, std::move(data)};
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  const std::string& keyword() const noexcept { return keyword_; }
  bool contains(int y, int x) const { return bits_.at(static_cast<std::size_t>(y) * width_ + x) != 0; }
  bool contains(std::size_t pixel) const { return bits_.at(pixel) != 0; }
  std::size_t count() const noexcept {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }
  bool same_shape(const RegionMask& o) const noexcept { return height_ == o.height_ && width_ == o.width_; }
  bool matches(const ImageTensor& img) const noexcept {
    return height_ == img.height() && width_ == img.width();
  }

  friend bool operator==(const RegionMask&, const RegionMask&) = default;

 private:
  int height_;
  int width_;
  std::vector<std::uint8_t> bits_;
  std::string keyword_;
};

// ---------------------------------------------------------------------------
// Codecs

enum class ImageCodec {
  png8,        ///< 8-bit gray/RGB PNG; lossy to within 1/255
  json_float,  ///< `{h,w,c,data}` text with round-trip-exact doubles
};

inline nlohmann::json image_to_json(const ImageTensor& img) {
  return {{"h", img.height()},
          {"w", img.width()},
          {"c", img.channels()},
          {"data", std::vector<double>(img.data().begin(), img.data().end())}};
}

inline ImageTensor image_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("inline image must be an object");
  for (const char* key : {"h", "w", "c", "data"}) {
    if (!j.contains(key)) throw ValidationError(std::string("inline image is missing '") + key + "'");
  }
  if (!j["data"].is_array()) throw ValidationError("inline image 'data' must be an array");
  try {
    return {j["h"].get<int>(), j["w"].get<int>(), j["c"].get<int>(), j["data"].get<std::vector<double>>()};
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("inline image: ") + e.what());
  }
}

namespace detail {

inline std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

inline std::vector<std::uint8_t> encode_png(const ImageTensor& img) {
  png_image desc;
  std::memset(&desc, 0, sizeof desc);
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(img.width());
  desc.height = static_cast<png_uint_32>(img.height());
  desc.format = img.channels() == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;

  std::vector<std::uint8_t> raster(img.size());
  std::transform(img.data().begin(), img.data().end(), raster.begin(), quantize);

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&desc, nullptr, &size, 0, raster.data(), 0, nullptr)) {
    throw IoError(std::string("png encode failed: ") + desc.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&desc, out.data(), &size, 0, raster.data(), 0, nullptr)) {
    throw IoError(std::string("png encode failed: ") + desc.message);
  }
  out.resize(size);
  return out;
}

inline ImageTensor decode_png(std::span<const std::uint8_t> bytes) {
  png_image desc;
  std::memset(&desc, 0, sizeof desc);
  desc.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&desc, bytes.data(), bytes.size())) {
    throw ValidationError(std::string("corrupt png stream: ") + desc.message);
  }
  const bool gray = (desc.format & PNG_FORMAT_FLAG_COLOR) == 0;
  desc.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<std::uint8_t> raster(PNG_IMAGE_SIZE(desc));
  if (!png_image_finish_read(&desc, nullptr, raster.data(), 0, nullptr)) {
    png_image_free(&desc);
    throw ValidationError(std::string("corrupt png stream: ") + desc.message);
  }
  std::vector<double> data(raster.size());
  std::transform(raster.begin(), raster.end(), data.begin(), [](std::uint8_t b) { return b / 255.0; });
  return {static_cast<int>(desc.height), static_cast<int>(desc.width), gray ? 1 : 3, std::move(data)};
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_image(const ImageTensor& img, ImageCodec codec) {
  if (codec == ImageCodec::png8) return detail::encode_png(img);
  const std::string text = image_to_json(img).dump();
  return {text.begin(), text.end()};
}

/// Detects the codec from the leading bytes.
inline ImageTensor decode_image(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kPngMagic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::equal(bytes.begin(), bytes.begin() + 8, kPngMagic)) {
    return detail::decode_png(bytes);
  }
  const auto j = nlohmann::json::parse(bytes.begin(), bytes.end(), nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw ValidationError("corrupt image stream: neither png nor json tensor");
  return image_from_json(j);
}

}  // namespace mfpo

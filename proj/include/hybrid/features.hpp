#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hybrid/binary_io.hpp"
#include "hybrid/dataset.hpp"
#include "hybrid/error.hpp"

namespace hybrid {

/// H x W x C pixel array, interleaved (row, col, channel).
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  float& at(std::size_t r, std::size_t col, std::size_t ch) {
    return pixels[(r * width + col) * channels + ch];
  }
  float at(std::size_t r, std::size_t col, std::size_t ch) const {
    return pixels[(r * width + col) * channels + ch];
  }
  bool empty() const noexcept { return height == 0 || width == 0 || channels == 0; }
};

/// h x w x d activation tensor produced by a convolutional backbone.
template <class T>
struct BasicFeatureMap {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t d = 0;
  std::vector<T> values;  // (row, col, channel)

  BasicFeatureMap() = default;
  BasicFeatureMap(std::size_t h_, std::size_t w_, std::size_t d_, T fill = T{})
      : h(h_), w(w_), d(d_), values(h_ * w_ * d_, fill) {}

  T& at(std::size_t p, std::size_t q, std::size_t j) { return values[(p * w + q) * d + j]; }
  T at(std::size_t p, std::size_t q, std::size_t j) const { return values[(p * w + q) * d + j]; }
};

using FeatureMap = BasicFeatureMap<float>;

inline constexpr std::size_t kDefaultImageSide = 224;

/// Bilinear resize to side x side (half-pixel centres, edge clamped) followed by
/// the 1/255 rescale. Input values are expected in [0, 255].
inline Image preprocess_image(const Image& raw, std::size_t side = kDefaultImageSide) {
  if (raw.empty() || raw.pixels.size() != raw.height * raw.width * raw.channels) {
    throw InvalidInput("preprocess_image: empty or inconsistent image");
  }
  if (side == 0) throw InvalidInput("preprocess_image: target side must be >= 1");

  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(src));
      const std::size_t hi = std::min(lo + 1, in - 1);
      t[i] = {lo, hi, src - static_cast<double>(lo)};
    }
    return t;
  };
  const auto rows = taps(raw.height, side);
  const auto cols = taps(raw.width, side);

  Image out(side, side, raw.channels);
  for (std::size_t r = 0; r < side; ++r) {
    const auto& ty = rows[r];
    for (std::size_t c = 0; c < side; ++c) {
      const auto& tx = cols[c];
      for (std::size_t ch = 0; ch < raw.channels; ++ch) {
        const double top = (1.0 - tx.frac) * raw.at(ty.lo, tx.lo, ch) + tx.frac * raw.at(ty.lo, tx.hi, ch);
        const double bot = (1.0 - tx.frac) * raw.at(ty.hi, tx.lo, ch) + tx.frac * raw.at(ty.hi, tx.hi, ch);
        const double v = ((1.0 - ty.frac) * top + ty.frac * bot) / 255.0;
        out.at(r, c, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

/// Global average pooling at full 64-bit precision.
template <class T>
std::vector<double> gap_f64(const BasicFeatureMap<T>& map) {
  if (map.h == 0 || map.w == 0 || map.d == 0 || map.values.size() != map.h * map.w * map.d) {
    throw InvalidInput("gap: malformed feature map");
  }
  std::vector<double> z(map.d, 0.0);
  for (std::size_t s = 0; s < map.h * map.w; ++s) {
    for (std::size_t j = 0; j < map.d; ++j) z[j] += static_cast<double>(map.values[s * map.d + j]);
  }
  const double inv = 1.0 / static_cast<double>(map.h * map.w);
  for (auto& v : z) v *= inv;
  return z;
}

/// Per-channel spatial mean, stored as float32.
template <class T>
std::vector<float> gap(const BasicFeatureMap<T>& map) {
  const auto z = gap_f64(map);
  return {z.begin(), z.end()};
}

inline constexpr std::size_t kHistogramBins = 32;

inline std::size_t baseline_feature_dim(std::size_t channels) {
  return kHistogramBins * channels + 2 * channels;
}

/// Backbone-free descriptor: per-channel 32-bin intensity histograms over
/// [0, 1] (each normalised to sum 1), then per-channel means, then per-channel
/// population standard deviations.
inline std::vector<float> baseline_histogram_features(const Image& img) {
  if (img.empty()) throw InvalidInput("baseline features: empty image");
  const std::size_t c = img.channels;
  const std::size_t pixels = img.height * img.width;
  std::vector<double> hist(kHistogramBins * c, 0.0), sum(c, 0.0), sq(c, 0.0);
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double v = std::clamp(static_cast<double>(img.pixels[p * c + ch]), 0.0, 1.0);
      const auto bin = std::min(static_cast<std::size_t>(v * kHistogramBins), kHistogramBins - 1);
      hist[ch * kHistogramBins + bin] += 1.0;
      sum[ch] += v;
    }
  }
  std::vector<double> mean(c);
  for (std::size_t ch = 0; ch < c; ++ch) mean[ch] = sum[ch] / static_cast<double>(pixels);
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double dv = std::clamp(static_cast<double>(img.pixels[p * c + ch]), 0.0, 1.0) - mean[ch];
      sq[ch] += dv * dv;
    }
  }
  std::vector<float> out;
  out.reserve(baseline_feature_dim(c));
  for (double h : hist) out.push_back(static_cast<float>(h / static_cast<double>(pixels)));
  for (std::size_t ch = 0; ch < c; ++ch) out.push_back(static_cast<float>(mean[ch]));
  for (std::size_t ch = 0; ch < c; ++ch) {
    out.push_back(static_cast<float>(std::sqrt(sq[ch] / static_cast<double>(pixels))));
  }
  return out;
}

// ---------------------------------------------------------------------------
// FMAP

struct FeatureMapSet {
  std::vector<FeatureMap> maps;
  std::vector<Label> labels;  // empty when unlabelled
  std::vector<std::string> class_names;
  bool labelled = false;
};

inline std::string encode_feature_map_file(const FeatureMapSet& set) {
  std::size_t h = 0, w = 0, d = 0;
  if (!set.maps.empty()) {
    h = set.maps.front().h;
    w = set.maps.front().w;
    d = set.maps.front().d;
  }
  for (const auto& m : set.maps) {
    if (m.h != h || m.w != w || m.d != d || m.values.size() != h * w * d) {
      throw InvalidInput("FMAP requires maps of identical shape");
    }
  }
  if (set.labelled && set.labels.size() != set.maps.size()) {
    throw InvalidInput("FMAP label count mismatch");
  }
  io::ByteWriter wr;
  wr.bytes("FMAP");
  wr.u8(detail::kFormatVersion);
  wr.u8(set.labelled ? detail::kFlagLabels : 0);
  wr.u16(0);
  wr.u32(static_cast<std::uint32_t>(set.maps.size()));
  wr.u32(static_cast<std::uint32_t>(h));
  wr.u32(static_cast<std::uint32_t>(w));
  wr.u32(static_cast<std::uint32_t>(d));
  for (const auto& m : set.maps) wr.f32s(m.values);
  detail::write_label_and_class_blocks(wr, set.labelled, set.labels, set.class_names);
  return wr.data();
}

inline FeatureMapSet read_feature_map_bytes(std::string_view bytes) {
  io::ByteReader r(bytes);
  const std::uint8_t flags = detail::read_header_prefix(r, "FMAP");
  const std::uint32_t n = r.u32("n");
  const std::size_t dims_at = r.offset();
  const std::uint32_t h = r.u32("h");
  const std::uint32_t w = r.u32("w");
  const std::uint32_t d = r.u32("d");
  if (n > 0 && (h == 0 || w == 0 || d == 0)) throw FormatError("map dimensions must be >= 1", dims_at);
  const std::uint64_t per_map = std::uint64_t{h} * w * d;
  const std::size_t payload_at = r.offset();
  if (n > 0 && per_map > r.remaining() / 4 / n) {
    throw FormatError("truncated map payload: declared size exceeds file", payload_at);
  }
  FeatureMapSet set;
  set.labelled = (flags & detail::kFlagLabels) != 0;
  set.maps.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    FeatureMap m;
    m.h = h;
    m.w = w;
    m.d = d;
    const std::size_t at = r.offset();
    r.f32s(m.values, static_cast<std::size_t>(per_map), "map payload");
    detail::check_finite(m.values, at);
    set.maps.push_back(std::move(m));
  }
  auto blocks = detail::read_label_and_class_blocks(r, n, set.labelled);
  set.labels = std::move(blocks.labels);
  set.class_names = std::move(blocks.class_names);
  return set;
}

inline FeatureMapSet read_feature_map_file(const std::filesystem::path& path) {
  return read_feature_map_bytes(io::read_file(path));
}

inline void write_feature_map_file(const FeatureMapSet& set, const std::filesystem::path& path) {
  io::write_file(path, encode_feature_map_file(set));
}

/// GAP over every map; the result rows follow the file order.
inline Dataset pool_feature_maps(const FeatureMapSet& set) {
  std::vector<float> features;
  std::size_t d = set.maps.empty() ? 0 : set.maps.front().d;
  for (const auto& m : set.maps) {
    auto z = gap(m);
    features.insert(features.end(), z.begin(), z.end());
  }
  if (set.labelled && !set.class_names.empty()) {
    return Dataset(d, std::move(features), set.labels, set.class_names);
  }
  return Dataset::unlabelled(d, std::move(features), set.class_names);
}

// ---------------------------------------------------------------------------
// Netpbm (P5 grey / P6 RGB), 8- or 16-bit

inline Image decode_pnm(std::string_view bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    for (;;) {
      while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        return;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      throw FormatError(std::string("PNM: expected ") + what, pos);
    }
    std::uint64_t v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::uint64_t>(bytes[pos++] - '0');
      if (v > (1u << 24)) throw FormatError(std::string("PNM: ") + what + " too large", pos);
    }
    return static_cast<std::size_t>(v);
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("PNM: only binary P5/P6 images are supported", 0);
  }
  const std::size_t channels = bytes[1] == '6' ? 3 : 1;
  pos = 2;
  const std::size_t width = number("width");
  const std::size_t height = number("height");
  const std::size_t maxval = number("maxval");
  if (width == 0 || height == 0) throw FormatError("PNM: empty image", pos);
  if (maxval == 0 || maxval > 65535) throw FormatError("PNM: maxval out of range", pos);
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError("PNM: missing separator before raster", pos);
  }
  ++pos;
  const std::size_t sample_bytes = maxval > 255 ? 2 : 1;
  const std::size_t count = width * height * channels;
  if (bytes.size() - pos < count * sample_bytes) throw FormatError("PNM: truncated raster", pos);
  Image img(height, width, channels);
  const double scale = 255.0 / static_cast<double>(maxval);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t v = static_cast<unsigned char>(bytes[pos + i * sample_bytes]);
    if (sample_bytes == 2) v = (v << 8) | static_cast<unsigned char>(bytes[pos + i * 2 + 1]);
    img.pixels[i] = static_cast<float>(std::min(static_cast<double>(v), static_cast<double>(maxval)) * scale);
  }
  return img;
}

inline Image read_pnm(const std::filesystem::path& path) { return decode_pnm(io::read_file(path)); }

/// Writes an 8-bit P6/P5 file from values in [0, 255].
inline void write_pnm(const Image& img, const std::filesystem::path& path) {
  if (img.channels != 1 && img.channels != 3) throw InvalidInput("PNM supports 1 or 3 channels");
  std::string out = (img.channels == 3 ? "P6\n" : "P5\n") + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n255\n";
  for (float v : img.pixels) {
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 255.0f)))));
  }
  io::write_file(path, out);
}

}  // namespace hybrid

#pragma once

// In-memory RGB image ([0,1] floats) and the pixel operations used for
// augmentation and test-time degradations.

#include <algorithm>
#include <cmath>
#include <vector>

#include "bml/core/common.hpp"
#include "bml/core/rng.hpp"

namespace bml::data {

struct Image {
  int h = 0, w = 0;
  std::vector<float> px;  // h*w*3, row-major, channel innermost

  Image() = default;
  Image(int h_, int w_) : h(h_), w(w_), px(static_cast<std::size_t>(h_) * w_ * 3, 0.f) {}

  float& at(int y, int x, int c) { return px[(static_cast<std::size_t>(y) * w + x) * 3 + c]; }
  const float& at(int y, int x, int c) const {
    return px[(static_cast<std::size_t>(y) * w + x) * 3 + c];
  }
};

inline void clamp01(Image& img) {
  for (float& v : img.px) v = std::clamp(v, 0.f, 1.f);
}

/// Bilinear resize with half-pixel centers.
inline Image resize_bilinear(const Image& src, int th, int tw) {
  check(th >= 1 && tw >= 1, "resize target must be >= 1");
  if (th == src.h && tw == src.w) return src;
  Image dst(th, tw);
  const float sy = float(src.h) / float(th), sx = float(src.w) / float(tw);
  for (int y = 0; y < th; ++y) {
    float fy = (y + 0.5f) * sy - 0.5f;
    fy = std::clamp(fy, 0.f, float(src.h - 1));
    const int y0 = int(fy), y1 = std::min(y0 + 1, src.h - 1);
    const float wy = fy - y0;
    for (int x = 0; x < tw; ++x) {
      float fx = (x + 0.5f) * sx - 0.5f;
      fx = std::clamp(fx, 0.f, float(src.w - 1));
      const int x0 = int(fx), x1 = std::min(x0 + 1, src.w - 1);
      const float wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const float top = src.at(y0, x0, c) * (1 - wx) + src.at(y0, x1, c) * wx;
        const float bot = src.at(y1, x0, c) * (1 - wx) + src.at(y1, x1, c) * wx;
        dst.at(y, x, c) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return dst;
}

inline Image hflip(const Image& src) {
  Image dst(src.h, src.w);
  for (int y = 0; y < src.h; ++y)
    for (int x = 0; x < src.w; ++x)
      for (int c = 0; c < 3; ++c) dst.at(y, x, c) = src.at(y, src.w - 1 - x, c);
  return dst;
}

/// Zero-pad by `pad` on every side, then take the h x w crop whose top-left
/// corner is (oy, ox) in the padded frame. oy, ox in [0, 2*pad].
inline Image pad_crop(const Image& src, int pad, int oy, int ox) {
  check(pad >= 0 && oy >= 0 && ox >= 0 && oy <= 2 * pad && ox <= 2 * pad,
        "pad_crop offsets out of range");
  Image dst(src.h, src.w);
  for (int y = 0; y < src.h; ++y)
    for (int x = 0; x < src.w; ++x) {
      const int sy = y + oy - pad, sx = x + ox - pad;
      if (sy < 0 || sy >= src.h || sx < 0 || sx >= src.w) continue;  // stays zero
      for (int c = 0; c < 3; ++c) dst.at(y, x, c) = src.at(sy, sx, c);
    }
  return dst;
}

/// Separable gaussian blur with edge replication. sigma = 0 is the identity.
inline Image gaussian_blur(const Image& src, float sigma) {
  check(sigma >= 0.f, "blur sigma must be >= 0");
  if (sigma == 0.f) return src;
  const int radius = std::max(1, int(std::ceil(3.f * sigma)));
  std::vector<float> kernel(static_cast<std::size_t>(2 * radius + 1));
  float sum = 0.f;
  for (int i = -radius; i <= radius; ++i) {
    const float v = std::exp(-(float(i) * i) / (2.f * sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (float& v : kernel) v /= sum;

  Image tmp(src.h, src.w);
  for (int y = 0; y < src.h; ++y)
    for (int x = 0; x < src.w; ++x)
      for (int c = 0; c < 3; ++c) {
        float acc = 0.f;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[static_cast<std::size_t>(i + radius)] *
                 src.at(y, std::clamp(x + i, 0, src.w - 1), c);
        tmp.at(y, x, c) = acc;
      }
  Image dst(src.h, src.w);
  for (int y = 0; y < src.h; ++y)
    for (int x = 0; x < src.w; ++x)
      for (int c = 0; c < 3; ++c) {
        float acc = 0.f;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[static_cast<std::size_t>(i + radius)] *
                 tmp.at(std::clamp(y + i, 0, src.h - 1), x, c);
        dst.at(y, x, c) = acc;
      }
  return dst;
}

inline Image scale_brightness(const Image& src, float factor) {
  check(factor >= 0.f, "brightness factor must be >= 0");
  Image dst = src;
  for (float& v : dst.px) v *= factor;
  clamp01(dst);
  return dst;
}

}  // namespace bml::data

#pragma once

// Test-time input corruptions used by the robustness evaluation: resize,
// gaussian blur with a per-image sigma range, pepper noise, brightness jitter.

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "bml/core/common.hpp"
#include "bml/core/rng.hpp"
#include "bml/data/image.hpp"

namespace bml::data {

enum class DegradationKind { resize, gaussian_blur, pepper_noise, color_jitter };

struct Degradation {
  DegradationKind kind = DegradationKind::gaussian_blur;
  int target_size = 224;                    // resize
  float sigma_min = 0.1f, sigma_max = 2.f;  // gaussian_blur; equal values pin sigma
  float ratio = 0.01f;                      // pepper_noise
  float brightness = 0.8f;                  // color_jitter

  void validate() const {
    switch (kind) {
      case DegradationKind::resize:
        check(target_size >= 1, "resize target must be >= 1");
        break;
      case DegradationKind::gaussian_blur:
        check(sigma_min >= 0.f && sigma_max >= sigma_min, "blur sigma range invalid: [",
              sigma_min, ",", sigma_max, "]");
        break;
      case DegradationKind::pepper_noise:
        check(ratio >= 0.f && ratio <= 1.f, "pepper ratio must be in [0,1], got ", ratio);
        break;
      case DegradationKind::color_jitter:
        check(brightness >= 0.f, "brightness factor must be >= 0");
        break;
    }
  }

  std::string describe() const {
    char buf[64];
    switch (kind) {
      case DegradationKind::resize:
        std::snprintf(buf, sizeof(buf), "resize:%d", target_size);
        break;
      case DegradationKind::gaussian_blur:
        std::snprintf(buf, sizeof(buf), "blur:%.3g-%.3g", double(sigma_min), double(sigma_max));
        break;
      case DegradationKind::pepper_noise:
        std::snprintf(buf, sizeof(buf), "pepper:%.3g", double(ratio));
        break;
      case DegradationKind::color_jitter:
        std::snprintf(buf, sizeof(buf), "jitter:%.3g", double(brightness));
        break;
    }
    return buf;
  }
};

/// Pure function of (image, d, seed). Pepper flips whole pixels (all three
/// channels) to black or white; blur draws sigma from the configured range;
/// jitter scales brightness by a factor from [max(0,1-B), 1+B].
inline Image apply_degradation(const Image& img, const Degradation& d, std::uint64_t rng_seed) {
  d.validate();
  Rng rng(rng_seed);
  switch (d.kind) {
    case DegradationKind::resize:
      return resize_bilinear(img, d.target_size, d.target_size);
    case DegradationKind::gaussian_blur: {
      const float sigma = float(rng.uniform(double(d.sigma_min), double(d.sigma_max)));
      Image out = gaussian_blur(img, sigma);
      clamp01(out);
      return out;
    }
    case DegradationKind::pepper_noise: {
      Image out = img;
      for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x)
          if (rng.uniform() < double(d.ratio)) {
            const float v = rng.uniform() < 0.5 ? 0.f : 1.f;
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = v;
          }
      return out;
    }
    case DegradationKind::color_jitter: {
      const float lo = d.brightness > 1.f ? 0.f : 1.f - d.brightness;
      const float factor = float(rng.uniform(double(lo), double(1.f + d.brightness)));
      return scale_brightness(img, factor);
    }
  }
  fail("unreachable degradation kind");
}

/// The four stock corruptions of the robustness table.
inline std::vector<Degradation> degradation_presets() {
  Degradation resize;
  resize.kind = DegradationKind::resize;
  resize.target_size = 224;
  Degradation blur;
  blur.kind = DegradationKind::gaussian_blur;
  blur.sigma_min = 0.1f;
  blur.sigma_max = 2.f;
  Degradation pepper;
  pepper.kind = DegradationKind::pepper_noise;
  pepper.ratio = 0.01f;
  Degradation jitter;
  jitter.kind = DegradationKind::color_jitter;
  jitter.brightness = 0.8f;
  return {resize, blur, pepper, jitter};
}

/// Parses "resize:224", "blur:0.1-2", "pepper:0.01", "jitter:0.8".
inline Degradation parse_degradation(const std::string& s) {
  const std::size_t colon = s.find(':');
  const std::string name = s.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : s.substr(colon + 1);
  Degradation d;
  try {
    if (name == "resize") {
      d.kind = DegradationKind::resize;
      if (!arg.empty()) d.target_size = std::stoi(arg);
    } else if (name == "blur") {
      d.kind = DegradationKind::gaussian_blur;
      if (!arg.empty()) {
        const std::size_t dash = arg.find('-');
        if (dash == std::string::npos) {
          d.sigma_min = d.sigma_max = std::stof(arg);
        } else {
          d.sigma_min = std::stof(arg.substr(0, dash));
          d.sigma_max = std::stof(arg.substr(dash + 1));
        }
      }
    } else if (name == "pepper") {
      d.kind = DegradationKind::pepper_noise;
      if (!arg.empty()) d.ratio = std::stof(arg);
    } else if (name == "jitter") {
      d.kind = DegradationKind::color_jitter;
      if (!arg.empty()) d.brightness = std::stof(arg);
    } else {
      fail("unknown degradation: ", name);
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    fail("bad degradation argument: ", s);
  }
  d.validate();
  return d;
}

}  // namespace bml::data

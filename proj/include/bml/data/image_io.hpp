#pragma once

// PNG/JPEG decode and PNG encode, 8-bit RGB <-> [0,1] floats.

#include <jpeglib.h>
#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "bml/core/common.hpp"
#include "bml/data/image.hpp"

namespace bml::data {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline Image read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  check(fp != nullptr, "cannot open ", path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  check(png != nullptr, "png reader allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail("png info allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("png decode failed: ", path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  // normalize anything to 8-bit RGB
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY &&
      png_get_bit_depth(png, info) < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int h = int(png_get_image_height(png, info));
  const int w = int(png_get_image_width(png, info));
  std::vector<unsigned char> raw(static_cast<std::size_t>(h) * w * 3);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = raw.data() + std::size_t(y) * w * 3;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(h, w);
  for (std::size_t i = 0; i < raw.size(); ++i) img.px[i] = float(raw[i]) / 255.f;
  return img;
}

struct JpegErrorJump {
  jpeg_error_mgr mgr;
  std::jmp_buf jb;
};

inline void jpeg_error_longjmp(j_common_ptr ci) {
  std::longjmp(reinterpret_cast<JpegErrorJump*>(ci->err)->jb, 1);
}

inline Image read_jpeg(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  check(fp != nullptr, "cannot open ", path);
  jpeg_decompress_struct cinfo;
  JpegErrorJump jerr;
  cinfo.err = jpeg_std_error(&jerr.mgr);
  jerr.mgr.error_exit = jpeg_error_longjmp;
  if (setjmp(jerr.jb)) {
    jpeg_destroy_decompress(&cinfo);
    fail("jpeg decode failed: ", path);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, fp.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const int h = int(cinfo.output_height), w = int(cinfo.output_width);
  Image img(h, w);
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    unsigned char* rp = row.data();
    jpeg_read_scanlines(&cinfo, &rp, 1);
    for (int x = 0; x < w * 3; ++x)
      img.px[static_cast<std::size_t>(y) * w * 3 + x] = float(row[static_cast<std::size_t>(x)]) / 255.f;
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

}  // namespace detail

inline bool has_suffix(const std::string& s, const std::string& suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

inline Image read_image(const std::string& path) {
  if (has_suffix(path, ".png") || has_suffix(path, ".PNG")) return detail::read_png(path);
  if (has_suffix(path, ".jpg") || has_suffix(path, ".jpeg") || has_suffix(path, ".JPG") ||
      has_suffix(path, ".JPEG"))
    return detail::read_jpeg(path);
  fail("unsupported image format: ", path);
}

inline void write_jpeg(const std::string& path, const Image& img, int quality = 95) {
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  check(fp != nullptr, "cannot write ", path);
  jpeg_compress_struct cinfo;
  detail::JpegErrorJump jerr;
  cinfo.err = jpeg_std_error(&jerr.mgr);
  jerr.mgr.error_exit = detail::jpeg_error_longjmp;
  if (setjmp(jerr.jb)) {
    jpeg_destroy_compress(&cinfo);
    fail("jpeg encode failed: ", path);
  }
  jpeg_create_compress(&cinfo);
  jpeg_stdio_dest(&cinfo, fp.get());
  cinfo.image_width = JDIMENSION(img.w);
  cinfo.image_height = JDIMENSION(img.h);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  std::vector<unsigned char> row(static_cast<std::size_t>(img.w) * 3);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w * 3; ++x) {
      const float v = std::clamp(img.px[static_cast<std::size_t>(y) * img.w * 3 + x], 0.f, 1.f);
      row[static_cast<std::size_t>(x)] = static_cast<unsigned char>(std::lround(v * 255.f));
    }
    unsigned char* rp = row.data();
    jpeg_write_scanlines(&cinfo, &rp, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
}

inline void write_png(const std::string& path, const Image& img) {
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  check(fp != nullptr, "cannot write ", path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  check(png != nullptr, "png writer allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail("png info allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("png encode failed: ", path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, png_uint_32(img.w), png_uint_32(img.h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<unsigned char> raw(img.px.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const float v = std::clamp(img.px[i], 0.f, 1.f);
    raw[i] = static_cast<unsigned char>(std::lround(v * 255.f));
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.h));
  for (int y = 0; y < img.h; ++y)
    rows[static_cast<std::size_t>(y)] = raw.data() + std::size_t(y) * img.w * 3;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace bml::data

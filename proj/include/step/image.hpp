#pragma once

// 8-bit PPM (P6) and PNG image I/O to [0,1] tensors, bilinear resampling,
// and 2-D affine transforms with exact point mapping.

#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "step/tensor.hpp"

namespace step {

// Row-major 2x3 affine: p' = [a b; d e] p + [c; f]. Pixel centers sit at
// integer coordinates.
struct Affine {
  double a = 1, b = 0, c = 0;
  double d = 0, e = 1, f = 0;

  std::array<double, 2> apply(double x, double y) const {
    return {a * x + b * y + c, d * x + e * y + f};
  }
  double det() const { return a * e - b * d; }
  Affine inverse() const {
    const double dt = det();
    Affine r;
    r.a = e / dt;
    r.b = -b / dt;
    r.d = -d / dt;
    r.e = a / dt;
    r.c = -(r.a * c + r.b * f);
    r.f = -(r.d * c + r.e * f);
    return r;
  }
  static Affine compose(const Affine& outer, const Affine& inner) {
    Affine r;
    r.a = outer.a * inner.a + outer.b * inner.d;
    r.b = outer.a * inner.b + outer.b * inner.e;
    r.c = outer.a * inner.c + outer.b * inner.f + outer.c;
    r.d = outer.d * inner.a + outer.e * inner.d;
    r.e = outer.d * inner.b + outer.e * inner.e;
    r.f = outer.d * inner.c + outer.e * inner.f + outer.f;
    return r;
  }
};

inline bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline Tensor load_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open image: " + path);
  std::string magic;
  is >> magic;
  if (magic != "P6") throw ParseError("not a binary PPM (P6): " + path);
  auto next_int = [&is, &path]() {
    // skip whitespace and '#' comments
    int c = is.peek();
    while (c == '#' || std::isspace(c)) {
      if (c == '#') is.ignore(1 << 20, '\n');
      else is.ignore(1);
      c = is.peek();
    }
    long v = -1;
    is >> v;
    if (!is || v < 0) throw ParseError("malformed PPM header: " + path);
    return static_cast<int>(v);
  };
  const int w = next_int(), h = next_int(), maxval = next_int();
  if (maxval != 255) throw ParseError("unsupported PPM maxval (want 255): " + path);
  is.ignore(1);  // single whitespace before raster
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 3);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!is) throw ParseError("truncated PPM raster: " + path);
  std::vector<double> data(raw.size());
  const size_t plane = static_cast<size_t>(w) * h;
  for (size_t i = 0; i < plane; ++i)
    for (int ch = 0; ch < 3; ++ch) data[ch * plane + i] = raw[i * 3 + ch] / 255.0;
  return Tensor::from_data({3, h, w}, std::move(data));
}

inline void save_ppm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw DimensionError("save_ppm: expected [3 x H x W] image");
  const int h = image.dim(1), w = image.dim(2);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "P6\n" << w << " " << h << "\n255\n";
  const size_t plane = static_cast<size_t>(w) * h;
  std::vector<unsigned char> raw(plane * 3);
  for (size_t i = 0; i < plane; ++i)
    for (int ch = 0; ch < 3; ++ch) {
      const double v = std::clamp(image.data()[ch * plane + i], 0.0, 1.0);
      raw[i * 3 + ch] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!os) throw IoError("write failed: " + path);
}

inline Tensor load_png(const std::string& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw ParseError("cannot decode PNG: " + path + " (" + img.message + ")");
  img.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> raw(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, raw.data(), 0, nullptr)) {
    png_image_free(&img);
    throw ParseError("cannot decode PNG: " + path + " (" + img.message + ")");
  }
  const int w = static_cast<int>(img.width), h = static_cast<int>(img.height);
  std::vector<double> data(static_cast<size_t>(w) * h * 3);
  const size_t plane = static_cast<size_t>(w) * h;
  for (size_t i = 0; i < plane; ++i)
    for (int ch = 0; ch < 3; ++ch) data[ch * plane + i] = raw[i * 3 + ch] / 255.0;
  return Tensor::from_data({3, h, w}, std::move(data));
}

inline Tensor load_image(const std::string& path) {
  if (has_suffix(path, ".ppm") || has_suffix(path, ".PPM")) return load_ppm(path);
  if (has_suffix(path, ".png") || has_suffix(path, ".PNG")) return load_png(path);
  throw ParseError("unsupported image format (want .ppm or .png): " + path);
}

namespace detail {
inline double bilinear_tap(const double* plane, int h, int w, double fy, double fx) {
  const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
  const double ax = fx - x0, ay = fy - y0;
  auto tap = [&](int y, int x) -> double {
    if (x < 0 || x >= w || y < 0 || y >= h) return 0.0;  // zero padding
    return plane[static_cast<size_t>(y) * w + x];
  };
  return (1 - ay) * ((1 - ax) * tap(y0, x0) + ax * tap(y0, x0 + 1)) +
         ay * ((1 - ax) * tap(y0 + 1, x0) + ax * tap(y0 + 1, x0 + 1));
}
}  // namespace detail

// Backward warp with zero fill: out(p) = in(M^-1 p).
inline Tensor warp_affine(const Tensor& image, const Affine& m, int out_h, int out_w) {
  if (image.rank() != 3) throw DimensionError("warp_affine: expected [C x H x W]");
  const int ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  const Affine inv = m.inverse();
  std::vector<double> out(static_cast<size_t>(ch) * out_h * out_w);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const auto src = inv.apply(x, y);
      for (int c = 0; c < ch; ++c)
        out[(static_cast<size_t>(c) * out_h + y) * out_w + x] = detail::bilinear_tap(
            image.data().data() + static_cast<size_t>(c) * h * w, h, w, src[1], src[0]);
    }
  }
  return Tensor::from_data({ch, out_h, out_w}, std::move(out));
}

// Uniform-scale resize with edge clamping (used to canonicalize dataset images).
inline Tensor resize_bilinear(const Tensor& image, int out_h, int out_w) {
  const int ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  const double sy = static_cast<double>(h) / out_h, sx = static_cast<double>(w) / out_w;
  std::vector<double> out(static_cast<size_t>(ch) * out_h * out_w);
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, h - 1.0);
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, w - 1.0);
      const int x0 = std::min(static_cast<int>(fx), w - 2 >= 0 ? w - 2 : 0);
      const int y0 = std::min(static_cast<int>(fy), h - 2 >= 0 ? h - 2 : 0);
      const double axf = fx - x0, ayf = fy - y0;
      for (int c = 0; c < ch; ++c) {
        const double* p = image.data().data() + static_cast<size_t>(c) * h * w;
        auto tap = [&](int yy, int xx) { return p[static_cast<size_t>(yy) * w + xx]; };
        const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
        out[(static_cast<size_t>(c) * out_h + y) * out_w + x] =
            (1 - ayf) * ((1 - axf) * tap(y0, x0) + axf * tap(y0, x1)) +
            ayf * ((1 - axf) * tap(y1, x0) + axf * tap(y1, x1));
      }
    }
  }
  return Tensor::from_data({ch, out_h, out_w}, std::move(out));
}

}  // namespace step

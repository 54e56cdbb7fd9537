#include "retmap/plot.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "retmap/errors.hpp"
#include "retmap/io.hpp"

namespace retmap {

namespace {

constexpr double kCanvas = 800.0;
constexpr double kMargin = 24.0;

struct Rgb {
  int r, g, b;
};

Rgb sequential_color(double t) {
  // Compact perceptual ramp, dark blue -> teal -> yellow.
  static constexpr int anchors[5][3] = {
      {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
  t = std::clamp(t, 0.0, 1.0) * 4.0;
  int k = std::min(static_cast<int>(t), 3);
  double f = t - k;
  auto mix = [&](int c) {
    return static_cast<int>(std::lround(anchors[k][c] + f * (anchors[k + 1][c] - anchors[k][c])));
  };
  return {mix(0), mix(1), mix(2)};
}

Rgb cyclic_color(double degrees) {
  double hue = std::fmod(std::fmod(degrees, 360.0) + 360.0, 360.0) / 60.0;
  double s = 0.85, v = 0.92;
  double c = v * s;
  double x = c * (1.0 - std::abs(std::fmod(hue, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hue) % 6) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  double m = v - c;
  return {static_cast<int>(std::lround((r + m) * 255.0)),
          static_cast<int>(std::lround((g + m) * 255.0)),
          static_cast<int>(std::lround((b + m) * 255.0))};
}

std::string rgb_str(const Rgb& c) {
  return "rgb(" + std::to_string(c.r) + "," + std::to_string(c.g) + "," +
         std::to_string(c.b) + ")";
}

// uv in [-1, 1] onto the canvas, y up.
std::string svg_point(const Vec2& p) {
  double x = kMargin + (p.x() + 1.0) * 0.5 * (kCanvas - 2.0 * kMargin);
  double y = kMargin + (1.0 - (p.y() + 1.0) * 0.5) * (kCanvas - 2.0 * kMargin);
  return format_double(std::round(x * 100.0) / 100.0) + "," +
         format_double(std::round(y * 100.0) / 100.0);
}

std::string svg_open() {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"";
  s += format_double(kCanvas) + "\" height=\"" + format_double(kCanvas) + "\">\n";
  return s;
}

std::string polygon(const Vec2& a, const Vec2& b, const Vec2& c,
                    const std::string& fill, const std::string& stroke) {
  std::string s = "  <polygon points=\"" + svg_point(a) + " " + svg_point(b) + " " +
                  svg_point(c) + "\" fill=\"" + fill + "\"";
  if (!stroke.empty())
    s += " stroke=\"" + stroke + "\" stroke-width=\"0.4\"";
  else
    s += " stroke=\"" + fill + "\" stroke-width=\"0.3\"";  // hide hairline seams
  s += "/>\n";
  return s;
}

}  // namespace

std::string plot_disk_map(const DiskParameterization& param,
                          std::span<const Face> faces,
                          std::span<const double> values, ColormapMode mode) {
  if (values.size() != param.uv.size())
    throw InvalidArgument("per-vertex value count does not match the mesh");
  double lo = 0.0, hi = 1.0;
  if (mode == ColormapMode::Sequential && !values.empty()) {
    lo = *std::min_element(values.begin(), values.end());
    hi = *std::max_element(values.begin(), values.end());
    if (hi <= lo) hi = lo + 1.0;
  }

  std::string out = svg_open();
  for (const Face& f : faces) {
    std::string fill;
    if (mode == ColormapMode::Cyclic) {
      double s = 0.0, c = 0.0;
      for (int k = 0; k < 3; ++k) {
        double rad = values[f[k]] * std::numbers::pi / 180.0;
        s += std::sin(rad);
        c += std::cos(rad);
      }
      fill = rgb_str(cyclic_color(std::atan2(s, c) * 180.0 / std::numbers::pi));
    } else {
      double mean = (values[f[0]] + values[f[1]] + values[f[2]]) / 3.0;
      fill = rgb_str(sequential_color((mean - lo) / (hi - lo)));
    }
    out += polygon(param.uv[f[0]], param.uv[f[1]], param.uv[f[2]], fill, "");
  }
  out += "</svg>\n";
  return out;
}

std::string plot_disk_faces(const DiskParameterization& param,
                            std::span<const Face> faces,
                            std::span<const double> face_values) {
  if (face_values.size() != faces.size())
    throw InvalidArgument("per-face value count does not match the face count");
  double lo = 0.0, hi = 1.0;
  if (!face_values.empty()) {
    lo = *std::min_element(face_values.begin(), face_values.end());
    hi = *std::max_element(face_values.begin(), face_values.end());
    if (hi <= lo) hi = lo + 1.0;
  }
  std::string out = svg_open();
  for (std::size_t fi = 0; fi < faces.size(); ++fi) {
    const Face& f = faces[fi];
    std::string fill = rgb_str(sequential_color((face_values[fi] - lo) / (hi - lo)));
    out += polygon(param.uv[f[0]], param.uv[f[1]], param.uv[f[2]], fill, "#333333");
  }
  out += "</svg>\n";
  return out;
}

}  // namespace retmap

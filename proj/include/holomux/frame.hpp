#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "holomux/config.hpp"
#include "holomux/core.hpp"
#include "holomux/memory_sim.hpp"
#include "holomux/random.hpp"

namespace holomux {

struct PixelPos {
  double x = 0.0;  ///< column, pixel centers at integers
  double y = 0.0;  ///< row
};

/// Affine angle -> pixel map for one region: px = a0 + a1 tx + a2 ty, py = b0 + b1 tx + b2 ty.
struct AffineMap {
  std::array<double, 6> c{};  ///< a0 a1 a2 b0 b1 b2

  double det() const { return c[1] * c[5] - c[2] * c[4]; }
  bool invertible() const { return std::isfinite(det()) && std::abs(det()) > 1e-300; }

  PixelPos to_pixel(const Angle2D& t) const {
    return {c[0] + c[1] * t.theta_x + c[2] * t.theta_y, c[3] + c[4] * t.theta_x + c[5] * t.theta_y};
  }
  Angle2D to_angle(const PixelPos& p) const {
    const double dx = p.x - c[0], dy = p.y - c[3];
    const double d = det();
    return {(c[5] * dx - c[2] * dy) / d, (-c[4] * dx + c[1] * dy) / d};
  }
};

struct Calibration {
  AffineMap stokes;
  AffineMap antistokes;

  const AffineMap& map(Region r) const { return r == Region::Stokes ? stokes : antistokes; }
  bool invertible() const { return stokes.invertible() && antistokes.invertible(); }
};

/// Two side-by-side square regions, Stokes on the left; the optical axis maps to each region's center.
inline Calibration default_calibration(int width, int height, int region_split, double mrad_per_px) {
  detail::require(mrad_per_px > 0.0, "calibration scale must be positive");
  const double s = 1.0 / mrad_per_px;
  const double cy = 0.5 * (height - 1);
  Calibration cal;
  cal.stokes.c = {0.5 * (region_split - 1), s, 0.0, cy, 0.0, s};
  cal.antistokes.c = {region_split + 0.5 * (width - region_split - 1), s, 0.0, cy, 0.0, s};
  return cal;
}

struct SpotModel {
  double amplitude = 200.0;  ///< mean peak counts above the floor
  double sigma_px = 1.2;
  int noise_floor = 200;
  double noise_sigma = 10.0;

  static SpotModel from(const ExperimentConfig& c) {
    return {c.spot_amplitude, c.spot_sigma_px, c.noise_floor, c.noise_sigma};
  }
};

struct Frame {
  int width = 0;
  int height = 0;
  int region_split = 0;
  Calibration calibration;
  std::vector<std::uint16_t> pixels;  ///< row-major

  Frame() = default;
  Frame(int w, int h, int split, const Calibration& cal)
      : width(w), height(h), region_split(split), calibration(cal),
        pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0) {
    detail::require(w > 0 && h > 0 && w <= 65535 && h <= 65535, "frame size out of range");
    detail::require(split > 0 && split < w, "region split must lie inside the frame");
    detail::require(cal.invertible(), "calibration must be invertible");
  }

  std::uint16_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint16_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }

  /// Region owning a sub-pixel column coordinate; column c spans [c - 0.5, c + 0.5).
  Region region_of(double x) const { return x < region_split - 0.5 ? Region::Stokes : Region::AntiStokes; }

  bool operator==(const Frame& o) const {
    return width == o.width && height == o.height && region_split == o.region_split &&
           calibration.stokes.c == o.calibration.stokes.c && calibration.antistokes.c == o.calibration.antistokes.c &&
           pixels == o.pixels;
  }
};

inline Frame blank_frame(const ExperimentConfig& c) {
  const int split = c.frame_width / 2;
  return Frame(c.frame_width, c.frame_height, split,
               default_calibration(c.frame_width, c.frame_height, split, c.mrad_per_px));
}

/// Pixel position of an event, or ParameterError when it falls outside its region.
inline PixelPos event_pixel(const Frame& f, const PhotonEvent& e) {
  const auto p = f.calibration.map(e.region).to_pixel(e.angle);
  const double lo = e.region == Region::Stokes ? -0.5 : f.region_split - 0.5;
  const double hi = e.region == Region::Stokes ? f.region_split - 0.5 : f.width - 0.5;
  if (!(p.x >= lo && p.x < hi && p.y >= -0.5 && p.y < f.height - 0.5)) {
    throw ParameterError("event at (" + std::to_string(e.angle.theta_x) + ", " + std::to_string(e.angle.theta_y) +
                         ") mrad in region " + (e.region == Region::Stokes ? "S" : "AS") +
                         " lies outside the calibrated area");
  }
  return p;
}

/// Paints every event as a Gaussian spot with Poisson photon statistics over a
/// pedestal with rounded-Gaussian readout noise.
class FrameRenderer {
public:
  FrameRenderer(const SpotModel& spot) : spot_(spot), readout_(rounded_gaussian_table(spot.noise_sigma)) {
    detail::require(spot.sigma_px > 0.0 && spot.amplitude >= 0.0, "spot model must be positive");
    detail::require(spot.noise_floor >= 0 && spot.noise_floor <= 65535, "noise floor out of range");
    radius_ = static_cast<int>(std::ceil(4.0 * spot.sigma_px));
  }

  void render(Frame& f, const std::vector<const PhotonEvent*>& events, Rng& rng) const {
    std::vector<PixelPos> where;
    where.reserve(events.size());
    for (const auto* e : events) where.push_back(event_pixel(f, *e));

    // Two pixels per 64-bit draw.
    const int floor = spot_.noise_floor;
    auto noise = [&](std::uint32_t r) {
      return static_cast<std::uint16_t>(std::clamp(floor + readout_.sample32(r), 0, 65535));
    };
    const std::size_t n = f.pixels.size();
    std::size_t i = 0;
    for (; i + 1 < n; i += 2) {
      const std::uint64_t r = rng.bits();
      f.pixels[i] = noise(static_cast<std::uint32_t>(r >> 32));
      f.pixels[i + 1] = noise(static_cast<std::uint32_t>(r));
    }
    if (i < n) f.pixels[i] = noise(static_cast<std::uint32_t>(rng.bits() >> 32));
    const double inv2s2 = 1.0 / (2.0 * spot_.sigma_px * spot_.sigma_px);
    for (const auto& p : where) {
      const int cx = static_cast<int>(std::lround(p.x));
      const int cy = static_cast<int>(std::lround(p.y));
      for (int y = std::max(0, cy - radius_); y <= std::min(f.height - 1, cy + radius_); ++y) {
        const double dy2 = (y - p.y) * (y - p.y);
        for (int x = std::max(0, cx - radius_); x <= std::min(f.width - 1, cx + radius_); ++x) {
          const double lambda = spot_.amplitude * std::exp(-((x - p.x) * (x - p.x) + dy2) * inv2s2);
          const auto add = rng.poisson(lambda);
          auto& px = f.at(x, y);
          px = static_cast<std::uint16_t>(std::min<std::uint64_t>(65535, px + add));
        }
      }
    }
  }

  Frame render(const ShotRecord& shot, const Frame& layout, Rng& rng) const {
    Frame f = layout;
    std::vector<const PhotonEvent*> events;
    for (const auto& e : shot.stokes_events) events.push_back(&e);
    for (const auto& e : shot.antistokes_events) events.push_back(&e);
    render(f, events, rng);
    return f;
  }

private:
  SpotModel spot_;
  AliasTable readout_;
  int radius_ = 5;
};

inline Frame render_frame(const ShotRecord& shot, const SpotModel& spot, const Frame& layout, Rng& rng) {
  return FrameRenderer(spot).render(shot, layout, rng);
}

// Binary frame file: "HOLO", u16 version, u16 width, u16 height, u16 region_split,
// 6 f64 Stokes calibration, 6 f64 anti-Stokes calibration, then u16 pixels.
// All fields little-endian.

constexpr std::uint16_t kFrameVersion = 1;

namespace detail {

inline void put_u16(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>(v >> 8));
}

inline void put_f64(std::string& buf, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline std::uint16_t get_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

inline double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

constexpr std::size_t kFrameHeaderBytes = 4 + 4 * 2 + 12 * 8;

}  // namespace detail

inline void write_frame(std::ostream& out, const Frame& f) {
  std::string buf;
  buf.reserve(detail::kFrameHeaderBytes + f.pixels.size() * 2);
  buf.append("HOLO", 4);
  detail::put_u16(buf, kFrameVersion);
  detail::put_u16(buf, static_cast<std::uint16_t>(f.width));
  detail::put_u16(buf, static_cast<std::uint16_t>(f.height));
  detail::put_u16(buf, static_cast<std::uint16_t>(f.region_split));
  for (double v : f.calibration.stokes.c) detail::put_f64(buf, v);
  for (double v : f.calibration.antistokes.c) detail::put_f64(buf, v);
  for (auto px : f.pixels) detail::put_u16(buf, px);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw FormatError("frame write failed");
}

/// Reads the next frame; returns false on a clean end of stream.
inline bool read_frame(std::istream& in, Frame& f) {
  unsigned char head[detail::kFrameHeaderBytes];
  in.read(reinterpret_cast<char*>(head), 1);
  if (in.gcount() == 0) return false;
  in.read(reinterpret_cast<char*>(head) + 1, sizeof head - 1);
  if (in.gcount() != static_cast<std::streamsize>(sizeof head - 1)) throw FormatError("truncated frame header");
  if (std::memcmp(head, "HOLO", 4) != 0) throw FormatError("bad frame magic");
  const auto version = detail::get_u16(head + 4);
  if (version != kFrameVersion) throw FormatError("unsupported frame version " + std::to_string(version));
  const int w = detail::get_u16(head + 6);
  const int h = detail::get_u16(head + 8);
  const int split = detail::get_u16(head + 10);
  Calibration cal;
  for (int i = 0; i < 6; ++i) cal.stokes.c[i] = detail::get_f64(head + 12 + 8 * i);
  for (int i = 0; i < 6; ++i) cal.antistokes.c[i] = detail::get_f64(head + 60 + 8 * i);
  if (w == 0 || h == 0 || split == 0 || split >= w) throw FormatError("invalid frame geometry");
  if (!cal.invertible()) throw FormatError("frame calibration is not invertible");
  f = Frame(w, h, split, cal);
  std::vector<unsigned char> raw(f.pixels.size() * 2);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw FormatError("truncated frame pixels");
  for (std::size_t i = 0; i < f.pixels.size(); ++i) f.pixels[i] = detail::get_u16(raw.data() + 2 * i);
  return true;
}

inline Frame load_frame(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open frame file '" + path + "'");
  Frame f;
  if (!read_frame(in, f)) throw FormatError("empty frame file '" + path + "'");
  return f;
}

}  // namespace holomux

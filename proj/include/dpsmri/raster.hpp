#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace dpsmri::raster {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kWhite{255, 255, 255};
inline constexpr Rgb kBlack{0, 0, 0};
inline constexpr Rgb kGrey{170, 170, 170};

/// A fixed palette for series colours.
Rgb palette(int i);

class Canvas {
 public:
  Canvas(int width, int height, Rgb background = kWhite);

  int width() const { return w_; }
  int height() const { return h_; }
  Rgb at(int x, int y) const;

  void set(int x, int y, Rgb c);
  void line(int x0, int y0, int x1, int y1, Rgb c);
  void rect(int x0, int y0, int x1, int y1, Rgb c);
  void fill_rect(int x0, int y0, int x1, int y1, Rgb c);
  void dot(int x, int y, int radius, Rgb c);
  /// 5x7 bitmap text, upper-cased; unknown glyphs render as blanks.
  /// Returns the x just past the last glyph.
  int text(int x, int y, std::string_view s, Rgb c, int scale = 1);

  /// 8-bit RGB PNG. Throws IoError on failure.
  void write_png(const std::filesystem::path& path) const;

 private:
  int w_, h_;
  std::vector<std::uint8_t> px_;
};

/// Pixel width of `s` rendered by Canvas::text.
int text_width(std::string_view s, int scale = 1);

/// Maps a data interval onto a pixel interval (pixel axis may be reversed).
struct Axis {
  double lo, hi;
  int p0, p1;
  int map(double v) const;
};

/// Short numeric label, e.g. "0.125".
std::string format_tick(double v);

}  // namespace dpsmri::raster

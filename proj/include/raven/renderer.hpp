#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "raven/factor_space.hpp"

namespace raven {

struct RpmInstance;

// Row-major, channel-interleaved pixels in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  float& at(int x, int y, int c = 0) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int x, int y, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::size_t numel() const { return data.size(); }

  friend bool operator==(const Image&, const Image&) = default;
};

using Rgb = std::array<float, 3>;

struct Palette {
  std::vector<Rgb> object_colors;
  std::vector<Rgb> background_colors;
  std::vector<Rgb> wall_colors;
};

// HSL ring at fixed saturation/lightness with equally spaced hues.
Rgb hsl_to_rgb(double hue, double saturation, double lightness);
Palette make_palette(const FactorSpace& space);

// 3 channels when any colour role is present, else 1.
int channels_for(const FactorSpace& space);

// Rasterizes one panel. Size must be 16, 32 or 64. No anti-aliasing: every
// pixel centre is classified inside/outside the shape.
Image render(const FactorSpace& space, const FactorAssignment& assignment, int size);

// 3x3 context grid (missing cell blank) centred above the 6-choice strip,
// 1-pixel separators. Width = 6*cell + 5, height = 4*cell + 3.
Image render_grid(const RpmInstance& puzzle, int cell);

constexpr float kSeparatorValue = 0.5f;

// Binary P6 for 3 channels, P5 for 1 channel; v -> round(255 v).
void write_pnm(const Image& image, const std::filesystem::path& path);
Image read_pnm(const std::filesystem::path& path);

}  // namespace raven

#include "raven/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "raven/puzzle.hpp"

namespace raven {

namespace {

double hue_to_channel(double p, double q, double t) {
  if (t < 0) t += 1;
  if (t > 1) t -= 1;
  if (t < 1.0 / 6) return p + (q - p) * 6 * t;
  if (t < 0.5) return q;
  if (t < 2.0 / 3) return p + (q - p) * (2.0 / 3 - t) * 6;
  return p;
}

std::vector<Rgb> hue_ring(int n, double offset, double saturation, double lightness) {
  std::vector<Rgb> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) out.push_back(hsl_to_rgb((k + offset) / n, saturation, lightness));
  return out;
}

bool inside(int shape, double dx, double dy, double h) {
  switch (shape) {
    case 0: return std::abs(dx) <= h && std::abs(dy) <= h;
    case 1: {
      const double ex = dx / h, ey = dy / (0.6 * h);
      return ex * ex + ey * ey <= 1.0;
    }
    case 2: return dy >= -h && dy <= h && std::abs(dx) <= 0.5 * (dy + h);
    case 3: return std::abs(dx) + std::abs(dy) <= h;
    default: throw std::invalid_argument("shape index out of range");
  }
}

int value_of(const FactorSpace& space, const FactorAssignment& a, RenderRole role, int fallback) {
  const auto k = space.find_role(role);
  return k ? a[*k] : fallback;
}

int cardinality_of(const FactorSpace& space, RenderRole role) {
  const auto k = space.find_role(role);
  return k ? space.factor(*k).cardinality : 0;
}

void blit(Image& dst, const Image& src, int x0, int y0) {
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < dst.channels; ++c)
        dst.at(x0 + x, y0 + y, c) = src.at(x, y, std::min(c, src.channels - 1));
}

}  // namespace

Rgb hsl_to_rgb(double hue, double saturation, double lightness) {
  hue -= std::floor(hue);
  const double q = lightness < 0.5 ? lightness * (1 + saturation) : lightness + saturation - lightness * saturation;
  const double p = 2 * lightness - q;
  return {static_cast<float>(hue_to_channel(p, q, hue + 1.0 / 3)), static_cast<float>(hue_to_channel(p, q, hue)),
          static_cast<float>(hue_to_channel(p, q, hue - 1.0 / 3))};
}

Palette make_palette(const FactorSpace& space) {
  Palette p;
  p.object_colors = hue_ring(std::max(1, cardinality_of(space, RenderRole::object_color)), 0.0, 0.9, 0.55);
  p.background_colors = hue_ring(std::max(1, cardinality_of(space, RenderRole::background_color)), 0.5, 0.5, 0.2);
  p.wall_colors = hue_ring(std::max(1, cardinality_of(space, RenderRole::wall_color)), 0.25, 0.5, 0.35);
  return p;
}

int channels_for(const FactorSpace& space) {
  for (auto role : {RenderRole::object_color, RenderRole::background_color, RenderRole::wall_color})
    if (space.find_role(role)) return 3;
  return 1;
}

Image render(const FactorSpace& space, const FactorAssignment& assignment, int size) {
  if (size != 16 && size != 32 && size != 64) throw std::invalid_argument("render size must be 16, 32 or 64");
  space.check(assignment);
  if (cardinality_of(space, RenderRole::shape) > 4) throw std::invalid_argument("renderer supports at most 4 shapes");

  const int channels = channels_for(space);
  const double s = size;
  const int nx = cardinality_of(space, RenderRole::pos_x);
  const int ny = cardinality_of(space, RenderRole::pos_y);
  const bool positional = nx > 0 || ny > 0;
  const double spacing = positional ? s / (std::max(nx, ny) + 1) : s / 2;
  const double hi = (positional ? 0.9 : 0.7) * spacing;
  const double lo = 0.35 * hi;

  const double cx = nx > 0 ? s * (value_of(space, assignment, RenderRole::pos_x, 0) + 1) / (nx + 1) : s / 2;
  const double cy = ny > 0 ? s * (value_of(space, assignment, RenderRole::pos_y, 0) + 1) / (ny + 1) : s / 2;
  const int ns = cardinality_of(space, RenderRole::size);
  const double half = ns > 0 ? lo + (hi - lo) * value_of(space, assignment, RenderRole::size, 0) / (ns - 1)
                             : 0.5 * (lo + hi);
  const int shape = value_of(space, assignment, RenderRole::shape, 0);

  const auto palette = make_palette(space);
  Rgb fg{1, 1, 1}, bg{0, 0, 0};
  if (space.find_role(RenderRole::object_color))
    fg = palette.object_colors[static_cast<std::size_t>(value_of(space, assignment, RenderRole::object_color, 0))];
  if (space.find_role(RenderRole::background_color))
    bg = palette.background_colors[static_cast<std::size_t>(
        value_of(space, assignment, RenderRole::background_color, 0))];
  const bool has_wall = space.find_role(RenderRole::wall_color).has_value();
  const Rgb wall =
      has_wall ? palette.wall_colors[static_cast<std::size_t>(value_of(space, assignment, RenderRole::wall_color, 0))]
               : bg;
  const int wall_rows = has_wall ? static_cast<int>(0.4 * size) : 0;

  Image img(size, size, channels);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const bool on = inside(shape, x + 0.5 - cx, y + 0.5 - cy, half);
      const Rgb& col = on ? fg : (y < wall_rows ? wall : bg);
      if (channels == 1) {
        img.at(x, y) = on ? 1.0f : 0.0f;
      } else {
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = col[static_cast<std::size_t>(c)];
      }
    }
  }
  return img;
}

Image render_grid(const RpmInstance& puzzle, int cell) {
  const auto& space = *puzzle.space;
  const int channels = channels_for(space);
  const int width = 6 * cell + 5;
  const int height = 4 * cell + 3;
  Image out(width, height, channels, kSeparatorValue);
  const int grid_width = 3 * cell + 2;
  const int x_offset = (width - grid_width) / 2;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      const int x0 = x_offset + c * (cell + 1);
      const int y0 = r * (cell + 1);
      if (r == 2 && c == 2) {
        blit(out, Image(cell, cell, channels, 0.0f), x0, y0);
      } else {
        blit(out, render(space, puzzle.grid[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)], cell), x0,
             y0);
      }
    }
  }
  for (int k = 0; k < 6; ++k)
    blit(out, render(space, puzzle.choices[static_cast<std::size_t>(k)], cell), k * (cell + 1), 3 * (cell + 1));
  return out;
}

void write_pnm(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 1 && image.channels != 3) throw std::invalid_argument("PNM supports 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << (image.channels == 3 ? "P6" : "P5") << "\n" << image.width << " " << image.height << "\n255\n";
  std::vector<unsigned char> bytes(image.data.size());
  std::transform(image.data.begin(), image.data.end(), bytes.begin(), [](float v) {
    return static_cast<unsigned char>(std::lround(255.0 * std::clamp(v, 0.0f, 1.0f)));
  });
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  in.get();
  if ((magic != "P5" && magic != "P6") || maxval != 255) throw std::runtime_error("unsupported PNM file");
  Image img(w, h, magic == "P6" ? 3 : 1);
  std::vector<unsigned char> bytes(img.data.size());
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw std::runtime_error("truncated PNM payload");
  std::transform(bytes.begin(), bytes.end(), img.data.begin(), [](unsigned char b) { return b / 255.0f; });
  return img;
}

}  // namespace raven

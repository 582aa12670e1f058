#include "rdunet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace rdunet {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t attempt) {
  // splitmix64 over the packed identifiers
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1) + 0x94d049bb133111ebULL * attempt;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

/// Multi-octave bilinear lattice noise in [0,1], drawn from rng.
std::vector<double> value_noise(Rng& rng, int size) {
  std::vector<double> out(static_cast<std::size_t>(size) * size, 0.0);
  const int lattices[4] = {4, 8, 16, 32};
  const double weights[4] = {0.5, 0.25, 0.15, 0.10};
  for (int oct = 0; oct < 4; ++oct) {
    const int cells = lattices[oct];
    std::vector<double> lattice(static_cast<std::size_t>(cells + 1) * (cells + 1));
    for (double& v : lattice) v = rng.uniform();
    const double step = static_cast<double>(cells) / size;
    for (int y = 0; y < size; ++y) {
      const double fy = y * step;
      const int y0 = static_cast<int>(fy);
      const double ty = fy - y0;
      for (int x = 0; x < size; ++x) {
        const double fx = x * step;
        const int x0 = static_cast<int>(fx);
        const double tx = fx - x0;
        const double* row0 = lattice.data() + static_cast<std::size_t>(y0) * (cells + 1);
        const double* row1 = row0 + (cells + 1);
        const double v = (1 - ty) * ((1 - tx) * row0[x0] + tx * row0[x0 + 1]) +
                         ty * ((1 - tx) * row1[x0] + tx * row1[x0 + 1]);
        out[static_cast<std::size_t>(y) * size + x] += weights[oct] * v;
      }
    }
  }
  return out;
}

/// Smoothed random-walk offsets with zero mean, |offset| <= amplitude.
std::vector<double> coastline_offsets(Rng& rng, int size, double amplitude) {
  std::vector<double> walk(static_cast<std::size_t>(size));
  double pos = 0.0;
  for (int i = 0; i < size; ++i) {
    pos += rng.normal(0.0, 1.0);
    walk[static_cast<std::size_t>(i)] = pos;
  }
  for (int pass = 0; pass < 3; ++pass) {
    std::vector<double> smooth(walk.size());
    for (int i = 0; i < size; ++i) {
      double acc = 0.0;
      int cnt = 0;
      for (int k = -4; k <= 4; ++k) {
        int j = i + k;
        if (j >= 0 && j < size) {
          acc += walk[static_cast<std::size_t>(j)];
          ++cnt;
        }
      }
      smooth[static_cast<std::size_t>(i)] = acc / cnt;
    }
    walk = std::move(smooth);
  }
  double mean = 0.0, peak = 0.0;
  for (double v : walk) mean += v;
  mean /= size;
  for (double& v : walk) {
    v -= mean;
    peak = std::max(peak, std::fabs(v));
  }
  if (peak > 0.0)
    for (double& v : walk) v *= amplitude / peak;
  return walk;
}

bool try_generate(std::uint64_t seed, std::uint64_t index, std::uint64_t attempt, int size,
                  const GenOptions& options, Sample* out) {
  Rng rng(mix_seed(seed, index, attempt));
  Sample s;
  s.h = size;
  s.w = size;
  s.image.assign(static_cast<std::size_t>(size) * size, 0.0);
  s.mask.assign(static_cast<std::size_t>(size) * size, 0);

  const int orientation = static_cast<int>(rng.uniform_index(4));
  const double base = size * rng.uniform(0.35, 0.65);
  auto offsets = coastline_offsets(rng, size, size * 0.18);
  auto sea_noise = value_noise(rng, size);
  auto land_noise = value_noise(rng, size);
  const double wave_freq = rng.uniform(0.06, 0.16);
  const double wave_phase = rng.uniform(0.0, 6.283185307179586);

  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      bool land;
      if (orientation < 2) {  // vertical coastline
        const double boundary = base + offsets[static_cast<std::size_t>(y)];
        land = orientation == 0 ? x >= boundary : x < boundary;
      } else {  // horizontal coastline
        const double boundary = base + offsets[static_cast<std::size_t>(x)];
        land = orientation == 2 ? y >= boundary : y < boundary;
      }
      const std::size_t i = static_cast<std::size_t>(y) * size + x;
      if (land) {
        s.mask[i] = 1;
        s.image[i] = clamp01(0.45 + 0.45 * land_noise[i]);
      } else {
        const double stripe = 0.04 * std::sin(6.283185307179586 * (wave_freq * y) + wave_phase);
        s.image[i] = clamp01(0.06 + 0.22 * sea_noise[i] + stripe);
      }
    }
  }

  if (rng.bernoulli(options.ship_prob)) {
    const int ships = 1 + static_cast<int>(rng.uniform_index(
                              static_cast<std::uint64_t>(std::max(1, options.max_ships))));
    for (int k = 0; k < ships; ++k) {
      const int cy = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(size)));
      const int cx = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(size)));
      const double ry = rng.uniform(1.0, 2.5);
      const double rx = rng.uniform(2.0, 5.0);
      const double bright = rng.uniform(0.75, 0.95);
      if (s.label(cy, cx) != 0) continue;  // ships only on sea
      for (int y = std::max(0, cy - 3); y <= std::min(size - 1, cy + 3); ++y)
        for (int x = std::max(0, cx - 6); x <= std::min(size - 1, cx + 6); ++x) {
          const double dy = (y - cy) / ry, dx = (x - cx) / rx;
          if (dy * dy + dx * dx <= 1.0 && s.label(y, x) == 0) {
            s.label(y, x) = 1;
            s.pixel(y, x) = bright;
          }
        }
    }
  }

  std::size_t sea = 0;
  for (std::uint8_t m : s.mask) sea += m == 0 ? 1 : 0;
  const double frac = static_cast<double>(sea) / static_cast<double>(s.mask.size());
  if (frac < 0.25 || frac > 0.75) return false;
  *out = std::move(s);
  return true;
}

}  // namespace

std::vector<Sample> generate_synthetic(std::uint64_t seed, int count, int size,
                                       const GenOptions& options) {
  if (count < 1) throw ValueError("generate_synthetic: count must be >= 1");
  if (size < 16 || size % 16 != 0)
    throw ValueError("generate_synthetic: size must be a positive multiple of 16, got " +
                     std::to_string(size));
  std::vector<Sample> samples;
  samples.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Sample s;
    std::uint64_t attempt = 0;
    while (!try_generate(seed, static_cast<std::uint64_t>(i), attempt, size, options, &s))
      ++attempt;
    samples.push_back(std::move(s));
  }
  return samples;
}

AugmentDraw draw_augment(Rng& rng) {
  AugmentDraw d;
  d.hflip = rng.bernoulli(0.5);
  d.vflip = rng.bernoulli(0.5);
  d.dx = static_cast<int>(rng.uniform_int(-8, 8));
  d.dy = static_cast<int>(rng.uniform_int(-8, 8));
  d.scale = rng.uniform(1.0, 1.5);
  return d;
}

namespace {

int reflect_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

}  // namespace

Sample apply_augment(const Sample& s, const AugmentDraw& draw) {
  const int h = s.h, w = s.w;
  Sample cur = s;

  if (draw.hflip) {
    Sample next = cur;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        next.pixel(y, x) = cur.pixel(y, w - 1 - x);
        next.label(y, x) = cur.label(y, w - 1 - x);
      }
    cur = std::move(next);
  }
  if (draw.vflip) {
    Sample next = cur;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        next.pixel(y, x) = cur.pixel(h - 1 - y, x);
        next.label(y, x) = cur.label(h - 1 - y, x);
      }
    cur = std::move(next);
  }
  if (draw.dx != 0 || draw.dy != 0) {
    Sample next = cur;
    for (int y = 0; y < h; ++y) {
      const int sy = reflect_index(y - draw.dy, h);
      for (int x = 0; x < w; ++x) {
        const int sx = reflect_index(x - draw.dx, w);
        next.pixel(y, x) = cur.pixel(sy, sx);
        next.label(y, x) = cur.label(sy, sx);
      }
    }
    cur = std::move(next);
  }
  if (draw.scale != 1.0) {
    // Upscale then centre-crop, expressed directly as sampling the source
    // around its centre with spacing 1/scale. For scale >= 1 every source
    // coordinate stays in range.
    Sample next = cur;
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    for (int y = 0; y < h; ++y) {
      const double fy = (y - cy) / draw.scale + cy;
      const int y0 = static_cast<int>(std::floor(fy));
      const int y1 = std::min(y0 + 1, h - 1);
      const double ty = fy - y0;
      for (int x = 0; x < w; ++x) {
        const double fx = (x - cx) / draw.scale + cx;
        const int x0 = static_cast<int>(std::floor(fx));
        const int x1 = std::min(x0 + 1, w - 1);
        const double tx = fx - x0;
        next.pixel(y, x) = (1 - ty) * ((1 - tx) * cur.pixel(y0, x0) + tx * cur.pixel(y0, x1)) +
                           ty * ((1 - tx) * cur.pixel(y1, x0) + tx * cur.pixel(y1, x1));
        next.label(y, x) = cur.label(static_cast<int>(std::lround(fy)),
                                     static_cast<int>(std::lround(fx)));
      }
    }
    cur = std::move(next);
  }
  return cur;
}

Sample augment(const Sample& s, Rng& rng) { return apply_augment(s, draw_augment(rng)); }

void write_pgm(const std::filesystem::path& path, std::span<const double> image, int h, int w) {
  if (static_cast<std::size_t>(h) * w != image.size())
    throw ShapeError("write_pgm: image size does not match dimensions");
  std::vector<std::uint8_t> bytes(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = image[i];
    if (!(v >= 0.0 && v <= 1.0))
      throw ValueError("write_pgm: pixel " + std::to_string(i) + " outside [0,1]");
    bytes[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << "P5\n" << w << " " << h << "\n255\n";
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write to " + path.string());
}

void write_mask_pgm(const std::filesystem::path& path, std::span<const std::uint8_t> mask, int h,
                    int w) {
  if (static_cast<std::size_t>(h) * w != mask.size())
    throw ShapeError("write_mask_pgm: mask size does not match dimensions");
  std::vector<std::uint8_t> bytes(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] > 1) throw ValueError("write_mask_pgm: class id > 1 at pixel " + std::to_string(i));
    bytes[i] = mask[i] ? 255 : 0;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << "P5\n" << w << " " << h << "\n255\n";
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write to " + path.string());
}

Pgm read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;

  auto need = [&](std::size_t n) {
    if (pos + n > raw.size()) throw ParseError("truncated PGM " + path.string(), raw.size());
  };
  auto skip_space = [&]() {
    while (pos < raw.size()) {
      const char c = raw[pos];
      if (c == '#') {  // comment runs to end of line
        while (pos < raw.size() && raw[pos] != '\n') ++pos;
      } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto parse_int = [&]() {
    skip_space();
    if (pos >= raw.size() || raw[pos] < '0' || raw[pos] > '9')
      throw ParseError("expected integer in PGM header of " + path.string(), pos);
    long v = 0;
    while (pos < raw.size() && raw[pos] >= '0' && raw[pos] <= '9') {
      v = v * 10 + (raw[pos] - '0');
      if (v > 1 << 26) throw ParseError("unreasonable header value in " + path.string(), pos);
      ++pos;
    }
    return v;
  };

  need(2);
  if (raw[0] != 'P' || raw[1] != '5')
    throw ParseError("not a binary PGM (magic != P5): " + path.string(), 0);
  pos = 2;
  const long w = parse_int();
  const long h = parse_int();
  const std::size_t maxval_pos = pos;
  const long maxval = parse_int();
  if (maxval != 255)
    throw ParseError("unsupported maxval " + std::to_string(maxval) + " in " + path.string(),
                     maxval_pos);
  need(1);
  ++pos;  // the single whitespace byte before the payload
  const std::size_t payload = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  need(payload);

  Pgm pgm;
  pgm.h = static_cast<int>(h);
  pgm.w = static_cast<int>(w);
  pgm.bytes.assign(raw.begin() + static_cast<std::ptrdiff_t>(pos),
                   raw.begin() + static_cast<std::ptrdiff_t>(pos + payload));
  return pgm;
}

std::vector<double> image_from_pgm(const Pgm& pgm) {
  std::vector<double> out(pgm.bytes.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pgm.bytes[i] / 255.0;
  return out;
}

std::vector<std::uint8_t> mask_from_pgm(const Pgm& pgm) {
  std::vector<std::uint8_t> out(pgm.bytes.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pgm.bytes[i] >= 128 ? 1 : 0;
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& e : entries) f << e.split << "\t" << e.image << "\t" << e.mask << "\n";
  if (!f) throw IoError("short write to " + path.string());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::size_t t1 = line.find('\t');
    std::size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos)
      throw ParseError("manifest line " + std::to_string(lineno) + " is not split<TAB>image<TAB>mask",
                       lineno);
    entries.push_back(
        ManifestEntry{line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), line.substr(t2 + 1)});
  }
  return entries;
}

Sample load_sample(const ManifestEntry& entry) {
  Pgm img = read_pgm(entry.image);
  Pgm msk = read_pgm(entry.mask);
  if (img.h != msk.h || img.w != msk.w)
    throw ShapeError("sample " + entry.image + ": image and mask sizes differ");
  Sample s;
  s.h = img.h;
  s.w = img.w;
  s.image = image_from_pgm(img);
  s.mask = mask_from_pgm(msk);
  return s;
}

}  // namespace rdunet

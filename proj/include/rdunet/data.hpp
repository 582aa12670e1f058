#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rdunet/errors.hpp"
#include "rdunet/rng.hpp"

namespace rdunet {

/// One sea-land sample: a single-channel image in [0,1] and an aligned
/// class-id mask (0 = sea, 1 = land; ships count as land).
struct Sample {
  int h = 0;
  int w = 0;
  std::vector<double> image;
  std::vector<std::uint8_t> mask;

  double& pixel(int y, int x) { return image[static_cast<std::size_t>(y) * w + x]; }
  double pixel(int y, int x) const { return image[static_cast<std::size_t>(y) * w + x]; }
  std::uint8_t& label(int y, int x) { return mask[static_cast<std::size_t>(y) * w + x]; }
  std::uint8_t label(int y, int x) const { return mask[static_cast<std::size_t>(y) * w + x]; }
};

struct GenOptions {
  double ship_prob = 0.5;    // chance a sample carries ship blobs
  int max_ships = 3;
};

/// Deterministic synthetic coastline scenes: a smoothed random-walk
/// boundary splits the frame, the sea side gets dim striped noise, the land
/// side brighter texture, and optional bright elliptical ships are stamped
/// on the sea (labelled land). Sea fraction is kept inside [0.25, 0.75].
std::vector<Sample> generate_synthetic(std::uint64_t seed, int count, int size,
                                       const GenOptions& options = {});

struct AugmentDraw {
  bool hflip = false;
  bool vflip = false;
  int dx = 0;  // in [-8, 8]
  int dy = 0;
  double scale = 1.0;  // in [1, 1.5]
};

AugmentDraw draw_augment(Rng& rng);
/// Flips, integer translation with reflected edges, then scaling by
/// upsample + centre crop. The image resamples bilinearly, the mask by
/// nearest neighbour; shape is preserved.
Sample apply_augment(const Sample& s, const AugmentDraw& draw);
Sample augment(const Sample& s, Rng& rng);

// Binary PGM ("P5", maxval 255). Images quantize as round(v*255); masks
// store class 0 as 0 and class 1 as 255, which round-trips losslessly.
struct Pgm {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> bytes;
};

void write_pgm(const std::filesystem::path& path, std::span<const double> image, int h, int w);
void write_mask_pgm(const std::filesystem::path& path, std::span<const std::uint8_t> mask, int h,
                    int w);
Pgm read_pgm(const std::filesystem::path& path);
std::vector<double> image_from_pgm(const Pgm& pgm);
std::vector<std::uint8_t> mask_from_pgm(const Pgm& pgm);

/// Line-oriented manifest: "split<TAB>image_path<TAB>mask_path".
struct ManifestEntry {
  std::string split;
  std::string image;
  std::string mask;
};

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

Sample load_sample(const ManifestEntry& entry);

}  // namespace rdunet

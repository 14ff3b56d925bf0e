#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "woundformer/mask.hpp"
#include "woundformer/nn.hpp"
#include "woundformer/tensor.hpp"

namespace woundformer {

// ---------------------------------------------------------------------------
// NetPBM codec (binary P6 / P5, maxval 255)

struct RgbImage {
  Index width = 0;
  Index height = 0;
  std::vector<std::uint8_t> pixels;  // RGBRGB..., row-major
};

struct GrayImage {
  Index width = 0;
  Index height = 0;
  std::vector<std::uint8_t> pixels;
};

RgbImage read_ppm(const std::filesystem::path& path);
GrayImage read_pgm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const RgbImage& image);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);
RgbImage decode_ppm(std::string_view bytes);
GrayImage decode_pgm(std::string_view bytes);
std::string encode_ppm(const RgbImage& image);
std::string encode_pgm(const GrayImage& image);

// ---------------------------------------------------------------------------

struct ClassPalette {
  std::vector<std::string> names;
  std::vector<std::array<std::uint8_t, 3>> colors;

  /// Background plus the six wound tissues.
  static ClassPalette six_tissue();
  /// Background, Granulation, Callus, Fibrin.
  static ClassPalette dfu_tissue();
  /// "six_tissue" or "dfu_tissue".
  static ClassPalette named(std::string_view name);

  Index size() const { return static_cast<Index>(names.size()); }
  void validate() const;
};

struct SegSample {
  Tensor image;  // [3, H, W] in [0, 1]
  IntMask mask;  // [H, W]
  std::string source_id;

  Index height() const { return mask.height(); }
  Index width() const { return mask.width(); }
};

/// Throws FormatError on malformed files, DimensionMismatchError when the
/// image and mask extents differ, LabelRangeError on indices >= palette size.
SegSample load_sample(const std::filesystem::path& image_path, const std::filesystem::path& mask_path,
                      const ClassPalette& palette);
void save_sample(const SegSample& sample, const std::filesystem::path& image_path,
                 const std::filesystem::path& mask_path);

RgbImage to_rgb(const Tensor& image);
Tensor from_rgb(const RgbImage& image);

/// Image: half-pixel bilinear (both directions). Mask: nearest neighbour.
/// `size` must be a positive multiple of 32.
SegSample resize_sample(const SegSample& sample, Index size);

struct AugmentConfig {
  double p_hflip = 0.5;
  double p_vflip = 0.5;
  double p_rotate = 0.5;
  double max_rotation_deg = 30.0;
  double p_scale = 0.5;
  double min_scale = 0.9;
  double max_scale = 1.1;
  double p_brightness = 0.5;
  double brightness = 0.2;
  double p_contrast = 0.5;
  double contrast = 0.2;
  double p_noise = 0.3;
  double max_noise_sigma = 0.05;

  static AugmentConfig disabled();
  void validate() const;
};

/// Geometric transforms hit image and mask alike (mask by nearest neighbour,
/// uncovered pixels become background); photometric and noise transforms
/// touch the image only.
SegSample augment(const SegSample& sample, const AugmentConfig& config, Rng& rng);
SegSample flip_horizontal(const SegSample& sample);
SegSample flip_vertical(const SegSample& sample);

/// Independent stream for (seed, stream, index).
Rng derive_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

struct SynthOptions {
  /// More, smaller regions with irregular outlines.
  bool boundary_heavy = false;
};

/// Skin-toned background with 1-4 (boundary-heavy: 3-6) soft-edged elliptical
/// tissue regions, each with a class-specific colour and texture noise. Later
/// regions cover earlier ones. Class k >= 1 is drawn with weight
/// 20^(-(k-1)/(n_cls-2)), so the rarest tissue is ~20x rarer than the first.
std::vector<SegSample> generate_synthetic_dataset(Index n, Index size, Index n_cls, std::uint64_t seed,
                                                  const SynthOptions& options = {});

struct DatasetSplit {
  std::vector<SegSample> train;
  std::vector<SegSample> val;
  std::vector<SegSample> test;
};

/// Seeded shuffle, then train/val sizes by rounding fraction * n; test takes
/// the rest. Fractions must sum to 1.
DatasetSplit split_dataset(const std::vector<SegSample>& samples, const std::array<double, 3>& fractions,
                           std::uint64_t seed);

struct ManifestEntry {
  std::filesystem::path image;
  std::filesystem::path mask;
};

/// One "image<TAB>mask" per line; relative paths resolve against the
/// manifest's directory. Blank lines and '#' comments are skipped.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<SegSample> load_manifest(const std::filesystem::path& path, const ClassPalette& palette);

/// Writes <dir>/<source_id>.ppm, .pgm and <dir>/<manifest_name>.
void write_dataset(const std::filesystem::path& dir, const std::vector<SegSample>& samples,
                   const std::string& manifest_name = "manifest.tsv");

}  // namespace woundformer

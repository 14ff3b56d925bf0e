#include "woundformer/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "woundformer/errors.hpp"

namespace woundformer {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// NetPBM

namespace {

struct PnmHeader {
  Index width = 0;
  Index height = 0;
  std::size_t raster_offset = 0;
};

PnmHeader parse_pnm_header(std::string_view bytes, std::string_view magic) {
  if (bytes.size() < 2 || bytes.substr(0, 2) != magic) {
    throw FormatError("expected NetPBM magic '" + std::string(magic) + "'");
  }
  std::size_t pos = 2;
  const auto next_number = [&](const char* what) -> Index {
    // Whitespace and '#' comments may precede each header field.
    while (pos < bytes.size()) {
      if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      throw FormatError(std::string("malformed NetPBM header: missing ") + what);
    }
    Index v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > (Index{1} << 30)) throw FormatError(std::string("malformed NetPBM header: ") + what + " too large");
      ++pos;
    }
    return v;
  };
  PnmHeader h;
  h.width = next_number("width");
  h.height = next_number("height");
  const Index maxval = next_number("maxval");
  if (h.width <= 0 || h.height <= 0) throw FormatError("malformed NetPBM header: zero extent");
  if (maxval != 255) throw FormatError("unsupported NetPBM maxval " + std::to_string(maxval) + " (need 255)");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError("malformed NetPBM header: no separator before raster");
  }
  h.raster_offset = pos + 1;
  return h;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

template <class Image>
Image decode_raster(std::string_view bytes, std::string_view magic, Index channels) {
  const PnmHeader h = parse_pnm_header(bytes, magic);
  const std::size_t need = static_cast<std::size_t>(h.width * h.height * channels);
  if (bytes.size() - h.raster_offset < need) throw FormatError("truncated NetPBM raster");
  Image img;
  img.width = h.width;
  img.height = h.height;
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(h.raster_offset),
                    bytes.begin() + static_cast<std::ptrdiff_t>(h.raster_offset + need));
  return img;
}

template <class Image>
std::string encode_raster(const Image& img, std::string_view magic, Index channels) {
  if (static_cast<Index>(img.pixels.size()) != img.width * img.height * channels) {
    throw ShapeError("image buffer does not match its extent");
  }
  std::string out = std::string(magic) + "\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(img.pixels.begin(), img.pixels.end());
  return out;
}

}  // namespace

RgbImage decode_ppm(std::string_view bytes) { return decode_raster<RgbImage>(bytes, "P6", 3); }
GrayImage decode_pgm(std::string_view bytes) { return decode_raster<GrayImage>(bytes, "P5", 1); }
std::string encode_ppm(const RgbImage& image) { return encode_raster(image, "P6", 3); }
std::string encode_pgm(const GrayImage& image) { return encode_raster(image, "P5", 1); }

RgbImage read_ppm(const fs::path& path) {
  try {
    return decode_ppm(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

GrayImage read_pgm(const fs::path& path) {
  try {
    return decode_pgm(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_ppm(const fs::path& path, const RgbImage& image) { write_file(path, encode_ppm(image)); }
void write_pgm(const fs::path& path, const GrayImage& image) { write_file(path, encode_pgm(image)); }

// ---------------------------------------------------------------------------

ClassPalette ClassPalette::six_tissue() {
  return {{"Background", "Granulation", "Slough", "Maceration", "Necrotic", "Bone", "Tendon"},
          {{{0, 0, 0}}, {{220, 40, 60}}, {{240, 200, 60}}, {{90, 170, 230}}, {{40, 40, 40}}, {{240, 240, 240}},
           {{160, 90, 200}}}};
}

ClassPalette ClassPalette::dfu_tissue() {
  return {{"Background", "Granulation", "Callus", "Fibrin"},
          {{{0, 0, 0}}, {{220, 40, 60}}, {{90, 170, 230}}, {{240, 200, 60}}}};
}

ClassPalette ClassPalette::named(std::string_view name) {
  if (name == "six_tissue") return six_tissue();
  if (name == "dfu_tissue") return dfu_tissue();
  throw ConfigError("unknown palette '" + std::string(name) + "'");
}

void ClassPalette::validate() const {
  if (names.size() < 2) throw ConfigError("palette needs at least two classes");
  if (colors.size() != names.size()) throw ConfigError("palette colour count does not match class count");
  if (names[0] != "Background") throw ConfigError("palette index 0 must be Background");
  for (std::size_t i = 0; i < names.size(); ++i) {
    for (std::size_t j = i + 1; j < names.size(); ++j) {
      if (names[i] == names[j]) throw ConfigError("duplicate palette class '" + names[i] + "'");
    }
  }
}

RgbImage to_rgb(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("to_rgb: expected [3, H, W]");
  const Index h = image.dim(1), w = image.dim(2), plane = h * w;
  RgbImage out{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(3 * plane))};
  const auto v = image.data();
  for (Index p = 0; p < plane; ++p) {
    for (Index c = 0; c < 3; ++c) {
      const double x = std::clamp(v[c * plane + p], 0.0, 1.0);
      out.pixels[p * 3 + c] = static_cast<std::uint8_t>(std::lround(x * 255.0));
    }
  }
  return out;
}

Tensor from_rgb(const RgbImage& image) {
  const Index plane = image.width * image.height;
  std::vector<double> v(static_cast<std::size_t>(3 * plane));
  for (Index p = 0; p < plane; ++p) {
    for (Index c = 0; c < 3; ++c) v[c * plane + p] = image.pixels[p * 3 + c] / 255.0;
  }
  return Tensor::from_data({3, image.height, image.width}, std::move(v));
}

SegSample load_sample(const fs::path& image_path, const fs::path& mask_path, const ClassPalette& palette) {
  const RgbImage rgb = read_ppm(image_path);
  const GrayImage gray = read_pgm(mask_path);
  if (rgb.width != gray.width || rgb.height != gray.height) {
    throw DimensionMismatchError(image_path.string() + " is " + std::to_string(rgb.width) + "x" +
                                 std::to_string(rgb.height) + " but " + mask_path.string() + " is " +
                                 std::to_string(gray.width) + "x" + std::to_string(gray.height));
  }
  SegSample s;
  s.image = from_rgb(rgb);
  s.mask = IntMask::zeros({gray.height, gray.width});
  for (std::size_t i = 0; i < gray.pixels.size(); ++i) {
    const int v = gray.pixels[i];
    if (v >= palette.size()) {
      throw LabelRangeError(mask_path.string() + ": class index " + std::to_string(v) + " outside palette of " +
                            std::to_string(palette.size()));
    }
    s.mask.values[i] = v;
  }
  s.source_id = image_path.stem().string();
  return s;
}

void save_sample(const SegSample& sample, const fs::path& image_path, const fs::path& mask_path) {
  write_ppm(image_path, to_rgb(sample.image));
  GrayImage g{sample.width(), sample.height(), {}};
  g.pixels.reserve(sample.mask.values.size());
  for (int v : sample.mask.values) {
    if (v < 0 || v > 255) throw LabelRangeError("mask value does not fit in 8 bits");
    g.pixels.push_back(static_cast<std::uint8_t>(v));
  }
  write_pgm(mask_path, g);
}

// ---------------------------------------------------------------------------
// Resizing

namespace {

struct Coord {
  Index lo, hi;
  double frac;
};

Coord bilinear_coord(Index dst, Index in, Index out) {
  double src = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in - 1));
  const Index lo = static_cast<Index>(std::floor(src));
  return {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
}

Index nearest_coord(Index dst, Index in, Index out) {
  const Index src = static_cast<Index>(std::floor((static_cast<double>(dst) + 0.5) * static_cast<double>(in) /
                                                  static_cast<double>(out)));
  return std::min(src, in - 1);
}

}  // namespace

SegSample resize_sample(const SegSample& sample, Index size) {
  if (size <= 0 || size % 32 != 0) throw ArgumentError("resize: size must be a positive multiple of 32");
  const Index h = sample.height(), w = sample.width();
  if (h == size && w == size) return {sample.image.clone(), sample.mask, sample.source_id};
  const auto src = sample.image.data();
  std::vector<double> out(static_cast<std::size_t>(3 * size * size));
  IntMask mask = IntMask::zeros({size, size});
  for (Index y = 0; y < size; ++y) {
    const Coord cy = bilinear_coord(y, h, size);
    const Index ny = nearest_coord(y, h, size);
    for (Index x = 0; x < size; ++x) {
      const Coord cx = bilinear_coord(x, w, size);
      for (Index c = 0; c < 3; ++c) {
        const double* p = src.data() + c * h * w;
        const double top = (1.0 - cx.frac) * p[cy.lo * w + cx.lo] + cx.frac * p[cy.lo * w + cx.hi];
        const double bot = (1.0 - cx.frac) * p[cy.hi * w + cx.lo] + cx.frac * p[cy.hi * w + cx.hi];
        out[(c * size + y) * size + x] = (1.0 - cy.frac) * top + cy.frac * bot;
      }
      mask.at(y, x) = sample.mask.at(ny, nearest_coord(x, w, size));
    }
  }
  return {Tensor::from_data({3, size, size}, std::move(out)), std::move(mask), sample.source_id};
}

// ---------------------------------------------------------------------------
// Augmentation

AugmentConfig AugmentConfig::disabled() {
  AugmentConfig c;
  c.p_hflip = c.p_vflip = c.p_rotate = c.p_scale = c.p_brightness = c.p_contrast = c.p_noise = 0.0;
  return c;
}

void AugmentConfig::validate() const {
  for (double p : {p_hflip, p_vflip, p_rotate, p_scale, p_brightness, p_contrast, p_noise}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("augment: probabilities must lie in [0, 1]");
  }
  if (!(min_scale > 0.0 && min_scale <= max_scale)) throw ConfigError("augment: invalid scale range");
  if (max_rotation_deg < 0.0 || brightness < 0.0 || contrast < 0.0 || contrast >= 1.0 || max_noise_sigma < 0.0) {
    throw ConfigError("augment: invalid magnitude");
  }
}

Rng derive_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

namespace {

SegSample flip(const SegSample& s, bool horizontal) {
  const Index h = s.height(), w = s.width();
  const auto src = s.image.data();
  std::vector<double> out(src.size());
  IntMask mask = IntMask::zeros({h, w});
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const Index sy = horizontal ? y : h - 1 - y;
      const Index sx = horizontal ? w - 1 - x : x;
      for (Index c = 0; c < 3; ++c) out[(c * h + y) * w + x] = src[(c * h + sy) * w + sx];
      mask.at(y, x) = s.mask.at(sy, sx);
    }
  }
  return {Tensor::from_data({3, h, w}, std::move(out)), std::move(mask), s.source_id};
}

// Rotation by `angle` radians and isotropic scale about the image centre.
SegSample affine(const SegSample& s, double angle, double scale_factor) {
  const Index h = s.height(), w = s.width();
  const double cy = 0.5 * static_cast<double>(h - 1), cx = 0.5 * static_cast<double>(w - 1);
  const double cs = std::cos(angle), sn = std::sin(angle);
  const auto src = s.image.data();
  std::vector<double> out(src.size(), 0.0);
  IntMask mask = IntMask::zeros({h, w});
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const double u = static_cast<double>(x) - cx, v = static_cast<double>(y) - cy;
      const double sx = (cs * u + sn * v) / scale_factor + cx;
      const double sy = (-sn * u + cs * v) / scale_factor + cy;
      const Index nx = static_cast<Index>(std::lround(sx)), ny = static_cast<Index>(std::lround(sy));
      if (nx >= 0 && nx < w && ny >= 0 && ny < h) mask.at(y, x) = s.mask.at(ny, nx);
      if (sx < 0.0 || sy < 0.0 || sx > static_cast<double>(w - 1) || sy > static_cast<double>(h - 1)) continue;
      const Index x0 = static_cast<Index>(std::floor(sx)), y0 = static_cast<Index>(std::floor(sy));
      const Index x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
      for (Index c = 0; c < 3; ++c) {
        const double* p = src.data() + c * h * w;
        const double top = (1.0 - fx) * p[y0 * w + x0] + fx * p[y0 * w + x1];
        const double bot = (1.0 - fx) * p[y1 * w + x0] + fx * p[y1 * w + x1];
        out[(c * h + y) * w + x] = (1.0 - fy) * top + fy * bot;
      }
    }
  }
  return {Tensor::from_data({3, h, w}, std::move(out)), std::move(mask), s.source_id};
}

}  // namespace

SegSample flip_horizontal(const SegSample& sample) { return flip(sample, true); }
SegSample flip_vertical(const SegSample& sample) { return flip(sample, false); }

SegSample augment(const SegSample& sample, const AugmentConfig& config, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto fires = [&](double p) { return unit(rng) < p; };
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  SegSample s{sample.image.clone(), sample.mask, sample.source_id};
  if (fires(config.p_hflip)) s = flip_horizontal(s);
  if (fires(config.p_vflip)) s = flip_vertical(s);

  double angle = 0.0, factor = 1.0;
  const bool rotate = fires(config.p_rotate);
  if (rotate) angle = uniform(-config.max_rotation_deg, config.max_rotation_deg) * std::numbers::pi / 180.0;
  const bool rescale = fires(config.p_scale);
  if (rescale) factor = uniform(config.min_scale, config.max_scale);
  if (rotate || rescale) s = affine(s, angle, factor);

  std::vector<double> px(s.image.data().begin(), s.image.data().end());
  bool photometric = false;
  if (fires(config.p_brightness)) {
    const double delta = uniform(-config.brightness, config.brightness);
    for (double& v : px) v += delta;
    photometric = true;
  }
  if (fires(config.p_contrast)) {
    const double c = uniform(1.0 - config.contrast, 1.0 + config.contrast);
    const double mean = std::accumulate(px.begin(), px.end(), 0.0) / static_cast<double>(px.size());
    for (double& v : px) v = (v - mean) * c + mean;
    photometric = true;
  }
  if (fires(config.p_noise)) {
    std::normal_distribution<double> noise(0.0, uniform(0.0, config.max_noise_sigma));
    for (double& v : px) v += noise(rng);
    photometric = true;
  }
  if (photometric) {
    for (double& v : px) v = std::clamp(v, 0.0, 1.0);
    s.image = Tensor::from_data(s.image.shape(), std::move(px));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Synthetic data

namespace {

std::array<double, 3> tissue_color(Index cls) {
  static const std::array<std::array<double, 3>, 6> table{{
      {0.78, 0.16, 0.20},  // granulation: deep red
      {0.86, 0.80, 0.32},  // slough: yellow
      {0.95, 0.95, 0.93},  // maceration: white
      {0.12, 0.09, 0.08},  // necrotic: black
      {0.62, 0.68, 0.80},  // bone: grey-blue
      {0.52, 0.30, 0.62},  // tendon: violet
  }};
  if (cls >= 1 && cls <= 6) return table[static_cast<std::size_t>(cls - 1)];
  const double hue = std::fmod(0.618033988749895 * static_cast<double>(cls), 1.0) * 2.0 * std::numbers::pi;
  return {0.5 + 0.4 * std::cos(hue), 0.5 + 0.4 * std::cos(hue - 2.094), 0.5 + 0.4 * std::cos(hue + 2.094)};
}

}  // namespace

std::vector<SegSample> generate_synthetic_dataset(Index n, Index size, Index n_cls, std::uint64_t seed,
                                                  const SynthOptions& options) {
  if (size <= 0 || size % 32 != 0) throw ArgumentError("synthetic data: size must be a positive multiple of 32");
  if (n_cls < 2) throw ArgumentError("synthetic data: need at least two classes");
  if (n < 0) throw ArgumentError("synthetic data: negative sample count");

  std::vector<double> weights;
  for (Index k = 1; k < n_cls; ++k) {
    weights.push_back(n_cls > 2 ? std::pow(20.0, -static_cast<double>(k - 1) / static_cast<double>(n_cls - 2)) : 1.0);
  }
  const double s = static_cast<double>(size);
  const double edge = 0.08;

  std::vector<SegSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Rng rng = derive_rng(seed, 1, static_cast<std::uint64_t>(i));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    const Index plane = size * size;
    std::vector<double> img(static_cast<std::size_t>(3 * plane));
    const std::array<double, 3> skin{uniform(0.80, 0.90), uniform(0.58, 0.70), uniform(0.48, 0.60)};
    for (Index p = 0; p < plane; ++p) {
      for (Index c = 0; c < 3; ++c) img[c * plane + p] = skin[c] + 0.02 * normal(rng);
    }
    IntMask mask = IntMask::zeros({size, size});

    std::discrete_distribution<int> pick(weights.begin(), weights.end());
    const int regions = options.boundary_heavy ? 3 + static_cast<int>(unit(rng) * 4.0) : 1 + static_cast<int>(unit(rng) * 4.0);
    // A placement is redrawn when it would hide more than half of an earlier
    // region, so no class survives only as a sliver.
    std::vector<int> owner(static_cast<std::size_t>(plane), -1);
    std::vector<Index> drawn_area, visible_area;
    std::vector<double> dist(static_cast<std::size_t>(plane));
    for (int r = 0; r < regions; ++r) {
      const Index cls = 1 + pick(rng);
      bool placed = false;
      for (int attempt = 0; attempt < 8 && !placed; ++attempt) {
        const double cy = uniform(0.15, 0.85) * s, cx = uniform(0.15, 0.85) * s;
        const double lo = options.boundary_heavy ? 0.07 : 0.12, hi = options.boundary_heavy ? 0.18 : 0.30;
        const double ay = uniform(lo, hi) * s, ax = uniform(lo, hi) * s;
        const double phi = uniform(0.0, std::numbers::pi);
        const double lobes = options.boundary_heavy ? std::floor(uniform(3.0, 7.0)) : 0.0;
        const double wobble = options.boundary_heavy ? uniform(0.1, 0.25) : 0.0;
        const double phase = uniform(0.0, 2.0 * std::numbers::pi);

        std::vector<Index> hidden(drawn_area.size(), 0);
        Index area = 0;
        for (Index y = 0; y < size; ++y) {
          for (Index x = 0; x < size; ++x) {
            const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
            const double u = std::cos(phi) * dx + std::sin(phi) * dy;
            const double v = -std::sin(phi) * dx + std::cos(phi) * dy;
            double d = std::sqrt((u / ax) * (u / ax) + (v / ay) * (v / ay));
            if (lobes > 0.0) d /= 1.0 + wobble * std::sin(lobes * std::atan2(v, u) + phase);
            dist[static_cast<std::size_t>(y * size + x)] = d;
            if (d <= 1.0) {
              ++area;
              const int o = owner[static_cast<std::size_t>(y * size + x)];
              if (o >= 0) ++hidden[static_cast<std::size_t>(o)];
            }
          }
        }
        bool ok = area > 0;
        for (std::size_t k = 0; k < hidden.size() && ok; ++k) {
          ok = 2 * (visible_area[k] - hidden[k]) >= drawn_area[k];
        }
        if (!ok) continue;
        placed = true;
        const int id = static_cast<int>(drawn_area.size());
        for (std::size_t k = 0; k < hidden.size(); ++k) visible_area[k] -= hidden[k];
        drawn_area.push_back(area);
        visible_area.push_back(area);

        std::array<double, 3> color = tissue_color(cls);
        for (double& c : color) c += uniform(-0.04, 0.04);
        const double texture_freq = uniform(0.3, 0.8);
        for (Index y = 0; y < size; ++y) {
          for (Index x = 0; x < size; ++x) {
            const double d = dist[static_cast<std::size_t>(y * size + x)];
            const double alpha = std::clamp((1.0 - d) / edge + 0.5, 0.0, 1.0);
            if (alpha <= 0.0) continue;
            if (d <= 1.0) {
              mask.at(y, x) = static_cast<int>(cls);
              owner[static_cast<std::size_t>(y * size + x)] = id;
            }
            const double texture =
                0.05 * std::sin(texture_freq * (static_cast<double>(x) + 0.7 * static_cast<double>(y)));
            for (Index c = 0; c < 3; ++c) {
              double& px = img[(c * size + y) * size + x];
              const double tissue = color[c] + texture + 0.03 * normal(rng);
              px = alpha * tissue + (1.0 - alpha) * px;
            }
          }
        }
      }
    }
    for (double& v : img) v = std::clamp(v, 0.0, 1.0);
    char id[32];
    std::snprintf(id, sizeof id, "synth_%04lld", static_cast<long long>(i));
    out.push_back({Tensor::from_data({3, size, size}, std::move(img)), std::move(mask), id});
  }
  return out;
}

// ---------------------------------------------------------------------------

DatasetSplit split_dataset(const std::vector<SegSample>& samples, const std::array<double, 3>& fractions,
                           std::uint64_t seed) {
  for (double f : fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw ArgumentError("split: fractions must lie in [0, 1]");
  }
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
    throw ArgumentError("split: fractions must sum to 1");
  }
  const Index n = static_cast<Index>(samples.size());
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = derive_rng(seed, 2, 0);
  std::shuffle(order.begin(), order.end(), rng);

  const Index n_train = std::min<Index>(n, std::llround(fractions[0] * static_cast<double>(n)));
  const Index n_val = std::min<Index>(n - n_train, std::llround(fractions[1] * static_cast<double>(n)));
  DatasetSplit split;
  for (Index i = 0; i < n; ++i) {
    const SegSample& s = samples[order[i]];
    if (i < n_train) {
      split.train.push_back(s);
    } else if (i < n_train + n_val) {
      split.val.push_back(s);
    } else {
      split.test.push_back(s);
    }
  }
  return split;
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 'image<TAB>mask'");
    }
    fs::path image = line.substr(0, tab), mask = line.substr(tab + 1);
    if (image.is_relative()) image = base / image;
    if (mask.is_relative()) mask = base / mask;
    entries.push_back({image, mask});
  }
  return entries;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const auto& e : entries) out << e.image.string() << '\t' << e.mask.string() << '\n';
}

std::vector<SegSample> load_manifest(const fs::path& path, const ClassPalette& palette) {
  std::vector<SegSample> out;
  for (const auto& e : read_manifest(path)) out.push_back(load_sample(e.image, e.mask, palette));
  return out;
}

void write_dataset(const fs::path& dir, const std::vector<SegSample>& samples, const std::string& manifest_name) {
  fs::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (const SegSample& s : samples) {
    const fs::path image = s.source_id + ".ppm", mask = s.source_id + ".pgm";
    save_sample(s, dir / image, dir / mask);
    entries.push_back({image, mask});
  }
  write_manifest(dir / manifest_name, entries);
}

}  // namespace woundformer

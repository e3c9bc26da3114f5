#include "wbc/synthcell.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

namespace wbc {

Rng make_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(stream), 0x9e3779b9u};
  return Rng(seq);
}

GeneratorSpec GeneratorSpec::uniform(int per_class, std::uint64_t seed) {
  GeneratorSpec spec;
  for (CellClass c : all_cell_types()) spec.per_class_count[c] = per_class;
  spec.rng_seed = seed;
  return spec;
}

void GeneratorSpec::validate() const {
  if (image_size < 32) throw Error(ErrorKind::kInvalidConfig, "image_size must be >= 32");
  if (noise_level < 0.0 || noise_level > 1.0) {
    throw Error(ErrorKind::kInvalidConfig, "noise_level must lie in [0,1]");
  }
  if (rbc_count_range.first < 0 || rbc_count_range.second < rbc_count_range.first) {
    throw Error(ErrorKind::kInvalidConfig, "bad rbc_count_range");
  }
  for (const auto& [c, n] : per_class_count) {
    if (c == CellClass::kEmpty) throw Error(ErrorKind::kInvalidConfig, "EMPTY cannot be generated");
    if (n < 0) throw Error(ErrorKind::kInvalidConfig, "negative class count");
  }
}

int GeneratorSpec::total() const {
  int n = 0;
  for (const auto& [c, count] : per_class_count) n += count;
  return n;
}

namespace {

using G = Granularity;
using CC = CytoplasmColor;
using NS = NucleusShape;
using SZ = SizeWrtRbc;

struct ClassMorphology {
  ExplanationAttributes attributes;
  double nc_lo, nc_hi;
  std::array<double, 3> nucleus_rgb;
  double chromatin;  // nucleus texture amplitude
  double hue_shift;  // added to the cytoplasm red channel, subtracted from blue
};

const std::array<ClassMorphology, kNumCellTypes>& morphology_table() {
  static const std::array<ClassMorphology, kNumCellTypes> table = {{
      {{G::kYes, CC::kEosinophilic, NS::kBilobedMultilobed, SZ::kNearlySimilar}, 0.35, 0.45,
       {105, 45, 135}, 10, 0},
      {{G::kNo, CC::kBasophilic, NS::kRoundOval, SZ::kNearlySimilar}, 1.20, 1.35,
       {70, 35, 110}, 6, -6},
      {{G::kYes, CC::kEosinophilic, NS::kBilobedMultilobed, SZ::kLarger}, 0.45, 0.55,
       {115, 55, 140}, 12, 10},
      {{G::kNo, CC::kBasophilic, NS::kHorseshoeKidney, SZ::kLarger}, 0.75, 0.85,
       {125, 80, 160}, 8, 6},
      {{G::kYes, CC::kBasophilic, NS::kBilobedMultilobed, SZ::kNearlySimilar}, 0.55, 0.65,
       {60, 30, 95}, 14, -10},
      {{G::kYes, CC::kEosinophilic, NS::kHorseshoeKidney, SZ::kLarger}, 0.65, 0.75,
       {110, 50, 130}, 10, -4},
      {{G::kYes, CC::kEosinophilic, NS::kHorseshoeKidney, SZ::kNearlySimilar}, 0.85, 0.95,
       {120, 65, 150}, 9, 4},
      {{G::kYes, CC::kEosinophilic, NS::kRoundOval, SZ::kLarger}, 0.95, 1.05,
       {100, 50, 145}, 7, -8},
      {{G::kYes, CC::kBasophilic, NS::kRoundOval, SZ::kLarger}, 1.05, 1.15,
       {95, 60, 150}, 11, 8},
      {{G::kNo, CC::kBasophilic, NS::kRoundOval, SZ::kLarger}, 1.40, 1.60,
       {135, 90, 175}, 4, 0},
  }};
  return table;
}

const ClassMorphology& morphology(CellClass c) {
  if (c == CellClass::kEmpty) throw Error(ErrorKind::kInvalidArgument, "EMPTY has no morphology");
  return morphology_table()[to_index(c)];
}

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

struct Ellipse {
  double cx, cy, a, b, theta;

  bool contains(double x, double y) const {
    const double c = std::cos(theta), s = std::sin(theta);
    const double dx = x - cx, dy = y - cy;
    const double u = (c * dx + s * dy) / a;
    const double v = (-s * dx + c * dy) / b;
    return u * u + v * v <= 1.0;
  }
};

// Nucleus outline in cell-local coordinates (units of the cytoplasm radius),
// scaled by `scale` before testing.
struct NucleusShapeModel {
  NucleusShape shape;
  double aspect = 1.0;
  double offset_x = 0.0, offset_y = 0.0;
  double orientation = 0.0;
  std::vector<std::array<double, 2>> lobes;  // lobe centers, unit scale
  double lobe_radius = 0.45;
  double bite_offset = 0.6, bite_radius = 0.55;

  bool contains(double u, double v, double scale) const {
    const double c = std::cos(orientation), s = std::sin(orientation);
    const double x = (c * u + s * v) / scale - offset_x;
    const double y = (-s * u + c * v) / scale - offset_y;
    switch (shape) {
      case NucleusShape::kRoundOval:
        return x * x + (y * aspect) * (y * aspect) <= 1.0;
      case NucleusShape::kHorseshoeKidney: {
        const bool body = (x * x) / 1.0 + (y * y) / (0.62 * 0.62) <= 1.0;
        const double bx = x, by = y - bite_offset;
        const bool bite = bx * bx + by * by <= bite_radius * bite_radius;
        return body && !bite;
      }
      case NucleusShape::kBilobedMultilobed:
        for (const auto& l : lobes) {
          const double dx = x - l[0], dy = y - l[1];
          if (dx * dx + dy * dy <= lobe_radius * lobe_radius) return true;
        }
        return false;
    }
    return false;
  }
};

NucleusShapeModel draw_nucleus_model(NucleusShape shape, Rng& rng) {
  NucleusShapeModel m;
  m.shape = shape;
  m.orientation = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  switch (shape) {
    case NucleusShape::kRoundOval:
      m.aspect = uniform(rng, 1.0, 1.25);
      m.offset_x = uniform(rng, -0.08, 0.08);
      m.offset_y = uniform(rng, -0.08, 0.08);
      break;
    case NucleusShape::kHorseshoeKidney:
      m.bite_offset = uniform(rng, 0.45, 0.6);
      m.bite_radius = uniform(rng, 0.45, 0.55);
      break;
    case NucleusShape::kBilobedMultilobed: {
      const int n = uniform_int(rng, 2, 4);
      m.lobe_radius = n == 2 ? 0.5 : 0.42;
      const double spread = n == 2 ? 0.52 : 0.6;
      const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      for (int i = 0; i < n; ++i) {
        const double ang = phase + (n == 2 ? i * std::numbers::pi
                                           : i * 2.0 * std::numbers::pi / n + uniform(rng, -0.2, 0.2));
        m.lobes.push_back({spread * std::cos(ang), spread * std::sin(ang)});
      }
      break;
    }
  }
  return m;
}

void add_noise(RgbImage& img, double noise_level, Rng& rng) {
  if (noise_level <= 0.0) return;
  std::normal_distribution<double> noise(0.0, 25.0 * noise_level);
  for (auto& v : img.rgb) v = to_u8(v + noise(rng));
}

}  // namespace

ExplanationAttributes class_attributes(CellClass c) { return morphology(c).attributes; }

std::pair<double, double> nc_band(CellClass c) {
  const auto& m = morphology(c);
  return {m.nc_lo, m.nc_hi};
}

double rbc_diameter(int image_size) { return 0.25 * image_size; }

LabeledImage generate_cell(CellClass cell_class, Rng& rng, const GeneratorSpec& spec) {
  spec.validate();
  const ClassMorphology& morph = morphology(cell_class);
  const int size = spec.image_size;
  const double rbc_d = rbc_diameter(size);

  RgbImage img(size, size);
  const double bg_jitter = uniform(rng, -6, 6);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      std::uint8_t* p = img.pixel(x, y);
      p[0] = to_u8(238 + bg_jitter);
      p[1] = to_u8(230 + bg_jitter);
      p[2] = to_u8(234 + bg_jitter);
    }
  }

  // Red cells first; the white cell is painted over them.
  const int rbc_count = uniform_int(rng, spec.rbc_count_range.first, spec.rbc_count_range.second);
  for (int i = 0; i < rbc_count; ++i) {
    const double r = 0.5 * rbc_d * uniform(rng, 0.95, 1.05);
    const double cx = uniform(rng, 0, size), cy = uniform(rng, 0, size);
    const double tone = uniform(rng, -10, 10);
    for (int y = std::max(0, int(cy - r - 1)); y < std::min(size, int(cy + r + 2)); ++y) {
      for (int x = std::max(0, int(cx - r - 1)); x < std::min(size, int(cx + r + 2)); ++x) {
        const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
        if (d > r) continue;
        std::uint8_t* p = img.pixel(x, y);
        const bool pallor = d < 0.4 * r;
        p[0] = to_u8((pallor ? 232 : 220) + tone);
        p[1] = to_u8((pallor ? 178 : 138) + tone);
        p[2] = to_u8((pallor ? 180 : 140) + tone);
      }
    }
  }

  // Cytoplasm ellipse sized relative to the red-cell diameter.
  const ExplanationAttributes& attrs = morph.attributes;
  double diameter = 0.0;
  switch (attrs.size_wrt_rbc) {
    case SizeWrtRbc::kLarger: diameter = rbc_d * uniform(rng, 1.45, 1.7); break;
    case SizeWrtRbc::kNearlySimilar: diameter = rbc_d * uniform(rng, 0.95, 1.15); break;
    case SizeWrtRbc::kSmaller: diameter = rbc_d * uniform(rng, 0.6, 0.75); break;
  }
  const double ecc = uniform(rng, 0.0, 0.12);
  Ellipse cell{0, 0, 0.5 * diameter * (1 + ecc), 0.5 * diameter * (1 - ecc),
               uniform(rng, 0.0, std::numbers::pi)};
  const double margin = cell.a + 3.0;
  cell.cx = uniform(rng, margin, size - margin);
  cell.cy = uniform(rng, margin, size - margin);

  BinaryMask ellipse_mask(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      ellipse_mask.at(x, y) = cell.contains(x + 0.5, y + 0.5) ? 1 : 0;
    }
  }
  const double total = static_cast<double>(count_set(ellipse_mask));

  // Scale the nucleus outline until its clipped area hits the drawn N:C target.
  const double nc_target = uniform(rng, morph.nc_lo, morph.nc_hi);
  const double nucleus_target = nc_target * total / (1.0 + nc_target);
  const NucleusShapeModel nucleus_model = draw_nucleus_model(attrs.nucleus_shape, rng);
  const double unit = cell.b;
  auto rasterize_nucleus = [&](double scale, BinaryMask& out) {
    std::size_t n = 0;
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const bool in = ellipse_mask.at(x, y) &&
                        nucleus_model.contains((x + 0.5 - cell.cx) / unit, (y + 0.5 - cell.cy) / unit,
                                               scale);
        out.at(x, y) = in ? 1 : 0;
        n += in;
      }
    }
    return n;
  };
  BinaryMask nucleus(size, size);
  double lo = 0.05, hi = 1.5;
  for (int it = 0; it < 30; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (static_cast<double>(rasterize_nucleus(mid, nucleus)) < nucleus_target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  rasterize_nucleus(0.5 * (lo + hi), nucleus);

  MaskPair masks{BinaryMask(size, size), nucleus};
  for (std::size_t i = 0; i < masks.cytoplasm.data.size(); ++i) {
    masks.cytoplasm.data[i] = (ellipse_mask.data[i] && !nucleus.data[i]) ? 1 : 0;
  }

  // Paint cytoplasm, granules and nucleus.
  const bool eosinophilic = attrs.cytoplasm_color == CytoplasmColor::kEosinophilic;
  const std::array<double, 3> cyto_rgb =
      eosinophilic ? std::array<double, 3>{240, 176, 150} : std::array<double, 3>{168, 172, 226};
  const std::array<double, 3> granule_rgb =
      eosinophilic ? std::array<double, 3>{214, 96, 64} : std::array<double, 3>{92, 58, 140};
  const double tint = uniform(rng, -8, 8);
  const bool granular = attrs.granularity == Granularity::kYes;
  std::bernoulli_distribution granule(0.35);
  std::normal_distribution<double> chromatin(0.0, morph.chromatin);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      std::uint8_t* p = img.pixel(x, y);
      if (masks.nucleus.at(x, y)) {
        const double t = chromatin(rng);
        p[0] = to_u8(morph.nucleus_rgb[0] + t + tint);
        p[1] = to_u8(morph.nucleus_rgb[1] + t);
        p[2] = to_u8(morph.nucleus_rgb[2] + t - tint);
      } else if (masks.cytoplasm.at(x, y)) {
        const bool g = granular && granule(rng);
        const auto& base = g ? granule_rgb : cyto_rgb;
        p[0] = to_u8(base[0] + morph.hue_shift + tint);
        p[1] = to_u8(base[1]);
        p[2] = to_u8(base[2] - morph.hue_shift - tint);
      }
    }
  }
  add_noise(img, spec.noise_level, rng);

  CellAnnotation ann;
  ann.cell_class = cell_class;
  ann.attributes = attrs;
  ann.box = mask_union_box(masks);
  ann.nc_ratio = compute_nc_ratio(masks);
  ann.masks = std::move(masks);

  LabeledImage out;
  out.pixels = std::move(img);
  out.annotations.push_back(std::move(ann));
  return out;
}

std::vector<LabeledImage> generate_dataset(const GeneratorSpec& spec) {
  spec.validate();
  std::vector<LabeledImage> out;
  out.reserve(static_cast<std::size_t>(spec.total()));
  std::uint64_t index = 0;
  for (CellClass c : all_cell_types()) {
    const auto it = spec.per_class_count.find(c);
    const int n = it == spec.per_class_count.end() ? 0 : it->second;
    for (int i = 0; i < n; ++i, ++index) {
      Rng rng = make_rng(spec.rng_seed, index);
      out.push_back(generate_cell(c, rng, spec));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

cv::Mat rgb_view(const RgbImage& img) {
  return cv::Mat(img.height, img.width, CV_8UC3, const_cast<std::uint8_t*>(img.rgb.data()));
}

cv::Mat mask_view(const BinaryMask& m) {
  return cv::Mat(m.height, m.width, CV_8UC1, const_cast<std::uint8_t*>(m.data.data()));
}

RgbImage to_rgb(const cv::Mat& m) {
  RgbImage out(m.cols, m.rows);
  const cv::Mat c = m.isContinuous() ? m : m.clone();
  std::copy(c.datastart, c.dataend, out.rgb.begin());
  return out;
}

BinaryMask to_mask(const cv::Mat& m) {
  BinaryMask out(m.cols, m.rows);
  const cv::Mat c = m.isContinuous() ? m : m.clone();
  std::copy(c.datastart, c.dataend, out.data.begin());
  return out;
}

bool touches_border(const BinaryMask& m) {
  for (int x = 0; x < m.width; ++x) {
    if (m.at(x, 0) || m.at(x, m.height - 1)) return true;
  }
  for (int y = 0; y < m.height; ++y) {
    if (m.at(0, y) || m.at(m.width - 1, y)) return true;
  }
  return false;
}

// Applies `pixel_op` to the raster and `mask_op` to every mask, then rebuilds
// each annotation's derived fields.
template <typename PixelOp, typename MaskOp>
LabeledImage transform(const LabeledImage& img, PixelOp pixel_op, MaskOp mask_op) {
  LabeledImage out;
  cv::Mat dst;
  pixel_op(rgb_view(img.pixels), dst);
  out.pixels = to_rgb(dst);
  for (const CellAnnotation& a : img.annotations) {
    CellAnnotation t = a;
    cv::Mat cyto, nuc;
    mask_op(mask_view(a.masks.cytoplasm), cyto);
    mask_op(mask_view(a.masks.nucleus), nuc);
    t.masks.cytoplasm = to_mask(cyto);
    t.masks.nucleus = to_mask(nuc);
    if (count_set(t.masks.cytoplasm) == 0 || count_set(t.masks.nucleus) == 0 ||
        touches_border(t.masks.cytoplasm) || touches_border(t.masks.nucleus)) {
      throw Error(ErrorKind::kDegenerateAugment, "cell leaves the frame");
    }
    t.box = mask_union_box(t.masks);
    t.nc_ratio = compute_nc_ratio(t.masks);
    out.annotations.push_back(std::move(t));
  }
  return out;
}

LabeledImage warp(const LabeledImage& img, const cv::Mat& affine) {
  const cv::Size sz(img.pixels.width, img.pixels.height);
  return transform(
      img,
      [&](const cv::Mat& src, cv::Mat& dst) {
        cv::warpAffine(src, dst, affine, sz, cv::INTER_LINEAR, cv::BORDER_REFLECT_101);
      },
      [&](const cv::Mat& src, cv::Mat& dst) {
        cv::warpAffine(src, dst, affine, sz, cv::INTER_NEAREST, cv::BORDER_CONSTANT, cv::Scalar(0));
      });
}

cv::Point2f image_center(const LabeledImage& img) {
  return {0.5f * static_cast<float>(img.pixels.width - 1),
          0.5f * static_cast<float>(img.pixels.height - 1)};
}

}  // namespace

LabeledImage hflip(const LabeledImage& img) {
  auto op = [](const cv::Mat& src, cv::Mat& dst) { cv::flip(src, dst, 1); };
  return transform(img, op, op);
}

LabeledImage vflip(const LabeledImage& img) {
  auto op = [](const cv::Mat& src, cv::Mat& dst) { cv::flip(src, dst, 0); };
  return transform(img, op, op);
}

LabeledImage rotate_by(const LabeledImage& img, double degrees) {
  const double turns = degrees / 90.0;
  if (turns == std::round(turns) && img.pixels.width == img.pixels.height) {
    const int q = ((static_cast<int>(std::lround(turns)) % 4) + 4) % 4;
    if (q == 0) return transform(img, [](const cv::Mat& s, cv::Mat& d) { d = s.clone(); },
                                 [](const cv::Mat& s, cv::Mat& d) { d = s.clone(); });
    // Positive angles are counter-clockwise, matching getRotationMatrix2D.
    const int code = q == 1 ? cv::ROTATE_90_COUNTERCLOCKWISE
                     : q == 2 ? cv::ROTATE_180
                              : cv::ROTATE_90_CLOCKWISE;
    auto op = [code](const cv::Mat& src, cv::Mat& dst) { cv::rotate(src, dst, code); };
    return transform(img, op, op);
  }
  return warp(img, cv::getRotationMatrix2D(image_center(img), degrees, 1.0));
}

LabeledImage scale_by(const LabeledImage& img, double factor) {
  if (!(factor > 0.0)) throw Error(ErrorKind::kInvalidArgument, "scale factor must be positive");
  return warp(img, cv::getRotationMatrix2D(image_center(img), 0.0, factor));
}

LabeledImage translate_by(const LabeledImage& img, int dx, int dy) {
  cv::Mat affine = (cv::Mat_<double>(2, 3) << 1, 0, dx, 0, 1, dy);
  return warp(img, affine);
}

LabeledImage augment(const LabeledImage& img, AugmentOp op, Rng& rng) {
  switch (op) {
    case AugmentOp::kHFlip: return hflip(img);
    case AugmentOp::kVFlip: return vflip(img);
    default: break;
  }
  const int size = std::min(img.pixels.width, img.pixels.height);
  for (int attempt = 0; attempt < 10; ++attempt) {
    try {
      switch (op) {
        case AugmentOp::kScale: return scale_by(img, uniform(rng, 0.85, 1.15));
        case AugmentOp::kRotate: return rotate_by(img, uniform(rng, -180.0, 180.0));
        case AugmentOp::kTranslate: {
          const int reach = std::max(1, static_cast<int>(0.15 * size));
          return translate_by(img, uniform_int(rng, -reach, reach), uniform_int(rng, -reach, reach));
        }
        default: break;
      }
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kDegenerateAugment) throw;
    }
  }
  throw Error(ErrorKind::kDegenerateAugment, "no valid transform after 10 draws");
}

}  // namespace wbc

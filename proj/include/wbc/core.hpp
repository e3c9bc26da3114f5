#pragma once

// Domain types shared by every module: cell classes, explanation attributes,
// boxes, rasters and the per-slot prediction record, plus the geometry and
// mask arithmetic built on them.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wbc/error.hpp"

namespace wbc {

// ---------------------------------------------------------------------------
// Cell classes

enum class CellClass : std::uint8_t {
  kNeutrophil = 0,
  kLymphocyte,
  kEosinophil,
  kMonocyte,
  kBasophil,
  kBandCell,
  kMetamyelocyte,
  kMyelocyte,
  kPromyelocyte,
  kBlastCell,
  kEmpty,  // no-object target of unmatched prediction slots
};

inline constexpr int kNumCellTypes = 10;              // real classes
inline constexpr int kNumClassScores = kNumCellTypes + 1;  // + EMPTY
inline constexpr int kEmptyIndex = kNumCellTypes;

constexpr int to_index(CellClass c) { return static_cast<int>(c); }
CellClass cell_class_from_index(int index);

std::string_view cell_class_name(CellClass c);
CellClass parse_cell_class(std::string_view name);
std::array<CellClass, kNumCellTypes> all_cell_types();

// ---------------------------------------------------------------------------
// Explanation attributes

enum class Granularity : std::uint8_t { kYes = 0, kNo };
enum class CytoplasmColor : std::uint8_t { kEosinophilic = 0, kBasophilic };
enum class NucleusShape : std::uint8_t { kHorseshoeKidney = 0, kBilobedMultilobed, kRoundOval };
enum class SizeWrtRbc : std::uint8_t { kLarger = 0, kNearlySimilar, kSmaller };

inline constexpr int kNumAttributes = 4;
inline constexpr std::array<int, kNumAttributes> kAttributeCardinality = {2, 2, 3, 3};
inline constexpr int kNumAttributeValues = 10;  // 2 + 2 + 3 + 3

struct ExplanationAttributes {
  Granularity granularity = Granularity::kNo;
  CytoplasmColor cytoplasm_color = CytoplasmColor::kBasophilic;
  NucleusShape nucleus_shape = NucleusShape::kRoundOval;
  SizeWrtRbc size_wrt_rbc = SizeWrtRbc::kNearlySimilar;

  // Value index of attribute k (0..3) within its own vocabulary.
  int value(int attribute) const;
  void set_value(int attribute, int value);

  static ExplanationAttributes from_values(const std::array<int, kNumAttributes>& values);
  std::array<int, kNumAttributes> values() const;

  friend bool operator==(const ExplanationAttributes&, const ExplanationAttributes&) = default;
};

std::string_view attribute_name(int attribute);
std::string_view attribute_value_name(int attribute, int value);
int parse_attribute_value(int attribute, std::string_view name);

// ---------------------------------------------------------------------------
// Boxes

// Raw corner-form box. No unit-square constraint; used for analytic geometry.
struct CornerBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const;
  friend bool operator==(const CornerBox&, const CornerBox&) = default;
};

// Normalized center-form box. Invariants: every field in [0,1], w > 0, h > 0
// and the corner form lies inside the unit square.
class BoundingBox {
 public:
  BoundingBox() = default;

  // Clamps the corner form to the unit square; throws InvalidBox when the
  // clamped box has no area.
  static BoundingBox from_center(double cx, double cy, double w, double h);
  static BoundingBox from_corners(const CornerBox& corners);

  double cx() const { return cx_; }
  double cy() const { return cy_; }
  double w() const { return w_; }
  double h() const { return h_; }
  std::array<double, 4> as_array() const { return {cx_, cy_, w_, h_}; }
  CornerBox corners() const { return center_to_corners(cx_, cy_, w_, h_); }

  static CornerBox center_to_corners(double cx, double cy, double w, double h);

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;

 private:
  BoundingBox(double cx, double cy, double w, double h) : cx_(cx), cy_(cy), w_(w), h_(h) {}

  double cx_ = 0.5, cy_ = 0.5, w_ = 1.0, h_ = 1.0;
};

// Inverse of center_to_corners; throws InvalidBox when x1 <= x0 or y1 <= y0.
std::array<double, 4> corners_to_center(const CornerBox& b);

double box_iou(const CornerBox& a, const CornerBox& b);
double box_iou(const BoundingBox& a, const BoundingBox& b);

// IoU minus the fraction of the smallest enclosing box not covered by the
// union. Range (-1, 1].
double generalized_iou(const CornerBox& a, const CornerBox& b);
double generalized_iou(const BoundingBox& a, const BoundingBox& b);

// ---------------------------------------------------------------------------
// Rasters

template <typename T>
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Raster() = default;
  Raster(int w, int h, T fill = T{})
      : width(w), height(h), data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  T& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  const T& at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  bool same_shape(int w, int h) const { return width == w && height == h; }

  friend bool operator==(const Raster&, const Raster&) = default;
};

using BinaryMask = Raster<std::uint8_t>;  // values in {0,1}
using SoftMask = Raster<float>;           // values in [0,1]

// Interleaved 8-bit RGB.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t* pixel(int x, int y) { return &rgb[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const std::uint8_t* pixel(int x, int y) const {
    return &rgb[(static_cast<std::size_t>(y) * width + x) * 3];
  }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

struct MaskPair {
  BinaryMask cytoplasm;
  BinaryMask nucleus;

  int width() const { return cytoplasm.width; }
  int height() const { return cytoplasm.height; }
  friend bool operator==(const MaskPair&, const MaskPair&) = default;
};

struct SoftMaskPair {
  SoftMask cytoplasm;
  SoftMask nucleus;
};

std::size_t count_set(const BinaryMask& mask);

// |nucleus| / |cytoplasm|. Throws EmptyCytoplasm when the cytoplasm raster is
// all zero.
double compute_nc_ratio(const MaskPair& masks);

// Pixel set iff value > threshold (strict).
BinaryMask binarize_mask(const SoftMask& soft, double threshold = 0.5);

// Tight normalized box around the union of both regions: pixel (x, y) covers
// [x/W, (x+1)/W) horizontally. Throws InvalidBox when both masks are empty.
BoundingBox mask_union_box(const MaskPair& masks);

// ---------------------------------------------------------------------------
// Annotations and predictions

struct CellAnnotation {
  CellClass cell_class = CellClass::kNeutrophil;
  BoundingBox box;
  MaskPair masks;
  ExplanationAttributes attributes;
  double nc_ratio = 0.0;

  // Throws when the class is EMPTY, nc_ratio disagrees with the masks or the
  // box does not contain the mask union (2-pixel slack per side).
  void validate(int image_width, int image_height) const;
};

using AttributeScores = std::array<std::vector<double>, kNumAttributes>;

struct SlotPrediction {
  std::array<double, kNumClassScores> class_scores{};  // unnormalized
  BoundingBox box;
  std::optional<SoftMaskPair> soft_masks;  // absent when masks were not decoded
  AttributeScores attribute_scores;        // unnormalized, lengths 2,2,3,3
};

struct PredictionSet {
  std::vector<SlotPrediction> slots;

  std::size_t num_slots() const { return slots.size(); }
};

// A decoded slot: the per-cell report (class plus five explanations).
struct CellPrediction {
  int slot = -1;
  CellClass cell_class = CellClass::kEmpty;
  double confidence = 0.0;  // best non-EMPTY class probability
  std::array<double, kNumClassScores> class_probs{};
  BoundingBox box;
  MaskPair masks;                  // binarized
  std::optional<double> nc_ratio;  // absent when the predicted cytoplasm is empty
  ExplanationAttributes attributes;
  AttributeScores attribute_probs;  // softmax of the attribute scores
};

// Builds the report for one slot; `mask_threshold` binarizes its soft masks.
CellPrediction decode_slot(const SlotPrediction& slot, int slot_index, double mask_threshold = 0.5);

struct MatchResult {
  // sigma[i] is the slot assigned to ground truth i.
  std::vector<int> sigma;
  std::vector<int> unmatched_slots;

  // Throws InvalidArgument when sigma is not injective into [0, num_slots) or
  // unmatched_slots is not its complement.
  void validate(int num_slots) const;
};

std::vector<double> softmax(std::span<const double> scores);
int argmax(std::span<const double> values);

}  // namespace wbc

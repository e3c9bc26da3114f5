#include "wbc/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace wbc {

std::string_view error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kEmptyCytoplasm: return "EmptyCytoplasm";
    case ErrorKind::kInvalidBox: return "InvalidBox";
    case ErrorKind::kDimensionMismatch: return "DimensionMismatch";
    case ErrorKind::kDegenerateAugment: return "DegenerateAugment";
    case ErrorKind::kSchemaMismatch: return "SchemaMismatch";
    case ErrorKind::kMissingFile: return "MissingFile";
    case ErrorKind::kCorruptMask: return "CorruptMask";
    case ErrorKind::kClassTooSmall: return "ClassTooSmall";
    case ErrorKind::kNonFiniteCost: return "NonFiniteCost";
    case ErrorKind::kTooManyObjects: return "TooManyObjects";
    case ErrorKind::kInvalidConfig: return "InvalidConfig";
    case ErrorKind::kDimensionError: return "DimensionError";
    case ErrorKind::kNoDetection: return "NoDetection";
    case ErrorKind::kEmptyInput: return "EmptyInput";
    case ErrorKind::kSingleClassLabels: return "SingleClassLabels";
    case ErrorKind::kVocabularyMismatch: return "VocabularyMismatch";
    case ErrorKind::kDiverged: return "Diverged";
    case ErrorKind::kInvalidArgument: return "InvalidArgument";
    case ErrorKind::kIo: return "Io";
  }
  return "Unknown";
}

namespace {

constexpr std::array<std::string_view, kNumClassScores> kClassNames = {
    "neutrophil",   "lymphocyte", "eosinophil", "monocyte",   "basophil", "band_cell",
    "metamyelocyte", "myelocyte", "promyelocyte", "blast_cell", "empty"};

constexpr std::array<std::string_view, kNumAttributes> kAttributeNames = {
    "granularity", "cytoplasm_color", "nucleus_shape", "size_wrt_rbc"};

const std::array<std::vector<std::string_view>, kNumAttributes> kAttributeValueNames = {{
    {"yes", "no"},
    {"eosinophilic", "basophilic"},
    {"horseshoe_kidney", "bilobed_multilobed", "round_oval"},
    {"larger", "nearly_similar", "smaller"},
}};

void check_attribute(int attribute) {
  if (attribute < 0 || attribute >= kNumAttributes) {
    throw Error(ErrorKind::kInvalidArgument, "attribute index " + std::to_string(attribute));
  }
}

}  // namespace

CellClass cell_class_from_index(int index) {
  if (index < 0 || index >= kNumClassScores) {
    throw Error(ErrorKind::kInvalidArgument, "class index " + std::to_string(index));
  }
  return static_cast<CellClass>(index);
}

std::string_view cell_class_name(CellClass c) { return kClassNames[to_index(c)]; }

CellClass parse_cell_class(std::string_view name) {
  for (int i = 0; i < kNumClassScores; ++i) {
    if (kClassNames[i] == name) return static_cast<CellClass>(i);
  }
  throw Error(ErrorKind::kSchemaMismatch, "unknown cell class '" + std::string(name) + "'");
}

std::array<CellClass, kNumCellTypes> all_cell_types() {
  std::array<CellClass, kNumCellTypes> out{};
  for (int i = 0; i < kNumCellTypes; ++i) out[i] = static_cast<CellClass>(i);
  return out;
}

int ExplanationAttributes::value(int attribute) const {
  switch (attribute) {
    case 0: return static_cast<int>(granularity);
    case 1: return static_cast<int>(cytoplasm_color);
    case 2: return static_cast<int>(nucleus_shape);
    case 3: return static_cast<int>(size_wrt_rbc);
    default: check_attribute(attribute);
  }
  return 0;
}

void ExplanationAttributes::set_value(int attribute, int value) {
  check_attribute(attribute);
  if (value < 0 || value >= kAttributeCardinality[attribute]) {
    throw Error(ErrorKind::kInvalidArgument, "attribute value " + std::to_string(value));
  }
  switch (attribute) {
    case 0: granularity = static_cast<Granularity>(value); break;
    case 1: cytoplasm_color = static_cast<CytoplasmColor>(value); break;
    case 2: nucleus_shape = static_cast<NucleusShape>(value); break;
    default: size_wrt_rbc = static_cast<SizeWrtRbc>(value); break;
  }
}

ExplanationAttributes ExplanationAttributes::from_values(
    const std::array<int, kNumAttributes>& values) {
  ExplanationAttributes a;
  for (int k = 0; k < kNumAttributes; ++k) a.set_value(k, values[k]);
  return a;
}

std::array<int, kNumAttributes> ExplanationAttributes::values() const {
  return {value(0), value(1), value(2), value(3)};
}

std::string_view attribute_name(int attribute) {
  check_attribute(attribute);
  return kAttributeNames[attribute];
}

std::string_view attribute_value_name(int attribute, int value) {
  check_attribute(attribute);
  const auto& names = kAttributeValueNames[attribute];
  if (value < 0 || value >= static_cast<int>(names.size())) {
    throw Error(ErrorKind::kInvalidArgument, "attribute value " + std::to_string(value));
  }
  return names[value];
}

int parse_attribute_value(int attribute, std::string_view name) {
  check_attribute(attribute);
  const auto& names = kAttributeValueNames[attribute];
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<int>(i);
  }
  throw Error(ErrorKind::kSchemaMismatch, "unknown value '" + std::string(name) + "' for " +
                                              std::string(kAttributeNames[attribute]));
}

// ---------------------------------------------------------------------------

double CornerBox::area() const { return std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0); }

CornerBox BoundingBox::center_to_corners(double cx, double cy, double w, double h) {
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

std::array<double, 4> corners_to_center(const CornerBox& b) {
  if (!(b.x1 > b.x0) || !(b.y1 > b.y0)) {
    throw Error(ErrorKind::kInvalidBox, "corner box has no extent");
  }
  return {0.5 * (b.x0 + b.x1), 0.5 * (b.y0 + b.y1), b.x1 - b.x0, b.y1 - b.y0};
}

BoundingBox BoundingBox::from_center(double cx, double cy, double w, double h) {
  if (!std::isfinite(cx) || !std::isfinite(cy) || !std::isfinite(w) || !std::isfinite(h)) {
    throw Error(ErrorKind::kInvalidBox, "non-finite box");
  }
  CornerBox c = center_to_corners(cx, cy, w, h);
  if (c.x0 >= 0.0 && c.y0 >= 0.0 && c.x1 <= 1.0 && c.y1 <= 1.0 && w > 0.0 && h > 0.0) {
    return BoundingBox(cx, cy, w, h);
  }
  c.x0 = std::clamp(c.x0, 0.0, 1.0);
  c.y0 = std::clamp(c.y0, 0.0, 1.0);
  c.x1 = std::clamp(c.x1, 0.0, 1.0);
  c.y1 = std::clamp(c.y1, 0.0, 1.0);
  const auto center = corners_to_center(c);
  return BoundingBox(center[0], center[1], center[2], center[3]);
}

BoundingBox BoundingBox::from_corners(const CornerBox& corners) {
  const auto center = corners_to_center(corners);
  return from_center(center[0], center[1], center[2], center[3]);
}

namespace {

double intersection_area(const CornerBox& a, const CornerBox& b) {
  const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  return (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
}

}  // namespace

double box_iou(const CornerBox& a, const CornerBox& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double box_iou(const BoundingBox& a, const BoundingBox& b) {
  return box_iou(a.corners(), b.corners());
}

double generalized_iou(const CornerBox& a, const CornerBox& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  const CornerBox hull{std::min(a.x0, b.x0), std::min(a.y0, b.y0), std::max(a.x1, b.x1),
                       std::max(a.y1, b.y1)};
  const double enclosing = hull.area();
  if (uni <= 0.0 || enclosing <= 0.0) return 0.0;
  return inter / uni - (enclosing - uni) / enclosing;
}

double generalized_iou(const BoundingBox& a, const BoundingBox& b) {
  return generalized_iou(a.corners(), b.corners());
}

// ---------------------------------------------------------------------------

std::size_t count_set(const BinaryMask& mask) {
  return static_cast<std::size_t>(
      std::count_if(mask.data.begin(), mask.data.end(), [](std::uint8_t v) { return v != 0; }));
}

double compute_nc_ratio(const MaskPair& masks) {
  const std::size_t cyto = count_set(masks.cytoplasm);
  if (cyto == 0) throw Error(ErrorKind::kEmptyCytoplasm, "cytoplasm raster has no set pixel");
  return static_cast<double>(count_set(masks.nucleus)) / static_cast<double>(cyto);
}

BinaryMask binarize_mask(const SoftMask& soft, double threshold) {
  BinaryMask out(soft.width, soft.height);
  for (std::size_t i = 0; i < soft.data.size(); ++i) {
    out.data[i] = soft.data[i] > threshold ? 1 : 0;
  }
  return out;
}

BoundingBox mask_union_box(const MaskPair& masks) {
  const int w = masks.cytoplasm.width;
  const int h = masks.cytoplasm.height;
  if (!masks.nucleus.same_shape(w, h)) {
    throw Error(ErrorKind::kDimensionMismatch, "mask pair dimensions differ");
  }
  int min_x = w, min_y = h, max_x = -1, max_y = -1;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (masks.cytoplasm.at(x, y) || masks.nucleus.at(x, y)) {
        min_x = std::min(min_x, x);
        max_x = std::max(max_x, x);
        min_y = std::min(min_y, y);
        max_y = std::max(max_y, y);
      }
    }
  }
  if (max_x < 0) throw Error(ErrorKind::kInvalidBox, "both masks are empty");
  return BoundingBox::from_corners({static_cast<double>(min_x) / w, static_cast<double>(min_y) / h,
                                    static_cast<double>(max_x + 1) / w,
                                    static_cast<double>(max_y + 1) / h});
}

void CellAnnotation::validate(int image_width, int image_height) const {
  if (cell_class == CellClass::kEmpty) {
    throw Error(ErrorKind::kInvalidArgument, "EMPTY is not a ground-truth label");
  }
  if (!masks.cytoplasm.same_shape(image_width, image_height) ||
      !masks.nucleus.same_shape(image_width, image_height)) {
    throw Error(ErrorKind::kCorruptMask, "mask dimensions disagree with the image");
  }
  if (count_set(masks.cytoplasm) > 0) {
    const double expected = compute_nc_ratio(masks);
    if (std::abs(expected - nc_ratio) > 1e-9) {
      throw Error(ErrorKind::kCorruptMask, "stored nc_ratio " + std::to_string(nc_ratio) +
                                               " disagrees with masks (" +
                                               std::to_string(expected) + ")");
    }
  }
  const BoundingBox tight = mask_union_box(masks);
  const CornerBox t = tight.corners();
  const CornerBox b = box.corners();
  const double sx = 2.0 / image_width + 1e-9;
  const double sy = 2.0 / image_height + 1e-9;
  const bool contains = b.x0 <= t.x0 + 1e-9 && b.y0 <= t.y0 + 1e-9 && b.x1 >= t.x1 - 1e-9 &&
                        b.y1 >= t.y1 - 1e-9;
  const bool tight_enough = t.x0 - b.x0 <= sx && t.y0 - b.y0 <= sy && b.x1 - t.x1 <= sx &&
                            b.y1 - t.y1 <= sy;
  if (!contains || !tight_enough) {
    throw Error(ErrorKind::kInvalidBox, "box does not tightly contain the mask union");
  }
}

void MatchResult::validate(int num_slots) const {
  std::vector<char> used(static_cast<std::size_t>(num_slots), 0);
  for (int s : sigma) {
    if (s < 0 || s >= num_slots || used[s]) {
      throw Error(ErrorKind::kInvalidArgument, "assignment is not injective");
    }
    used[s] = 1;
  }
  if (sigma.size() + unmatched_slots.size() != static_cast<std::size_t>(num_slots)) {
    throw Error(ErrorKind::kInvalidArgument, "matched and unmatched slots do not cover N");
  }
  for (int s : unmatched_slots) {
    if (s < 0 || s >= num_slots || used[s]) {
      throw Error(ErrorKind::kInvalidArgument, "unmatched slot overlaps the assignment");
    }
    used[s] = 1;
  }
}

std::vector<double> softmax(std::span<const double> scores) {
  std::vector<double> out(scores.size());
  if (scores.empty()) return out;
  const double m = *std::max_element(scores.begin(), scores.end());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - m);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

int argmax(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorKind::kEmptyInput, "argmax of empty range");
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

}  // namespace wbc

namespace wbc {

CellPrediction decode_slot(const SlotPrediction& slot, int slot_index, double mask_threshold) {
  CellPrediction p;
  p.slot = slot_index;
  const std::vector<double> probs = softmax(slot.class_scores);
  std::copy(probs.begin(), probs.end(), p.class_probs.begin());
  const int best = argmax(std::span<const double>(probs.data(), kNumCellTypes));
  p.cell_class = cell_class_from_index(best);
  p.confidence = probs[best];
  p.box = slot.box;
  if (slot.soft_masks) {
    p.masks.cytoplasm = binarize_mask(slot.soft_masks->cytoplasm, mask_threshold);
    p.masks.nucleus = binarize_mask(slot.soft_masks->nucleus, mask_threshold);
    if (count_set(p.masks.cytoplasm) > 0) p.nc_ratio = compute_nc_ratio(p.masks);
  }
  for (int k = 0; k < kNumAttributes; ++k) {
    p.attribute_probs[k] = softmax(slot.attribute_scores[k]);
    p.attributes.set_value(k, argmax(p.attribute_probs[k]));
  }
  return p;
}

}  // namespace wbc

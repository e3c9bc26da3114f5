#pragma once

// Procedural blood-smear generator and the label-preserving augmentations.
//
// Every image shows a handful of pale red blood cells and exactly one white
// cell whose morphology is driven by a class -> attribute rule table. Labels
// (attributes, masks, box, N:C) are derived from the render parameters and
// the rasterized masks, never re-estimated from pixels.

#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <utility>
#include <vector>

#include "wbc/core.hpp"

namespace wbc {

using Rng = std::mt19937_64;

// Independent stream for item `index` of a run seeded with `seed`.
Rng make_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t stream = 0);

struct GeneratorSpec {
  int image_size = 64;
  std::map<CellClass, int> per_class_count;
  std::uint64_t rng_seed = 0;
  double noise_level = 0.2;
  std::pair<int, int> rbc_count_range = {3, 6};

  static GeneratorSpec uniform(int per_class, std::uint64_t seed);
  void validate() const;
  int total() const;
};

struct LabeledImage {
  RgbImage pixels;
  std::vector<CellAnnotation> annotations;
};

// Synthetic-world morphology of each class.
ExplanationAttributes class_attributes(CellClass c);

// Half-open band [lo, hi) the rendered N:C target is drawn from. Bands of
// different classes are disjoint.
std::pair<double, double> nc_band(CellClass c);

// Red-cell reference diameter in pixels for a given image size.
double rbc_diameter(int image_size);

LabeledImage generate_cell(CellClass cell_class, Rng& rng, const GeneratorSpec& spec = {});

// Images are ordered class by class (enum order); image i is rendered from
// make_rng(spec.rng_seed, i).
std::vector<LabeledImage> generate_dataset(const GeneratorSpec& spec);

// ---------------------------------------------------------------------------
// Augmentation

enum class AugmentOp { kScale, kRotate, kTranslate, kHFlip, kVFlip };

// Draws the op parameters from rng and applies them. Ops that can push the
// cell out of frame are resampled up to 10 times before DegenerateAugment.
LabeledImage augment(const LabeledImage& img, AugmentOp op, Rng& rng);

// Deterministic building blocks. Masks use nearest-neighbour resampling and
// pixels bilinear; multiples of 90 degrees rotate losslessly. Each throws
// DegenerateAugment when the cell leaves the frame.
LabeledImage hflip(const LabeledImage& img);
LabeledImage vflip(const LabeledImage& img);
LabeledImage rotate_by(const LabeledImage& img, double degrees);
LabeledImage scale_by(const LabeledImage& img, double factor);
LabeledImage translate_by(const LabeledImage& img, int dx, int dy);

}  // namespace wbc

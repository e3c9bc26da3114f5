#pragma once

// Random loss fixtures shared by the unit tests and the acceptance run.

#include <random>
#include <vector>

#include "wbc/core.hpp"

namespace wbc {

// Fixed 1-gt / 3-slot fixture with every field random.
struct Fixture {
  PredictionSet preds;
  std::vector<CellAnnotation> gts;
  MatchResult match;
};

inline Fixture random_fixture(std::mt19937_64& rng, int n_slots = 3) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.5);
  Fixture f;
  const int side = 6;
  for (int j = 0; j < n_slots; ++j) {
    SlotPrediction s;
    for (auto& v : s.class_scores) v = z(rng);
    s.box = BoundingBox::from_center(0.3 + 0.4 * u(rng), 0.3 + 0.4 * u(rng), 0.1 + 0.3 * u(rng), 0.1 + 0.3 * u(rng));
    for (int k = 0; k < kNumAttributes; ++k) {
      s.attribute_scores[k].resize(kAttributeCardinality[k]);
      for (auto& v : s.attribute_scores[k]) v = z(rng);
    }
    SoftMaskPair m{SoftMask(side, side), SoftMask(side, side)};
    for (auto& v : m.cytoplasm.data) v = static_cast<float>(u(rng));
    for (auto& v : m.nucleus.data) v = static_cast<float>(u(rng));
    s.soft_masks = m;
    f.preds.slots.push_back(s);
  }
  CellAnnotation a;
  a.cell_class = cell_class_from_index(static_cast<int>(rng() % 10));
  a.masks = {BinaryMask(side, side), BinaryMask(side, side)};
  for (std::size_t i = 0; i < a.masks.cytoplasm.size(); ++i) {
    const double r = u(rng);
    a.masks.cytoplasm.data[i] = r < 0.4;
    a.masks.nucleus.data[i] = r > 0.8;
  }
  a.box = BoundingBox::from_center(0.3 + 0.4 * u(rng), 0.3 + 0.4 * u(rng), 0.1 + 0.3 * u(rng), 0.1 + 0.3 * u(rng));
  a.attributes = ExplanationAttributes::from_values(
      {static_cast<int>(rng() % 2), static_cast<int>(rng() % 2), static_cast<int>(rng() % 3), static_cast<int>(rng() % 3)});
  f.gts = {a};
  const int slot = static_cast<int>(rng() % n_slots);
  f.match.sigma = {slot};
  for (int j = 0; j < n_slots; ++j)
    if (j != slot) f.match.unmatched_slots.push_back(j);
  return f;
}

}  // namespace wbc

#pragma once

#include <array>

#include "wbc/core.hpp"

namespace wbc {

// Scalar weights of the composite objective and of the matching cost.
struct LossWeights {
  double w_giou = 2.0;
  double w_l1 = 5.0;
  double w_dice = 1.0;
  double w_fl = 1.0;
  std::array<double, kNumAttributes> w_attr = {1.0, 1.0, 1.0, 1.0};
  double empty_class_weight = 0.1;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;

  // Throws InvalidConfig on negative or non-finite weights.
  void validate() const;
};

}  // namespace wbc

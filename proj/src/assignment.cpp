#include "wbc/assignment.hpp"

#include <cmath>
#include <limits>

namespace wbc {

void LossWeights::validate() const {
  auto check = [](double v, const char* name) {
    if (!std::isfinite(v) || v < 0.0) {
      throw Error(ErrorKind::kInvalidConfig, std::string(name) + " must be finite and >= 0");
    }
  };
  check(w_giou, "w_giou");
  check(w_l1, "w_l1");
  check(w_dice, "w_dice");
  check(w_fl, "w_fl");
  for (double w : w_attr) check(w, "w_attr");
  check(empty_class_weight, "empty_class_weight");
  if (!(empty_class_weight > 0.0)) {
    throw Error(ErrorKind::kInvalidConfig, "empty_class_weight must be positive");
  }
  check(focal_gamma, "focal_gamma");
  if (!std::isfinite(focal_alpha) || focal_alpha < 0.0 || focal_alpha > 1.0) {
    throw Error(ErrorKind::kInvalidConfig, "focal_alpha must lie in [0,1]");
  }
}

CostMatrix::CostMatrix(int rows, int cols, double fill)
    : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {
  if (rows < 0 || cols < 0) throw Error(ErrorKind::kInvalidArgument, "negative matrix size");
}

CostMatrix::CostMatrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(static_cast<int>(rows.size())), cols_(rows.size() ? static_cast<int>(rows.begin()->size()) : 0) {
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != cols_) {
      throw Error(ErrorKind::kInvalidArgument, "ragged cost matrix");
    }
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

double matching_cost(const CellAnnotation& gt, const SlotPrediction& slot,
                     const LossWeights& weights) {
  const std::vector<double> prob = softmax(slot.class_scores);
  const auto a = gt.box.as_array();
  const auto b = slot.box.as_array();
  double l1 = 0.0;
  for (int i = 0; i < 4; ++i) l1 += std::abs(a[i] - b[i]);
  return -prob[to_index(gt.cell_class)] + weights.w_l1 * l1 +
         weights.w_giou * (1.0 - generalized_iou(gt.box, slot.box));
}

MatchResult hungarian(const CostMatrix& costs) {
  const int n = costs.rows();
  const int m = costs.cols();
  if (n > m) throw Error(ErrorKind::kInvalidArgument, "more rows than columns");
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      if (!std::isfinite(costs(i, j))) {
        throw Error(ErrorKind::kNonFiniteCost,
                    "cost(" + std::to_string(i) + "," + std::to_string(j) + ") is not finite");
      }
    }
  }

  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is the virtual source.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> owner(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    owner[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = owner[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = costs(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const int j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  MatchResult result;
  result.sigma.assign(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j) {
    if (owner[j] != 0) {
      result.sigma[owner[j] - 1] = j - 1;
    } else {
      result.unmatched_slots.push_back(j - 1);
    }
  }
  return result;
}

double assignment_cost(const CostMatrix& costs, const MatchResult& match) {
  double total = 0.0;
  for (std::size_t i = 0; i < match.sigma.size(); ++i) {
    total += costs(static_cast<int>(i), match.sigma[i]);
  }
  return total;
}

MatchResult match_sets(const std::vector<CellAnnotation>& gts, const PredictionSet& preds,
                       const LossWeights& weights) {
  const int n = static_cast<int>(preds.num_slots());
  if (static_cast<int>(gts.size()) > n) {
    throw Error(ErrorKind::kTooManyObjects, std::to_string(gts.size()) + " objects for " +
                                                std::to_string(n) + " slots");
  }
  CostMatrix costs(static_cast<int>(gts.size()), n);
  for (int i = 0; i < costs.rows(); ++i) {
    for (int j = 0; j < n; ++j) costs(i, j) = matching_cost(gts[i], preds.slots[j], weights);
  }
  return hungarian(costs);
}

}  // namespace wbc

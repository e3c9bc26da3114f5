#pragma once

// Optimal bipartite matching between ground-truth cells (rows) and
// prediction slots (columns).

#include <vector>

#include "wbc/core.hpp"
#include "wbc/loss_weights.hpp"

namespace wbc {

// Dense row-major M x N cost matrix, M <= N, all entries finite.
class CostMatrix {
 public:
  CostMatrix(int rows, int cols, double fill = 0.0);
  CostMatrix(std::initializer_list<std::initializer_list<double>> rows);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

 private:
  int rows_;
  int cols_;
  std::vector<double> data_;
};

// -p(c_i) + w_l1 * |b - b_hat|_1 + w_giou * (1 - GIoU(b, b_hat)), with p the
// softmax probability of the ground-truth class.
double matching_cost(const CellAnnotation& gt, const SlotPrediction& slot, const LossWeights& weights);

// Minimum-cost injective assignment of rows to columns (shortest augmenting
// paths with potentials, O(M^2 N)). Columns are scanned in increasing order
// and only strict improvements replace a candidate, so ties resolve toward
// the lower slot index. Throws NonFiniteCost, InvalidArgument if M > N.
MatchResult hungarian(const CostMatrix& costs);

double assignment_cost(const CostMatrix& costs, const MatchResult& match);

// Throws TooManyObjects when there are more ground truths than slots.
MatchResult match_sets(const std::vector<CellAnnotation>& gts, const PredictionSet& preds,
                       const LossWeights& weights);

}  // namespace wbc

#pragma once

// Class-conditional explanation distributions Pr(attribute | class), estimated
// once from ground truth (true class, true attributes) and once from the model
// (predicted class, predicted attributes), and their comparison by total
// variation distance. Also the correct/misclassified AUC split analysis.

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wbc/core.hpp"
#include "wbc/metrics.hpp"
#include "wbc/synthcell.hpp"

namespace wbc {

inline constexpr double kDefaultFaithfulnessTau = 0.15;

class AssociationTable {
 public:
  using Row = std::array<std::vector<double>, kNumAttributes>;

  // Empirical frequencies over the given (class, attributes) pairs. Throws
  // EmptyInput, DimensionMismatch.
  static AssociationTable from_pairs(std::span<const CellClass> classes,
                                     std::span<const ExplanationAttributes> attributes);

  bool present(CellClass c) const { return rows_[index(c)].has_value(); }
  // Distribution over the values of `attribute` for class c; throws
  // InvalidArgument when c is absent.
  const std::vector<double>& distribution(CellClass c, int attribute) const;
  long support(CellClass c) const { return support_[index(c)]; }

  // For hand-built tables. Each `row` vector must be a distribution
  // (InvalidArgument otherwise); lengths are checked when tables are compared.
  void set_row(CellClass c, Row row, long support);

 private:
  static std::size_t index(CellClass c);

  std::array<std::optional<Row>, kNumCellTypes> rows_;
  std::array<long, kNumCellTypes> support_{};
};

// Uses every annotation of every image.
AssociationTable ground_truth_association(const std::vector<LabeledImage>& dataset);
// predictions[i] belongs to dataset[i]; conditions on the predicted class.
AssociationTable model_association(std::span<const CellPrediction> predictions,
                                   const std::vector<LabeledImage>& dataset);

// 0.5 * sum |p - q|. VocabularyMismatch when lengths differ.
double total_variation(std::span<const double> p, std::span<const double> q);

struct AssociationGap {
  CellClass cell_class = CellClass::kNeutrophil;
  int attribute = 0;
  double tv = 0.0;
  std::vector<double> model;
  std::vector<double> ground_truth;
};

struct FaithfulnessReport {
  double tau = kDefaultFaithfulnessTau;
  std::vector<AssociationGap> gaps;    // classes populated in both tables
  std::vector<CellClass> excluded;     // absent from either table
  bool faithful = true;                // every gap tv <= tau

  double max_tv() const;
  std::string to_text() const;
};

FaithfulnessReport compare_associations(const AssociationTable& model, const AssociationTable& truth,
                                        double tau = kDefaultFaithfulnessTau);

// AUC per attribute value on the all / correct / misclassified splits;
// entries without both labels stay absent.
AucTable independence_analysis(std::span<const AttributeScores> probs,
                               std::span<const ExplanationAttributes> truth,
                               std::span<const bool> correct);
AucTable independence_analysis(std::span<const CellPrediction> predictions,
                               const std::vector<LabeledImage>& dataset);

// Flat text listing of an AUC table, one key per (value, split).
std::string auc_table_text(const AucTable& table);

}  // namespace wbc

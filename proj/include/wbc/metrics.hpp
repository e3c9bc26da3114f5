#pragma once

// Evaluation quantities: classification scores, box Jaccard, instance Dice,
// attribute accuracy, N:C error and one-vs-rest ROC/AUC per attribute value.
// MetricsReport bundles them and round-trips through a flat key=value text
// record.

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wbc/core.hpp"

namespace wbc {

using ConfusionMatrix = std::array<std::array<long, kNumCellTypes>, kNumCellTypes>;  // [truth][pred]

struct ClassificationMetrics {
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_f1 = 0.0;
  ConfusionMatrix confusion{};
};

// Macro averages run over the classes present in `truth`. A class that is
// never predicted has precision 0. Throws EmptyInput, DimensionMismatch, and
// InvalidArgument for EMPTY labels.
ClassificationMetrics classification_metrics(std::span<const CellClass> pred,
                                             std::span<const CellClass> truth);

double mean_box_jaccard(std::span<const BoundingBox> pred, std::span<const BoundingBox> gt);

// Unsmoothed 2|X n Y| / (|X| + |Y|); two empty masks score 1.
double dice_coefficient(const BinaryMask& pred, const BinaryMask& gt);
// Mean over the cytoplasm and nucleus channels.
double instance_dice(const MaskPair& pred, const MaskPair& gt);
double mean_instance_dice(std::span<const MaskPair> pred, std::span<const MaskPair> gt);

double nc_mse(std::span<const double> pred, std::span<const double> gt);
// Grouped by the class of each pair; classes without samples are omitted.
std::map<CellClass, double> classwise_nc_mse(std::span<const double> pred, std::span<const double> gt,
                                             std::span<const CellClass> classes);

std::array<double, kNumAttributes> attribute_accuracy(std::span<const ExplanationAttributes> pred,
                                                      std::span<const ExplanationAttributes> gt);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // score >= threshold counts as positive
};

struct RocCurve {
  std::vector<RocPoint> points;  // from (0,0) to (1,1)
  double auc = 0.0;
};

// Thresholds at every distinct score, tied scores crossing together; AUC by
// trapezoids. Throws SingleClassLabels unless both labels occur.
RocCurve roc_auc(std::span<const double> scores, std::span<const int> labels);

// ---------------------------------------------------------------------------
// AUC table over the ten attribute values and three sample splits.

enum class AucSplit { kAll = 0, kCorrect, kMisclassified };
inline constexpr int kNumAucSplits = 3;
std::string_view auc_split_name(AucSplit split);

// Flat index 0..9 of (attribute, value); inverse below.
int attribute_value_index(int attribute, int value);
std::pair<int, int> attribute_value_from_index(int flat);

struct AucTable {
  // nullopt where the split is empty or one-vs-rest labels are single-class.
  std::array<std::array<std::optional<double>, kNumAucSplits>, kNumAttributeValues> values;

  std::optional<double> at(int attribute, int value, AucSplit split) const {
    return values[static_cast<std::size_t>(attribute_value_index(attribute, value))]
                 [static_cast<std::size_t>(split)];
  }
  friend bool operator==(const AucTable&, const AucTable&) = default;
};

using RocCurves = std::array<std::array<std::optional<RocCurve>, kNumAucSplits>, kNumAttributeValues>;

// One-vs-rest curves: label = (true value == v), score = probability of v.
RocCurves attribute_roc_curves(std::span<const AttributeScores> probs,
                               std::span<const ExplanationAttributes> truth,
                               std::span<const bool> correct);
AucTable auc_table(const RocCurves& curves);

// ---------------------------------------------------------------------------
// Report

// One evaluated single-cell image.
struct EvalSample {
  CellClass true_class = CellClass::kNeutrophil;
  CellClass pred_class = CellClass::kNeutrophil;
  BoundingBox gt_box;
  BoundingBox pred_box;
  MaskPair gt_masks;
  MaskPair pred_masks;
  ExplanationAttributes gt_attributes;
  ExplanationAttributes pred_attributes;
  double gt_nc = 0.0;
  std::optional<double> pred_nc;  // absent when the predicted cytoplasm is empty
  AttributeScores attribute_probs;
};

struct MetricsReport {
  long num_samples = 0;
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_f1 = 0.0;
  double mean_jaccard = 0.0;
  double mean_dice = 0.0;
  std::array<double, kNumAttributes> attribute_accuracy{};
  double nc_mse = 0.0;                       // raw ratios
  std::optional<double> nc_mse_normalized;   // nc_mse / Var(gt); absent when Var(gt) = 0
  long nc_undefined = 0;                     // predictions with empty cytoplasm, scored as N:C 0
  std::map<CellClass, double> classwise_nc_mse;
  AucTable auc;
  ConfusionMatrix confusion{};

  // Diagonal over row sum; nullopt for classes without test samples.
  std::optional<double> class_accuracy(CellClass c) const;

  std::string to_text() const;
  // Throws SchemaMismatch on malformed or incomplete records.
  static MetricsReport parse(const std::string& text);

  // Scalar fields in a fixed order, used for aggregation and tables.
  std::vector<std::pair<std::string, double>> scalars() const;
};

MetricsReport build_report(std::span<const EvalSample> samples);

struct MetricSummary {
  std::string name;
  double mean = 0.0;
  double stdev = 0.0;  // sample standard deviation, 0 for a single report
};

// Aggregates every scalar field across reports. Throws EmptyInput.
std::vector<MetricSummary> summarize(std::span<const MetricsReport> reports);

// Shortest text that parses back to the same double.
std::string format_double(double v);

}  // namespace wbc

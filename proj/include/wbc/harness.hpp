#pragma once

// Training, evaluation, cross-validation, the explanation-depth variant
// study and the finite-difference gradient check.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "wbc/dataio.hpp"
#include "wbc/loss_weights.hpp"
#include "wbc/losses.hpp"
#include "wbc/metrics.hpp"
#include "wbc/model.hpp"
#include "wbc/synthcell.hpp"

namespace wbc {

enum class OptimizerKind { kAdamW };

struct AugmentationConfig {
  bool hflip = true;
  bool vflip = true;
  bool rotate = true;
  bool scale = false;
  bool translate = false;
  double probability = 0.5;  // per enabled op, per item, per epoch
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double lr_main = 5e-4;
  double lr_backbone = 5e-4;
  double weight_decay = 1e-4;
  OptimizerKind optimizer = OptimizerKind::kAdamW;
  double grad_clip = 0.1;  // max global gradient norm; 0 disables
  AugmentationConfig augmentation;
  double validation_fraction = 0.15;
  std::uint64_t seed = 0;
  LossWeights loss;
  ModelConfig model;

  // Desk-scale defaults for 64x64 synthetic images.
  static TrainConfig toy();
  // 200 epochs, batch 32, lr 1e-4 / 1e-5, six encoder and decoder layers,
  // deep backbone.
  static TrainConfig paper();

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  LossBreakdown train;
  LossBreakdown validation;
  double seconds = 0.0;
};

struct TrainResult {
  ModelState best;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_validation_loss = 0.0;
};

// Optimizer plus loss evaluation for one model. Batches are processed as a
// whole: encode, match each image on detached outputs, decode masks for the
// matched queries only, then average the per-image composite losses.
class Trainer {
 public:
  Trainer(ModelState& state, const TrainConfig& config);

  // Loss of a batch with autograd enabled (the network is left in its
  // current mode).
  LossTerms batch_loss(const std::vector<const LabeledImage*>& batch);
  // One optimizer update; returns the batch loss before the update. Throws
  // Diverged on a non-finite loss.
  LossBreakdown step(const std::vector<const LabeledImage*>& batch);
  // Mean loss over `items` in evaluation mode without gradients.
  LossBreakdown evaluate_loss(const std::vector<LabeledImage>& items);

 private:
  ModelState& state_;
  TrainConfig config_;
  std::unique_ptr<torch::optim::AdamW> optimizer_;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Carves a stratified validation set out of `items`, trains for
// config.epochs and returns the snapshot with the lowest validation total.
// Deterministic in config.seed. Throws EmptyInput, Diverged.
TrainResult train(const std::vector<LabeledImage>& items, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

// Applies the enabled augmentations; degenerate draws keep the input.
LabeledImage augment_item(const LabeledImage& item, const AugmentationConfig& aug, Rng& rng);

// Single-cell predictions (most confident non-EMPTY slot per image).
std::vector<CellPrediction> predict_items(ModelState& state, const std::vector<LabeledImage>& items);
// Predictions that copy each item's first annotation with one-hot scores.
std::vector<CellPrediction> identity_predictions(const std::vector<LabeledImage>& items);

std::vector<EvalSample> eval_samples(std::span<const CellPrediction> predictions,
                                     const std::vector<LabeledImage>& items);
MetricsReport evaluate(std::span<const CellPrediction> predictions, const std::vector<LabeledImage>& items);
MetricsReport evaluate(ModelState& state, const std::vector<LabeledImage>& items);

struct CrossValidationResult {
  FoldPlan plan;
  std::vector<MetricsReport> folds;
  std::vector<MetricSummary> summary;
};

using FoldCallback = std::function<void(int fold, const TrainResult&, const MetricsReport&)>;

CrossValidationResult cross_validate(const std::vector<LabeledImage>& items, int k, const TrainConfig& config,
                                     const FoldCallback& on_fold = {});

// Row names of the variant comparison, in order.
inline constexpr std::array<const char*, 10> kVariantRows = {
    "Dice Score",         "Jaccard Ind.",        "Class. acc.",        "Precision",         "F1 score",
    "Gran. acc.",         "Cytoplasm col. acc.", "Nucleus shape acc.", "Size wrt RBC acc.", "N:C MSE"};

std::array<double, kVariantRows.size()> variant_row_values(const MetricsReport& report);

struct VariantColumn {
  int hidden_layers = 0;
  std::vector<MetricsReport> reports;  // one per fold (one for a holdout run)
  std::array<MetricSummary, kVariantRows.size()> rows;
};

struct VariantTable {
  std::vector<VariantColumn> columns;
  int best = 0;  // column index with the highest mean F1; ties to the first

  std::string to_text() const;
};

// Column with the largest mean F1 score.
int select_best_by_f1(const std::vector<VariantColumn>& columns);
VariantColumn make_variant_column(int hidden_layers, std::vector<MetricsReport> reports);

struct VariantStudyOptions {
  std::vector<int> hidden_layer_options = {0, 2, 4};
  int folds = 0;               // 0: one stratified holdout split
  double test_fraction = 0.2;  // holdout mode only
};

using VariantCallback = std::function<void(int hidden_layers, int fold, const MetricsReport&)>;

VariantTable variant_study(const std::vector<LabeledImage>& items, const TrainConfig& config,
                           const VariantStudyOptions& options = {}, const VariantCallback& on_run = {});

// ---------------------------------------------------------------------------
// Gradient check

struct GradientCheckEntry {
  std::string component;
  int points = 0;
  double max_relative_error = 0.0;
  bool passed = false;
};

struct GradientCheckReport {
  double tolerance = 1e-4;
  std::vector<GradientCheckEntry> entries;
  bool passed() const;
  std::string to_text() const;
};

struct GradientCheckOptions {
  int points = 100;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  double step = 1e-6;
  // Test hook: replaces the analytic gradient of every component (negative
  // control for the checker itself).
  std::function<void(torch::Tensor&)> corrupt_gradient;
};

// Central differences in double precision against autograd for the
// prediction, GIoU, L1 box, Dice, focal, explanation and composite losses.
// Relative error is ||g_analytic - g_numeric|| / max(||g_analytic||,
// ||g_numeric||, 1e-12). Failures are reported, not thrown.
GradientCheckReport gradient_check(const GradientCheckOptions& options = {});

}  // namespace wbc

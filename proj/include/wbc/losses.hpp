#pragma once

// Composite set-prediction objective: class prediction over all slots, plus
// box, segmentation and explanation terms over matched pairs. Every term is a
// differentiable torch expression; the domain-type overloads evaluate the
// same expressions in double precision.

#include <array>
#include <vector>

#include <torch/torch.h>

#include "wbc/core.hpp"
#include "wbc/loss_weights.hpp"

namespace wbc {

// Probabilities entering a log are clamped to [kProbFloor, 1 - kProbFloor].
inline constexpr double kProbFloor = 1e-7;
inline constexpr double kDiceSmoothing = 1.0;

struct LossBreakdown {
  double prediction = 0.0;
  double box = 0.0;
  double segmentation = 0.0;
  double explanation = 0.0;
  double total = 0.0;
};

struct LossTerms {
  torch::Tensor prediction, box, segmentation, explanation, total;

  LossBreakdown values() const;
};

// Raw per-image network outputs for N slots.
struct SlotOutputs {
  torch::Tensor class_logits;                              // [N, 11]
  torch::Tensor boxes;                                     // [N, 4] center form
  std::array<torch::Tensor, kNumAttributes> attr_logits;   // [N, 2|2|3|3]
  torch::Tensor mask_probs;                                // [S, 2, H, W] or undefined
  std::vector<int> mask_slots;                             // slot of each mask row
};

struct ImageTargets {
  torch::Tensor classes;     // [M] int64
  torch::Tensor boxes;       // [M, 4]
  torch::Tensor masks;       // [M, 2, H, W], channel 0 cytoplasm, 1 nucleus
  torch::Tensor attributes;  // [M, 4] int64

  int64_t size() const { return classes.defined() ? classes.size(0) : 0; }
};

ImageTargets make_targets(const std::vector<CellAnnotation>& gts,
                          torch::ScalarType dtype = torch::kFloat32);

// ---------------------------------------------------------------------------
// Tensor terms. Box tensors are [..., 4] in center form.

torch::Tensor giou(const torch::Tensor& a, const torch::Tensor& b);        // [...]
torch::Tensor box_l1(const torch::Tensor& a, const torch::Tensor& b);      // [...]
torch::Tensor box_loss(const torch::Tensor& target, const torch::Tensor& pred,
                       const LossWeights& w);                              // [...]

// soft/target [..., H, W] -> [...]
torch::Tensor dice_loss(const torch::Tensor& soft, const torch::Tensor& target);
torch::Tensor focal_loss(const torch::Tensor& soft, const torch::Tensor& target, double gamma,
                         double alpha);
// pred/target [K, 2, H, W] -> [K], mean over the two channels.
torch::Tensor segmentation_loss(const torch::Tensor& pred, const torch::Tensor& target,
                                const LossWeights& w);
// logits [K, card_k] per attribute, targets [K, 4] -> [K]
torch::Tensor explanation_loss(const std::array<torch::Tensor, kNumAttributes>& logits,
                               const torch::Tensor& targets, const LossWeights& w);
// Mean over all N slots; unmatched slots target EMPTY, scaled by
// empty_class_weight.
torch::Tensor prediction_loss(const torch::Tensor& class_logits, const ImageTargets& targets,
                              const MatchResult& match, const LossWeights& w);

LossTerms composite_loss(const SlotOutputs& outputs, const ImageTargets& targets,
                         const MatchResult& match, const LossWeights& w);

// Mean of per-image composite losses.
LossTerms batch_mean(const std::vector<LossTerms>& per_image);

// ---------------------------------------------------------------------------
// Domain-type evaluation (double precision).

double giou(const BoundingBox& a, const BoundingBox& b);
double box_loss(const BoundingBox& b, const BoundingBox& b_hat, const LossWeights& w);
double dice_loss(const SoftMask& soft, const BinaryMask& target);
double focal_loss(const SoftMask& soft, const BinaryMask& target, double gamma, double alpha);
double segmentation_loss(const SoftMaskPair& pred, const MaskPair& gt, const LossWeights& w);
double explanation_loss(const AttributeScores& scores, const ExplanationAttributes& truth,
                        const LossWeights& w);
double prediction_loss(const PredictionSet& preds, const std::vector<CellAnnotation>& gts,
                       const MatchResult& match, const LossWeights& w);
// Matched slots must carry soft masks.
LossBreakdown composite_loss(const PredictionSet& preds, const std::vector<CellAnnotation>& gts,
                             const MatchResult& match, const LossWeights& w);

// Conversions used by the domain overloads and by the model.
torch::Tensor to_tensor(const SoftMask& m, torch::ScalarType dtype = torch::kFloat64);
torch::Tensor to_tensor(const BinaryMask& m, torch::ScalarType dtype = torch::kFloat64);
torch::Tensor box_tensor(const BoundingBox& b, torch::ScalarType dtype = torch::kFloat64);
SlotOutputs to_slot_outputs(const PredictionSet& preds, torch::ScalarType dtype = torch::kFloat64);

}  // namespace wbc

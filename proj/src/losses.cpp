#include "wbc/losses.hpp"

namespace wbc {

namespace {

using torch::indexing::Slice;

torch::Tensor stable_neg_log(const torch::Tensor& p) {
  return -torch::log(torch::clamp(p, kProbFloor, 1.0 - kProbFloor));
}

torch::Tensor to_corners(const torch::Tensor& b) {
  const auto cx = b.select(-1, 0), cy = b.select(-1, 1);
  const auto hw = 0.5 * b.select(-1, 2), hh = 0.5 * b.select(-1, 3);
  return torch::stack({cx - hw, cy - hh, cx + hw, cy + hh}, -1);
}

double scalar(const torch::Tensor& t) { return t.item<double>(); }

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) throw Error(ErrorKind::kDimensionMismatch, "raster shapes differ");
}

torch::Tensor mask_pair_tensor(const SoftMaskPair& m, torch::ScalarType dtype) {
  return torch::stack({to_tensor(m.cytoplasm, dtype), to_tensor(m.nucleus, dtype)});
}

torch::Tensor mask_pair_tensor(const MaskPair& m, torch::ScalarType dtype) {
  return torch::stack({to_tensor(m.cytoplasm, dtype), to_tensor(m.nucleus, dtype)});
}

}  // namespace

LossBreakdown LossTerms::values() const {
  return {scalar(prediction), scalar(box), scalar(segmentation), scalar(explanation), scalar(total)};
}

torch::Tensor to_tensor(const SoftMask& m, torch::ScalarType dtype) {
  return torch::from_blob(const_cast<float*>(m.data.data()), {m.height, m.width}, torch::kFloat32)
      .to(dtype, /*non_blocking=*/false, /*copy=*/true);
}

torch::Tensor to_tensor(const BinaryMask& m, torch::ScalarType dtype) {
  return torch::from_blob(const_cast<std::uint8_t*>(m.data.data()), {m.height, m.width},
                          torch::kUInt8)
      .to(dtype, false, true);
}

torch::Tensor box_tensor(const BoundingBox& b, torch::ScalarType dtype) {
  const auto a = b.as_array();
  return torch::tensor({a[0], a[1], a[2], a[3]}, torch::kFloat64).to(dtype);
}

ImageTargets make_targets(const std::vector<CellAnnotation>& gts, torch::ScalarType dtype) {
  ImageTargets t;
  const auto m = static_cast<int64_t>(gts.size());
  t.classes = torch::empty({m}, torch::kInt64);
  t.attributes = torch::empty({m, kNumAttributes}, torch::kInt64);
  std::vector<torch::Tensor> boxes, masks;
  for (int64_t i = 0; i < m; ++i) {
    const CellAnnotation& g = gts[static_cast<std::size_t>(i)];
    t.classes[i] = to_index(g.cell_class);
    for (int k = 0; k < kNumAttributes; ++k) t.attributes[i][k] = g.attributes.value(k);
    boxes.push_back(box_tensor(g.box, dtype));
    masks.push_back(mask_pair_tensor(g.masks, dtype));
  }
  t.boxes = m ? torch::stack(boxes) : torch::empty({0, 4}, dtype);
  t.masks = m ? torch::stack(masks) : torch::Tensor();
  return t;
}

// ---------------------------------------------------------------------------

torch::Tensor giou(const torch::Tensor& a, const torch::Tensor& b) {
  const auto ca = to_corners(a), cb = to_corners(b);
  const auto area_a = (ca.select(-1, 2) - ca.select(-1, 0)) * (ca.select(-1, 3) - ca.select(-1, 1));
  const auto area_b = (cb.select(-1, 2) - cb.select(-1, 0)) * (cb.select(-1, 3) - cb.select(-1, 1));
  const auto iw = (torch::min(ca.select(-1, 2), cb.select(-1, 2)) -
                   torch::max(ca.select(-1, 0), cb.select(-1, 0)))
                      .clamp_min(0);
  const auto ih = (torch::min(ca.select(-1, 3), cb.select(-1, 3)) -
                   torch::max(ca.select(-1, 1), cb.select(-1, 1)))
                      .clamp_min(0);
  const auto inter = iw * ih;
  const auto uni = (area_a + area_b - inter).clamp_min(1e-12);
  const auto hw = torch::max(ca.select(-1, 2), cb.select(-1, 2)) -
                  torch::min(ca.select(-1, 0), cb.select(-1, 0));
  const auto hh = torch::max(ca.select(-1, 3), cb.select(-1, 3)) -
                  torch::min(ca.select(-1, 1), cb.select(-1, 1));
  const auto hull = (hw * hh).clamp_min(1e-12);
  return inter / uni - (hull - uni) / hull;
}

torch::Tensor box_l1(const torch::Tensor& a, const torch::Tensor& b) {
  return (a - b).abs().sum(-1);
}

torch::Tensor box_loss(const torch::Tensor& target, const torch::Tensor& pred, const LossWeights& w) {
  return w.w_giou * (1.0 - giou(target, pred)) + w.w_l1 * box_l1(target, pred);
}

torch::Tensor dice_loss(const torch::Tensor& soft, const torch::Tensor& target) {
  check_same_shape(soft, target);
  const auto overlap = (soft * target).sum({-2, -1});
  const auto total = soft.sum({-2, -1}) + target.sum({-2, -1});
  return 1.0 - (2.0 * overlap + kDiceSmoothing) / (total + kDiceSmoothing);
}

torch::Tensor focal_loss(const torch::Tensor& soft, const torch::Tensor& target, double gamma,
                         double alpha) {
  check_same_shape(soft, target);
  const auto p = torch::clamp(soft, kProbFloor, 1.0 - kProbFloor);
  const auto p_t = target * p + (1.0 - target) * (1.0 - p);
  const auto alpha_t = target * alpha + (1.0 - target) * (1.0 - alpha);
  const auto per_pixel = -alpha_t * torch::pow(1.0 - p_t, gamma) * torch::log(p_t);
  return per_pixel.mean({-2, -1});
}

torch::Tensor segmentation_loss(const torch::Tensor& pred, const torch::Tensor& target,
                                const LossWeights& w) {
  check_same_shape(pred, target);
  const auto per_channel =
      w.w_dice * dice_loss(pred, target) + w.w_fl * focal_loss(pred, target, w.focal_gamma, w.focal_alpha);
  return per_channel.mean(-1);
}

torch::Tensor explanation_loss(const std::array<torch::Tensor, kNumAttributes>& logits,
                               const torch::Tensor& targets, const LossWeights& w) {
  torch::Tensor total;
  for (int k = 0; k < kNumAttributes; ++k) {
    if (logits[k].size(-1) != kAttributeCardinality[k]) {
      throw Error(ErrorKind::kDimensionMismatch, "attribute score width");
    }
    const auto probs = torch::softmax(logits[k], -1);
    const auto p = probs.gather(-1, targets.select(-1, k).unsqueeze(-1)).squeeze(-1);
    const auto term = w.w_attr[k] * stable_neg_log(p);
    total = total.defined() ? total + term : term;
  }
  return total;
}

torch::Tensor prediction_loss(const torch::Tensor& class_logits, const ImageTargets& targets,
                              const MatchResult& match, const LossWeights& w) {
  const int64_t n = class_logits.size(0);
  auto target = torch::full({n}, kEmptyIndex, torch::kInt64);
  auto weight = torch::full({n}, w.empty_class_weight, class_logits.options());
  for (std::size_t i = 0; i < match.sigma.size(); ++i) {
    target[match.sigma[i]] = targets.classes[static_cast<int64_t>(i)];
    weight[match.sigma[i]] = 1.0;
  }
  const auto probs = torch::softmax(class_logits, -1);
  const auto p = probs.gather(-1, target.unsqueeze(-1)).squeeze(-1);
  return (weight * stable_neg_log(p)).sum() / static_cast<double>(n);
}

LossTerms composite_loss(const SlotOutputs& out, const ImageTargets& targets,
                         const MatchResult& match, const LossWeights& w) {
  const int64_t m = targets.size();
  if (static_cast<int64_t>(match.sigma.size()) != m) {
    throw Error(ErrorKind::kInvalidArgument, "match does not cover the targets");
  }
  LossTerms t;
  t.prediction = prediction_loss(out.class_logits, targets, match, w);
  const auto zero = torch::zeros({}, out.class_logits.options());
  if (m == 0) {
    t.box = zero;
    t.segmentation = zero;
    t.explanation = zero;
  } else {
    std::vector<int64_t> slots(match.sigma.begin(), match.sigma.end());
    const auto slot_idx = torch::tensor(slots, torch::kInt64);
    const double norm = static_cast<double>(m);
    t.box = box_loss(targets.boxes.to(out.boxes.dtype()), out.boxes.index_select(0, slot_idx), w)
                .sum() / norm;

    std::vector<int64_t> rows;
    for (int slot : match.sigma) {
      const auto it = std::find(out.mask_slots.begin(), out.mask_slots.end(), slot);
      if (it == out.mask_slots.end() || !out.mask_probs.defined()) {
        throw Error(ErrorKind::kInvalidArgument, "no decoded mask for matched slot");
      }
      rows.push_back(it - out.mask_slots.begin());
    }
    const auto pred_masks = out.mask_probs.index_select(0, torch::tensor(rows, torch::kInt64));
    t.segmentation =
        segmentation_loss(pred_masks, targets.masks.to(pred_masks.dtype()), w).sum() / norm;

    std::array<torch::Tensor, kNumAttributes> logits;
    for (int k = 0; k < kNumAttributes; ++k) logits[k] = out.attr_logits[k].index_select(0, slot_idx);
    t.explanation = explanation_loss(logits, targets.attributes, w).sum() / norm;
  }
  t.total = t.prediction + t.box + t.segmentation + t.explanation;
  return t;
}

LossTerms batch_mean(const std::vector<LossTerms>& per_image) {
  if (per_image.empty()) throw Error(ErrorKind::kEmptyInput, "no images in batch");
  LossTerms acc = per_image.front();
  for (std::size_t i = 1; i < per_image.size(); ++i) {
    acc.prediction = acc.prediction + per_image[i].prediction;
    acc.box = acc.box + per_image[i].box;
    acc.segmentation = acc.segmentation + per_image[i].segmentation;
    acc.explanation = acc.explanation + per_image[i].explanation;
  }
  const double n = static_cast<double>(per_image.size());
  acc.prediction = acc.prediction / n;
  acc.box = acc.box / n;
  acc.segmentation = acc.segmentation / n;
  acc.explanation = acc.explanation / n;
  acc.total = acc.prediction + acc.box + acc.segmentation + acc.explanation;
  return acc;
}

// ---------------------------------------------------------------------------

SlotOutputs to_slot_outputs(const PredictionSet& preds, torch::ScalarType dtype) {
  SlotOutputs out;
  const auto n = static_cast<int64_t>(preds.num_slots());
  out.class_logits = torch::empty({n, kNumClassScores}, torch::kFloat64);
  out.boxes = torch::empty({n, 4}, torch::kFloat64);
  for (int k = 0; k < kNumAttributes; ++k) {
    out.attr_logits[k] = torch::empty({n, kAttributeCardinality[k]}, torch::kFloat64);
  }
  std::vector<torch::Tensor> masks;
  for (int64_t j = 0; j < n; ++j) {
    const SlotPrediction& s = preds.slots[static_cast<std::size_t>(j)];
    for (int c = 0; c < kNumClassScores; ++c) out.class_logits[j][c] = s.class_scores[c];
    const auto b = s.box.as_array();
    for (int c = 0; c < 4; ++c) out.boxes[j][c] = b[c];
    for (int k = 0; k < kNumAttributes; ++k) {
      if (static_cast<int>(s.attribute_scores[k].size()) != kAttributeCardinality[k]) {
        throw Error(ErrorKind::kDimensionMismatch, "attribute score width");
      }
      for (int v = 0; v < kAttributeCardinality[k]; ++v) out.attr_logits[k][j][v] = s.attribute_scores[k][v];
    }
    if (s.soft_masks) {
      masks.push_back(mask_pair_tensor(*s.soft_masks, dtype));
      out.mask_slots.push_back(static_cast<int>(j));
    }
  }
  out.class_logits = out.class_logits.to(dtype);
  out.boxes = out.boxes.to(dtype);
  for (auto& t : out.attr_logits) t = t.to(dtype);
  if (!masks.empty()) out.mask_probs = torch::stack(masks);
  return out;
}

double giou(const BoundingBox& a, const BoundingBox& b) {
  return scalar(giou(box_tensor(a), box_tensor(b)));
}

double box_loss(const BoundingBox& b, const BoundingBox& b_hat, const LossWeights& w) {
  return scalar(box_loss(box_tensor(b), box_tensor(b_hat), w));
}

double dice_loss(const SoftMask& soft, const BinaryMask& target) {
  if (!target.same_shape(soft.width, soft.height)) {
    throw Error(ErrorKind::kDimensionMismatch, "raster shapes differ");
  }
  return scalar(dice_loss(to_tensor(soft), to_tensor(target)));
}

double focal_loss(const SoftMask& soft, const BinaryMask& target, double gamma, double alpha) {
  if (!target.same_shape(soft.width, soft.height)) {
    throw Error(ErrorKind::kDimensionMismatch, "raster shapes differ");
  }
  return scalar(focal_loss(to_tensor(soft), to_tensor(target), gamma, alpha));
}

double segmentation_loss(const SoftMaskPair& pred, const MaskPair& gt, const LossWeights& w) {
  const auto p = mask_pair_tensor(pred, torch::kFloat64);
  const auto t = mask_pair_tensor(gt, torch::kFloat64);
  if (p.sizes() != t.sizes()) throw Error(ErrorKind::kDimensionMismatch, "mask pair shapes differ");
  return scalar(segmentation_loss(p.unsqueeze(0), t.unsqueeze(0), w).squeeze(0));
}

double explanation_loss(const AttributeScores& scores, const ExplanationAttributes& truth,
                        const LossWeights& w) {
  std::array<torch::Tensor, kNumAttributes> logits;
  auto targets = torch::empty({1, kNumAttributes}, torch::kInt64);
  for (int k = 0; k < kNumAttributes; ++k) {
    logits[k] = torch::tensor(scores[k], torch::kFloat64).unsqueeze(0);
    targets[0][k] = truth.value(k);
  }
  return scalar(explanation_loss(logits, targets, w).squeeze(0));
}

double prediction_loss(const PredictionSet& preds, const std::vector<CellAnnotation>& gts,
                       const MatchResult& match, const LossWeights& w) {
  const SlotOutputs out = to_slot_outputs(preds);
  ImageTargets targets;
  targets.classes = torch::empty({static_cast<int64_t>(gts.size())}, torch::kInt64);
  for (std::size_t i = 0; i < gts.size(); ++i) {
    targets.classes[static_cast<int64_t>(i)] = to_index(gts[i].cell_class);
  }
  return scalar(prediction_loss(out.class_logits, targets, match, w));
}

LossBreakdown composite_loss(const PredictionSet& preds, const std::vector<CellAnnotation>& gts,
                             const MatchResult& match, const LossWeights& w) {
  return composite_loss(to_slot_outputs(preds), make_targets(gts, torch::kFloat64), match, w)
      .values();
}

}  // namespace wbc

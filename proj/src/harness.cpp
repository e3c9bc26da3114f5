#include "wbc/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "wbc/assignment.hpp"

namespace wbc {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

TrainConfig TrainConfig::toy() { return TrainConfig{}; }

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.epochs = 200;
  c.batch_size = 32;
  c.lr_main = 1e-4;
  c.lr_backbone = 1e-5;
  c.weight_decay = 1e-4;
  c.model.backbone = BackboneKind::kDeepResidual50;
  c.model.d_model = 256;
  c.model.num_heads = 8;
  c.model.encoder_layers = 6;
  c.model.decoder_layers = 6;
  c.model.dim_feedforward = 2048;
  c.model.num_queries = 10;
  c.model.mask_head_width = 128;
  c.model.mask_output_stride = 4;
  c.model.dropout = 0.1;
  return c;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::kInvalidConfig, msg); };
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(lr_main > 0) || !(lr_backbone > 0)) fail("learning rates must be positive");
  if (!(weight_decay >= 0)) fail("weight_decay must be non-negative");
  if (!(grad_clip >= 0)) fail("grad_clip must be non-negative");
  if (!(validation_fraction > 0.0 && validation_fraction <= 0.5)) fail("validation_fraction must lie in (0, 0.5]");
  if (!(augmentation.probability >= 0.0 && augmentation.probability <= 1.0)) {
    fail("augmentation probability must lie in [0, 1]");
  }
  loss.validate();
  model.validate();
}

json TrainConfig::to_json() const {
  return {
      {"epochs", epochs},
      {"batch_size", batch_size},
      {"lr_main", lr_main},
      {"lr_backbone", lr_backbone},
      {"weight_decay", weight_decay},
      {"optimizer", "adamw"},
      {"grad_clip", grad_clip},
      {"augmentation",
       {{"hflip", augmentation.hflip},
        {"vflip", augmentation.vflip},
        {"rotate", augmentation.rotate},
        {"scale", augmentation.scale},
        {"translate", augmentation.translate},
        {"probability", augmentation.probability}}},
      {"validation_fraction", validation_fraction},
      {"seed", seed},
      {"loss",
       {{"w_giou", loss.w_giou},
        {"w_l1", loss.w_l1},
        {"w_dice", loss.w_dice},
        {"w_fl", loss.w_fl},
        {"w_attr", loss.w_attr},
        {"empty_class_weight", loss.empty_class_weight},
        {"focal_gamma", loss.focal_gamma},
        {"focal_alpha", loss.focal_alpha}}},
      {"model", model.to_json()},
  };
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  try {
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.lr_main = j.at("lr_main").get<double>();
    c.lr_backbone = j.at("lr_backbone").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    if (j.at("optimizer").get<std::string>() != "adamw") {
      throw Error(ErrorKind::kInvalidConfig, "unknown optimizer");
    }
    c.grad_clip = j.at("grad_clip").get<double>();
    const auto& a = j.at("augmentation");
    c.augmentation.hflip = a.at("hflip").get<bool>();
    c.augmentation.vflip = a.at("vflip").get<bool>();
    c.augmentation.rotate = a.at("rotate").get<bool>();
    c.augmentation.scale = a.at("scale").get<bool>();
    c.augmentation.translate = a.at("translate").get<bool>();
    c.augmentation.probability = a.at("probability").get<double>();
    c.validation_fraction = j.at("validation_fraction").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    const auto& l = j.at("loss");
    c.loss.w_giou = l.at("w_giou").get<double>();
    c.loss.w_l1 = l.at("w_l1").get<double>();
    c.loss.w_dice = l.at("w_dice").get<double>();
    c.loss.w_fl = l.at("w_fl").get<double>();
    c.loss.w_attr = l.at("w_attr").get<std::array<double, kNumAttributes>>();
    c.loss.empty_class_weight = l.at("empty_class_weight").get<double>();
    c.loss.focal_gamma = l.at("focal_gamma").get<double>();
    c.loss.focal_alpha = l.at("focal_alpha").get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kSchemaMismatch, std::string("train config: ") + e.what());
  }
  c.model = ModelConfig::from_json(j.at("model"));
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Trainer

namespace {

bool finite(const LossBreakdown& b) {
  return std::isfinite(b.prediction) && std::isfinite(b.box) && std::isfinite(b.segmentation) &&
         std::isfinite(b.explanation) && std::isfinite(b.total);
}

void accumulate(LossBreakdown& acc, const LossBreakdown& b, double weight) {
  acc.prediction += weight * b.prediction;
  acc.box += weight * b.box;
  acc.segmentation += weight * b.segmentation;
  acc.explanation += weight * b.explanation;
}

// The per-batch totals are float32 sums; rebuild the total in double.
void scale(LossBreakdown& acc, double s) {
  acc = {acc.prediction * s, acc.box * s, acc.segmentation * s, acc.explanation * s, 0.0};
  acc.total = acc.prediction + acc.box + acc.segmentation + acc.explanation;
}

// Detached slot records used only to build the matching cost.
PredictionSet matching_view(const torch::Tensor& logits, const torch::Tensor& boxes) {
  const auto l = logits.detach().to(torch::kFloat64).contiguous();
  const auto b = boxes.detach().to(torch::kFloat64).contiguous();
  const int64_t n = l.size(0);
  PredictionSet set;
  set.slots.resize(static_cast<std::size_t>(n));
  const double* lp = l.data_ptr<double>();
  const double* bp = b.data_ptr<double>();
  for (int64_t j = 0; j < n; ++j) {
    auto& s = set.slots[static_cast<std::size_t>(j)];
    std::copy(lp + j * kNumClassScores, lp + (j + 1) * kNumClassScores, s.class_scores.begin());
    const double* q = bp + j * 4;
    s.box = BoundingBox::from_center(q[0], q[1], std::max(q[2], 1e-6), std::max(q[3], 1e-6));
  }
  return set;
}

}  // namespace

Trainer::Trainer(ModelState& state, const TrainConfig& config) : state_(state), config_(config) {
  config_.validate();
  std::vector<torch::Tensor> backbone, rest;
  for (const auto& item : state_.net()->named_parameters()) {
    (item.key().rfind("backbone.", 0) == 0 ? backbone : rest).push_back(item.value());
  }
  std::vector<torch::optim::OptimizerParamGroup> groups;
  groups.emplace_back(rest, std::make_unique<torch::optim::AdamWOptions>(
                                torch::optim::AdamWOptions(config_.lr_main).weight_decay(config_.weight_decay)));
  groups.emplace_back(backbone, std::make_unique<torch::optim::AdamWOptions>(
                                    torch::optim::AdamWOptions(config_.lr_backbone).weight_decay(config_.weight_decay)));
  optimizer_ = std::make_unique<torch::optim::AdamW>(
      std::move(groups), torch::optim::AdamWOptions(config_.lr_main).weight_decay(config_.weight_decay));
}

LossTerms Trainer::batch_loss(const std::vector<const LabeledImage*>& batch) {
  if (batch.empty()) throw Error(ErrorKind::kEmptyInput, "empty batch");
  std::vector<const RgbImage*> images;
  for (const auto* item : batch) images.push_back(&item->pixels);
  auto& net = state_.net();
  const EncodedBatch enc = net->encode(images_to_tensor(images));

  std::vector<MatchResult> matches;
  std::vector<int64_t> bi, qi;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto ib = static_cast<int64_t>(b);
    matches.push_back(match_sets(batch[b]->annotations, matching_view(enc.class_logits[ib], enc.boxes[ib]),
                                 config_.loss));
    for (int slot : matches.back().sigma) {
      bi.push_back(ib);
      qi.push_back(slot);
    }
  }
  const auto masks = net->decode_masks(enc, torch::tensor(bi, torch::kInt64), torch::tensor(qi, torch::kInt64));

  std::vector<LossTerms> per_image;
  int64_t row = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto m = static_cast<int64_t>(matches[b].sigma.size());
    const SlotOutputs out = slot_outputs(enc, static_cast<int64_t>(b), m ? masks.narrow(0, row, m) : torch::Tensor(),
                                         matches[b].sigma);
    row += m;
    per_image.push_back(composite_loss(out, make_targets(batch[b]->annotations), matches[b], config_.loss));
  }
  return batch_mean(per_image);
}

LossBreakdown Trainer::step(const std::vector<const LabeledImage*>& batch) {
  state_.net()->train();
  optimizer_->zero_grad();
  const LossTerms terms = batch_loss(batch);
  const LossBreakdown values = terms.values();
  if (!finite(values)) throw Error(ErrorKind::kDiverged, "non-finite training loss");
  terms.total.backward();
  if (config_.grad_clip > 0) {
    torch::nn::utils::clip_grad_norm_(state_.net()->parameters(), config_.grad_clip);
  }
  optimizer_->step();
  return values;
}

LossBreakdown Trainer::evaluate_loss(const std::vector<LabeledImage>& items) {
  if (items.empty()) throw Error(ErrorKind::kEmptyInput, "no items to evaluate");
  torch::NoGradGuard guard;
  state_.net()->eval();
  LossBreakdown acc;
  const auto bs = static_cast<std::size_t>(config_.batch_size);
  for (std::size_t start = 0; start < items.size(); start += bs) {
    std::vector<const LabeledImage*> batch;
    for (std::size_t i = start; i < std::min(items.size(), start + bs); ++i) batch.push_back(&items[i]);
    accumulate(acc, batch_loss(batch).values(), static_cast<double>(batch.size()));
  }
  scale(acc, 1.0 / static_cast<double>(items.size()));
  if (!finite(acc)) throw Error(ErrorKind::kDiverged, "non-finite validation loss");
  return acc;
}

// ---------------------------------------------------------------------------
// Training loop

LabeledImage augment_item(const LabeledImage& item, const AugmentationConfig& aug, Rng& rng) {
  LabeledImage out = item;
  std::bernoulli_distribution coin(aug.probability);
  const std::array<std::pair<bool, AugmentOp>, 5> ops = {{{aug.hflip, AugmentOp::kHFlip},
                                                          {aug.vflip, AugmentOp::kVFlip},
                                                          {aug.rotate, AugmentOp::kRotate},
                                                          {aug.scale, AugmentOp::kScale},
                                                          {aug.translate, AugmentOp::kTranslate}}};
  for (const auto& [enabled, op] : ops) {
    // The coin is drawn for every op so enabling one op does not shift the
    // draws of the others.
    const bool apply = coin(rng);
    if (!enabled || !apply) continue;
    try {
      out = augment(out, op, rng);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kDegenerateAugment) throw;
    }
  }
  return out;
}

TrainResult train(const std::vector<LabeledImage>& items, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (items.empty()) throw Error(ErrorKind::kEmptyInput, "no training items");
  const Split split = split_train_test(items, 1.0 - config.validation_fraction, config.seed);
  std::vector<LabeledImage> validation;
  for (std::size_t i : split.test) validation.push_back(items[i]);

  TrainResult result;
  ModelState state = build_model(config.model);
  Trainer trainer(state, config);
  result.best_validation_loss = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order = split.train;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng shuffle_rng = make_rng(config.seed, static_cast<std::uint64_t>(epoch), 0x5f1e);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochRecord rec;
    rec.epoch = epoch;
    const auto bs = static_cast<std::size_t>(config.batch_size);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::vector<LabeledImage> augmented;
      for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) {
        Rng aug_rng = make_rng(config.seed, static_cast<std::uint64_t>(epoch) * items.size() + order[i], 0xa06);
        augmented.push_back(augment_item(items[order[i]], config.augmentation, aug_rng));
      }
      std::vector<const LabeledImage*> batch;
      for (const auto& a : augmented) batch.push_back(&a);
      accumulate(rec.train, trainer.step(batch), static_cast<double>(batch.size()));
    }
    scale(rec.train, 1.0 / static_cast<double>(order.size()));
    rec.validation = trainer.evaluate_loss(validation);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
    if (rec.validation.total < result.best_validation_loss) {
      result.best_validation_loss = rec.validation.total;
      result.best_epoch = epoch;
      result.best = state.clone();
    }
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<CellPrediction> predict_items(ModelState& state, const std::vector<LabeledImage>& items) {
  if (items.empty()) throw Error(ErrorKind::kEmptyInput, "no items to predict");
  std::vector<RgbImage> images;
  images.reserve(items.size());
  for (const auto& item : items) images.push_back(item.pixels);
  return predict_single_cells(state, images);
}

std::vector<CellPrediction> identity_predictions(const std::vector<LabeledImage>& items) {
  std::vector<CellPrediction> out;
  for (const auto& item : items) {
    if (item.annotations.empty()) throw Error(ErrorKind::kInvalidArgument, "item without annotation");
    const CellAnnotation& a = item.annotations.front();
    CellPrediction p;
    p.slot = 0;
    p.cell_class = a.cell_class;
    p.confidence = 1.0;
    p.class_probs[static_cast<std::size_t>(to_index(a.cell_class))] = 1.0;
    p.box = a.box;
    p.masks = a.masks;
    p.nc_ratio = a.nc_ratio;
    p.attributes = a.attributes;
    for (int k = 0; k < kNumAttributes; ++k) {
      auto& probs = p.attribute_probs[static_cast<std::size_t>(k)];
      probs.assign(static_cast<std::size_t>(kAttributeCardinality[static_cast<std::size_t>(k)]), 0.0);
      probs[static_cast<std::size_t>(a.attributes.value(k))] = 1.0;
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<EvalSample> eval_samples(std::span<const CellPrediction> predictions,
                                     const std::vector<LabeledImage>& items) {
  if (items.empty()) throw Error(ErrorKind::kEmptyInput, "no evaluation items");
  if (predictions.size() != items.size()) {
    throw Error(ErrorKind::kDimensionMismatch, "one prediction per evaluation item expected");
  }
  std::vector<EvalSample> out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].annotations.empty()) throw Error(ErrorKind::kInvalidArgument, "item without annotation");
    const CellAnnotation& gt = items[i].annotations.front();
    const CellPrediction& p = predictions[i];
    EvalSample s;
    s.true_class = gt.cell_class;
    s.pred_class = p.cell_class;
    s.gt_box = gt.box;
    s.pred_box = p.box;
    s.gt_masks = gt.masks;
    s.pred_masks = p.masks;
    s.gt_attributes = gt.attributes;
    s.pred_attributes = p.attributes;
    s.gt_nc = gt.nc_ratio;
    s.pred_nc = p.nc_ratio;
    s.attribute_probs = p.attribute_probs;
    out.push_back(std::move(s));
  }
  return out;
}

MetricsReport evaluate(std::span<const CellPrediction> predictions, const std::vector<LabeledImage>& items) {
  return build_report(eval_samples(predictions, items));
}

MetricsReport evaluate(ModelState& state, const std::vector<LabeledImage>& items) {
  const auto preds = predict_items(state, items);
  return evaluate(preds, items);
}

namespace {

std::vector<LabeledImage> subset(const std::vector<LabeledImage>& items, const std::vector<std::size_t>& idx) {
  std::vector<LabeledImage> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(items[i]);
  return out;
}

}  // namespace

CrossValidationResult cross_validate(const std::vector<LabeledImage>& items, int k, const TrainConfig& config,
                                     const FoldCallback& on_fold) {
  CrossValidationResult r;
  r.plan = make_folds(items, k, config.seed);
  for (int f = 0; f < k; ++f) {
    const auto train_items = subset(items, r.plan.complement(f));
    const auto test_items = subset(items, r.plan.fold_items(f));
    TrainResult trained = train(train_items, config);
    r.folds.push_back(evaluate(trained.best, test_items));
    if (on_fold) on_fold(f, trained, r.folds.back());
  }
  r.summary = summarize(r.folds);
  return r;
}

// ---------------------------------------------------------------------------
// Variant study

std::array<double, kVariantRows.size()> variant_row_values(const MetricsReport& r) {
  return {r.mean_dice,
          r.mean_jaccard,
          r.accuracy,
          r.macro_precision,
          r.macro_f1,
          r.attribute_accuracy[0],
          r.attribute_accuracy[1],
          r.attribute_accuracy[2],
          r.attribute_accuracy[3],
          r.nc_mse};
}

VariantColumn make_variant_column(int hidden_layers, std::vector<MetricsReport> reports) {
  if (reports.empty()) throw Error(ErrorKind::kEmptyInput, "variant column without reports");
  VariantColumn col;
  col.hidden_layers = hidden_layers;
  col.reports = std::move(reports);
  for (std::size_t row = 0; row < kVariantRows.size(); ++row) {
    std::vector<double> xs;
    for (const auto& r : col.reports) xs.push_back(variant_row_values(r)[row]);
    MetricSummary s{kVariantRows[row], 0.0, 0.0};
    s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    if (xs.size() > 1) {
      double ss = 0.0;
      for (double x : xs) ss += (x - s.mean) * (x - s.mean);
      s.stdev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    col.rows[row] = s;
  }
  return col;
}

int select_best_by_f1(const std::vector<VariantColumn>& columns) {
  if (columns.empty()) throw Error(ErrorKind::kEmptyInput, "no variants");
  constexpr std::size_t kF1Row = 4;
  int best = 0;
  for (std::size_t i = 1; i < columns.size(); ++i) {
    if (columns[i].rows[kF1Row].mean > columns[static_cast<std::size_t>(best)].rows[kF1Row].mean) {
      best = static_cast<int>(i);
    }
  }
  return best;
}

std::string VariantTable::to_text() const {
  std::ostringstream os;
  os << "Metrics";
  for (const auto& c : columns) os << " | " << c.hidden_layers << " hidden";
  os << "\n";
  for (std::size_t row = 0; row < kVariantRows.size(); ++row) {
    os << kVariantRows[row];
    for (const auto& c : columns) {
      os << " | " << format_double(c.rows[row].mean) << " +- " << format_double(c.rows[row].stdev);
    }
    os << "\n";
  }
  if (!columns.empty()) os << "best_by_f1=" << columns[static_cast<std::size_t>(best)].hidden_layers << "\n";
  return os.str();
}

VariantTable variant_study(const std::vector<LabeledImage>& items, const TrainConfig& config,
                           const VariantStudyOptions& options, const VariantCallback& on_run) {
  if (options.hidden_layer_options.empty()) throw Error(ErrorKind::kInvalidConfig, "no hidden-layer options");
  for (int h : options.hidden_layer_options) {
    TrainConfig c = config;
    c.model.explanation_hidden_layers = h;
    c.validate();
  }
  if (options.folds == 1 || options.folds < 0) throw Error(ErrorKind::kInvalidConfig, "folds must be 0 or >= 2");

  // Shared partitions for every option.
  std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> runs;
  if (options.folds == 0) {
    const Split s = split_train_test(items, 1.0 - options.test_fraction, config.seed);
    runs.emplace_back(s.train, s.test);
  } else {
    const FoldPlan plan = make_folds(items, options.folds, config.seed);
    for (int f = 0; f < options.folds; ++f) runs.emplace_back(plan.complement(f), plan.fold_items(f));
  }

  VariantTable table;
  for (int h : options.hidden_layer_options) {
    TrainConfig c = config;
    c.model.explanation_hidden_layers = h;
    std::vector<MetricsReport> reports;
    for (std::size_t f = 0; f < runs.size(); ++f) {
      TrainResult trained = train(subset(items, runs[f].first), c);
      reports.push_back(evaluate(trained.best, subset(items, runs[f].second)));
      if (on_run) on_run(h, static_cast<int>(f), reports.back());
    }
    table.columns.push_back(make_variant_column(h, std::move(reports)));
  }
  table.best = select_best_by_f1(table.columns);
  return table;
}

// ---------------------------------------------------------------------------
// Gradient check

bool GradientCheckReport::passed() const {
  return !entries.empty() && std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

std::string GradientCheckReport::to_text() const {
  std::ostringstream os;
  os << "format=wbc-gradient-check\n";
  os << "version=1\n";
  os << "tolerance=" << format_double(tolerance) << "\n";
  for (const auto& e : entries) {
    os << e.component << ".points=" << e.points << "\n";
    os << e.component << ".max_relative_error=" << format_double(e.max_relative_error) << "\n";
    os << e.component << ".status=" << (e.passed ? "pass" : "fail") << "\n";
  }
  os << "status=" << (passed() ? "pass" : "fail") << "\n";
  return os.str();
}

namespace {

using Inputs = std::vector<torch::Tensor>;
using Objective = std::function<torch::Tensor(const Inputs&)>;

struct Probe {
  Inputs inputs;
  Objective f;
};

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

torch::Tensor uniform_tensor(Rng& rng, std::vector<int64_t> shape, double lo, double hi) {
  auto t = torch::empty(shape, torch::kFloat64);
  auto* p = t.data_ptr<double>();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = uniform(rng, lo, hi);
  return t;
}

torch::Tensor binary_tensor(Rng& rng, std::vector<int64_t> shape) {
  auto t = torch::empty(shape, torch::kFloat64);
  auto* p = t.data_ptr<double>();
  std::bernoulli_distribution coin(0.5);
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = coin(rng) ? 1.0 : 0.0;
  return t;
}

torch::Tensor random_boxes(Rng& rng, int64_t n) {
  auto t = torch::empty({n, 4}, torch::kFloat64);
  for (int64_t i = 0; i < n; ++i) {
    t[i][0] = uniform(rng, 0.3, 0.7);
    t[i][1] = uniform(rng, 0.3, 0.7);
    t[i][2] = uniform(rng, 0.1, 0.5);
    t[i][3] = uniform(rng, 0.1, 0.5);
  }
  return t;
}

torch::Tensor random_classes(Rng& rng, int64_t m) {
  auto t = torch::empty({m}, torch::kInt64);
  std::uniform_int_distribution<int> d(0, kNumCellTypes - 1);
  for (int64_t i = 0; i < m; ++i) t[i] = d(rng);
  return t;
}

torch::Tensor random_attributes(Rng& rng, int64_t m) {
  auto t = torch::empty({m, kNumAttributes}, torch::kInt64);
  for (int64_t i = 0; i < m; ++i) {
    for (int k = 0; k < kNumAttributes; ++k) {
      t[i][k] = std::uniform_int_distribution<int>(0, kAttributeCardinality[static_cast<std::size_t>(k)] - 1)(rng);
    }
  }
  return t;
}

// Box pairs whose GIoU / L1 terms sit within `gap` of a kink (coinciding
// edges, touching boxes, equal coordinates) are rejected: central
// differences are not meaningful there.
bool boxes_smooth(const torch::Tensor& a, const torch::Tensor& b, double gap) {
  const auto ca = a.contiguous(), cb = b.contiguous();
  const double* p = ca.data_ptr<double>();
  const double* q = cb.data_ptr<double>();
  for (int64_t r = 0; r < ca.size(0); ++r) {
    const double* x = p + r * 4;
    const double* y = q + r * 4;
    for (int c = 0; c < 4; ++c) {
      if (std::abs(x[c] - y[c]) < gap) return false;
    }
    const std::array<double, 4> ex = {x[0] - x[2] / 2, x[1] - x[3] / 2, x[0] + x[2] / 2, x[1] + x[3] / 2};
    const std::array<double, 4> ey = {y[0] - y[2] / 2, y[1] - y[3] / 2, y[0] + y[2] / 2, y[1] + y[3] / 2};
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        if ((i % 2) == (j % 2) && std::abs(ex[static_cast<std::size_t>(i)] - ey[static_cast<std::size_t>(j)]) < gap) {
          return false;
        }
      }
    }
  }
  return true;
}

bool all_pairs_smooth(const torch::Tensor& a, const torch::Tensor& b, double gap) {
  for (int64_t i = 0; i < a.size(0); ++i) {
    for (int64_t j = 0; j < b.size(0); ++j) {
      if (!boxes_smooth(a.narrow(0, i, 1), b.narrow(0, j, 1), gap)) return false;
    }
  }
  return true;
}

double relative_error(const Probe& probe, double h, const std::function<void(torch::Tensor&)>& corrupt) {
  Inputs inputs;
  for (const auto& t : probe.inputs) inputs.push_back(t.detach().clone().set_requires_grad(true));
  const auto y = probe.f(inputs);
  auto grads = torch::autograd::grad({y}, inputs, {}, false, false, true);
  std::vector<torch::Tensor> analytic;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto g = grads[i].defined() ? grads[i].detach().clone() : torch::zeros_like(inputs[i]);
    if (corrupt) corrupt(g);
    analytic.push_back(g.flatten());
  }

  torch::NoGradGuard guard;
  Inputs base;
  for (const auto& t : probe.inputs) base.push_back(t.detach().clone());
  std::vector<torch::Tensor> numeric;
  for (auto& t : base) {
    auto g = torch::zeros({t.numel()}, torch::kFloat64);
    auto flat = t.view({-1});
    for (int64_t j = 0; j < t.numel(); ++j) {
      const double v = flat[j].item<double>();
      flat[j] = v + h;
      const double up = probe.f(base).item<double>();
      flat[j] = v - h;
      const double down = probe.f(base).item<double>();
      flat[j] = v;
      g[j] = (up - down) / (2 * h);
    }
    numeric.push_back(g);
  }
  const auto a = torch::cat(analytic), n = torch::cat(numeric);
  const double denom = std::max({a.norm().item<double>(), n.norm().item<double>(), 1e-12});
  return (a - n).norm().item<double>() / denom;
}

MatchResult random_match(Rng& rng, int m, int n) {
  std::vector<int> slots(static_cast<std::size_t>(n));
  std::iota(slots.begin(), slots.end(), 0);
  std::shuffle(slots.begin(), slots.end(), rng);
  MatchResult r;
  r.sigma.assign(slots.begin(), slots.begin() + m);
  std::vector<int> rest(slots.begin() + m, slots.end());
  std::sort(rest.begin(), rest.end());
  r.unmatched_slots = rest;
  return r;
}

}  // namespace

GradientCheckReport gradient_check(const GradientCheckOptions& options) {
  GradientCheckReport report;
  report.tolerance = options.tolerance;
  const LossWeights w;
  constexpr int64_t kSlots = 3, kTargets = 2, kRaster = 4;

  using Generator = std::function<Probe(Rng&)>;
  std::vector<std::pair<std::string, Generator>> components;

  components.emplace_back("prediction", [&](Rng& rng) {
    ImageTargets targets;
    targets.classes = random_classes(rng, kTargets);
    const MatchResult match = random_match(rng, kTargets, kSlots);
    return Probe{{uniform_tensor(rng, {kSlots, kNumClassScores}, -3, 3)},
                 [=](const Inputs& in) { return prediction_loss(in[0], targets, match, w); }};
  });
  components.emplace_back("giou", [&](Rng& rng) {
    torch::Tensor a, b;
    do {
      a = random_boxes(rng, 1);
      b = random_boxes(rng, 1);
    } while (!boxes_smooth(a, b, 1e-3));
    return Probe{{b}, [=](const Inputs& in) { return (1.0 - giou(a, in[0])).sum(); }};
  });
  components.emplace_back("l1_box", [&](Rng& rng) {
    torch::Tensor a, b;
    do {
      a = random_boxes(rng, 1);
      b = random_boxes(rng, 1);
    } while (!boxes_smooth(a, b, 1e-3));
    return Probe{{b}, [=](const Inputs& in) { return box_l1(a, in[0]).sum(); }};
  });
  components.emplace_back("dice", [&](Rng& rng) {
    const auto target = binary_tensor(rng, {kTargets, kRaster, kRaster});
    return Probe{{uniform_tensor(rng, {kTargets, kRaster, kRaster}, 0.02, 0.98)},
                 [=](const Inputs& in) { return dice_loss(in[0], target).sum(); }};
  });
  components.emplace_back("focal", [&](Rng& rng) {
    const auto target = binary_tensor(rng, {kTargets, kRaster, kRaster});
    return Probe{{uniform_tensor(rng, {kTargets, kRaster, kRaster}, 0.02, 0.98)}, [=](const Inputs& in) {
                   return focal_loss(in[0], target, w.focal_gamma, w.focal_alpha).sum();
                 }};
  });
  components.emplace_back("explanation", [&](Rng& rng) {
    const auto targets = random_attributes(rng, kTargets);
    Inputs logits;
    for (int k = 0; k < kNumAttributes; ++k) {
      logits.push_back(uniform_tensor(rng, {kTargets, kAttributeCardinality[static_cast<std::size_t>(k)]}, -3, 3));
    }
    return Probe{logits, [=](const Inputs& in) {
                   return explanation_loss({in[0], in[1], in[2], in[3]}, targets, w).sum();
                 }};
  });
  components.emplace_back("composite", [&](Rng& rng) {
    ImageTargets targets;
    targets.classes = random_classes(rng, kTargets);
    targets.attributes = random_attributes(rng, kTargets);
    targets.masks = binary_tensor(rng, {kTargets, 2, kRaster, kRaster});
    torch::Tensor pred_boxes;
    do {
      targets.boxes = random_boxes(rng, kTargets);
      pred_boxes = random_boxes(rng, kSlots);
    } while (!all_pairs_smooth(targets.boxes, pred_boxes, 1e-3));
    Inputs in{uniform_tensor(rng, {kSlots, kNumClassScores}, -3, 3), pred_boxes};
    for (int k = 0; k < kNumAttributes; ++k) {
      in.push_back(uniform_tensor(rng, {kSlots, kAttributeCardinality[static_cast<std::size_t>(k)]}, -3, 3));
    }
    in.push_back(uniform_tensor(rng, {kSlots, 2, kRaster, kRaster}, 0.02, 0.98));
    // The assignment is fixed at the sample point (it is piecewise constant).
    PredictionSet view = matching_view(in[0], in[1]);
    std::vector<CellAnnotation> gts(static_cast<std::size_t>(kTargets));
    for (int64_t i = 0; i < kTargets; ++i) {
      auto& g = gts[static_cast<std::size_t>(i)];
      g.cell_class = cell_class_from_index(static_cast<int>(targets.classes[i].item<int64_t>()));
      const auto b = targets.boxes[i];
      g.box = BoundingBox::from_center(b[0].item<double>(), b[1].item<double>(), b[2].item<double>(),
                                       b[3].item<double>());
    }
    CostMatrix costs(static_cast<int>(kTargets), static_cast<int>(kSlots));
    for (int i = 0; i < kTargets; ++i) {
      for (int j = 0; j < kSlots; ++j) costs(i, j) = matching_cost(gts[static_cast<std::size_t>(i)], view.slots[static_cast<std::size_t>(j)], w);
    }
    const MatchResult match = hungarian(costs);
    return Probe{in, [=](const Inputs& x) {
                   SlotOutputs out;
                   out.class_logits = x[0];
                   out.boxes = x[1];
                   for (int k = 0; k < kNumAttributes; ++k) out.attr_logits[static_cast<std::size_t>(k)] = x[2 + static_cast<std::size_t>(k)];
                   out.mask_probs = x[6];
                   out.mask_slots = {0, 1, 2};
                   return composite_loss(out, targets, match, w).total;
                 }};
  });

  for (std::size_t c = 0; c < components.size(); ++c) {
    GradientCheckEntry e;
    e.component = components[c].first;
    Rng rng = make_rng(options.seed, c, 0x96ad);
    for (int p = 0; p < options.points; ++p) {
      const Probe probe = components[c].second(rng);
      e.max_relative_error =
          std::max(e.max_relative_error, relative_error(probe, options.step, options.corrupt_gradient));
      ++e.points;
    }
    e.passed = e.points > 0 && e.max_relative_error <= options.tolerance;
    report.entries.push_back(e);
  }
  return report;
}

}  // namespace wbc

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>

#include "wbc/harness.hpp"
#include "wbc/model.hpp"
#include "wbc/synthcell.hpp"

namespace fs = std::filesystem;

namespace wbc {
namespace {

std::vector<RgbImage> sample_images(int count, std::uint64_t seed) {
  std::vector<RgbImage> out;
  for (const auto& item : generate_dataset(GeneratorSpec::uniform(1, seed))) {
    if (static_cast<int>(out.size()) == count) break;
    out.push_back(item.pixels);
  }
  return out;
}

void expect_slot_shapes(const PredictionSet& set, int n, int h, int w) {
  ASSERT_EQ(set.num_slots(), static_cast<std::size_t>(n));
  for (const auto& s : set.slots) {
    const auto c = s.box.corners();
    EXPECT_GT(s.box.w(), 0.0);
    EXPECT_GE(c.x0, 0.0);
    EXPECT_LE(c.x1, 1.0);
    ASSERT_TRUE(s.soft_masks.has_value());
    EXPECT_EQ(s.soft_masks->cytoplasm.width, w);
    EXPECT_EQ(s.soft_masks->cytoplasm.height, h);
    EXPECT_EQ(s.soft_masks->nucleus.width, w);
    for (int k = 0; k < kNumAttributes; ++k) {
      EXPECT_EQ(static_cast<int>(s.attribute_scores[k].size()), kAttributeCardinality[k]);
    }
  }
}

TEST(ModelConfig, Validation) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  c.num_heads = 3;
  EXPECT_THROW(c.validate(), Error);
  c = ModelConfig{};
  c.num_queries = 0;
  EXPECT_THROW(c.validate(), Error);
  c = ModelConfig{};
  c.explanation_hidden_layers = 1;
  EXPECT_THROW(c.validate(), Error);
  c = ModelConfig{};
  c.mask_output_stride = 3;
  EXPECT_THROW(c.validate(), Error);
  c = ModelConfig{};
  c.backbone_widths = {32, 64};
  EXPECT_THROW(build_model(c), Error);
}

TEST(ModelConfig, JsonRoundTrip) {
  ModelConfig c;
  c.explanation_hidden_layers = 2;
  c.mask_output_stride = 8;
  c.seed = 99;
  const auto back = ModelConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_THROW(parse_backbone("vgg"), Error);
}

TEST(BuildModel, SameSeedSameChecksum) {
  ModelConfig c;
  c.seed = 5;
  EXPECT_EQ(build_model(c).checksum(), build_model(c).checksum());
  c.seed = 6;
  const auto other = build_model(c).checksum();
  c.seed = 5;
  EXPECT_NE(build_model(c).checksum(), other);
}

TEST(BuildModel, QueryCountAndExplanationDepth) {
  ModelConfig c;
  auto state = build_model(c);
  int explanation_linear = 0;
  for (const auto& [name, t] : state.named_tensors()) {
    if (name == "query_embed.weight") {
      EXPECT_EQ(t.size(0), 10);
    }
    if (name.rfind("explanation_trunk", 0) == 0) ADD_FAILURE() << "hidden layer present: " << name;
    if (name.rfind("explanation_out", 0) == 0 && name.find(".weight") != std::string::npos) {
      ++explanation_linear;
      EXPECT_EQ(t.size(1), c.d_model);
    }
  }
  EXPECT_EQ(explanation_linear, kNumAttributes);

  for (int depth : {2, 4}) {
    c.explanation_hidden_layers = depth;
    int trunk_weights = 0;
    for (const auto& [name, t] : build_model(c).named_tensors()) {
      if (name.rfind("explanation_trunk", 0) == 0 && name.find(".weight") != std::string::npos) ++trunk_weights;
    }
    EXPECT_EQ(trunk_weights, depth);
  }
}

TEST(Forward, BatchShapes) {
  auto state = build_model(ModelConfig{});
  const auto preds = forward(state, sample_images(2, 1));
  ASSERT_EQ(preds.size(), 2u);
  for (const auto& p : preds) expect_slot_shapes(p, 10, 64, 64);
}

TEST(Forward, DuplicateImagesGiveIdenticalSlots) {
  auto state = build_model(ModelConfig{});
  auto images = sample_images(1, 2);
  images.push_back(images[0]);
  const auto preds = forward(state, images);
  for (std::size_t j = 0; j < preds[0].slots.size(); ++j) {
    const auto& a = preds[0].slots[j];
    const auto& b = preds[1].slots[j];
    EXPECT_EQ(a.class_scores, b.class_scores);
    EXPECT_EQ(a.box, b.box);
    EXPECT_EQ(a.soft_masks->nucleus.data, b.soft_masks->nucleus.data);
  }
}

TEST(Forward, ZeroImageIsFinite) {
  auto state = build_model(ModelConfig{});
  const auto preds = forward(state, {RgbImage(64, 64)});
  for (const auto& s : preds[0].slots) {
    const std::vector<double> scores(s.class_scores.begin(), s.class_scores.end());
    const auto p = softmax(scores);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-9);
    for (double v : scores) EXPECT_TRUE(std::isfinite(v));
    for (float v : s.soft_masks->cytoplasm.data) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Forward, NonSquareAndMismatchedImages) {
  auto state = build_model(ModelConfig{});
  const auto preds = forward(state, {RgbImage(96, 64)});
  expect_slot_shapes(preds[0], 10, 64, 96);
  try {
    forward(state, {RgbImage(64, 64), RgbImage(32, 32)});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimensionError);
  }
}

TEST(Forward, RepeatedCallsAreDeterministic) {
  auto state = build_model(ModelConfig{});
  const auto images = sample_images(3, 3);
  const auto a = forward(state, images);
  const auto b = forward(state, images);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].slots.size(); ++j) {
      EXPECT_EQ(a[i].slots[j].class_scores, b[i].slots[j].class_scores);
      EXPECT_EQ(a[i].slots[j].attribute_scores, b[i].slots[j].attribute_scores);
    }
}

TEST(Forward, GradientReachesEveryParameter) {
  auto state = build_model(ModelConfig{});
  const auto items = generate_dataset(GeneratorSpec::uniform(1, 4));
  std::vector<const LabeledImage*> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(&items[i]);
  TrainConfig config = TrainConfig::toy();
  Trainer trainer(state, config);
  state.net()->train();
  trainer.batch_loss(batch).total.backward();
  for (auto& item : state.net()->named_parameters()) {
    ASSERT_TRUE(item.value().grad().defined()) << item.key();
    EXPECT_GT(item.value().grad().abs().max().item<double>(), 0.0) << item.key();
  }
}

// Toy model and loss weights. A constant step size leaves the box term at
// an Adam noise floor near 0.1, so the last 150 steps run at a smaller one.
TEST(Overfit, FixedBatchOfEightDropsBelowThreshold) {
  auto items = generate_dataset(GeneratorSpec::uniform(1, 3));
  items.resize(8);
  std::vector<const LabeledImage*> batch;
  for (const auto& item : items) batch.push_back(&item);
  TrainConfig config = TrainConfig::toy();
  config.lr_main = config.lr_backbone = 4e-3;
  auto state = build_model(config.model);
  auto trainer = std::make_unique<Trainer>(state, config);
  double best = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 500; ++step) {
    if (step == 350) {
      config.lr_main = config.lr_backbone = 2e-4;
      trainer = std::make_unique<Trainer>(state, config);
    }
    best = std::min(best, trainer->step(batch).total);
  }
  EXPECT_LT(best, 0.05);
  state.net()->eval();
  torch::NoGradGuard guard;
  EXPECT_LT(trainer->batch_loss(batch).values().total, 0.05);
}

TEST(Checkpoint, SaveLoadReproducesOutputs) {
  const fs::path path = fs::temp_directory_path() / "wbc_model_ckpt_test.pt";
  ModelConfig c;
  c.explanation_hidden_layers = 2;
  auto state = build_model(c);
  save_checkpoint(state, path, {{"note", "x"}});
  nlohmann::json meta;
  auto back = load_checkpoint(path, &meta);
  EXPECT_EQ(meta.at("note"), "x");
  EXPECT_EQ(back.checksum(), state.checksum());
  EXPECT_EQ(back.config().to_json(), c.to_json());
  const auto images = sample_images(2, 5);
  const auto a = forward(state, images);
  const auto b = forward(back, images);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].slots.size(); ++j) {
      for (int k = 0; k < kNumClassScores; ++k)
        EXPECT_NEAR(a[i].slots[j].class_scores[k], b[i].slots[j].class_scores[k], 1e-6);
      EXPECT_NEAR(a[i].slots[j].box.cx(), b[i].slots[j].box.cx(), 1e-6);
    }
  fs::remove(path);
}

TEST(Checkpoint, Errors) {
  try {
    load_checkpoint("/nonexistent/ckpt.pt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kMissingFile);
  }
  const fs::path junk = fs::temp_directory_path() / "wbc_model_junk.pt";
  { std::ofstream(junk) << "not a checkpoint"; }
  try {
    load_checkpoint(junk);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kSchemaMismatch);
  }
  fs::remove(junk);
}

TEST(Checkpoint, CloneIsIndependent) {
  auto state = build_model(ModelConfig{});
  auto copy = state.clone();
  const auto before = copy.checksum();
  {
    torch::NoGradGuard guard;
    state.net()->named_parameters()["class_head.bias"].add_(1.0);
  }
  EXPECT_EQ(copy.checksum(), before);
  EXPECT_NE(state.checksum(), before);
}

TEST(BackboneWeights, LoadFromCheckpoint) {
  const fs::path path = fs::temp_directory_path() / "wbc_backbone_test.pt";
  ModelConfig a;
  a.seed = 1;
  save_checkpoint(build_model(a), path);
  ModelConfig b;
  b.seed = 2;
  b.backbone_weights = path.string();
  auto loaded = build_model(b);
  auto donor = build_model(a);
  auto pa = donor.net()->backbone()->named_parameters();
  for (auto& item : loaded.net()->backbone()->named_parameters()) {
    EXPECT_TRUE(torch::equal(item.value(), pa[item.key()])) << item.key();
  }
  b.backbone_weights = "/nonexistent.pt";
  EXPECT_THROW(build_model(b), Error);
  fs::remove(path);
}

SlotPrediction slot(int cls, double logit) {
  SlotPrediction s;
  s.class_scores.fill(0.0);
  s.class_scores[cls] = logit;
  s.box = BoundingBox::from_center(0.5, 0.5, 0.2, 0.2);
  for (int k = 0; k < kNumAttributes; ++k) s.attribute_scores[k].assign(kAttributeCardinality[k], 0.0);
  SoftMask cyto(8, 8), nuc(8, 8);
  for (int y = 2; y < 6; ++y)
    for (int x = 2; x < 6; ++x) (x < 4 ? nuc : cyto).at(x, y) = 0.9f;
  s.soft_masks = SoftMaskPair{cyto, nuc};
  return s;
}

TEST(SelectCells, ThresholdAndOrdering) {
  PredictionSet set;
  // EMPTY probability 0.99: 11 classes, logit L on EMPTY with e^L/(e^L+10)=0.99.
  set.slots.push_back(slot(kEmptyIndex, std::log(990.0)));
  set.slots.push_back(slot(3, 6.0));
  set.slots.push_back(slot(1, 8.0));
  const auto cells = select_cells(set, 0.5);
  ASSERT_EQ(cells.size(), 2u);
  EXPECT_EQ(cells[0].slot, 2);
  EXPECT_EQ(cells[1].slot, 1);
  EXPECT_EQ(cells[1].cell_class, CellClass::kMonocyte);

  PredictionSet empty_only;
  empty_only.slots.push_back(slot(kEmptyIndex, std::log(990.0)));
  try {
    select_cells(empty_only, 0.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNoDetection);
  }
  EXPECT_EQ(select_single_cell(empty_only).slot, 0);
}

TEST(SelectCells, NcRatioMatchesBinarizedMasks) {
  PredictionSet set;
  set.slots.push_back(slot(0, 5.0));
  const auto cell = select_single_cell(set);
  ASSERT_TRUE(cell.nc_ratio.has_value());
  EXPECT_DOUBLE_EQ(*cell.nc_ratio, compute_nc_ratio(cell.masks));
  EXPECT_DOUBLE_EQ(*cell.nc_ratio, 1.0);
}

TEST(PredictSingleCells, OnePredictionPerImage) {
  auto state = build_model(ModelConfig{});
  const auto images = sample_images(5, 6);
  const auto cells = predict_single_cells(state, images, 2);
  ASSERT_EQ(cells.size(), 5u);
  const auto sets = forward(state, images);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto expected = select_single_cell(sets[i]);
    EXPECT_EQ(cells[i].slot, expected.slot);
    EXPECT_EQ(cells[i].cell_class, expected.cell_class);
    EXPECT_EQ(cells[i].masks.nucleus, expected.masks.nucleus);
  }
}

}  // namespace
}  // namespace wbc

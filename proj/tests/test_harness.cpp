#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "wbc/harness.hpp"

namespace wbc {
namespace {

TrainConfig quick_config(int epochs = 2) {
  TrainConfig c = TrainConfig::toy();
  c.epochs = epochs;
  c.batch_size = 8;
  c.validation_fraction = 0.2;
  c.seed = 3;
  return c;
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
  TrainConfig c = TrainConfig::toy();
  c.augmentation.scale = true;
  c.loss.w_attr = {0.5, 1.0, 2.0, 3.0};
  c.model.explanation_hidden_layers = 4;
  const auto back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());

  auto j = c.to_json();
  j.erase("epochs");
  EXPECT_THROW(TrainConfig::from_json(j), Error);
  TrainConfig bad = c;
  bad.validation_fraction = 0.6;
  EXPECT_THROW(bad.validate(), Error);
  bad = c;
  bad.lr_main = 0.0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(TrainConfig, Presets) {
  const auto toy = TrainConfig::toy();
  EXPECT_EQ(toy.epochs, 30);
  EXPECT_EQ(toy.batch_size, 16);
  EXPECT_EQ(toy.model.encoder_layers, 2);
  EXPECT_EQ(toy.model.decoder_layers, 2);
  EXPECT_EQ(toy.model.d_model, 64);
  EXPECT_EQ(toy.model.num_queries, 10);
  const auto paper = TrainConfig::paper();
  EXPECT_EQ(paper.epochs, 200);
  EXPECT_EQ(paper.batch_size, 32);
  EXPECT_DOUBLE_EQ(paper.lr_main, 1e-4);
  EXPECT_DOUBLE_EQ(paper.lr_backbone, 1e-5);
  EXPECT_DOUBLE_EQ(paper.weight_decay, 1e-4);
  EXPECT_EQ(paper.model.encoder_layers, 6);
  EXPECT_EQ(paper.model.num_queries, 10);
  EXPECT_NO_THROW(paper.validate());
}

TEST(Train, DeterministicHistoryAndBestSnapshot) {
  const auto items = generate_dataset(GeneratorSpec::uniform(2, 11));
  const auto config = quick_config(3);
  int callbacks = 0;
  const auto a = train(items, config, [&](const EpochRecord&) { ++callbacks; });
  EXPECT_EQ(callbacks, 3);
  ASSERT_EQ(a.history.size(), 3u);
  for (int e = 0; e < 3; ++e) {
    EXPECT_EQ(a.history[e].epoch, e + 1);
    const auto& v = a.history[e].validation;
    EXPECT_NEAR(v.total, v.prediction + v.box + v.segmentation + v.explanation, 1e-9);
  }
  double best = a.history[0].validation.total;
  int best_epoch = 1;
  for (const auto& r : a.history) {
    if (r.validation.total < best) {
      best = r.validation.total;
      best_epoch = r.epoch;
    }
  }
  EXPECT_EQ(a.best_epoch, best_epoch);
  EXPECT_DOUBLE_EQ(a.best_validation_loss, best);

  const auto b = train(items, config);
  EXPECT_EQ(a.best.checksum(), b.best.checksum());
  for (int e = 0; e < 3; ++e) EXPECT_DOUBLE_EQ(a.history[e].train.total, b.history[e].train.total);
}

TEST(Train, EmptyInput) {
  try {
    train({}, quick_config());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kEmptyInput);
  }
}

TEST(Trainer, StepReducesLossOnFixedBatch) {
  auto items = generate_dataset(GeneratorSpec::uniform(1, 5));
  items.resize(4);
  std::vector<const LabeledImage*> batch;
  for (const auto& i : items) batch.push_back(&i);
  auto config = quick_config();
  auto state = build_model(config.model);
  Trainer trainer(state, config);
  const double first = trainer.step(batch).total;
  double last = first;
  for (int i = 0; i < 20; ++i) last = trainer.step(batch).total;
  EXPECT_LT(last, first);
}

TEST(Augment, DisabledOpsLeaveItemUntouched) {
  const auto items = generate_dataset(GeneratorSpec::uniform(1, 6));
  AugmentationConfig off{false, false, false, false, false, 1.0};
  Rng rng = make_rng(1, 2, 3);
  const auto out = augment_item(items[0], off, rng);
  EXPECT_EQ(out.pixels, items[0].pixels);
  EXPECT_EQ(out.annotations[0].masks, items[0].annotations[0].masks);
}

TEST(Evaluate, IdentityPredictionsScorePerfectly) {
  const auto items = generate_dataset(GeneratorSpec::uniform(3, 8));
  const auto preds = identity_predictions(items);
  const auto r = evaluate(preds, items);
  EXPECT_EQ(r.num_samples, 30);
  EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(r.macro_f1, 1.0);
  EXPECT_DOUBLE_EQ(r.mean_jaccard, 1.0);
  EXPECT_DOUBLE_EQ(r.mean_dice, 1.0);
  for (double a : r.attribute_accuracy) EXPECT_DOUBLE_EQ(a, 1.0);
  EXPECT_DOUBLE_EQ(r.nc_mse, 0.0);
  EXPECT_THROW(predict_items(*std::make_unique<ModelState>(build_model(ModelConfig{})), {}), Error);
}

TEST(Evaluate, ModelPathGivesOneSamplePerItem) {
  const auto items = generate_dataset(GeneratorSpec::uniform(1, 9));
  auto state = build_model(ModelConfig{});
  const auto r = evaluate(state, items);
  EXPECT_EQ(r.num_samples, 10);
  EXPECT_GE(r.accuracy, 0.0);
  EXPECT_LE(r.accuracy, 1.0);
}

TEST(CrossValidate, FiveFoldsOnFiftyItems) {
  const auto items = generate_dataset(GeneratorSpec::uniform(5, 12));
  auto config = quick_config(1);
  int seen = 0;
  const auto cv = cross_validate(items, 5, config, [&](int fold, const TrainResult& t, const MetricsReport& r) {
    EXPECT_EQ(fold, seen++);
    EXPECT_EQ(t.history.size(), 1u);
    EXPECT_EQ(r.num_samples, 10);
  });
  ASSERT_EQ(cv.folds.size(), 5u);
  std::vector<double> acc;
  for (const auto& f : cv.folds) acc.push_back(f.accuracy);
  const auto it = std::find_if(cv.summary.begin(), cv.summary.end(), [](const auto& s) { return s.name == "accuracy"; });
  ASSERT_NE(it, cv.summary.end());
  EXPECT_NEAR(it->mean, oracle::mean(acc), 1e-12);
  EXPECT_NEAR(it->stdev, oracle::sample_stdev(acc), 1e-12);
}

MetricsReport report_with(double f1, double dice) {
  MetricsReport r;
  r.num_samples = 10;
  r.macro_f1 = f1;
  r.mean_dice = dice;
  r.attribute_accuracy = {0.1, 0.2, 0.3, 0.4};
  r.nc_mse = 0.05;
  return r;
}

TEST(Variant, RowValuesFollowRowOrder) {
  const auto v = variant_row_values(report_with(0.7, 0.9));
  EXPECT_EQ(kVariantRows.size(), 10u);
  EXPECT_STREQ(kVariantRows[0], "Dice Score");
  EXPECT_DOUBLE_EQ(v[0], 0.9);
  EXPECT_STREQ(kVariantRows[4], "F1 score");
  EXPECT_DOUBLE_EQ(v[4], 0.7);
  EXPECT_DOUBLE_EQ(v[5], 0.1);
  EXPECT_DOUBLE_EQ(v[8], 0.4);
  EXPECT_STREQ(kVariantRows[9], "N:C MSE");
  EXPECT_DOUBLE_EQ(v[9], 0.05);
}

TEST(Variant, ColumnStatisticsMatchOracle) {
  const auto col = make_variant_column(2, {report_with(0.5, 0.8), report_with(0.7, 0.6), report_with(0.9, 0.7)});
  EXPECT_EQ(col.hidden_layers, 2);
  EXPECT_NEAR(col.rows[4].mean, oracle::mean({0.5, 0.7, 0.9}), 1e-12);
  EXPECT_NEAR(col.rows[4].stdev, oracle::sample_stdev({0.5, 0.7, 0.9}), 1e-12);
  EXPECT_NEAR(col.rows[0].mean, 0.7, 1e-12);
  EXPECT_DOUBLE_EQ(make_variant_column(0, {report_with(0.5, 0.5)}).rows[4].stdev, 0.0);
  EXPECT_THROW(make_variant_column(0, {}), Error);
}

TEST(Variant, SelectionPicksArgmaxF1) {
  std::vector<VariantColumn> cols = {make_variant_column(0, {report_with(0.6, 0.9)}),
                                     make_variant_column(2, {report_with(0.8, 0.1)}),
                                     make_variant_column(4, {report_with(0.8, 0.5)})};
  EXPECT_EQ(select_best_by_f1(cols), 1);
  cols[2] = make_variant_column(4, {report_with(0.81, 0.5)});
  EXPECT_EQ(select_best_by_f1(cols), 2);
  EXPECT_THROW(select_best_by_f1({}), Error);
}

TEST(Variant, TableTextHasRowSchema) {
  VariantTable t;
  t.columns = {make_variant_column(0, {report_with(0.6, 0.9)}), make_variant_column(2, {report_with(0.8, 0.1)})};
  t.best = select_best_by_f1(t.columns);
  const auto text = t.to_text();
  std::size_t pos = 0;
  for (const char* row : kVariantRows) {
    const auto at = text.find(std::string("\n") + row + " |", pos);
    ASSERT_NE(at, std::string::npos) << row;
    pos = at + 1;
  }
  EXPECT_NE(text.find("best_by_f1=2\n"), std::string::npos);
}

TEST(Variant, StudyOnTinyData) {
  const auto items = generate_dataset(GeneratorSpec::uniform(3, 13));
  auto config = quick_config(1);
  VariantStudyOptions opts;
  int runs = 0;
  const auto table = variant_study(items, config, opts, [&](int, int, const MetricsReport&) { ++runs; });
  EXPECT_EQ(runs, 3);
  ASSERT_EQ(table.columns.size(), 3u);
  EXPECT_EQ(table.columns[0].hidden_layers, 0);
  EXPECT_EQ(table.columns[2].hidden_layers, 4);
  EXPECT_EQ(table.best, select_best_by_f1(table.columns));
  opts.hidden_layer_options = {3};
  EXPECT_THROW(variant_study(items, config, opts), Error);
}

TEST(GradientCheck, AllComponentsPass) {
  GradientCheckOptions opts;
  opts.points = 20;
  const auto report = gradient_check(opts);
  EXPECT_TRUE(report.passed()) << report.to_text();
  std::vector<std::string> names;
  for (const auto& e : report.entries) {
    names.push_back(e.component);
    EXPECT_EQ(e.points, 20);
    EXPECT_LE(e.max_relative_error, 1e-4);
  }
  for (const char* c : {"prediction", "giou", "l1_box", "dice", "focal", "explanation", "composite"}) {
    EXPECT_NE(std::find(names.begin(), names.end(), c), names.end()) << c;
  }
  EXPECT_NE(report.to_text().find("status=pass\n"), std::string::npos);
}

TEST(GradientCheck, CorruptedGradientIsCaught) {
  GradientCheckOptions opts;
  opts.points = 5;
  opts.corrupt_gradient = [](torch::Tensor& g) { g.mul_(1.01); };
  const auto report = gradient_check(opts);
  EXPECT_FALSE(report.passed());
  for (const auto& e : report.entries) EXPECT_FALSE(e.passed) << e.component;
}

}  // namespace
}  // namespace wbc

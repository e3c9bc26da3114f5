#include <gtest/gtest.h>

#include <set>

#include "wbc/synthcell.hpp"

namespace wbc {
namespace {

using A = std::array<int, 4>;

TEST(RuleTable, MatchesMorphologyConvention) {
  // granularity yes=0/no=1; color eosinophilic=0/basophilic=1;
  // shape horseshoe=0/bilobed=1/round=2; size larger=0/similar=1/smaller=2.
  const std::map<CellClass, A> expected = {
      {CellClass::kNeutrophil, {0, 0, 1, 1}},    {CellClass::kLymphocyte, {1, 1, 2, 1}},
      {CellClass::kEosinophil, {0, 0, 1, 0}},    {CellClass::kMonocyte, {1, 1, 0, 0}},
      {CellClass::kBasophil, {0, 1, 1, 1}},      {CellClass::kBandCell, {0, 0, 0, 0}},
      {CellClass::kMetamyelocyte, {0, 0, 0, 1}}, {CellClass::kMyelocyte, {0, 0, 2, 0}},
      {CellClass::kPromyelocyte, {0, 1, 2, 0}},  {CellClass::kBlastCell, {1, 1, 2, 0}},
  };
  for (const auto& [c, v] : expected) EXPECT_EQ(class_attributes(c).values(), v) << cell_class_name(c);
}

TEST(RuleTable, ClassesSeparableByAttributesPlusNcBand) {
  const auto types = all_cell_types();
  for (std::size_t i = 0; i < types.size(); ++i)
    for (std::size_t j = i + 1; j < types.size(); ++j) {
      EXPECT_NE(class_attributes(types[i]), class_attributes(types[j]));
      const auto [a0, a1] = nc_band(types[i]);
      const auto [b0, b1] = nc_band(types[j]);
      EXPECT_TRUE(a1 <= b0 || b1 <= a0) << cell_class_name(types[i]) << " vs " << cell_class_name(types[j]);
      EXPECT_LT(a0, a1);
    }
}

TEST(GenerateCell, LabelsConsistentWithRender) {
  GeneratorSpec spec;
  for (CellClass c : all_cell_types()) {
    for (int i = 0; i < 20; ++i) {
      Rng rng = make_rng(99, static_cast<std::uint64_t>(i) * 16 + to_index(c));
      const auto img = generate_cell(c, rng, spec);
      ASSERT_EQ(img.annotations.size(), 1u);
      const auto& a = img.annotations[0];
      EXPECT_EQ(img.pixels.width, 64);
      EXPECT_EQ(img.pixels.height, 64);
      EXPECT_EQ(a.cell_class, c);
      EXPECT_EQ(a.attributes, class_attributes(c));
      EXPECT_NO_THROW(a.validate(64, 64));
      EXPECT_DOUBLE_EQ(a.nc_ratio, compute_nc_ratio(a.masks));
      for (std::size_t p = 0; p < a.masks.cytoplasm.size(); ++p)
        EXPECT_FALSE(a.masks.cytoplasm.data[p] && a.masks.nucleus.data[p]) << "regions overlap";
      // Box is the tight union box.
      EXPECT_EQ(a.box, mask_union_box(a.masks));
    }
  }
}

TEST(GenerateCell, NcRatioNearClassBand) {
  for (CellClass c : all_cell_types()) {
    const auto [lo, hi] = nc_band(c);
    for (int i = 0; i < 20; ++i) {
      Rng rng = make_rng(5, static_cast<std::uint64_t>(i), to_index(c));
      const double nc = generate_cell(c, rng).annotations[0].nc_ratio;
      // Rasterization moves the ratio slightly off the drawn target.
      EXPECT_GT(nc, lo - 0.1) << cell_class_name(c);
      EXPECT_LT(nc, hi + 0.1) << cell_class_name(c);
    }
  }
}

TEST(GenerateDataset, DeterministicAndOrdered) {
  const auto spec = GeneratorSpec::uniform(10, 7);
  const auto a = generate_dataset(spec);
  const auto b = generate_dataset(spec);
  ASSERT_EQ(a.size(), 100u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].pixels, b[i].pixels);
    EXPECT_EQ(a[i].annotations[0].masks, b[i].annotations[0].masks);
    EXPECT_EQ(a[i].annotations[0].cell_class, all_cell_types()[i / 10]);
  }
  auto other = spec;
  other.rng_seed = 8;
  EXPECT_NE(generate_dataset(other)[0].pixels, a[0].pixels);
}

TEST(GenerateDataset, ItemDependsOnlyOnSeedAndIndex) {
  auto spec = GeneratorSpec::uniform(3, 4);
  const auto all = generate_dataset(spec);
  // Item 4 is the second lymphocyte; rendering it alone from its stream gives
  // the same pixels.
  Rng rng = make_rng(4, 4);
  EXPECT_EQ(generate_cell(CellClass::kLymphocyte, rng, spec).pixels, all[4].pixels);
}

TEST(GenerateDataset, EmptyAndSingleClass) {
  GeneratorSpec empty;
  EXPECT_TRUE(generate_dataset(empty).empty());
  GeneratorSpec eos;
  eos.per_class_count[CellClass::kEosinophil] = 100;
  const auto items = generate_dataset(eos);
  ASSERT_EQ(items.size(), 100u);
  for (const auto& it : items) EXPECT_EQ(it.annotations[0].cell_class, CellClass::kEosinophil);
}

TEST(GeneratorSpec, Validation) {
  GeneratorSpec s;
  s.image_size = 16;
  EXPECT_THROW(s.validate(), Error);
  s = GeneratorSpec{};
  s.per_class_count[CellClass::kBasophil] = -1;
  EXPECT_THROW(s.validate(), Error);
  s = GeneratorSpec{};
  s.noise_level = 1.5;
  EXPECT_THROW(s.validate(), Error);
  s = GeneratorSpec{};
  s.per_class_count[CellClass::kEmpty] = 1;
  EXPECT_THROW(s.validate(), Error);
}

class AugmentTest : public ::testing::Test {
 protected:
  LabeledImage img = [] {
    Rng rng = make_rng(1, 2);
    return generate_cell(CellClass::kMonocyte, rng);
  }();
};

TEST_F(AugmentTest, HFlipReflectsBox) {
  const auto f = hflip(img);
  const auto& a = img.annotations[0].box;
  const auto& b = f.annotations[0].box;
  EXPECT_NEAR(b.cx(), 1.0 - a.cx(), 1e-12);
  EXPECT_DOUBLE_EQ(b.cy(), a.cy());
  EXPECT_NEAR(b.w(), a.w(), 1e-12);
  EXPECT_DOUBLE_EQ(b.h(), a.h());
  EXPECT_EQ(f.pixels.pixel(0, 5)[0], img.pixels.pixel(63, 5)[0]);
}

TEST_F(AugmentTest, VFlipIsInvolution) {
  const auto twice = vflip(vflip(img));
  EXPECT_EQ(twice.pixels, img.pixels);
  EXPECT_EQ(twice.annotations[0].masks, img.annotations[0].masks);
  EXPECT_EQ(twice.annotations[0].box, img.annotations[0].box);
}

TEST_F(AugmentTest, Rotate90PreservesNcAndCountsExactly) {
  for (double deg : {90.0, 180.0, 270.0, -90.0}) {
    const auto r = rotate_by(img, deg);
    const auto& a = r.annotations[0];
    EXPECT_EQ(a.nc_ratio, img.annotations[0].nc_ratio);
    EXPECT_EQ(count_set(a.masks.nucleus), count_set(img.annotations[0].masks.nucleus));
    EXPECT_NO_THROW(a.validate(64, 64));
  }
  const auto four = rotate_by(rotate_by(rotate_by(rotate_by(img, 90), 90), 90), 90);
  EXPECT_EQ(four.pixels, img.pixels);
}

TEST_F(AugmentTest, ArbitraryRotationAndScaleKeepNcWithinFivePercent) {
  for (double deg : {17.0, 33.0, -50.0}) {
    const auto r = rotate_by(img, deg);
    EXPECT_NEAR(r.annotations[0].nc_ratio / img.annotations[0].nc_ratio, 1.0, 0.05);
    EXPECT_NO_THROW(r.annotations[0].validate(64, 64));
  }
  for (double s : {0.8, 1.15}) {
    const auto r = scale_by(img, s);
    EXPECT_NEAR(r.annotations[0].nc_ratio / img.annotations[0].nc_ratio, 1.0, 0.05);
    EXPECT_NO_THROW(r.annotations[0].validate(64, 64));
  }
}

TEST_F(AugmentTest, TranslateMovesBoxByPixels) {
  const auto t = translate_by(img, 3, -2);
  EXPECT_NEAR(t.annotations[0].box.cx(), img.annotations[0].box.cx() + 3.0 / 64, 1e-12);
  EXPECT_NEAR(t.annotations[0].box.cy(), img.annotations[0].box.cy() - 2.0 / 64, 1e-12);
  EXPECT_EQ(t.annotations[0].nc_ratio, img.annotations[0].nc_ratio);
}

TEST_F(AugmentTest, OutOfFrameIsDegenerate) {
  try {
    translate_by(img, 64, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDegenerateAugment);
  }
  EXPECT_THROW(scale_by(img, 5.0), Error);
}

TEST_F(AugmentTest, RandomOpsKeepLabels) {
  Rng rng(123);
  for (AugmentOp op : {AugmentOp::kScale, AugmentOp::kRotate, AugmentOp::kTranslate, AugmentOp::kHFlip,
                       AugmentOp::kVFlip}) {
    for (int i = 0; i < 20; ++i) {
      const auto out = augment(img, op, rng);
      const auto& a = out.annotations[0];
      EXPECT_EQ(a.cell_class, CellClass::kMonocyte);
      EXPECT_EQ(a.attributes, img.annotations[0].attributes);
      EXPECT_NO_THROW(a.validate(64, 64));
    }
  }
}

}  // namespace
}  // namespace wbc

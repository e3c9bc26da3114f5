#pragma once

// On-disk dataset layout:
//
//   root/manifest                    JSON: format, version, split_seed, items
//   root/images/<id>.png             8-bit RGB, lossless
//   root/masks/<id>_<k>_cyto.png     cell k cytoplasm, single channel 0/255
//   root/masks/<id>_<k>_nuc.png      cell k nucleus, single channel 0/255
//   root/annotations/<id>.json       per-sample record (see README)
//
// Boxes are normalized center form. nc_ratio is stored and recomputed on load;
// a disagreement above 1e-9 is CorruptMask.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "wbc/core.hpp"
#include "wbc/synthcell.hpp"

namespace wbc {

inline constexpr const char* kDatasetFormat = "wbc-dataset";
inline constexpr const char* kDatasetVersion = "1";

struct ManifestItem {
  std::string id;
  std::string image_path;       // relative to root
  std::string annotation_path;  // relative to root
};

struct DatasetManifest {
  std::string version = kDatasetVersion;
  std::vector<ManifestItem> items;
  std::uint64_t split_seed = 0;
};

DatasetManifest save_dataset(const std::vector<LabeledImage>& items,
                             const std::filesystem::path& root, std::uint64_t split_seed = 0);
std::vector<LabeledImage> load_dataset(const std::filesystem::path& root);
DatasetManifest read_manifest(const std::filesystem::path& root);

// Single-image helpers shared with the CLI.
void write_png(const RgbImage& img, const std::filesystem::path& path);
RgbImage read_png_rgb(const std::filesystem::path& path);

// Class of the first annotation; the unit of stratification.
CellClass primary_class(const LabeledImage& item);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Stratified by class, deterministic in seed. The train count is
// round(fraction * n) distributed over classes by largest remainder, keeping
// at least one item of every class on each side. ClassTooSmall if a class has
// fewer than 2 items.
Split split_train_test(const std::vector<LabeledImage>& items, double fraction, std::uint64_t seed);
Split split_train_test(const std::vector<CellClass>& labels, double fraction, std::uint64_t seed);

struct FoldPlan {
  int k = 5;
  std::vector<int> assignments;  // item index -> fold

  std::vector<std::size_t> fold_items(int fold) const;
  std::vector<std::size_t> complement(int fold) const;
};

// Stratified k-fold partition; fold sizes differ by at most one.
// ClassTooSmall if a class present has fewer than k items.
FoldPlan make_folds(const std::vector<LabeledImage>& items, int k, std::uint64_t seed);
FoldPlan make_folds(const std::vector<CellClass>& labels, int k, std::uint64_t seed);

}  // namespace wbc

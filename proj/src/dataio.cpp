#include "wbc/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include <json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace wbc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string item_id(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return buf;
}

void write_mask_png(const BinaryMask& mask, const fs::path& path) {
  cv::Mat m(mask.height, mask.width, CV_8UC1);
  for (std::size_t i = 0; i < mask.data.size(); ++i) m.data[i] = mask.data[i] ? 255 : 0;
  if (!cv::imwrite(path.string(), m)) throw Error(ErrorKind::kIo, "cannot write " + path.string());
}

BinaryMask read_mask_png(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::kMissingFile, path.string());
  const cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty() || m.type() != CV_8UC1) {
    throw Error(ErrorKind::kCorruptMask, "not a single-channel 8-bit mask: " + path.string());
  }
  BinaryMask out(m.cols, m.rows);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) {
      if (row[x] != 0 && row[x] != 255) {
        throw Error(ErrorKind::kCorruptMask, "mask value outside {0,255}: " + path.string());
      }
      out.at(x, y) = row[x] ? 1 : 0;
    }
  }
  return out;
}

json read_json(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::kMissingFile, path.string());
  std::ifstream in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kSchemaMismatch, path.string() + ": " + e.what());
  }
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
}

template <typename T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) throw Error(ErrorKind::kSchemaMismatch, std::string("missing field ") + key);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kSchemaMismatch, std::string("field ") + key + ": " + e.what());
  }
}

}  // namespace

void write_png(const RgbImage& img, const fs::path& path) {
  cv::Mat rgb(img.height, img.width, CV_8UC3, const_cast<std::uint8_t*>(img.rgb.data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) throw Error(ErrorKind::kIo, "cannot write " + path.string());
}

RgbImage read_png_rgb(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::kMissingFile, path.string());
  const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw Error(ErrorKind::kIo, "unreadable image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  RgbImage out(rgb.cols, rgb.rows);
  const cv::Mat c = rgb.isContinuous() ? rgb : rgb.clone();
  std::copy(c.datastart, c.dataend, out.rgb.begin());
  return out;
}

DatasetManifest save_dataset(const std::vector<LabeledImage>& items, const fs::path& root,
                             std::uint64_t split_seed) {
  for (const char* sub : {"images", "masks", "annotations"}) fs::create_directories(root / sub);

  DatasetManifest manifest;
  manifest.split_seed = split_seed;
  json jitems = json::array();
  for (std::size_t i = 0; i < items.size(); ++i) {
    const LabeledImage& item = items[i];
    const std::string id = item_id(i);
    ManifestItem mi{id, "images/" + id + ".png", "annotations/" + id + ".json"};
    write_png(item.pixels, root / mi.image_path);

    json cells = json::array();
    for (std::size_t k = 0; k < item.annotations.size(); ++k) {
      const CellAnnotation& a = item.annotations[k];
      const std::string stem = "masks/" + id + "_" + std::to_string(k);
      write_mask_png(a.masks.cytoplasm, root / (stem + "_cyto.png"));
      write_mask_png(a.masks.nucleus, root / (stem + "_nuc.png"));
      json attrs = json::object();
      for (int att = 0; att < kNumAttributes; ++att) {
        attrs[std::string(attribute_name(att))] =
            std::string(attribute_value_name(att, a.attributes.value(att)));
      }
      cells.push_back({
          {"cell_class", std::string(cell_class_name(a.cell_class))},
          {"box", {{"cx", a.box.cx()}, {"cy", a.box.cy()}, {"w", a.box.w()}, {"h", a.box.h()}}},
          {"attributes", attrs},
          {"nc_ratio", a.nc_ratio},
          {"cytoplasm_mask", stem + "_cyto.png"},
          {"nucleus_mask", stem + "_nuc.png"},
      });
    }
    write_json({{"version", kDatasetVersion},
                {"image", mi.image_path},
                {"width", item.pixels.width},
                {"height", item.pixels.height},
                {"cells", cells}},
               root / mi.annotation_path);
    jitems.push_back({{"id", mi.id}, {"image", mi.image_path}, {"annotation", mi.annotation_path}});
    manifest.items.push_back(std::move(mi));
  }
  write_json({{"format", kDatasetFormat},
              {"version", manifest.version},
              {"split_seed", split_seed},
              {"items", jitems}},
             root / "manifest");
  return manifest;
}

DatasetManifest read_manifest(const fs::path& root) {
  const json j = read_json(root / "manifest");
  if (field<std::string>(j, "format") != kDatasetFormat) {
    throw Error(ErrorKind::kSchemaMismatch, "not a dataset manifest");
  }
  DatasetManifest m;
  m.version = field<std::string>(j, "version");
  if (m.version != kDatasetVersion) {
    throw Error(ErrorKind::kSchemaMismatch, "unsupported dataset version " + m.version);
  }
  m.split_seed = field<std::uint64_t>(j, "split_seed");
  for (const json& it : field<json>(j, "items")) {
    m.items.push_back({field<std::string>(it, "id"), field<std::string>(it, "image"),
                       field<std::string>(it, "annotation")});
  }
  return m;
}

std::vector<LabeledImage> load_dataset(const fs::path& root) {
  const DatasetManifest manifest = read_manifest(root);
  std::vector<LabeledImage> out;
  out.reserve(manifest.items.size());
  for (const ManifestItem& mi : manifest.items) {
    LabeledImage item;
    item.pixels = read_png_rgb(root / mi.image_path);
    const json rec = read_json(root / mi.annotation_path);
    if (field<std::string>(rec, "version") != kDatasetVersion) {
      throw Error(ErrorKind::kSchemaMismatch, "unsupported annotation version in " + mi.id);
    }
    if (field<int>(rec, "width") != item.pixels.width ||
        field<int>(rec, "height") != item.pixels.height) {
      throw Error(ErrorKind::kCorruptMask, "annotation size disagrees with image " + mi.id);
    }
    for (const json& cell : field<json>(rec, "cells")) {
      CellAnnotation a;
      a.cell_class = parse_cell_class(field<std::string>(cell, "cell_class"));
      if (a.cell_class == CellClass::kEmpty) {
        throw Error(ErrorKind::kSchemaMismatch, "EMPTY label in " + mi.id);
      }
      const json box = field<json>(cell, "box");
      try {
        a.box = BoundingBox::from_center(field<double>(box, "cx"), field<double>(box, "cy"),
                                         field<double>(box, "w"), field<double>(box, "h"));
      } catch (const Error& e) {
        throw Error(ErrorKind::kSchemaMismatch, std::string(e.what()) + " in " + mi.id);
      }
      const json attrs = field<json>(cell, "attributes");
      for (int att = 0; att < kNumAttributes; ++att) {
        const std::string key(attribute_name(att));
        a.attributes.set_value(att, parse_attribute_value(att, field<std::string>(attrs, key.c_str())));
      }
      a.masks.cytoplasm = read_mask_png(root / field<std::string>(cell, "cytoplasm_mask"));
      a.masks.nucleus = read_mask_png(root / field<std::string>(cell, "nucleus_mask"));
      a.nc_ratio = field<double>(cell, "nc_ratio");
      try {
        a.validate(item.pixels.width, item.pixels.height);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::kInvalidBox) {
          throw Error(ErrorKind::kSchemaMismatch, std::string(e.what()) + " in " + mi.id);
        }
        throw Error(ErrorKind::kCorruptMask, std::string(e.what()) + " in " + mi.id);
      }
      item.annotations.push_back(std::move(a));
    }
    out.push_back(std::move(item));
  }
  return out;
}

// ---------------------------------------------------------------------------

CellClass primary_class(const LabeledImage& item) {
  if (item.annotations.empty()) throw Error(ErrorKind::kEmptyInput, "image without annotations");
  return item.annotations.front().cell_class;
}

namespace {

std::vector<CellClass> labels_of(const std::vector<LabeledImage>& items) {
  std::vector<CellClass> labels;
  labels.reserve(items.size());
  for (const auto& it : items) labels.push_back(primary_class(it));
  return labels;
}

// Per-class index lists, each shuffled with the seed; classes in enum order.
std::map<CellClass, std::vector<std::size_t>> shuffled_groups(const std::vector<CellClass>& labels,
                                                              std::uint64_t seed) {
  std::map<CellClass, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
  for (auto& [c, idx] : groups) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(to_index(c)), 0x5117);
    std::shuffle(idx.begin(), idx.end(), rng);
  }
  return groups;
}

}  // namespace

Split split_train_test(const std::vector<LabeledImage>& items, double fraction, std::uint64_t seed) {
  return split_train_test(labels_of(items), fraction, seed);
}

Split split_train_test(const std::vector<CellClass>& labels, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "fraction must lie in (0,1)");
  }
  auto groups = shuffled_groups(labels, seed);
  for (const auto& [c, idx] : groups) {
    if (idx.size() < 2) {
      throw Error(ErrorKind::kClassTooSmall,
                  std::string(cell_class_name(c)) + " has fewer than 2 items");
    }
  }

  // Largest-remainder apportionment of the global train count.
  const auto target = static_cast<std::size_t>(std::llround(fraction * labels.size()));
  struct Quota {
    CellClass c;
    std::size_t take;
    double remainder;
  };
  std::vector<Quota> quotas;
  std::size_t assigned = 0;
  for (const auto& [c, idx] : groups) {
    const double exact = fraction * static_cast<double>(idx.size());
    const auto base = static_cast<std::size_t>(std::floor(exact));
    quotas.push_back({c, base, exact - static_cast<double>(base)});
    assigned += base;
  }
  std::vector<std::size_t> order(quotas.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return quotas[a].remainder > quotas[b].remainder;
  });
  for (std::size_t i = 0; assigned < target && i < order.size(); ++i, ++assigned) {
    ++quotas[order[i]].take;
  }

  Split split;
  for (const Quota& q : quotas) {
    const auto& idx = groups[q.c];
    const std::size_t take = std::clamp<std::size_t>(q.take, 1, idx.size() - 1);
    split.train.insert(split.train.end(), idx.begin(), idx.begin() + static_cast<long>(take));
    split.test.insert(split.test.end(), idx.begin() + static_cast<long>(take), idx.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

std::vector<std::size_t> FoldPlan::fold_items(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] == fold) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldPlan::complement(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] != fold) out.push_back(i);
  }
  return out;
}

FoldPlan make_folds(const std::vector<LabeledImage>& items, int k, std::uint64_t seed) {
  return make_folds(labels_of(items), k, seed);
}

FoldPlan make_folds(const std::vector<CellClass>& labels, int k, std::uint64_t seed) {
  if (k < 2) throw Error(ErrorKind::kInvalidArgument, "k must be >= 2");
  const auto groups = shuffled_groups(labels, seed);
  for (const auto& [c, idx] : groups) {
    if (idx.size() < static_cast<std::size_t>(k)) {
      throw Error(ErrorKind::kClassTooSmall, std::string(cell_class_name(c)) + " has fewer than " +
                                                 std::to_string(k) + " items");
    }
  }
  FoldPlan plan;
  plan.k = k;
  plan.assignments.assign(labels.size(), -1);
  // Dealing the class-grouped sequence round-robin keeps both the global fold
  // sizes and every class's per-fold counts within one of each other.
  std::size_t position = 0;
  for (const auto& [c, idx] : groups) {
    for (std::size_t i : idx) plan.assignments[i] = static_cast<int>(position++ % k);
  }
  return plan;
}

}  // namespace wbc

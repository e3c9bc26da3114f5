// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Criteria 4-6 share one synthetic training run.
//
// usage: wbc_acceptance [work_dir]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "wbc/assignment.hpp"
#include "wbc/cli.hpp"
#include "wbc/faithfulness.hpp"
#include "wbc/dataio.hpp"
#include "wbc/harness.hpp"
#include "wbc/losses.hpp"

namespace fs = std::filesystem;
using namespace wbc;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) detail << " first failure: " << what << ";";
      pass = false;
    }
  }
};

int failures = 0;

void report(int id, const char* name, const Outcome& o) {
  std::cout << "criterion " << id << " [" << name << "]: " << (o.pass ? "PASS" : "FAIL") << " " << o.detail.str()
            << std::endl;
  if (!o.pass) ++failures;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

int cli(const std::vector<std::string>& args, std::string* out = nullptr) {
  std::ostringstream o, e;
  const int code = run_cli(args, o, e);
  if (out) *out = o.str();
  if (code != kExitOk) std::cerr << "wbc " << args.front() << " failed: " << e.str();
  return code;
}

// ---------------------------------------------------------------------------

void criterion_assignment() {
  Outcome o;
  std::mt19937_64 rng(1001);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  const auto t0 = Clock::now();
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 7);
    const int m = static_cast<int>(rng() % (n + 1));
    CostMatrix c(m, n);
    std::vector<std::vector<double>> rows(m, std::vector<double>(n));
    const bool integer = trial % 3 == 0;  // integer costs force ties
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) rows[i][j] = c(i, j) = integer ? static_cast<double>(rng() % 5) : u(rng);
    const auto match = hungarian(c);
    match.validate(n);
    if (assignment_cost(c, match) != oracle::brute_force_assignment(rows)) ++mismatches;
  }
  const double secs = seconds_since(t0);
  o.require(mismatches == 0, std::to_string(mismatches) + " matrices differ from exhaustive search");
  o.require(secs < 10.0, "runtime over 10 s");
  o.detail << "matrices=1000 mismatches=" << mismatches << " seconds=" << format_double(secs);
  report(1, "assignment exactness", o);
}

void criterion_gradients() {
  Outcome o;
  const auto t0 = Clock::now();
  GradientCheckOptions opts;
  opts.points = 100;
  opts.tolerance = 1e-4;
  opts.seed = 17;
  const auto r = gradient_check(opts);
  const double secs = seconds_since(t0);
  o.require(r.passed(), "relative error above 1e-4");
  o.require(r.entries.size() == 7, "expected seven components");
  o.require(secs < 60.0, "runtime over 60 s");
  for (const auto& e : r.entries) {
    o.require(e.points == 100, e.component + " point count");
    o.detail << e.component << "=" << format_double(e.max_relative_error) << " ";
  }
  o.detail << "seconds=" << format_double(secs);
  report(2, "gradient verification", o);
}

void criterion_metric_oracles() {
  Outcome o;
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  double worst_auc = 0.0;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> scores(200);
    std::vector<int> labels(200);
    for (int i = 0; i < 200; ++i) {
      labels[i] = u(rng) < 0.4;
      // Coarse scores so ties are common.
      scores[i] = std::round((u(rng) + 0.3 * labels[i]) * 20.0) / 20.0;
    }
    labels[0] = 0;
    labels[1] = 1;
    worst_auc = std::max(worst_auc, std::abs(roc_auc(scores, labels).auc - oracle::pairwise_auc(scores, labels)));
  }
  o.require(worst_auc <= 1e-9, "AUC differs from the pairwise estimator");

  int classification_bad = 0;
  for (int t = 0; t < 100; ++t) {
    const int n = 1 + static_cast<int>(rng() % 80);
    std::vector<int> p(n), g(n);
    std::vector<CellClass> pc(n), gc(n);
    for (int i = 0; i < n; ++i) {
      g[i] = static_cast<int>(rng() % 10);
      p[i] = u(rng) < 0.6 ? g[i] : static_cast<int>(rng() % 10);
      pc[i] = cell_class_from_index(p[i]);
      gc[i] = cell_class_from_index(g[i]);
    }
    const auto got = classification_metrics(pc, gc);
    const auto want = oracle::classification_counts(p, g);
    bool ok = std::abs(got.accuracy - want.accuracy) <= 1e-12 &&
              std::abs(got.macro_precision - want.macro_precision) <= 1e-12 &&
              std::abs(got.macro_f1 - want.macro_f1) <= 1e-12;
    for (int a = 0; a < 10; ++a)
      for (int b = 0; b < 10; ++b) {
        const auto it = want.confusion.find({a, b});
        ok = ok && got.confusion[a][b] == (it == want.confusion.end() ? 0 : it->second);
      }
    classification_bad += !ok;
  }
  o.require(classification_bad == 0, "classification metrics differ from the counting oracle");

  double worst_jaccard = 0.0, worst_dice = 0.0;
  for (int t = 0; t < 100; ++t) {
    std::vector<BoundingBox> pred, gt;
    double oracle_sum = 0.0;
    const int n = 1 + static_cast<int>(rng() % 10);
    for (int i = 0; i < n; ++i) {
      pred.push_back(BoundingBox::from_center(0.2 + 0.6 * u(rng), 0.2 + 0.6 * u(rng), 0.05 + 0.3 * u(rng), 0.05 + 0.3 * u(rng)));
      gt.push_back(BoundingBox::from_center(0.2 + 0.6 * u(rng), 0.2 + 0.6 * u(rng), 0.05 + 0.3 * u(rng), 0.05 + 0.3 * u(rng)));
      const auto a = pred.back().corners(), b = gt.back().corners();
      oracle_sum += oracle::corner_iou({a.x0, a.y0, a.x1, a.y1}, {b.x0, b.y0, b.x1, b.y1});
    }
    worst_jaccard = std::max(worst_jaccard, std::abs(mean_box_jaccard(pred, gt) - oracle_sum / n));

    const int w = 4 + static_cast<int>(rng() % 20), h = 4 + static_cast<int>(rng() % 20);
    const double density = u(rng);
    BinaryMask x(w, h), y(w, h);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x.data[i] = u(rng) < density;
      y.data[i] = u(rng) < density;
    }
    worst_dice = std::max(worst_dice, std::abs(dice_coefficient(x, y) - oracle::pixel_dice(x.data, y.data)));
  }
  o.require(worst_jaccard <= 1e-12, "Jaccard differs from the area oracle");
  o.require(worst_dice <= 1e-12, "Dice differs from the pixel oracle");
  o.detail << "auc_max_err=" << format_double(worst_auc) << " classification_mismatches=" << classification_bad
           << " jaccard_max_err=" << format_double(worst_jaccard) << " dice_max_err=" << format_double(worst_dice);
  report(3, "metric oracles", o);
}

// ---------------------------------------------------------------------------

struct EndToEnd {
  bool trained = false;
  fs::path run;
  std::vector<LabeledImage> test_items;
  std::vector<CellPrediction> predictions;
  MetricsReport report;
};

EndToEnd criterion_end_to_end(const fs::path& work) {
  Outcome o;
  EndToEnd e2e;
  const auto t0 = Clock::now();
  const fs::path data = work / "synthetic";
  e2e.run = work / "run";
  std::string gen_out;
  o.require(cli({"gen", "--per-class", "60", "--seed", "7", "--out", data.string()}, &gen_out) == kExitOk, "gen");
  o.require(gen_out.find("items 600\n") != std::string::npos, "gen did not emit 600 images");
  if (o.pass) {
    // Default (toy) configuration: 2+2 layers, width 64, 10 queries, 30 epochs, batch 16.
    o.require(cli({"train", "--data", data.string(), "--out", e2e.run.string()}) == kExitOk, "train");
  }
  if (o.pass) o.require(cli({"eval", "--run", e2e.run.string()}) == kExitOk, "eval");
  const double secs = seconds_since(t0);
  if (o.pass) {
    e2e.trained = true;
    e2e.report = MetricsReport::parse(read_file(e2e.run / "eval" / "report.txt"));
    const auto& r = e2e.report;
    o.require(r.num_samples == 120, "held-out set is not 20% of 600");
    o.require(r.accuracy >= 0.90, "accuracy < 0.90");
    o.require(r.mean_jaccard >= 0.75, "mean Jaccard < 0.75");
    o.require(r.mean_dice >= 0.85, "mean Dice < 0.85");
    for (int k = 0; k < kNumAttributes; ++k) {
      o.require(r.attribute_accuracy[k] >= 0.90, std::string(attribute_name(k)) + " accuracy < 0.90");
    }
    o.require(r.nc_mse <= 0.05, "N:C MSE > 0.05");
    o.detail << "accuracy=" << format_double(r.accuracy) << " jaccard=" << format_double(r.mean_jaccard)
             << " dice=" << format_double(r.mean_dice);
    for (int k = 0; k < kNumAttributes; ++k) {
      o.detail << " " << attribute_name(k) << "=" << format_double(r.attribute_accuracy[k]);
    }
    o.detail << " nc_mse=" << format_double(r.nc_mse) << " ";

    const auto split = nlohmann::json::parse(read_file(e2e.run / "split.json"));
    const auto all = load_dataset(data);
    for (const auto& i : split.at("test")) e2e.test_items.push_back(all[i.get<std::size_t>()]);
    ModelState state = load_checkpoint(e2e.run / "checkpoint.pt");
    e2e.predictions = predict_items(state, e2e.test_items);
  }
  o.require(secs <= 3 * 3600.0, "wall clock over 3 h");
  o.detail << "seconds=" << format_double(secs);
  report(4, "synthetic end-to-end", o);
  return e2e;
}

bool rows_sum_to_one(const AssociationTable& t, Outcome& o) {
  bool ok = true;
  for (CellClass c : all_cell_types()) {
    if (!t.present(c)) continue;
    for (int k = 0; k < kNumAttributes; ++k) {
      const auto& d = t.distribution(c, k);
      ok = ok && std::abs(std::accumulate(d.begin(), d.end(), 0.0) - 1.0) <= 1e-9;
    }
  }
  o.require(ok, "association vector does not sum to 1");
  return ok;
}

void criterion_faithfulness(const EndToEnd& e2e) {
  Outcome o;
  o.require(e2e.trained, "no model from criterion 4");
  if (e2e.trained) {
    const auto model = model_association(e2e.predictions, e2e.test_items);
    const auto truth = ground_truth_association(e2e.test_items);
    rows_sum_to_one(model, o);
    rows_sum_to_one(truth, o);
    const auto cmp = compare_associations(model, truth, 0.15);
    int eligible = 0;
    double worst = 0.0;
    for (CellClass c : all_cell_types()) {
      const auto acc = e2e.report.class_accuracy(c);
      if (!acc || *acc < 0.9) continue;
      ++eligible;
      for (const auto& g : cmp.gaps) {
        if (g.cell_class != c) continue;
        worst = std::max(worst, g.tv);
        o.require(g.tv <= 0.15, std::string(cell_class_name(c)) + "." + std::string(attribute_name(g.attribute)) +
                                    " TV > 0.15");
      }
    }
    o.detail << "eligible_classes=" << eligible << " max_tv_eligible=" << format_double(worst) << " ";
  }

  // Identity stub on a fresh dataset.
  const auto items = generate_dataset(GeneratorSpec::uniform(20, 55));
  const auto ident = compare_associations(model_association(identity_predictions(items), items),
                                          ground_truth_association(items));
  bool exact_zero = ident.gaps.size() == static_cast<std::size_t>(kNumCellTypes * kNumAttributes);
  for (const auto& g : ident.gaps) exact_zero = exact_zero && g.tv == 0.0;
  o.require(exact_zero, "identity stub TV is not exactly 0");
  o.detail << "identity_max_tv=" << format_double(ident.max_tv());
  report(5, "faithfulness", o);
}

void criterion_independence(const EndToEnd& e2e) {
  Outcome o;
  o.require(e2e.trained, "no model from criterion 4");
  if (e2e.trained) {
    const auto table = independence_analysis(e2e.predictions, e2e.test_items);
    const auto text = auc_table_text(table);
    int lines = 0, defined = 0, absent = 0;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (line.rfind("auc.", 0) != 0) continue;
      ++lines;
      const auto value = line.substr(line.find('=') + 1);
      if (value == "undefined") {
        ++absent;
      } else {
        ++defined;
      }
    }
    o.require(lines == kNumAttributeValues * kNumAucSplits, "AUC table is incomplete");
    int correct_split = 0;
    for (int f = 0; f < kNumAttributeValues; ++f) {
      const auto [k, v] = attribute_value_from_index(f);
      if (table.at(k, v, AucSplit::kCorrect)) ++correct_split;
      const auto& row = table.values[static_cast<std::size_t>(f)];
      for (const auto& cell : row) o.require(!cell || (*cell >= 0.0 && *cell <= 1.0), "AUC outside [0,1]");
    }
    o.detail << "entries=" << lines << " defined=" << defined << " absent=" << absent
             << " correct_split_defined=" << correct_split << " ";
  }

  // Label-independent scores.
  std::mt19937_64 rng(606);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<AttributeScores> probs;
  std::vector<ExplanationAttributes> truth;
  std::unique_ptr<bool[]> correct(new bool[1000]);
  for (int i = 0; i < 1000; ++i) {
    AttributeScores p;
    for (int k = 0; k < kNumAttributes; ++k) {
      p[k].resize(kAttributeCardinality[k]);
      double s = 0.0;
      for (auto& x : p[k]) s += (x = u(rng));
      for (auto& x : p[k]) x /= s;
    }
    probs.push_back(p);
    truth.push_back(ExplanationAttributes::from_values({static_cast<int>(rng() % 2), static_cast<int>(rng() % 2),
                                                        static_cast<int>(rng() % 3), static_cast<int>(rng() % 3)}));
    correct[i] = u(rng) < 0.5;
  }
  const auto null_table = independence_analysis(probs, truth, std::span<const bool>(correct.get(), 1000));
  double lo = 1.0, hi = 0.0;
  for (const auto& row : null_table.values)
    for (const auto& cell : row) {
      o.require(cell.has_value(), "null model AUC missing");
      if (!cell) continue;
      lo = std::min(lo, *cell);
      hi = std::max(hi, *cell);
    }
  o.require(lo >= 0.4 && hi <= 0.6, "null model AUC outside [0.4, 0.6]");
  o.detail << "null_auc_range=[" << format_double(lo) << ", " << format_double(hi) << "]";
  report(6, "independence analysis", o);
}

void criterion_variant_study(const fs::path& work) {
  Outcome o;
  const fs::path data = work / "variant_data";
  const fs::path out = work / "variant";
  o.require(cli({"gen", "--per-class", "6", "--seed", "21", "--out", data.string()}) == kExitOk, "gen");
  std::string printed;
  if (o.pass) {
    o.require(cli({"variant-study", "--data", data.string(), "--out", out.string(), "--options", "0,2,4", "--epochs",
                   "2", "--batch-size", "8"},
                  &printed) == kExitOk,
              "variant-study");
  }
  if (o.pass) {
    const auto text = read_file(out / "variant_table.txt");
    std::istringstream in(text);
    std::string header;
    std::getline(in, header);
    o.require(header == "Metrics | 0 hidden | 2 hidden | 4 hidden", "header row");
    std::vector<double> f1;
    for (const char* row : kVariantRows) {
      std::string line;
      std::getline(in, line);
      o.require(line.rfind(std::string(row) + " | ", 0) == 0, std::string("row ") + row);
      std::size_t cells = 0, pos = 0;
      while ((pos = line.find(" | ", pos)) != std::string::npos) {
        ++cells;
        pos += 3;
        if (std::string(row) == "F1 score") f1.push_back(std::stod(line.substr(pos)));
      }
      o.require(cells == 3, std::string("three columns in row ") + row);
    }
    std::string best;
    std::getline(in, best);
    const std::array<int, 3> hidden = {0, 2, 4};
    const auto argmax = static_cast<std::size_t>(std::max_element(f1.begin(), f1.end()) - f1.begin());
    o.require(f1.size() == 3 && best == "best_by_f1=" + std::to_string(hidden[argmax]), "selection is not the F1 argmax");
    o.detail << "rows=" << kVariantRows.size() << " " << best;
  }
  report(7, "variant study", o);
}

// ---------------------------------------------------------------------------

constexpr int kCases = 10000;

std::string suite_giou(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto box = [&] { return BoundingBox::from_center(u(rng), u(rng), 0.01 + 0.98 * u(rng), 0.01 + 0.98 * u(rng)); };
  for (int t = 0; t < kCases; ++t) {
    const auto a = box(), b = box();
    const double g = generalized_iou(a, b);
    if (!(g > -1.0 && g <= 1.0)) return "GIoU outside (-1, 1]";
    if (std::abs(generalized_iou(a, a) - 1.0) > 1e-12) return "GIoU(a, a) != 1";
    if (std::abs(g - generalized_iou(b, a)) > 1e-12) return "GIoU not symmetric";
    if (g > box_iou(a, b) + 1e-12) return "GIoU above IoU";
  }
  return {};
}

std::string suite_dice(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < kCases; ++t) {
    const int w = 1 + static_cast<int>(rng() % 12), h = 1 + static_cast<int>(rng() % 12);
    SoftMask s(w, h);
    BinaryMask target(w, h), other(w, h);
    const double density = u(rng);
    for (std::size_t i = 0; i < s.size(); ++i) {
      s.data[i] = static_cast<float>(u(rng));
      target.data[i] = u(rng) < density;
      other.data[i] = u(rng) < density;
    }
    const double l = dice_loss(s, target);
    if (!(l >= 0.0 && l <= 1.0)) return "dice loss outside [0, 1]";
    const double d = dice_coefficient(other, target);
    if (!(d >= 0.0 && d <= 1.0)) return "Dice coefficient outside [0, 1]";
    if (dice_coefficient(target, target) != 1.0) return "Dice(x, x) != 1";
  }
  return {};
}

std::string suite_loss_decomposition(std::mt19937_64& rng) {
  for (int t = 0; t < kCases; ++t) {
    const auto f = random_fixture(rng, 1 + static_cast<int>(rng() % 4));
    const LossWeights base;
    const auto full = composite_loss(f.preds, f.gts, f.match, base);
    if (std::abs(full.total - (full.prediction + full.box + full.segmentation + full.explanation)) > 1e-9) {
      return "total != sum of terms";
    }
    LossWeights w = base;
    switch (t % 3) {
      case 0:
        w.w_l1 = w.w_giou = 0.0;
        break;
      case 1:
        w.w_dice = w.w_fl = 0.0;
        break;
      default:
        w.w_attr = {0, 0, 0, 0};
    }
    const auto z = composite_loss(f.preds, f.gts, f.match, w);
    const double removed = t % 3 == 0 ? full.box : t % 3 == 1 ? full.segmentation : full.explanation;
    const double zeroed = t % 3 == 0 ? z.box : t % 3 == 1 ? z.segmentation : z.explanation;
    if (zeroed != 0.0) return "zeroed term is not 0";
    if (std::abs(z.total - (full.total - removed)) > 1e-9) return "remaining terms changed";
  }
  return {};
}

std::string suite_augmentation(std::mt19937_64& rng) {
  GeneratorSpec spec;
  spec.image_size = 48;
  for (int t = 0; t < kCases; ++t) {
    Rng cell_rng = make_rng(77, static_cast<std::uint64_t>(t));
    const auto img = generate_cell(cell_class_from_index(t % kNumCellTypes), cell_rng, spec);
    LabeledImage out;
    switch (rng() % 4) {
      case 0:
        out = hflip(img);
        break;
      case 1:
        out = vflip(img);
        break;
      case 2:
        out = rotate_by(img, 90.0 * static_cast<double>(1 + rng() % 3));
        break;
      default:
        out = hflip(vflip(img));
    }
    const auto& a = img.annotations[0];
    const auto& b = out.annotations[0];
    if (a.cell_class != b.cell_class || !(a.attributes == b.attributes)) return "labels changed";
    if (a.nc_ratio != b.nc_ratio) return "N:C changed under a lossless transform";
    if (!(b.box == mask_union_box(b.masks))) return "box disagrees with transformed masks";
    try {
      b.validate(out.pixels.width, out.pixels.height);
    } catch (const Error& e) {
      return std::string("invalid annotation: ") + e.what();
    }
  }
  return {};
}

std::string suite_dataset_round_trip(const fs::path& work) {
  const fs::path root = work / "round_trip";
  constexpr int kChunk = 1000;
  for (int chunk = 0; chunk < kCases / kChunk; ++chunk) {
    auto spec = GeneratorSpec::uniform(kChunk / kNumCellTypes, 900 + static_cast<std::uint64_t>(chunk));
    spec.noise_level = 0.05 * (chunk % 5);
    auto items = generate_dataset(spec);
    // Some images with two cells.
    for (std::size_t i = 0; i + 1 < items.size(); i += 97) items[i].annotations.push_back(items[i + 1].annotations[0]);
    fs::remove_all(root);
    save_dataset(items, root, static_cast<std::uint64_t>(chunk));
    const auto back = load_dataset(root);
    if (back.size() != items.size()) return "item count changed";
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (!(back[i].pixels == items[i].pixels)) return "pixels changed";
      if (back[i].annotations.size() != items[i].annotations.size()) return "annotation count changed";
      for (std::size_t k = 0; k < items[i].annotations.size(); ++k) {
        const auto& x = items[i].annotations[k];
        const auto& y = back[i].annotations[k];
        if (x.cell_class != y.cell_class || !(x.box == y.box) || !(x.masks == y.masks) ||
            !(x.attributes == y.attributes) || x.nc_ratio != y.nc_ratio) {
          return "annotation changed";
        }
      }
    }
  }
  fs::remove_all(root);
  return {};
}

std::string suite_forward(std::mt19937_64& rng) {
  ModelConfig config;
  config.seed = 8;
  auto state = build_model(config);
  std::uniform_int_distribution<int> px(0, 255);
  constexpr int kBatch = 50;
  const std::array<int, 4> sizes = {32, 48, 64, 80};
  for (int start = 0; start < kCases; start += kBatch) {
    const int side = sizes[static_cast<std::size_t>(start / kBatch) % sizes.size()];
    std::vector<RgbImage> images;
    for (int i = 0; i < kBatch; ++i) {
      RgbImage img(side, side);
      const int mode = static_cast<int>(rng() % 3);
      for (auto& v : img.rgb) v = mode == 0 ? 0 : mode == 1 ? static_cast<std::uint8_t>(px(rng)) : 255;
      images.push_back(std::move(img));
    }
    images[1] = images[0];
    const auto a = forward(state, images);
    const auto b = forward(state, images);
    if (a.size() != images.size()) return "wrong batch size";
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].slots.size() != static_cast<std::size_t>(config.num_queries)) return "wrong slot count";
      for (std::size_t j = 0; j < a[i].slots.size(); ++j) {
        const auto& s = a[i].slots[j];
        const auto& r = b[i].slots[j];
        if (!s.soft_masks || s.soft_masks->cytoplasm.width != side || s.soft_masks->nucleus.height != side) {
          return "mask shape";
        }
        for (int k = 0; k < kNumAttributes; ++k) {
          if (static_cast<int>(s.attribute_scores[k].size()) != kAttributeCardinality[k]) return "attribute shape";
        }
        for (double v : s.class_scores) {
          if (!std::isfinite(v)) return "non-finite class score";
        }
        const auto c = s.box.corners();
        if (c.x0 < 0.0 || c.y0 < 0.0 || c.x1 > 1.0 || c.y1 > 1.0) return "box outside the unit square";
        if (s.class_scores != r.class_scores || !(s.box == r.box) || s.attribute_scores != r.attribute_scores ||
            s.soft_masks->nucleus.data != r.soft_masks->nucleus.data) {
          return "repeated forward differs";
        }
        if (i == 1 && (s.class_scores != a[0].slots[j].class_scores ||
                       s.soft_masks->cytoplasm.data != a[0].slots[j].soft_masks->cytoplasm.data)) {
          return "duplicate image in batch differs";
        }
      }
    }
  }
  return {};
}

void criterion_properties(const fs::path& work) {
  Outcome o;
  std::mt19937_64 rng(808);
  const std::vector<std::pair<std::string, std::function<std::string()>>> suites = {
      {"giou", [&] { return suite_giou(rng); }},
      {"dice", [&] { return suite_dice(rng); }},
      {"loss_decomposition", [&] { return suite_loss_decomposition(rng); }},
      {"augmentation", [&] { return suite_augmentation(rng); }},
      {"dataset_round_trip", [&] { return suite_dataset_round_trip(work); }},
      {"forward", [&] { return suite_forward(rng); }},
  };
  for (const auto& [name, run] : suites) {
    const auto t0 = Clock::now();
    std::string failure;
    try {
      failure = run();
    } catch (const std::exception& e) {
      failure = std::string("exception: ") + e.what();
    }
    o.require(failure.empty(), name + ": " + failure);
    o.detail << name << "=" << (failure.empty() ? "ok" : "fail") << "(" << kCases << " cases, "
             << format_double(std::round(seconds_since(t0) * 10.0) / 10.0) << " s) ";
  }
  report(8, "property suites", o);
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "wbc_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);
  torch::set_num_threads(1);

  criterion_assignment();
  criterion_gradients();
  criterion_metric_oracles();
  const EndToEnd e2e = criterion_end_to_end(work);
  criterion_faithfulness(e2e);
  criterion_independence(e2e);
  criterion_variant_study(work);
  criterion_properties(work);

  std::cout << (failures == 0 ? "acceptance: all criteria passed" : "acceptance: " + std::to_string(failures) + " failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}

#include "wbc/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>

namespace wbc {

namespace {

template <typename A, typename B>
void check_paired(const A& a, const B& b, const char* what) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::kDimensionMismatch, std::string(what) + ": " + std::to_string(a.size()) +
                                                   " predictions vs " + std::to_string(b.size()) +
                                                   " references");
  }
  if (a.empty()) throw Error(ErrorKind::kEmptyInput, what);
}

constexpr std::array<int, kNumAttributes> kValueOffset = {0, 2, 4, 7};

}  // namespace

ClassificationMetrics classification_metrics(std::span<const CellClass> pred,
                                             std::span<const CellClass> truth) {
  check_paired(pred, truth, "classification_metrics");
  ClassificationMetrics m;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == CellClass::kEmpty || truth[i] == CellClass::kEmpty) {
      throw Error(ErrorKind::kInvalidArgument, "EMPTY is not a classification label");
    }
    ++m.confusion[static_cast<std::size_t>(to_index(truth[i]))][static_cast<std::size_t>(to_index(pred[i]))];
  }
  long correct = 0;
  double precision_sum = 0.0, f1_sum = 0.0;
  int present = 0;
  for (int c = 0; c < kNumCellTypes; ++c) {
    const auto uc = static_cast<std::size_t>(c);
    const long tp = m.confusion[uc][uc];
    correct += tp;
    long row = 0, col = 0;
    for (int o = 0; o < kNumCellTypes; ++o) {
      row += m.confusion[uc][static_cast<std::size_t>(o)];
      col += m.confusion[static_cast<std::size_t>(o)][uc];
    }
    if (row == 0) continue;
    ++present;
    const double precision = col > 0 ? static_cast<double>(tp) / col : 0.0;
    const double recall = static_cast<double>(tp) / row;
    precision_sum += precision;
    f1_sum += precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(pred.size());
  m.macro_precision = precision_sum / present;
  m.macro_f1 = f1_sum / present;
  return m;
}

double mean_box_jaccard(std::span<const BoundingBox> pred, std::span<const BoundingBox> gt) {
  check_paired(pred, gt, "mean_box_jaccard");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += box_iou(pred[i], gt[i]);
  return sum / static_cast<double>(pred.size());
}

double dice_coefficient(const BinaryMask& pred, const BinaryMask& gt) {
  if (!pred.same_shape(gt.width, gt.height)) {
    throw Error(ErrorKind::kDimensionMismatch, "dice_coefficient: mask shapes differ");
  }
  long inter = 0, total = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool a = pred.data[i] != 0, b = gt.data[i] != 0;
    inter += a && b;
    total += static_cast<long>(a) + static_cast<long>(b);
  }
  return total == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

double instance_dice(const MaskPair& pred, const MaskPair& gt) {
  return 0.5 * (dice_coefficient(pred.cytoplasm, gt.cytoplasm) + dice_coefficient(pred.nucleus, gt.nucleus));
}

double mean_instance_dice(std::span<const MaskPair> pred, std::span<const MaskPair> gt) {
  check_paired(pred, gt, "mean_instance_dice");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += instance_dice(pred[i], gt[i]);
  return sum / static_cast<double>(pred.size());
}

double nc_mse(std::span<const double> pred, std::span<const double> gt) {
  check_paired(pred, gt, "nc_mse");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!std::isfinite(pred[i]) || !std::isfinite(gt[i])) {
      throw Error(ErrorKind::kInvalidArgument, "nc_mse: non-finite ratio");
    }
    sum += (pred[i] - gt[i]) * (pred[i] - gt[i]);
  }
  return sum / static_cast<double>(pred.size());
}

std::map<CellClass, double> classwise_nc_mse(std::span<const double> pred, std::span<const double> gt,
                                             std::span<const CellClass> classes) {
  check_paired(pred, gt, "classwise_nc_mse");
  check_paired(pred, classes, "classwise_nc_mse");
  std::map<CellClass, std::pair<double, long>> acc;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    auto& [sum, n] = acc[classes[i]];
    sum += (pred[i] - gt[i]) * (pred[i] - gt[i]);
    ++n;
  }
  std::map<CellClass, double> out;
  for (const auto& [c, sn] : acc) out[c] = sn.first / static_cast<double>(sn.second);
  return out;
}

std::array<double, kNumAttributes> attribute_accuracy(std::span<const ExplanationAttributes> pred,
                                                      std::span<const ExplanationAttributes> gt) {
  check_paired(pred, gt, "attribute_accuracy");
  std::array<double, kNumAttributes> out{};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (int k = 0; k < kNumAttributes; ++k) out[static_cast<std::size_t>(k)] += pred[i].value(k) == gt[i].value(k);
  }
  for (double& v : out) v /= static_cast<double>(pred.size());
  return out;
}

RocCurve roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw Error(ErrorKind::kDimensionMismatch, "roc_auc: scores and labels differ in length");
  }
  long pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw Error(ErrorKind::kInvalidArgument, "roc_auc: non-finite score");
    if (labels[i] != 0 && labels[i] != 1) throw Error(ErrorKind::kInvalidArgument, "roc_auc: labels must be 0/1");
    pos += labels[i];
  }
  const long neg = static_cast<long>(scores.size()) - pos;
  if (pos == 0 || neg == 0) throw Error(ErrorKind::kSingleClassLabels, "roc_auc needs both labels");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve curve;
  curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  long tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] ? tp : fp) += 1;
    const RocPoint p{static_cast<double>(fp) / neg, static_cast<double>(tp) / pos, s};
    const RocPoint& q = curve.points.back();
    curve.auc += (p.fpr - q.fpr) * (p.tpr + q.tpr) / 2.0;
    curve.points.push_back(p);
  }
  return curve;
}

std::string_view auc_split_name(AucSplit split) {
  switch (split) {
    case AucSplit::kAll: return "all";
    case AucSplit::kCorrect: return "correct";
    case AucSplit::kMisclassified: return "misclassified";
  }
  return "?";
}

int attribute_value_index(int attribute, int value) {
  if (attribute < 0 || attribute >= kNumAttributes || value < 0 ||
      value >= kAttributeCardinality[static_cast<std::size_t>(attribute)]) {
    throw Error(ErrorKind::kInvalidArgument, "attribute value out of range");
  }
  return kValueOffset[static_cast<std::size_t>(attribute)] + value;
}

std::pair<int, int> attribute_value_from_index(int flat) {
  if (flat < 0 || flat >= kNumAttributeValues) throw Error(ErrorKind::kInvalidArgument, "flat index out of range");
  int k = kNumAttributes - 1;
  while (kValueOffset[static_cast<std::size_t>(k)] > flat) --k;
  return {k, flat - kValueOffset[static_cast<std::size_t>(k)]};
}

RocCurves attribute_roc_curves(std::span<const AttributeScores> probs,
                               std::span<const ExplanationAttributes> truth,
                               std::span<const bool> correct) {
  if (probs.size() != truth.size() || probs.size() != correct.size()) {
    throw Error(ErrorKind::kDimensionMismatch, "attribute_roc_curves: inputs differ in length");
  }
  RocCurves curves;
  for (int flat = 0; flat < kNumAttributeValues; ++flat) {
    const auto [k, v] = attribute_value_from_index(flat);
    for (int split = 0; split < kNumAucSplits; ++split) {
      std::vector<double> s;
      std::vector<int> l;
      for (std::size_t i = 0; i < probs.size(); ++i) {
        if (split == static_cast<int>(AucSplit::kCorrect) && !correct[i]) continue;
        if (split == static_cast<int>(AucSplit::kMisclassified) && correct[i]) continue;
        const auto& p = probs[i][static_cast<std::size_t>(k)];
        if (static_cast<int>(p.size()) != kAttributeCardinality[static_cast<std::size_t>(k)]) {
          throw Error(ErrorKind::kVocabularyMismatch, "attribute score vector has the wrong length");
        }
        s.push_back(p[static_cast<std::size_t>(v)]);
        l.push_back(truth[i].value(k) == v ? 1 : 0);
      }
      const long pos = std::accumulate(l.begin(), l.end(), 0L);
      if (pos == 0 || pos == static_cast<long>(l.size())) continue;
      curves[static_cast<std::size_t>(flat)][static_cast<std::size_t>(split)] = roc_auc(s, l);
    }
  }
  return curves;
}

AucTable auc_table(const RocCurves& curves) {
  AucTable t;
  for (std::size_t f = 0; f < curves.size(); ++f) {
    for (std::size_t s = 0; s < curves[f].size(); ++s) {
      if (curves[f][s]) t.values[f][s] = curves[f][s]->auc;
    }
  }
  return t;
}

// ---------------------------------------------------------------------------

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

double parse_double(const std::string& key, const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorKind::kSchemaMismatch, "metrics record: bad number for " + key);
  }
  return v;
}

std::string optional_text(const std::optional<double>& v) { return v ? format_double(*v) : "undefined"; }

constexpr const char* kReportFormat = "wbc-metrics";
constexpr const char* kReportVersion = "1";

std::string auc_key(int flat, int split) {
  const auto [k, v] = attribute_value_from_index(flat);
  return "auc." + std::string(attribute_name(k)) + "." + std::string(attribute_value_name(k, v)) + "." +
         std::string(auc_split_name(static_cast<AucSplit>(split)));
}

}  // namespace

std::optional<double> MetricsReport::class_accuracy(CellClass c) const {
  const auto& row = confusion[static_cast<std::size_t>(to_index(c))];
  const long n = std::accumulate(row.begin(), row.end(), 0L);
  if (n == 0) return std::nullopt;
  return static_cast<double>(row[static_cast<std::size_t>(to_index(c))]) / static_cast<double>(n);
}

std::vector<std::pair<std::string, double>> MetricsReport::scalars() const {
  std::vector<std::pair<std::string, double>> out = {
      {"accuracy", accuracy},       {"macro_precision", macro_precision}, {"macro_f1", macro_f1},
      {"mean_jaccard", mean_jaccard}, {"mean_dice", mean_dice},
  };
  for (int k = 0; k < kNumAttributes; ++k) {
    out.emplace_back("attribute_accuracy." + std::string(attribute_name(k)),
                     attribute_accuracy[static_cast<std::size_t>(k)]);
  }
  out.emplace_back("nc_mse", nc_mse);
  if (nc_mse_normalized) out.emplace_back("nc_mse_normalized", *nc_mse_normalized);
  return out;
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os << "format=" << kReportFormat << "\n";
  os << "version=" << kReportVersion << "\n";
  os << "num_samples=" << num_samples << "\n";
  for (const auto& [key, value] : scalars()) {
    if (key != "nc_mse_normalized") os << key << "=" << format_double(value) << "\n";
  }
  os << "nc_mse_normalized=" << optional_text(nc_mse_normalized) << "\n";
  os << "nc_undefined=" << nc_undefined << "\n";
  for (CellClass c : all_cell_types()) {
    const auto it = classwise_nc_mse.find(c);
    os << "classwise_nc_mse." << cell_class_name(c) << "="
       << (it == classwise_nc_mse.end() ? std::string("undefined") : format_double(it->second)) << "\n";
  }
  for (int f = 0; f < kNumAttributeValues; ++f) {
    for (int s = 0; s < kNumAucSplits; ++s) {
      os << auc_key(f, s) << "=" << optional_text(auc.values[static_cast<std::size_t>(f)][static_cast<std::size_t>(s)])
         << "\n";
    }
  }
  for (CellClass t : all_cell_types()) {
    for (CellClass p : all_cell_types()) {
      os << "confusion." << cell_class_name(t) << "." << cell_class_name(p) << "="
         << confusion[static_cast<std::size_t>(to_index(t))][static_cast<std::size_t>(to_index(p))] << "\n";
    }
  }
  return os.str();
}

MetricsReport MetricsReport::parse(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::kSchemaMismatch, "metrics record: malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw Error(ErrorKind::kSchemaMismatch, "metrics record: missing " + key);
    return it->second;
  };
  auto number = [&](const std::string& key) { return parse_double(key, get(key)); };
  auto optional_number = [&](const std::string& key) -> std::optional<double> {
    const std::string& s = get(key);
    if (s == "undefined") return std::nullopt;
    return parse_double(key, s);
  };
  auto integer = [&](const std::string& key) {
    const std::string& s = get(key);
    long v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
      throw Error(ErrorKind::kSchemaMismatch, "metrics record: bad integer for " + key);
    }
    return v;
  };

  if (get("format") != kReportFormat || get("version") != kReportVersion) {
    throw Error(ErrorKind::kSchemaMismatch, "metrics record: unsupported format");
  }
  MetricsReport r;
  r.num_samples = integer("num_samples");
  r.accuracy = number("accuracy");
  r.macro_precision = number("macro_precision");
  r.macro_f1 = number("macro_f1");
  r.mean_jaccard = number("mean_jaccard");
  r.mean_dice = number("mean_dice");
  for (int k = 0; k < kNumAttributes; ++k) {
    r.attribute_accuracy[static_cast<std::size_t>(k)] =
        number("attribute_accuracy." + std::string(attribute_name(k)));
  }
  r.nc_mse = number("nc_mse");
  r.nc_mse_normalized = optional_number("nc_mse_normalized");
  r.nc_undefined = integer("nc_undefined");
  for (CellClass c : all_cell_types()) {
    if (auto v = optional_number("classwise_nc_mse." + std::string(cell_class_name(c)))) r.classwise_nc_mse[c] = *v;
  }
  for (int f = 0; f < kNumAttributeValues; ++f) {
    for (int s = 0; s < kNumAucSplits; ++s) {
      r.auc.values[static_cast<std::size_t>(f)][static_cast<std::size_t>(s)] = optional_number(auc_key(f, s));
    }
  }
  for (CellClass t : all_cell_types()) {
    for (CellClass p : all_cell_types()) {
      r.confusion[static_cast<std::size_t>(to_index(t))][static_cast<std::size_t>(to_index(p))] =
          integer("confusion." + std::string(cell_class_name(t)) + "." + std::string(cell_class_name(p)));
    }
  }
  return r;
}

MetricsReport build_report(std::span<const EvalSample> samples) {
  if (samples.empty()) throw Error(ErrorKind::kEmptyInput, "no evaluation samples");
  const std::size_t n = samples.size();
  std::vector<CellClass> pred_cls(n), true_cls(n);
  std::vector<BoundingBox> pred_box(n), gt_box(n);
  std::vector<MaskPair> pred_mask(n), gt_mask(n);
  std::vector<ExplanationAttributes> pred_attr(n), gt_attr(n);
  std::vector<double> pred_nc(n), gt_nc(n);
  std::vector<AttributeScores> probs(n);
  std::unique_ptr<bool[]> correct(new bool[n]);

  MetricsReport r;
  r.num_samples = static_cast<long>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const EvalSample& s = samples[i];
    pred_cls[i] = s.pred_class;
    true_cls[i] = s.true_class;
    pred_box[i] = s.pred_box;
    gt_box[i] = s.gt_box;
    pred_mask[i] = s.pred_masks;
    gt_mask[i] = s.gt_masks;
    pred_attr[i] = s.pred_attributes;
    gt_attr[i] = s.gt_attributes;
    pred_nc[i] = s.pred_nc.value_or(0.0);
    r.nc_undefined += !s.pred_nc.has_value();
    gt_nc[i] = s.gt_nc;
    probs[i] = s.attribute_probs;
    correct[i] = s.pred_class == s.true_class;
  }

  const auto cls = classification_metrics(pred_cls, true_cls);
  r.accuracy = cls.accuracy;
  r.macro_precision = cls.macro_precision;
  r.macro_f1 = cls.macro_f1;
  r.confusion = cls.confusion;
  r.mean_jaccard = mean_box_jaccard(pred_box, gt_box);
  r.mean_dice = mean_instance_dice(pred_mask, gt_mask);
  r.attribute_accuracy = attribute_accuracy(pred_attr, gt_attr);
  r.nc_mse = nc_mse(pred_nc, gt_nc);
  const double mean_gt = std::accumulate(gt_nc.begin(), gt_nc.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double g : gt_nc) var += (g - mean_gt) * (g - mean_gt);
  var /= static_cast<double>(n);
  if (var > 0.0) r.nc_mse_normalized = r.nc_mse / var;
  r.classwise_nc_mse = classwise_nc_mse(pred_nc, gt_nc, true_cls);
  r.auc = auc_table(attribute_roc_curves(probs, gt_attr, std::span<const bool>(correct.get(), n)));
  return r;
}

std::vector<MetricSummary> summarize(std::span<const MetricsReport> reports) {
  if (reports.empty()) throw Error(ErrorKind::kEmptyInput, "no reports to summarize");
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> values;
  for (const auto& r : reports) {
    for (const auto& [key, v] : r.scalars()) {
      if (!values.contains(key)) order.push_back(key);
      values[key].push_back(v);
    }
  }
  std::vector<MetricSummary> out;
  for (const auto& key : order) {
    const auto& xs = values[key];
    MetricSummary s{key, 0.0, 0.0};
    s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    if (xs.size() > 1) {
      double ss = 0.0;
      for (double x : xs) ss += (x - s.mean) * (x - s.mean);
      s.stdev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace wbc

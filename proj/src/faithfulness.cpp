#include "wbc/faithfulness.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>

namespace wbc {

std::size_t AssociationTable::index(CellClass c) {
  if (c == CellClass::kEmpty) throw Error(ErrorKind::kInvalidArgument, "EMPTY has no association row");
  return static_cast<std::size_t>(to_index(c));
}

AssociationTable AssociationTable::from_pairs(std::span<const CellClass> classes,
                                              std::span<const ExplanationAttributes> attributes) {
  if (classes.size() != attributes.size()) {
    throw Error(ErrorKind::kDimensionMismatch, "association: classes and attributes differ in length");
  }
  if (classes.empty()) throw Error(ErrorKind::kEmptyInput, "association of an empty sample");
  std::array<std::array<std::vector<long>, kNumAttributes>, kNumCellTypes> counts;
  AssociationTable t;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const std::size_t c = index(classes[i]);
    auto& row = counts[c];
    if (t.support_[c] == 0) {
      for (int k = 0; k < kNumAttributes; ++k) {
        row[static_cast<std::size_t>(k)].assign(static_cast<std::size_t>(kAttributeCardinality[static_cast<std::size_t>(k)]), 0);
      }
    }
    ++t.support_[c];
    for (int k = 0; k < kNumAttributes; ++k) ++row[static_cast<std::size_t>(k)][static_cast<std::size_t>(attributes[i].value(k))];
  }
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (t.support_[c] == 0) continue;
    Row row;
    for (std::size_t k = 0; k < row.size(); ++k) {
      for (long n : counts[c][k]) row[k].push_back(static_cast<double>(n) / static_cast<double>(t.support_[c]));
    }
    t.rows_[c] = std::move(row);
  }
  return t;
}

const std::vector<double>& AssociationTable::distribution(CellClass c, int attribute) const {
  const auto& row = rows_[index(c)];
  if (!row) throw Error(ErrorKind::kInvalidArgument, std::string(cell_class_name(c)) + " is absent");
  if (attribute < 0 || attribute >= kNumAttributes) throw Error(ErrorKind::kInvalidArgument, "attribute index");
  return (*row)[static_cast<std::size_t>(attribute)];
}

void AssociationTable::set_row(CellClass c, Row row, long support) {
  for (const auto& d : row) {
    const double sum = std::accumulate(d.begin(), d.end(), 0.0);
    const bool nonnegative = std::all_of(d.begin(), d.end(), [](double v) { return v >= 0.0; });
    if (d.empty() || !nonnegative || std::abs(sum - 1.0) > 1e-9) {
      throw Error(ErrorKind::kInvalidArgument, "association row entries must be distributions");
    }
  }
  rows_[index(c)] = std::move(row);
  support_[index(c)] = support;
}

AssociationTable ground_truth_association(const std::vector<LabeledImage>& dataset) {
  std::vector<CellClass> classes;
  std::vector<ExplanationAttributes> attrs;
  for (const auto& item : dataset) {
    for (const auto& a : item.annotations) {
      classes.push_back(a.cell_class);
      attrs.push_back(a.attributes);
    }
  }
  return AssociationTable::from_pairs(classes, attrs);
}

AssociationTable model_association(std::span<const CellPrediction> predictions,
                                   const std::vector<LabeledImage>& dataset) {
  if (predictions.size() != dataset.size()) {
    throw Error(ErrorKind::kDimensionMismatch, "one prediction per dataset item expected");
  }
  std::vector<CellClass> classes;
  std::vector<ExplanationAttributes> attrs;
  for (const auto& p : predictions) {
    classes.push_back(p.cell_class);
    attrs.push_back(p.attributes);
  }
  return AssociationTable::from_pairs(classes, attrs);
}

double total_variation(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw Error(ErrorKind::kVocabularyMismatch, "distributions over different vocabularies");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

double FaithfulnessReport::max_tv() const {
  double m = 0.0;
  for (const auto& g : gaps) m = std::max(m, g.tv);
  return m;
}

std::string FaithfulnessReport::to_text() const {
  std::ostringstream os;
  os << "format=wbc-faithfulness\n";
  os << "version=1\n";
  os << "tau=" << format_double(tau) << "\n";
  os << "verdict=" << (faithful ? "faithful" : "unfaithful") << "\n";
  os << "max_tv=" << format_double(max_tv()) << "\n";
  std::string excluded_list;
  for (CellClass c : excluded) {
    if (!excluded_list.empty()) excluded_list += ",";
    excluded_list += cell_class_name(c);
  }
  os << "excluded=" << excluded_list << "\n";
  for (const auto& g : gaps) {
    const std::string key = "tv." + std::string(cell_class_name(g.cell_class)) + "." +
                            std::string(attribute_name(g.attribute));
    os << key << "=" << format_double(g.tv) << "\n";
  }
  return os.str();
}

FaithfulnessReport compare_associations(const AssociationTable& model, const AssociationTable& truth,
                                        double tau) {
  if (!(tau >= 0.0)) throw Error(ErrorKind::kInvalidArgument, "tau must be non-negative");
  FaithfulnessReport r;
  r.tau = tau;
  for (CellClass c : all_cell_types()) {
    if (!model.present(c) || !truth.present(c)) {
      if (model.present(c) || truth.present(c)) r.excluded.push_back(c);
      continue;
    }
    for (int k = 0; k < kNumAttributes; ++k) {
      const auto& p = model.distribution(c, k);
      const auto& q = truth.distribution(c, k);
      if (static_cast<int>(p.size()) != kAttributeCardinality[static_cast<std::size_t>(k)]) {
        throw Error(ErrorKind::kVocabularyMismatch, "unexpected vocabulary size");
      }
      AssociationGap g{c, k, total_variation(p, q), p, q};
      r.faithful = r.faithful && g.tv <= tau;
      r.gaps.push_back(std::move(g));
    }
  }
  return r;
}

AucTable independence_analysis(std::span<const AttributeScores> probs,
                               std::span<const ExplanationAttributes> truth,
                               std::span<const bool> correct) {
  return auc_table(attribute_roc_curves(probs, truth, correct));
}

AucTable independence_analysis(std::span<const CellPrediction> predictions,
                               const std::vector<LabeledImage>& dataset) {
  if (predictions.size() != dataset.size()) {
    throw Error(ErrorKind::kDimensionMismatch, "one prediction per dataset item expected");
  }
  std::vector<AttributeScores> probs;
  std::vector<ExplanationAttributes> truth;
  std::unique_ptr<bool[]> correct(new bool[predictions.size()]);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (dataset[i].annotations.empty()) throw Error(ErrorKind::kInvalidArgument, "item without annotation");
    const CellAnnotation& gt = dataset[i].annotations.front();
    probs.push_back(predictions[i].attribute_probs);
    truth.push_back(gt.attributes);
    correct[i] = predictions[i].cell_class == gt.cell_class;
  }
  return independence_analysis(probs, truth, std::span<const bool>(correct.get(), predictions.size()));
}

std::string auc_table_text(const AucTable& table) {
  std::ostringstream os;
  os << "format=wbc-auc\n";
  os << "version=1\n";
  for (int f = 0; f < kNumAttributeValues; ++f) {
    const auto [k, v] = attribute_value_from_index(f);
    for (int s = 0; s < kNumAucSplits; ++s) {
      const auto& e = table.values[static_cast<std::size_t>(f)][static_cast<std::size_t>(s)];
      os << "auc." << attribute_name(k) << "." << attribute_value_name(k, v) << "."
         << auc_split_name(static_cast<AucSplit>(s)) << "=" << (e ? format_double(*e) : "undefined") << "\n";
    }
  }
  return os.str();
}

}  // namespace wbc

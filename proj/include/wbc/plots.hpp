#pragma once

// Static PNG charts for reports: ROC curves, bar charts, paired association
// bars, and the per-cell prediction overlay.

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wbc/core.hpp"
#include "wbc/metrics.hpp"

namespace wbc {

// One chart with a curve per available split (all / correct / misclassified).
void plot_roc(const std::array<std::optional<RocCurve>, kNumAucSplits>& curves, const std::string& title,
              const std::filesystem::path& path);

void plot_bars(std::span<const std::string> labels, std::span<const double> values, const std::string& title,
               const std::filesystem::path& path);

// Side-by-side bars of the model and ground-truth distributions of one
// attribute for one class.
void plot_association(CellClass cell_class, int attribute, std::span<const double> model,
                      std::span<const double> truth, const std::filesystem::path& path);

// Input-sized copy of `image` with each prediction's box and mask contours.
RgbImage render_overlay(const RgbImage& image, std::span<const CellPrediction> predictions);

}  // namespace wbc

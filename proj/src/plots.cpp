#include "wbc/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace wbc {

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 480;
constexpr int kMarginLeft = 70, kMarginRight = 30, kMarginTop = 50, kMarginBottom = 90;

const cv::Scalar kBlack(0, 0, 0);
const cv::Scalar kGrey(190, 190, 190);
// BGR
const std::array<cv::Scalar, 3> kSeries = {cv::Scalar(180, 100, 30), cv::Scalar(60, 160, 40),
                                           cv::Scalar(40, 40, 200)};

struct Frame {
  cv::Mat img{kHeight, kWidth, CV_8UC3, cv::Scalar(255, 255, 255)};
  int x0 = kMarginLeft, x1 = kWidth - kMarginRight, y0 = kMarginTop, y1 = kHeight - kMarginBottom;

  cv::Point map(double fx, double fy) const {
    return {x0 + static_cast<int>(std::lround(fx * (x1 - x0))), y1 - static_cast<int>(std::lround(fy * (y1 - y0)))};
  }
};

void text(cv::Mat& img, const std::string& s, cv::Point at, double scale = 0.45, const cv::Scalar& color = kBlack) {
  cv::putText(img, s, at, cv::FONT_HERSHEY_SIMPLEX, scale, color, 1, cv::LINE_AA);
}

std::string fixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

Frame axes(const std::string& title, double y_max) {
  Frame f;
  text(f.img, title, {f.x0, 30}, 0.6);
  for (int i = 0; i <= 5; ++i) {
    const double fy = i / 5.0;
    const cv::Point p = f.map(0, fy);
    cv::line(f.img, p, f.map(1, fy), kGrey, 1);
    text(f.img, fixed(fy * y_max, y_max < 0.1 ? 4 : 2), {5, p.y + 4}, 0.4);
  }
  cv::rectangle(f.img, f.map(0, 1), f.map(1, 0), kBlack, 1);
  return f;
}

void save(const cv::Mat& img, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), img)) throw Error(ErrorKind::kIo, "cannot write " + path.string());
}

}  // namespace

void plot_roc(const std::array<std::optional<RocCurve>, kNumAucSplits>& curves, const std::string& title,
              const std::filesystem::path& path) {
  Frame f = axes(title, 1.0);
  for (int i = 0; i <= 5; ++i) {
    const cv::Point p = f.map(i / 5.0, 0);
    text(f.img, fixed(i / 5.0, 1), {p.x - 10, p.y + 18}, 0.4);
  }
  text(f.img, "false positive rate", {f.x0 + 200, f.y1 + 40});
  cv::line(f.img, f.map(0, 0), f.map(1, 1), kGrey, 1, cv::LINE_AA);
  int legend_y = f.y1 + 65;
  int legend_x = f.x0;
  for (std::size_t s = 0; s < curves.size(); ++s) {
    const std::string name(auc_split_name(static_cast<AucSplit>(s)));
    if (!curves[s]) {
      text(f.img, name + ": undefined", {legend_x, legend_y}, 0.4, kGrey);
      legend_x += 180;
      continue;
    }
    std::vector<cv::Point> pts;
    for (const auto& p : curves[s]->points) pts.push_back(f.map(p.fpr, p.tpr));
    cv::polylines(f.img, pts, false, kSeries[s], 2, cv::LINE_AA);
    text(f.img, name + " AUC " + fixed(curves[s]->auc, 3), {legend_x, legend_y}, 0.4, kSeries[s]);
    legend_x += 180;
  }
  save(f.img, path);
}

void plot_bars(std::span<const std::string> labels, std::span<const double> values, const std::string& title,
               const std::filesystem::path& path) {
  if (labels.size() != values.size()) throw Error(ErrorKind::kDimensionMismatch, "plot_bars: labels vs values");
  double y_max = 0.0;
  for (double v : values) y_max = std::max(y_max, std::isfinite(v) ? v : 0.0);
  y_max = y_max > 0 ? y_max * 1.1 : 1.0;
  Frame f = axes(title, y_max);
  const double n = std::max<double>(1.0, static_cast<double>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double left = (i + 0.15) / n, right = (i + 0.85) / n;
    const double h = std::isfinite(values[i]) ? values[i] / y_max : 0.0;
    cv::rectangle(f.img, f.map(left, h), f.map(right, 0), kSeries[0], cv::FILLED);
    const cv::Point base = f.map(left, 0);
    // Rotated labels are not available in putText; stagger them instead.
    text(f.img, labels[i], {base.x, base.y + 16 + static_cast<int>(i % 3) * 16}, 0.35);
  }
  save(f.img, path);
}

void plot_association(CellClass cell_class, int attribute, std::span<const double> model,
                      std::span<const double> truth, const std::filesystem::path& path) {
  if (model.size() != truth.size()) throw Error(ErrorKind::kVocabularyMismatch, "plot_association: sizes differ");
  Frame f = axes(std::string(cell_class_name(cell_class)) + " / " + std::string(attribute_name(attribute)), 1.0);
  const double n = static_cast<double>(model.size());
  for (std::size_t i = 0; i < model.size(); ++i) {
    const double mid = (i + 0.5) / n, half = 0.3 / n;
    cv::rectangle(f.img, f.map(mid - half, model[i]), f.map(mid, 0), kSeries[0], cv::FILLED);
    cv::rectangle(f.img, f.map(mid, truth[i]), f.map(mid + half, 0), kSeries[2], cv::FILLED);
    const cv::Point base = f.map(mid - half, 0);
    text(f.img, std::string(attribute_value_name(attribute, static_cast<int>(i))), {base.x, base.y + 18}, 0.4);
  }
  text(f.img, "model", {f.x0, f.y1 + 65}, 0.45, kSeries[0]);
  text(f.img, "ground truth", {f.x0 + 120, f.y1 + 65}, 0.45, kSeries[2]);
  save(f.img, path);
}

RgbImage render_overlay(const RgbImage& image, std::span<const CellPrediction> predictions) {
  RgbImage out = image;
  cv::Mat canvas(image.height, image.width, CV_8UC3, out.rgb.data());  // RGB order
  const cv::Scalar box_color(255, 255, 0), cyto_color(0, 200, 0), nuc_color(160, 0, 200);
  for (const auto& p : predictions) {
    const CornerBox c = p.box.corners();
    cv::rectangle(canvas,
                  cv::Point(static_cast<int>(std::floor(c.x0 * image.width)), static_cast<int>(std::floor(c.y0 * image.height))),
                  cv::Point(static_cast<int>(std::ceil(c.x1 * image.width)) - 1,
                            static_cast<int>(std::ceil(c.y1 * image.height)) - 1),
                  box_color, 1);
    auto contour = [&](const BinaryMask& m, const cv::Scalar& color) {
      if (!m.same_shape(image.width, image.height)) return;
      cv::Mat mask(m.height, m.width, CV_8UC1, const_cast<std::uint8_t*>(m.data.data()));
      std::vector<std::vector<cv::Point>> contours;
      cv::findContours(mask.clone(), contours, cv::RETR_EXTERNAL, cv::CHAIN_APPROX_NONE);
      cv::drawContours(canvas, contours, -1, color, 1);
    };
    contour(p.masks.cytoplasm, cyto_color);
    contour(p.masks.nucleus, nuc_color);
  }
  return out;
}

}  // namespace wbc

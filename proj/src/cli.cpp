#include "wbc/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "wbc/dataio.hpp"
#include "wbc/faithfulness.hpp"
#include "wbc/harness.hpp"
#include "wbc/metrics.hpp"
#include "wbc/model.hpp"
#include "wbc/plots.hpp"
#include "wbc/synthcell.hpp"

namespace wbc {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t directory_checksum(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root));
  }
  std::sort(files.begin(), files.end());
  std::uint64_t hash = 1469598103934665603ULL;
  auto mix = [&](const char* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      hash ^= static_cast<unsigned char>(p[i]);
      hash *= 1099511628211ULL;
    }
  };
  for (const auto& rel : files) {
    const std::string name = rel.generic_string();
    mix(name.data(), name.size() + 1);
    std::ifstream in(root / rel, std::ios::binary);
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    mix(bytes.data(), bytes.size());
  }
  return hash;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kMissingFile, path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Training flags: preset, then an optional JSON config file merged on top,
// then explicit flags.

class TrainFlags {
 public:
  explicit TrainFlags(CLI::App* app) {
    app->add_flag("--paper-preset", paper_preset_, "Start from the 200-epoch / batch-32 / deep-backbone recipe");
    app->add_option("--config", config_file_, "JSON file with TrainConfig fields; flags override it")
        ->check(CLI::ExistingFile);
    add<int>(app, "--epochs", "Training epochs", [](TrainConfig& c, int v) { c.epochs = v; });
    add<int>(app, "--batch-size", "Images per optimizer step", [](TrainConfig& c, int v) { c.batch_size = v; });
    add<double>(app, "--lr-main", "Learning rate outside the backbone", [](TrainConfig& c, double v) { c.lr_main = v; });
    add<double>(app, "--lr-backbone", "Backbone learning rate", [](TrainConfig& c, double v) { c.lr_backbone = v; });
    add<double>(app, "--weight-decay", "Decoupled weight decay", [](TrainConfig& c, double v) { c.weight_decay = v; });
    add<double>(app, "--grad-clip", "Max global gradient norm (0 disables)", [](TrainConfig& c, double v) { c.grad_clip = v; });
    add<double>(app, "--validation-fraction", "Validation carve-out from the training items",
                [](TrainConfig& c, double v) { c.validation_fraction = v; });
    add<std::uint64_t>(app, "--seed", "Seed for initialization, data order and augmentation",
                       [](TrainConfig& c, std::uint64_t v) { c.seed = v; c.model.seed = v; });
    add<bool>(app, "--aug-hflip", "Horizontal flips", [](TrainConfig& c, bool v) { c.augmentation.hflip = v; });
    add<bool>(app, "--aug-vflip", "Vertical flips", [](TrainConfig& c, bool v) { c.augmentation.vflip = v; });
    add<bool>(app, "--aug-rotate", "Random rotations", [](TrainConfig& c, bool v) { c.augmentation.rotate = v; });
    add<bool>(app, "--aug-scale", "Random rescaling", [](TrainConfig& c, bool v) { c.augmentation.scale = v; });
    add<bool>(app, "--aug-translate", "Random translation", [](TrainConfig& c, bool v) { c.augmentation.translate = v; });
    add<double>(app, "--aug-probability", "Probability of each enabled augmentation",
                [](TrainConfig& c, double v) { c.augmentation.probability = v; });
    add<double>(app, "--w-giou", "GIoU weight", [](TrainConfig& c, double v) { c.loss.w_giou = v; });
    add<double>(app, "--w-l1", "L1 box weight", [](TrainConfig& c, double v) { c.loss.w_l1 = v; });
    add<double>(app, "--w-dice", "Dice weight", [](TrainConfig& c, double v) { c.loss.w_dice = v; });
    add<double>(app, "--w-focal", "Focal weight", [](TrainConfig& c, double v) { c.loss.w_fl = v; });
    add<std::vector<double>>(app, "--w-attr", "Four explanation weights",
                             [](TrainConfig& c, const std::vector<double>& v) {
                               if (v.size() != kNumAttributes) throw Error(ErrorKind::kInvalidConfig, "--w-attr needs 4 values");
                               std::copy(v.begin(), v.end(), c.loss.w_attr.begin());
                             });
    add<double>(app, "--empty-weight", "Class weight of the EMPTY target",
                [](TrainConfig& c, double v) { c.loss.empty_class_weight = v; });
    add<double>(app, "--focal-gamma", "Focal exponent", [](TrainConfig& c, double v) { c.loss.focal_gamma = v; });
    add<double>(app, "--focal-alpha", "Focal class balance", [](TrainConfig& c, double v) { c.loss.focal_alpha = v; });
    add<std::string>(app, "--backbone", "toy_residual_stack or deep_residual_50",
                     [](TrainConfig& c, const std::string& v) { c.model.backbone = parse_backbone(v); });
    add<std::string>(app, "--backbone-weights", "Archive with backbone.* tensors",
                     [](TrainConfig& c, const std::string& v) { c.model.backbone_weights = v; });
    add<int>(app, "--d-model", "Transformer width", [](TrainConfig& c, int v) { c.model.d_model = v; });
    add<int>(app, "--heads", "Attention heads", [](TrainConfig& c, int v) { c.model.num_heads = v; });
    add<int>(app, "--encoder-layers", "Encoder layers", [](TrainConfig& c, int v) { c.model.encoder_layers = v; });
    add<int>(app, "--decoder-layers", "Decoder layers", [](TrainConfig& c, int v) { c.model.decoder_layers = v; });
    add<int>(app, "--ff-dim", "Feed-forward width", [](TrainConfig& c, int v) { c.model.dim_feedforward = v; });
    add<int>(app, "--queries", "Object queries N", [](TrainConfig& c, int v) { c.model.num_queries = v; });
    add<int>(app, "--hidden-layers", "Hidden layers in the explanation head (0, 2, 4)",
             [](TrainConfig& c, int v) { c.model.explanation_hidden_layers = v; });
    add<int>(app, "--mask-stride", "Mask head output stride", [](TrainConfig& c, int v) { c.model.mask_output_stride = v; });
    add<int>(app, "--mask-width", "Mask head channels", [](TrainConfig& c, int v) { c.model.mask_head_width = v; });
    add<double>(app, "--dropout", "Transformer dropout", [](TrainConfig& c, double v) { c.model.dropout = v; });
  }

  TrainConfig resolve() const {
    TrainConfig c = paper_preset_ ? TrainConfig::paper() : TrainConfig::toy();
    if (!config_file_.empty()) {
      json merged = c.to_json();
      try {
        merged.merge_patch(json::parse(read_text(config_file_)));
      } catch (const json::parse_error& e) {
        throw Error(ErrorKind::kSchemaMismatch, "config file: " + std::string(e.what()));
      }
      c = TrainConfig::from_json(merged);
    }
    for (const auto& apply : appliers_) apply(c);
    c.validate();
    return c;
  }

 private:
  template <typename T, typename F>
  void add(CLI::App* app, const std::string& name, const std::string& desc, F setter) {
    auto storage = std::make_shared<T>();
    CLI::Option* opt = app->add_option(name, *storage, desc);
    appliers_.push_back([opt, storage, setter](TrainConfig& c) {
      if (opt->count() > 0) setter(c, *storage);
    });
  }

  bool paper_preset_ = false;
  std::string config_file_;
  std::vector<std::function<void(TrainConfig&)>> appliers_;
};

// ---------------------------------------------------------------------------
// Model + evaluation items shared by eval / faithfulness / predict.

struct ModelSource {
  std::string run;
  std::string checkpoint;
  std::string data;
  std::string split = "auto";
  bool oracle = false;

  void add_to(CLI::App* app, bool with_data = true) {
    app->add_option("--run", run, "Run directory written by train");
    app->add_option("--checkpoint", checkpoint, "Checkpoint file (overrides the run's)");
    if (with_data) {
      app->add_option("--data", data, "Dataset root (defaults to the run's dataset)");
      app->add_option("--split", split, "Items to use: test, train, all or auto (test when the run has a split)")
          ->check(CLI::IsMember({"auto", "test", "train", "all"}));
      app->add_flag("--oracle", oracle, "Score identity predictions copied from the ground truth");
    }
  }

  fs::path checkpoint_path() const {
    if (!checkpoint.empty()) return checkpoint;
    if (!run.empty()) return fs::path(run) / "checkpoint.pt";
    throw Error(ErrorKind::kInvalidArgument, "need --run or --checkpoint");
  }

  std::vector<LabeledImage> items() const {
    json split_doc;
    const bool has_split = !run.empty() && fs::exists(fs::path(run) / "split.json");
    if (has_split) split_doc = json::parse(read_text(fs::path(run) / "split.json"));
    std::string root = data;
    if (root.empty()) {
      if (!has_split) throw Error(ErrorKind::kInvalidArgument, "need --data");
      root = split_doc.at("data").get<std::string>();
    }
    std::vector<LabeledImage> all = load_dataset(root);
    std::string which = split;
    if (which == "auto") which = has_split ? "test" : "all";
    if (which == "all") return all;
    if (!has_split) throw Error(ErrorKind::kInvalidArgument, "--split " + which + " needs a run with split.json");
    std::vector<LabeledImage> out;
    for (const auto& idx : split_doc.at(which)) {
      const auto i = idx.get<std::size_t>();
      if (i >= all.size()) throw Error(ErrorKind::kSchemaMismatch, "split index beyond dataset");
      out.push_back(all[i]);
    }
    return out;
  }

  std::vector<CellPrediction> predictions(const std::vector<LabeledImage>& items) const {
    if (oracle) return identity_predictions(items);
    ModelState state = load_checkpoint(checkpoint_path());
    return predict_items(state, items);
  }

  fs::path out_dir(const std::string& out, const char* sub) const {
    if (!out.empty()) return out;
    if (!run.empty()) return fs::path(run) / sub;
    throw Error(ErrorKind::kInvalidArgument, "need --out");
  }
};

std::string history_header() {
  return "epoch\ttrain_prediction\ttrain_box\ttrain_segmentation\ttrain_explanation\ttrain_total\t"
         "val_prediction\tval_box\tval_segmentation\tval_explanation\tval_total\tseconds\n";
}

std::string history_line(const EpochRecord& r) {
  std::ostringstream os;
  os << r.epoch;
  for (const LossBreakdown* b : {&r.train, &r.validation}) {
    for (double v : {b->prediction, b->box, b->segmentation, b->explanation, b->total}) os << "\t" << format_double(v);
  }
  os << "\t" << format_double(r.seconds) << "\n";
  return os.str();
}

void write_eval_outputs(const std::vector<CellPrediction>& preds, const std::vector<LabeledImage>& items,
                        const fs::path& out, std::ostream& log) {
  const auto samples = eval_samples(preds, items);
  const MetricsReport report = build_report(samples);
  write_text(out / "report.txt", report.to_text());

  std::vector<AttributeScores> probs;
  std::vector<ExplanationAttributes> truth;
  std::unique_ptr<bool[]> correct(new bool[samples.size()]);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    probs.push_back(samples[i].attribute_probs);
    truth.push_back(samples[i].gt_attributes);
    correct[i] = samples[i].pred_class == samples[i].true_class;
  }
  const RocCurves curves = attribute_roc_curves(probs, truth, std::span<const bool>(correct.get(), samples.size()));
  for (int f = 0; f < kNumAttributeValues; ++f) {
    const auto [k, v] = attribute_value_from_index(f);
    const std::string name = std::string(attribute_name(k)) + "_" + std::string(attribute_value_name(k, v));
    plot_roc(curves[static_cast<std::size_t>(f)], "ROC " + std::string(attribute_name(k)) + " = " +
                                                      std::string(attribute_value_name(k, v)),
             out / "roc" / (name + ".png"));
  }
  std::vector<std::string> labels;
  std::vector<double> values;
  for (CellClass c : all_cell_types()) {
    labels.emplace_back(cell_class_name(c));
    const auto it = report.classwise_nc_mse.find(c);
    values.push_back(it == report.classwise_nc_mse.end() ? 0.0 : it->second);
  }
  plot_bars(labels, values, "N:C MSE by class", out / "nc_mse_by_class.png");

  log << "samples " << report.num_samples << "\n"
      << "accuracy " << format_double(report.accuracy) << "\n"
      << "macro_f1 " << format_double(report.macro_f1) << "\n"
      << "mean_jaccard " << format_double(report.mean_jaccard) << "\n"
      << "mean_dice " << format_double(report.mean_dice) << "\n";
  for (int k = 0; k < kNumAttributes; ++k) {
    log << attribute_name(k) << "_accuracy " << format_double(report.attribute_accuracy[static_cast<std::size_t>(k)])
        << "\n";
  }
  log << "nc_mse " << format_double(report.nc_mse) << "\n"
      << "report " << (out / "report.txt").string() << "\n";
}

std::string cell_report(const std::vector<CellPrediction>& cells, const std::string& image) {
  std::ostringstream os;
  os << "image=" << image << "\n";
  os << "cells=" << cells.size() << "\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const CellPrediction& p = cells[i];
    const std::string pre = "cell." + std::to_string(i) + ".";
    os << pre << "class=" << cell_class_name(p.cell_class) << "\n";
    os << pre << "confidence=" << format_double(p.confidence) << "\n";
    os << pre << "box=" << format_double(p.box.cx()) << "," << format_double(p.box.cy()) << ","
       << format_double(p.box.w()) << "," << format_double(p.box.h()) << "\n";
    for (int k = 0; k < kNumAttributes; ++k) {
      os << pre << attribute_name(k) << "=" << attribute_value_name(k, p.attributes.value(k)) << "\n";
    }
    os << pre << "nc_ratio=" << (p.nc_ratio ? format_double(*p.nc_ratio) : "undefined") << "\n";
  }
  return os.str();
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"White blood cell set-prediction toolkit"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic labelled dataset");
  int per_class = 60;
  std::uint64_t gen_seed = 0;
  std::uint64_t split_seed = 0;
  std::string gen_out;
  int image_size = 64;
  double noise = 0.2;
  gen->add_option("--per-class", per_class, "Images per cell class")->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--split-seed", split_seed, "Seed recorded in the manifest for train/test splitting");
  gen->add_option("--out", gen_out, "Dataset root")->required();
  gen->add_option("--image-size", image_size, "Square image side in pixels");
  gen->add_option("--noise", noise, "Pixel noise level in [0,1]");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model; writes a run directory");
  std::string train_data, train_out;
  double test_fraction = 0.2;
  std::optional<std::uint64_t> train_split_seed;
  train_cmd->add_option("--data", train_data, "Dataset root")->required();
  train_cmd->add_option("--out", train_out, "Run directory")->required();
  train_cmd->add_option("--test-fraction", test_fraction, "Held-out fraction excluded from training");
  train_cmd->add_option("--split-seed", train_split_seed, "Held-out split seed (default: manifest split_seed)");
  TrainFlags train_flags(train_cmd);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint; writes report and plots");
  ModelSource eval_src;
  std::string eval_out;
  eval_src.add_to(eval_cmd);
  eval_cmd->add_option("--out", eval_out, "Output directory (default: <run>/eval)");

  // faithfulness
  auto* faith_cmd = app.add_subcommand("faithfulness", "Compare model and ground-truth explanation associations");
  ModelSource faith_src;
  std::string faith_out;
  double tau = kDefaultFaithfulnessTau;
  faith_src.add_to(faith_cmd);
  faith_cmd->add_option("--out", faith_out, "Output directory (default: <run>/faithfulness)");
  faith_cmd->add_option("--tau", tau, "Total variation threshold");

  // variant-study
  auto* variant_cmd = app.add_subcommand("variant-study", "Train and compare explanation-head depths");
  std::string variant_data, variant_out;
  std::vector<int> options = {0, 2, 4};
  int variant_folds = 0;
  double variant_test_fraction = 0.2;
  variant_cmd->add_option("--data", variant_data, "Dataset root")->required();
  variant_cmd->add_option("--out", variant_out, "Output directory")->required();
  variant_cmd->add_option("--options", options, "Hidden-layer counts to compare")->delimiter(',');
  variant_cmd->add_option("--folds", variant_folds, "Cross-validation folds (0: one holdout split)");
  variant_cmd->add_option("--test-fraction", variant_test_fraction, "Holdout fraction when --folds is 0");
  TrainFlags variant_flags(variant_cmd);

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "Per-cell report and overlay for one image");
  ModelSource predict_src;
  std::string image_path, predict_out;
  std::optional<double> threshold;
  predict_src.add_to(predict_cmd, false);
  predict_cmd->add_option("--image", image_path, "RGB image")->required();
  predict_cmd->add_option("--out", predict_out, "Output directory")->required();
  predict_cmd->add_option("--threshold", threshold,
                          "Emit every slot above this confidence (default: the single most confident slot)");

  // gradient-check
  auto* grad_cmd = app.add_subcommand("gradient-check", "Finite-difference check of every loss component");
  GradientCheckOptions grad_opts;
  std::string grad_out;
  grad_cmd->add_option("--points", grad_opts.points, "Random points per component");
  grad_cmd->add_option("--seed", grad_opts.seed, "Seed");
  grad_cmd->add_option("--tolerance", grad_opts.tolerance, "Max norm-wise relative error");
  grad_cmd->add_option("--out", grad_out, "Report file");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) {
      GeneratorSpec spec = GeneratorSpec::uniform(per_class, gen_seed);
      spec.image_size = image_size;
      spec.noise_level = noise;
      spec.validate();
      const auto items = generate_dataset(spec);
      const DatasetManifest manifest = save_dataset(items, gen_out, split_seed);
      out << "items " << manifest.items.size() << "\n";
      for (CellClass c : all_cell_types()) out << cell_class_name(c) << " " << per_class << "\n";
      out << "checksum " << hex(directory_checksum(gen_out)) << "\n";
      return kExitOk;
    }

    if (*train_cmd) {
      const TrainConfig config = train_flags.resolve();
      const auto items = load_dataset(train_data);
      if (items.empty()) throw Error(ErrorKind::kEmptyInput, "dataset is empty");
      const std::uint64_t seed = train_split_seed.value_or(read_manifest(train_data).split_seed);
      const Split split = split_train_test(items, 1.0 - test_fraction, seed);
      std::vector<LabeledImage> train_items;
      for (std::size_t i : split.train) train_items.push_back(items[i]);

      const fs::path run(train_out);
      fs::create_directories(run);
      write_text(run / "config.json", config.to_json().dump(2) + "\n");
      write_text(run / "split.json", json{{"data", fs::absolute(train_data).string()},
                                          {"test_fraction", test_fraction},
                                          {"seed", seed},
                                          {"train", split.train},
                                          {"test", split.test}}
                                         .dump() +
                                         "\n");
      std::ofstream history(run / "history.tsv");
      history << history_header();
      const TrainResult result = train(train_items, config, [&](const EpochRecord& r) {
        history << history_line(r) << std::flush;
        out << "epoch " << r.epoch << " train " << format_double(r.train.total) << " val "
            << format_double(r.validation.total) << " (" << format_double(r.seconds) << " s)\n"
            << std::flush;
      });
      save_checkpoint(result.best, run / "checkpoint.pt",
                      {{"seed", config.seed},
                       {"best_epoch", result.best_epoch},
                       {"best_validation_loss", result.best_validation_loss},
                       {"epochs", config.epochs},
                       {"loss_weights", config.to_json().at("loss")}});
      out << "best_epoch " << result.best_epoch << "\n"
          << "best_validation_loss " << format_double(result.best_validation_loss) << "\n"
          << "checkpoint " << (run / "checkpoint.pt").string() << "\n";
      return kExitOk;
    }

    if (*eval_cmd) {
      const auto items = eval_src.items();
      if (items.empty()) throw Error(ErrorKind::kEmptyInput, "no evaluation items");
      const auto preds = eval_src.predictions(items);
      write_eval_outputs(preds, items, eval_src.out_dir(eval_out, "eval"), out);
      return kExitOk;
    }

    if (*faith_cmd) {
      const auto items = faith_src.items();
      if (items.empty()) throw Error(ErrorKind::kEmptyInput, "no evaluation items");
      const auto preds = faith_src.predictions(items);
      const fs::path dir = faith_src.out_dir(faith_out, "faithfulness");
      const auto report = compare_associations(model_association(preds, items), ground_truth_association(items), tau);
      write_text(dir / "faithfulness.txt", report.to_text());
      write_text(dir / "independence.txt", auc_table_text(independence_analysis(preds, items)));
      for (const auto& g : report.gaps) {
        plot_association(g.cell_class, g.attribute, g.model, g.ground_truth,
                         dir / "association" /
                             (std::string(cell_class_name(g.cell_class)) + "_" + std::string(attribute_name(g.attribute)) + ".png"));
      }
      out << "verdict " << (report.faithful ? "faithful" : "unfaithful") << "\n"
          << "tau " << format_double(report.tau) << "\n"
          << "max_tv " << format_double(report.max_tv()) << "\n"
          << "report " << (dir / "faithfulness.txt").string() << "\n";
      return kExitOk;
    }

    if (*variant_cmd) {
      const TrainConfig config = variant_flags.resolve();
      const auto items = load_dataset(variant_data);
      VariantStudyOptions opts;
      opts.hidden_layer_options = options;
      opts.folds = variant_folds;
      opts.test_fraction = variant_test_fraction;
      const fs::path dir(variant_out);
      fs::create_directories(dir);
      write_text(dir / "config.json", config.to_json().dump(2) + "\n");
      const VariantTable table = variant_study(items, config, opts, [&](int h, int fold, const MetricsReport& r) {
        write_text(dir / "reports" / ("hidden" + std::to_string(h) + "_fold" + std::to_string(fold) + ".txt"),
                   r.to_text());
        out << "hidden_layers " << h << " fold " << fold << " f1 " << format_double(r.macro_f1) << "\n" << std::flush;
      });
      write_text(dir / "variant_table.txt", table.to_text());
      out << table.to_text();
      return kExitOk;
    }

    if (*predict_cmd) {
      const RgbImage image = read_png_rgb(image_path);
      ModelState state = load_checkpoint(predict_src.checkpoint_path());
      std::vector<CellPrediction> cells;
      if (threshold) {
        cells = predict_cells(state, image, *threshold);
      } else {
        cells = predict_single_cells(state, {image});
      }
      const fs::path dir(predict_out);
      fs::create_directories(dir);
      write_png(render_overlay(image, cells), dir / "overlay.png");
      const std::string report = cell_report(cells, image_path);
      write_text(dir / "report.txt", report);
      out << report;
      return kExitOk;
    }

    if (*grad_cmd) {
      const GradientCheckReport report = gradient_check(grad_opts);
      if (!grad_out.empty()) write_text(grad_out, report.to_text());
      out << report.to_text();
      return report.passed() ? kExitOk : kExitRuntime;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace wbc

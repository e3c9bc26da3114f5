#include "wbc/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace wbc {

namespace F = torch::nn::functional;
using nlohmann::json;

std::string_view backbone_name(BackboneKind kind) {
  return kind == BackboneKind::kToyResidualStack ? "toy_residual_stack" : "deep_residual_50";
}

BackboneKind parse_backbone(std::string_view name) {
  if (name == "toy_residual_stack") return BackboneKind::kToyResidualStack;
  if (name == "deep_residual_50") return BackboneKind::kDeepResidual50;
  throw Error(ErrorKind::kInvalidConfig, "unknown backbone '" + std::string(name) + "'");
}

std::vector<int> ModelConfig::feature_strides() const {
  if (backbone == BackboneKind::kDeepResidual50) return {4, 8, 16, 32};
  return {2, 4, 8, 16};
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::kInvalidConfig, msg); };
  if (d_model <= 0 || num_heads <= 0 || d_model % num_heads != 0) {
    fail("d_model must be a positive multiple of num_heads");
  }
  if (d_model % 4 != 0) fail("d_model must be divisible by 4 for 2-D positional encodings");
  if (encoder_layers < 1 || decoder_layers < 1) fail("need at least one encoder and decoder layer");
  if (dim_feedforward < 1) fail("dim_feedforward must be positive");
  if (num_queries < 1) fail("num_queries must be >= 1");
  if (explanation_hidden_layers != 0 && explanation_hidden_layers != 2 &&
      explanation_hidden_layers != 4) {
    fail("explanation_hidden_layers must be 0, 2 or 4");
  }
  if (mask_head_width < 8) fail("mask_head_width must be >= 8");
  const auto strides = feature_strides();
  if (std::find(strides.begin(), strides.end(), mask_output_stride) == strides.end()) {
    fail("mask_output_stride must be one of the backbone strides");
  }
  if (backbone == BackboneKind::kToyResidualStack) {
    if (backbone_widths.size() != 4) fail("toy backbone needs four stage widths");
    for (int w : backbone_widths) {
      if (w < 8) fail("backbone widths must be >= 8");
    }
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0,1)");
}

json ModelConfig::to_json() const {
  return {{"backbone", std::string(backbone_name(backbone))},
          {"d_model", d_model},
          {"num_heads", num_heads},
          {"encoder_layers", encoder_layers},
          {"decoder_layers", decoder_layers},
          {"dim_feedforward", dim_feedforward},
          {"num_queries", num_queries},
          {"explanation_hidden_layers", explanation_hidden_layers},
          {"mask_output_stride", mask_output_stride},
          {"mask_head_width", mask_head_width},
          {"backbone_widths", backbone_widths},
          {"dropout", dropout},
          {"seed", seed},
          {"backbone_weights", backbone_weights}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  try {
    c.backbone = parse_backbone(j.at("backbone").get<std::string>());
    c.d_model = j.at("d_model").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.encoder_layers = j.at("encoder_layers").get<int>();
    c.decoder_layers = j.at("decoder_layers").get<int>();
    c.dim_feedforward = j.at("dim_feedforward").get<int>();
    c.num_queries = j.at("num_queries").get<int>();
    c.explanation_hidden_layers = j.at("explanation_hidden_layers").get<int>();
    c.mask_output_stride = j.at("mask_output_stride").get<int>();
    c.mask_head_width = j.at("mask_head_width").get<int>();
    c.backbone_widths = j.at("backbone_widths").get<std::vector<int>>();
    c.dropout = j.at("dropout").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.backbone_weights = j.value("backbone_weights", std::string());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kSchemaMismatch, std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace nn {

namespace {

int groups_for(int channels) { return std::gcd(8, channels); }

torch::nn::Conv2d conv(int in, int out, int kernel, int stride = 1) {
  return torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2).bias(false));
}

torch::nn::GroupNorm group_norm(int channels) {
  return torch::nn::GroupNorm(torch::nn::GroupNormOptions(groups_for(channels), channels));
}

torch::nn::BatchNorm2d batch_norm(int channels) { return torch::nn::BatchNorm2d(channels); }

// Basic (two 3x3) or bottleneck (1x1-3x3-1x1) residual block with a
// projection shortcut when the shape changes.
class ResidualBlockImpl : public torch::nn::Module {
 public:
  ResidualBlockImpl(int in, int out, int stride, int bottleneck_width = 0) {
    if (bottleneck_width == 0) {
      body_ = register_module(
          "body", torch::nn::Sequential(conv(in, out, 3, stride), batch_norm(out), torch::nn::ReLU(),
                                        conv(out, out, 3), batch_norm(out)));
    } else {
      const int mid = bottleneck_width;
      body_ = register_module(
          "body", torch::nn::Sequential(conv(in, mid, 1), batch_norm(mid), torch::nn::ReLU(),
                                        conv(mid, mid, 3, stride), batch_norm(mid), torch::nn::ReLU(),
                                        conv(mid, out, 1), batch_norm(out)));
    }
    if (in != out || stride != 1) {
      shortcut_ = register_module("shortcut",
                                  torch::nn::Sequential(conv(in, out, 1, stride), batch_norm(out)));
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto identity = shortcut_ ? shortcut_->forward(x) : x;
    return torch::relu(body_->forward(x) + identity);
  }

 private:
  torch::nn::Sequential body_{nullptr};
  torch::nn::Sequential shortcut_{nullptr};
};
TORCH_MODULE(ResidualBlock);

torch::Tensor drop(const torch::Tensor& x, double p, bool training) {
  return p > 0.0 ? torch::dropout(x, p, training) : x;
}

}  // namespace

MultiHeadAttentionImpl::MultiHeadAttentionImpl(int d_model, int num_heads) : heads_(num_heads) {
  q_proj_ = register_module("q_proj", torch::nn::Linear(d_model, d_model));
  k_proj_ = register_module("k_proj", torch::nn::Linear(d_model, d_model));
  v_proj_ = register_module("v_proj", torch::nn::Linear(d_model, d_model));
  out_proj_ = register_module("out_proj", torch::nn::Linear(d_model, d_model));
}

torch::Tensor MultiHeadAttentionImpl::forward(const torch::Tensor& q, const torch::Tensor& k,
                                              const torch::Tensor& v, torch::Tensor* weights) {
  const int64_t b = q.size(0), lq = q.size(1), lk = k.size(1), d = q.size(2);
  const int64_t dh = d / heads_;
  auto split = [&](const torch::Tensor& t, int64_t len) {
    return t.view({b, len, heads_, dh}).transpose(1, 2);  // [B, H, L, dh]
  };
  const auto qh = split(q_proj_->forward(q), lq);
  const auto kh = split(k_proj_->forward(k), lk);
  const auto vh = split(v_proj_->forward(v), lk);
  const auto attn = torch::softmax(torch::matmul(qh, kh.transpose(-2, -1)) / std::sqrt(double(dh)), -1);
  if (weights) *weights = attn.mean(1);
  const auto out = torch::matmul(attn, vh).transpose(1, 2).reshape({b, lq, d});
  return out_proj_->forward(out);
}

EncoderLayerImpl::EncoderLayerImpl(int d_model, int num_heads, int dim_ff, double dropout)
    : dropout_(dropout) {
  attn_ = register_module("attn", MultiHeadAttention(d_model, num_heads));
  ff1_ = register_module("ff1", torch::nn::Linear(d_model, dim_ff));
  ff2_ = register_module("ff2", torch::nn::Linear(dim_ff, d_model));
  norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d_model})));
  norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d_model})));
}

torch::Tensor EncoderLayerImpl::forward(torch::Tensor src, const torch::Tensor& pos) {
  const auto qk = src + pos;
  src = norm1_->forward(src + drop(attn_->forward(qk, qk, src), dropout_, is_training()));
  const auto ff = ff2_->forward(drop(torch::relu(ff1_->forward(src)), dropout_, is_training()));
  return norm2_->forward(src + drop(ff, dropout_, is_training()));
}

DecoderLayerImpl::DecoderLayerImpl(int d_model, int num_heads, int dim_ff, double dropout)
    : dropout_(dropout) {
  self_attn_ = register_module("self_attn", MultiHeadAttention(d_model, num_heads));
  cross_attn_ = register_module("cross_attn", MultiHeadAttention(d_model, num_heads));
  ff1_ = register_module("ff1", torch::nn::Linear(d_model, dim_ff));
  ff2_ = register_module("ff2", torch::nn::Linear(dim_ff, d_model));
  norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d_model})));
  norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d_model})));
  norm3_ = register_module("norm3", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d_model})));
}

torch::Tensor DecoderLayerImpl::forward(torch::Tensor tgt, const torch::Tensor& memory,
                                        const torch::Tensor& pos, const torch::Tensor& query_pos,
                                        torch::Tensor* cross_weights) {
  const auto qk = tgt + query_pos;
  tgt = norm1_->forward(tgt + drop(self_attn_->forward(qk, qk, tgt), dropout_, is_training()));
  const auto cross = cross_attn_->forward(tgt + query_pos, memory + pos, memory, cross_weights);
  tgt = norm2_->forward(tgt + drop(cross, dropout_, is_training()));
  const auto ff = ff2_->forward(drop(torch::relu(ff1_->forward(tgt)), dropout_, is_training()));
  return norm3_->forward(tgt + drop(ff, dropout_, is_training()));
}

BackboneImpl::BackboneImpl(const ModelConfig& config) : kind_(config.backbone) {
  if (kind_ == BackboneKind::kToyResidualStack) {
    widths_ = config.backbone_widths;
    int in = 3;
    for (std::size_t s = 0; s < widths_.size(); ++s) {
      stages_.push_back(register_module("stage" + std::to_string(s),
                                        torch::nn::Sequential(ResidualBlock(in, widths_[s], 2))));
      in = widths_[s];
    }
    return;
  }
  // 50-layer bottleneck layout: 3-4-6-3 blocks.
  widths_ = {256, 512, 1024, 2048};
  stem_ = register_module(
      "stem", torch::nn::Sequential(
                  torch::nn::Conv2d(torch::nn::Conv2dOptions(3, 64, 7).stride(2).padding(3).bias(false)),
                  batch_norm(64), torch::nn::ReLU(),
                  torch::nn::MaxPool2d(torch::nn::MaxPool2dOptions(3).stride(2).padding(1))));
  const std::array<int, 4> blocks = {3, 4, 6, 3};
  const std::array<int, 4> mids = {64, 128, 256, 512};
  int in = 64;
  for (int s = 0; s < 4; ++s) {
    torch::nn::Sequential stage;
    for (int b = 0; b < blocks[s]; ++b) {
      const int stride = (b == 0 && s > 0) ? 2 : 1;
      stage->push_back(ResidualBlock(in, widths_[s], stride, mids[s]));
      in = widths_[s];
    }
    stages_.push_back(register_module("stage" + std::to_string(s), stage));
  }
}

std::vector<torch::Tensor> BackboneImpl::forward(const torch::Tensor& images) {
  std::vector<torch::Tensor> out;
  auto x = stem_ ? stem_->forward(images) : images;
  for (auto& stage : stages_) {
    x = stage->forward(x);
    out.push_back(x);
  }
  return out;
}

}  // namespace nn

// ---------------------------------------------------------------------------

CellSetNetImpl::CellSetNetImpl(const ModelConfig& config) : config_(config) {
  config_.validate();
  const int d = config_.d_model;
  backbone_ = register_module("backbone", nn::Backbone(config_));
  const std::vector<int> widths = backbone_->widths();
  input_proj_ = register_module(
      "input_proj", torch::nn::Conv2d(torch::nn::Conv2dOptions(widths.back(), d, 1)));
  for (int i = 0; i < config_.encoder_layers; ++i) {
    encoder_.push_back(register_module(
        "encoder" + std::to_string(i),
        nn::EncoderLayer(d, config_.num_heads, config_.dim_feedforward, config_.dropout)));
  }
  for (int i = 0; i < config_.decoder_layers; ++i) {
    decoder_.push_back(register_module(
        "decoder" + std::to_string(i),
        nn::DecoderLayer(d, config_.num_heads, config_.dim_feedforward, config_.dropout)));
  }
  decoder_norm_ = register_module("decoder_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  query_embed_ = register_module("query_embed", torch::nn::Embedding(config_.num_queries, d));

  class_head_ = register_module("class_head", torch::nn::Linear(d, kNumClassScores));
  {
    // Start each slot at the prior of a single-cell image: EMPTY with
    // probability (N-1)/N, the rest spread evenly over the cell types.
    torch::NoGradGuard guard;
    const double n = config_.num_queries;
    class_head_->bias.zero_();
    if (n > 1) class_head_->bias[kEmptyIndex].fill_(std::log((n - 1.0) * kNumCellTypes));
  }
  box_head_ = register_module(
      "box_head", torch::nn::Sequential(torch::nn::Linear(d, d), torch::nn::ReLU(),
                                        torch::nn::Linear(d, d), torch::nn::ReLU(),
                                        torch::nn::Linear(d, 4)));
  if (config_.explanation_hidden_layers > 0) {
    explanation_trunk_ = torch::nn::Sequential();
    for (int i = 0; i < config_.explanation_hidden_layers; ++i) {
      explanation_trunk_->push_back(torch::nn::Linear(d, d));
      explanation_trunk_->push_back(torch::nn::ReLU());
    }
    register_module("explanation_trunk", explanation_trunk_);
  }
  for (int k = 0; k < kNumAttributes; ++k) {
    explanation_out_.push_back(register_module("explanation_out" + std::to_string(k),
                                               torch::nn::Linear(d, kAttributeCardinality[k])));
  }

  // Mask head: per-query attention maps over the encoder memory, refined
  // coarse-to-fine with backbone skip features.
  attn_q_ = register_module("mask_attn_q", torch::nn::Linear(d, d));
  attn_k_ = register_module("mask_attn_k", torch::nn::Linear(d, d));
  const int c0 = config_.mask_head_width;
  mask_stem_ = register_module(
      "mask_stem",
      torch::nn::Sequential(nn::conv(d + config_.num_heads, c0, 3), nn::group_norm(c0),
                            torch::nn::ReLU(), nn::conv(c0, c0, 3), nn::group_norm(c0),
                            torch::nn::ReLU()));
  const std::vector<int> strides = config_.feature_strides();
  int width = c0;
  for (int level = static_cast<int>(strides.size()) - 2;
       level >= 0 && strides[level] >= config_.mask_output_stride; --level) {
    const int next = std::max(8, width / 2);
    mask_adapters_.push_back(register_module(
        "mask_adapter" + std::to_string(mask_levels_),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(widths[level], width, 1))));
    mask_fuse_.push_back(register_module(
        "mask_fuse" + std::to_string(mask_levels_),
        torch::nn::Sequential(nn::conv(width, next, 3), nn::group_norm(next), torch::nn::ReLU())));
    width = next;
    ++mask_levels_;
  }
  mask_out_ = register_module(
      "mask_out", torch::nn::Conv2d(torch::nn::Conv2dOptions(width, 2, 3).padding(1)));
}

torch::Tensor CellSetNetImpl::positional_encoding(int64_t batch, int64_t h, int64_t w,
                                                  const torch::TensorOptions& opts) const {
  const int64_t feats = config_.d_model / 2;
  const double scale = 2.0 * std::numbers::pi;
  const double eps = 1e-6;
  const auto y = (torch::arange(1, h + 1, opts) / (h + eps) * scale).view({h, 1, 1}).expand({h, w, 1});
  const auto x = (torch::arange(1, w + 1, opts) / (w + eps) * scale).view({1, w, 1}).expand({h, w, 1});
  const auto i = torch::arange(feats, opts);
  const auto dim_t = torch::pow(10000.0, 2.0 * torch::floor(i / 2.0) / static_cast<double>(feats));
  auto interleave = [&](const torch::Tensor& e) {
    const auto p = e / dim_t;  // [h, w, feats]
    const auto even = torch::sin(p.index({"...", torch::indexing::Slice(0, torch::indexing::None, 2)}));
    const auto odd = torch::cos(p.index({"...", torch::indexing::Slice(1, torch::indexing::None, 2)}));
    return torch::stack({even, odd}, -1).flatten(-2);
  };
  const auto pos = torch::cat({interleave(y), interleave(x)}, -1).view({1, h * w, config_.d_model});
  return pos.expand({batch, h * w, config_.d_model});
}

EncodedBatch CellSetNetImpl::encode(const torch::Tensor& images) {
  EncodedBatch enc;
  enc.image_height = images.size(2);
  enc.image_width = images.size(3);
  enc.features = backbone_->forward(images);
  const auto src = input_proj_->forward(enc.features.back());  // [B, D, h, w]
  const int64_t b = src.size(0), d = src.size(1), h = src.size(2), w = src.size(3);
  const auto pos = positional_encoding(b, h, w, src.options());
  auto memory = src.flatten(2).transpose(1, 2);  // [B, hw, D]
  for (auto& layer : encoder_) memory = layer->forward(memory, pos);
  enc.memory = memory.transpose(1, 2).reshape({b, d, h, w});

  const auto queries = query_embed_->weight.unsqueeze(0).expand({b, config_.num_queries, d});
  auto tgt = queries;
  torch::Tensor attn;
  for (auto& layer : decoder_) tgt = layer->forward(tgt, memory, pos, queries, &attn);
  enc.decoded = decoder_norm_->forward(tgt);

  // Box centres are offsets from the point the last cross-attention looks at.
  const auto ys = (torch::arange(h, src.options()) + 0.5) / double(h);
  const auto xs = (torch::arange(w, src.options()) + 0.5) / double(w);
  const auto grid = torch::stack({xs.repeat({h}), ys.repeat_interleave(w)}, -1);  // [hw, 2]
  const auto ref = torch::matmul(attn, grid).clamp(1e-4, 1.0 - 1e-4);            // [B, N, 2]
  const auto ref_logit = torch::log(ref / (1.0 - ref));

  enc.class_logits = class_head_->forward(enc.decoded);
  const auto raw = box_head_->forward(enc.decoded);
  enc.boxes = torch::sigmoid(torch::cat({raw.slice(-1, 0, 2) + ref_logit, raw.slice(-1, 2, 4)}, -1));
  const auto trunk = explanation_trunk_ ? explanation_trunk_->forward(enc.decoded) : enc.decoded;
  for (int k = 0; k < kNumAttributes; ++k) enc.attr_logits[k] = explanation_out_[k]->forward(trunk);
  return enc;
}

torch::Tensor CellSetNetImpl::decode_masks(const EncodedBatch& enc, const torch::Tensor& batch_index,
                                           const torch::Tensor& query_index) {
  const int64_t s = batch_index.size(0);
  const int64_t d = config_.d_model, heads = config_.num_heads, dh = d / heads;
  const int64_t h = enc.memory.size(2), w = enc.memory.size(3);
  if (s == 0) {
    return torch::empty({0, 2, enc.image_height, enc.image_width}, enc.memory.options());
  }

  const auto memory = enc.memory.index_select(0, batch_index);              // [S, D, h, w]
  const auto hs = enc.decoded.index({batch_index, query_index});             // [S, D]
  const auto q = attn_q_->forward(hs).view({s, heads, 1, dh});
  const auto k = attn_k_->forward(memory.flatten(2).transpose(1, 2))         // [S, hw, D]
                     .view({s, h * w, heads, dh})
                     .permute({0, 2, 3, 1});                                 // [S, H, dh, hw]
  const auto attn =
      torch::softmax(torch::matmul(q, k).squeeze(2) / std::sqrt(double(dh)), -1).view({s, heads, h, w});

  auto x = mask_stem_->forward(torch::cat({memory, attn}, 1));
  const int deepest = static_cast<int>(enc.features.size()) - 1;
  for (int l = 0; l < mask_levels_; ++l) {
    const auto& skip = enc.features[deepest - 1 - l];
    const auto adapted = mask_adapters_[l]->forward(skip).index_select(0, batch_index);
    x = adapted + F::interpolate(x, F::InterpolateFuncOptions()
                                        .size(std::vector<int64_t>{adapted.size(2), adapted.size(3)})
                                        .mode(torch::kNearest));
    x = mask_fuse_[l]->forward(x);
  }
  const auto logits = mask_out_->forward(x);
  const auto full = F::interpolate(
      logits, F::InterpolateFuncOptions()
                  .size(std::vector<int64_t>{enc.image_height, enc.image_width})
                  .mode(torch::kBilinear)
                  .align_corners(false));
  return torch::sigmoid(full);
}

// ---------------------------------------------------------------------------

namespace {

torch::OrderedDict<std::string, torch::Tensor> module_tensors(const torch::nn::Module& m) {
  auto out = m.named_parameters();
  for (const auto& item : m.named_buffers()) out.insert(item.key(), item.value());
  return out;
}

}  // namespace

ModelState ModelState::clone() const {
  ModelState copy{CellSetNet(config())};
  torch::NoGradGuard guard;
  auto dst = module_tensors(*copy.net_);
  for (const auto& item : module_tensors(*net_)) dst[item.key()].copy_(item.value());
  copy.net_->train(net_->is_training());
  return copy;
}

std::vector<std::pair<std::string, torch::Tensor>> ModelState::named_tensors() const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : module_tensors(*net_)) out.emplace_back(item.key(), item.value());
  return out;
}

std::uint64_t ModelState::checksum() const {
  std::uint64_t hash = 1469598103934665603ULL;
  auto mix = [&](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      hash ^= p[i];
      hash *= 1099511628211ULL;
    }
  };
  for (const auto& [name, t] : named_tensors()) {
    mix(name.data(), name.size());
    const auto c = t.detach().contiguous().cpu();
    mix(c.data_ptr(), static_cast<std::size_t>(c.numel()) * c.element_size());
  }
  return hash;
}

ModelState build_model(const ModelConfig& config) {
  config.validate();
  torch::manual_seed(config.seed);
  ModelState state{CellSetNet(config)};
  if (!config.backbone_weights.empty()) load_backbone_weights(state, config.backbone_weights);
  return state;
}

void load_backbone_weights(ModelState& state, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorKind::kMissingFile, path.string());
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  torch::NoGradGuard guard;
  for (auto& item : module_tensors(*state.net()->backbone())) {
    const std::string name = "backbone." + item.key();
    torch::Tensor t;
    if (!archive.try_read("param/" + name, t) && !archive.try_read(name, t)) {
      throw Error(ErrorKind::kInvalidConfig, "backbone weights lack " + name);
    }
    if (t.sizes() != item.value().sizes()) {
      throw Error(ErrorKind::kInvalidConfig, "shape mismatch for " + name);
    }
    item.value().copy_(t);
  }
}

torch::Tensor images_to_tensor(const std::vector<const RgbImage*>& images) {
  if (images.empty()) throw Error(ErrorKind::kEmptyInput, "no images");
  const int h = images.front()->height, w = images.front()->width;
  std::vector<torch::Tensor> ts;
  ts.reserve(images.size());
  for (const RgbImage* img : images) {
    if (img->height != h || img->width != w) {
      throw Error(ErrorKind::kDimensionError, "images in a batch must share dimensions");
    }
    ts.push_back(torch::from_blob(const_cast<std::uint8_t*>(img->rgb.data()), {h, w, 3}, torch::kUInt8)
                     .permute({2, 0, 1})
                     .to(torch::kFloat32));
  }
  return (torch::stack(ts) / 255.0 - 0.5) / 0.25;
}

SlotOutputs slot_outputs(const EncodedBatch& enc, int64_t image, const torch::Tensor& masks,
                         std::vector<int> mask_slots) {
  SlotOutputs out;
  out.class_logits = enc.class_logits[image];
  out.boxes = enc.boxes[image];
  for (int k = 0; k < kNumAttributes; ++k) out.attr_logits[k] = enc.attr_logits[k][image];
  out.mask_probs = masks;
  out.mask_slots = std::move(mask_slots);
  return out;
}

namespace {

std::vector<double> to_vector(const torch::Tensor& t) {
  const auto c = t.detach().to(torch::kFloat64).contiguous();
  return std::vector<double>(c.data_ptr<double>(), c.data_ptr<double>() + c.numel());
}

SoftMask to_soft_mask(const torch::Tensor& t) {
  const auto c = t.detach().to(torch::kFloat32).contiguous();
  SoftMask m(static_cast<int>(c.size(1)), static_cast<int>(c.size(0)));
  std::copy(c.data_ptr<float>(), c.data_ptr<float>() + c.numel(), m.data.begin());
  return m;
}

// Slot records for image `b`; masks[r] belongs to (b, slots[r]).
PredictionSet to_prediction_set(const EncodedBatch& enc, int64_t b, const torch::Tensor& masks,
                                const std::vector<int64_t>& mask_rows_for_slot) {
  PredictionSet set;
  const int64_t n = enc.class_logits.size(1);
  set.slots.resize(static_cast<std::size_t>(n));
  const auto logits = enc.class_logits[b].detach().to(torch::kFloat64).contiguous();
  const auto boxes = enc.boxes[b].detach().to(torch::kFloat64).contiguous();
  for (int64_t j = 0; j < n; ++j) {
    SlotPrediction& s = set.slots[static_cast<std::size_t>(j)];
    const auto row = to_vector(logits[j]);
    std::copy(row.begin(), row.end(), s.class_scores.begin());
    const auto bx = to_vector(boxes[j]);
    s.box = BoundingBox::from_center(bx[0], bx[1], std::max(bx[2], 1e-6), std::max(bx[3], 1e-6));
    for (int k = 0; k < kNumAttributes; ++k) s.attribute_scores[k] = to_vector(enc.attr_logits[k][b][j]);
    const int64_t r = mask_rows_for_slot.empty() ? -1 : mask_rows_for_slot[static_cast<std::size_t>(j)];
    if (r >= 0) s.soft_masks = SoftMaskPair{to_soft_mask(masks[r][0]), to_soft_mask(masks[r][1])};
  }
  return set;
}

int best_slot(const torch::Tensor& class_logits) {
  // Highest non-EMPTY probability; ties to the lowest slot.
  const auto probs = torch::softmax(class_logits.detach().to(torch::kFloat64), -1)
                         .index({torch::indexing::Slice(), torch::indexing::Slice(0, kNumCellTypes)});
  const auto best = std::get<0>(probs.max(-1));
  const auto values = to_vector(best);
  return argmax(values);
}

}  // namespace

std::vector<PredictionSet> forward(ModelState& state, const std::vector<RgbImage>& images) {
  std::vector<const RgbImage*> ptrs;
  for (const auto& img : images) ptrs.push_back(&img);
  torch::NoGradGuard guard;
  state.net()->eval();
  const auto enc = state.net()->encode(images_to_tensor(ptrs));
  const int64_t b = enc.class_logits.size(0), n = enc.class_logits.size(1);
  const auto bi = torch::arange(b, torch::kInt64).repeat_interleave(n);
  const auto qi = torch::arange(n, torch::kInt64).repeat({b});
  const auto masks = state.net()->decode_masks(enc, bi, qi);
  std::vector<PredictionSet> out;
  for (int64_t i = 0; i < b; ++i) {
    std::vector<int64_t> rows(static_cast<std::size_t>(n));
    std::iota(rows.begin(), rows.end(), i * n);
    out.push_back(to_prediction_set(enc, i, masks, rows));
  }
  return out;
}

std::vector<CellPrediction> select_cells(const PredictionSet& preds, double confidence_threshold,
                                         double mask_threshold) {
  std::vector<CellPrediction> out;
  for (std::size_t j = 0; j < preds.slots.size(); ++j) {
    const auto& slot = preds.slots[j];
    const std::vector<double> probs = softmax(slot.class_scores);
    const double best = *std::max_element(probs.begin(), probs.begin() + kNumCellTypes);
    if (best > confidence_threshold) {
      out.push_back(decode_slot(slot, static_cast<int>(j), mask_threshold));
    }
  }
  if (out.empty()) throw Error(ErrorKind::kNoDetection, "no slot passes the confidence threshold");
  std::stable_sort(out.begin(), out.end(), [](const CellPrediction& a, const CellPrediction& b) {
    return a.confidence > b.confidence;
  });
  return out;
}

CellPrediction select_single_cell(const PredictionSet& preds, double mask_threshold) {
  if (preds.slots.empty()) throw Error(ErrorKind::kEmptyInput, "prediction set has no slots");
  int best = 0;
  double best_conf = -1.0;
  for (std::size_t j = 0; j < preds.slots.size(); ++j) {
    const std::vector<double> probs = softmax(preds.slots[j].class_scores);
    const double conf = *std::max_element(probs.begin(), probs.begin() + kNumCellTypes);
    if (conf > best_conf) {
      best_conf = conf;
      best = static_cast<int>(j);
    }
  }
  return decode_slot(preds.slots[static_cast<std::size_t>(best)], best, mask_threshold);
}

std::vector<CellPrediction> predict_cells(ModelState& state, const RgbImage& image,
                                          double confidence_threshold) {
  return select_cells(forward(state, {image}).front(), confidence_threshold);
}

std::vector<CellPrediction> predict_single_cells(ModelState& state,
                                                 const std::vector<RgbImage>& images,
                                                 int batch_size) {
  std::vector<CellPrediction> out;
  out.reserve(images.size());
  torch::NoGradGuard guard;
  state.net()->eval();
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const RgbImage*> ptrs;
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&images[i]);
    const auto enc = state.net()->encode(images_to_tensor(ptrs));
    const int64_t b = enc.class_logits.size(0), n = enc.class_logits.size(1);
    std::vector<int64_t> slots;
    for (int64_t i = 0; i < b; ++i) slots.push_back(best_slot(enc.class_logits[i]));
    const auto masks = state.net()->decode_masks(enc, torch::arange(b, torch::kInt64),
                                                 torch::tensor(slots, torch::kInt64));
    for (int64_t i = 0; i < b; ++i) {
      std::vector<int64_t> rows(static_cast<std::size_t>(n), -1);
      rows[static_cast<std::size_t>(slots[static_cast<std::size_t>(i)])] = i;
      out.push_back(select_single_cell(to_prediction_set(enc, i, masks, rows)));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void save_checkpoint(const ModelState& state, const std::filesystem::path& path,
                     const json& metadata) {
  torch::serialize::OutputArchive archive;
  for (const auto& [name, t] : state.named_tensors()) archive.write("param/" + name, t.detach());
  const json meta = {{"format", kCheckpointFormat},
                     {"version", kCheckpointVersion},
                     {"config", state.config().to_json()},
                     {"metadata", metadata}};
  archive.write("meta", c10::IValue(meta.dump()));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  archive.save_to(path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path, json* metadata) {
  if (!std::filesystem::exists(path)) throw Error(ErrorKind::kMissingFile, path.string());
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    throw Error(ErrorKind::kSchemaMismatch, "unreadable checkpoint " + path.string());
  }
  c10::IValue meta_value;
  if (!archive.try_read("meta", meta_value) || !meta_value.isString()) {
    throw Error(ErrorKind::kSchemaMismatch, "checkpoint lacks metadata");
  }
  const json meta = json::parse(meta_value.toStringRef());
  if (meta.value("format", "") != kCheckpointFormat || meta.value("version", 0) != kCheckpointVersion) {
    throw Error(ErrorKind::kSchemaMismatch, "unsupported checkpoint format");
  }
  // Constructed directly: the stored parameters supersede any backbone_weights.
  ModelState state(CellSetNet(ModelConfig::from_json(meta.at("config"))));
  torch::NoGradGuard guard;
  for (auto& item : module_tensors(*state.net())) {
    torch::Tensor t;
    if (!archive.try_read("param/" + item.key(), t)) {
      throw Error(ErrorKind::kSchemaMismatch, "checkpoint lacks " + item.key());
    }
    if (t.sizes() != item.value().sizes()) {
      throw Error(ErrorKind::kSchemaMismatch, "shape mismatch for " + item.key());
    }
    item.value().copy_(t);
  }
  if (metadata) *metadata = meta.at("metadata");
  return state;
}

}  // namespace wbc

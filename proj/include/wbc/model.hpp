#pragma once

// Set-prediction network: residual convolutional backbone, transformer
// encoder-decoder over the final feature map, per-query class / box /
// explanation heads and an FPN-style mask head that emits a two-channel
// (cytoplasm, nucleus) mask per query.

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "wbc/core.hpp"
#include "wbc/losses.hpp"

namespace wbc {

enum class BackboneKind { kToyResidualStack, kDeepResidual50 };

struct ModelConfig {
  BackboneKind backbone = BackboneKind::kToyResidualStack;
  int d_model = 64;
  int num_heads = 4;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int dim_feedforward = 128;
  int num_queries = 10;
  int explanation_hidden_layers = 0;
  int mask_output_stride = 2;  // TrainConfig::paper() uses 4
  int mask_head_width = 32;
  std::vector<int> backbone_widths = {32, 64, 128, 256};
  double dropout = 0.0;
  std::uint64_t seed = 0;
  // Optional checkpoint or archive whose tensors named "backbone.*" replace
  // the freshly initialized backbone parameters.
  std::string backbone_weights;

  void validate() const;
  // Strides of the backbone feature maps, shallow to deep.
  std::vector<int> feature_strides() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

std::string_view backbone_name(BackboneKind kind);
BackboneKind parse_backbone(std::string_view name);

namespace nn {

class MultiHeadAttentionImpl : public torch::nn::Module {
 public:
  MultiHeadAttentionImpl(int d_model, int num_heads);
  // [B, Lq, D], [B, Lk, D], [B, Lk, D] -> [B, Lq, D]. When `weights` is
  // given it receives the head-averaged attention [B, Lq, Lk].
  torch::Tensor forward(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v,
                        torch::Tensor* weights = nullptr);

 private:
  int heads_;
  torch::nn::Linear q_proj_{nullptr}, k_proj_{nullptr}, v_proj_{nullptr}, out_proj_{nullptr};
};
TORCH_MODULE(MultiHeadAttention);

class EncoderLayerImpl : public torch::nn::Module {
 public:
  EncoderLayerImpl(int d_model, int num_heads, int dim_ff, double dropout);
  torch::Tensor forward(torch::Tensor src, const torch::Tensor& pos);

 private:
  MultiHeadAttention attn_{nullptr};
  torch::nn::Linear ff1_{nullptr}, ff2_{nullptr};
  torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr};
  double dropout_;
};
TORCH_MODULE(EncoderLayer);

class DecoderLayerImpl : public torch::nn::Module {
 public:
  DecoderLayerImpl(int d_model, int num_heads, int dim_ff, double dropout);
  torch::Tensor forward(torch::Tensor tgt, const torch::Tensor& memory, const torch::Tensor& pos,
                        const torch::Tensor& query_pos, torch::Tensor* cross_weights = nullptr);

 private:
  MultiHeadAttention self_attn_{nullptr}, cross_attn_{nullptr};
  torch::nn::Linear ff1_{nullptr}, ff2_{nullptr};
  torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr}, norm3_{nullptr};
  double dropout_;
};
TORCH_MODULE(DecoderLayer);

// Returns feature maps ordered shallow to deep.
class BackboneImpl : public torch::nn::Module {
 public:
  explicit BackboneImpl(const ModelConfig& config);
  std::vector<torch::Tensor> forward(const torch::Tensor& images);
  std::vector<int> widths() const { return widths_; }

 private:
  BackboneKind kind_;
  std::vector<int> widths_;
  torch::nn::Sequential stem_{nullptr};
  std::vector<torch::nn::Sequential> stages_;
};
TORCH_MODULE(Backbone);

}  // namespace nn

// Intermediate tensors of one forward pass, reused to decode masks for a
// chosen subset of queries.
struct EncodedBatch {
  std::vector<torch::Tensor> features;  // backbone maps, shallow to deep
  torch::Tensor memory;                 // [B, D, h, w]
  torch::Tensor decoded;                // [B, N, D]
  torch::Tensor class_logits;           // [B, N, 11]
  torch::Tensor boxes;                  // [B, N, 4], in (0,1)
  std::array<torch::Tensor, kNumAttributes> attr_logits;  // [B, N, card]
  int64_t image_height = 0, image_width = 0;
};

class CellSetNetImpl : public torch::nn::Module {
 public:
  explicit CellSetNetImpl(const ModelConfig& config);

  // images: [B, 3, H, W] float, already normalized.
  EncodedBatch encode(const torch::Tensor& images);
  // Mask probabilities [S, 2, H, W] for the (batch index, query index) pairs.
  torch::Tensor decode_masks(const EncodedBatch& enc, const torch::Tensor& batch_index,
                             const torch::Tensor& query_index);

  const ModelConfig& config() const { return config_; }
  nn::Backbone backbone() const { return backbone_; }

 private:
  torch::Tensor positional_encoding(int64_t batch, int64_t h, int64_t w,
                                    const torch::TensorOptions& opts) const;

  ModelConfig config_;
  nn::Backbone backbone_{nullptr};
  torch::nn::Conv2d input_proj_{nullptr};
  std::vector<nn::EncoderLayer> encoder_;
  std::vector<nn::DecoderLayer> decoder_;
  torch::nn::LayerNorm decoder_norm_{nullptr};
  torch::nn::Embedding query_embed_{nullptr};
  torch::nn::Linear class_head_{nullptr};
  torch::nn::Sequential box_head_{nullptr};
  torch::nn::Sequential explanation_trunk_{nullptr};
  std::vector<torch::nn::Linear> explanation_out_;
  // Mask head.
  torch::nn::Linear attn_q_{nullptr}, attn_k_{nullptr};
  torch::nn::Sequential mask_stem_{nullptr};
  std::vector<torch::nn::Conv2d> mask_adapters_;
  std::vector<torch::nn::Sequential> mask_fuse_;
  torch::nn::Conv2d mask_out_{nullptr};
  int mask_levels_ = 0;
};
TORCH_MODULE(CellSetNet);

// Parameters + config. Copies share the network; use clone() for an
// independent snapshot.
class ModelState {
 public:
  ModelState() = default;
  explicit ModelState(CellSetNet net) : net_(std::move(net)) {}

  const ModelConfig& config() const { return net_->config(); }
  CellSetNet& net() { return net_; }
  const CellSetNet& net() const { return net_; }

  ModelState clone() const;
  // Parameters followed by buffers (normalization statistics).
  std::vector<std::pair<std::string, torch::Tensor>> named_tensors() const;
  // Order-dependent FNV-1a over tensor names and raw bytes.
  std::uint64_t checksum() const;

 private:
  CellSetNet net_{nullptr};
};

ModelState build_model(const ModelConfig& config);

// Loads tensors named "backbone.*" from a checkpoint or torch archive into
// the backbone. Throws InvalidConfig on missing names or shape mismatch.
void load_backbone_weights(ModelState& state, const std::filesystem::path& path);

// [B, 3, H, W] normalized float tensor. DimensionError on mixed sizes.
torch::Tensor images_to_tensor(const std::vector<const RgbImage*>& images);

// Evaluation-mode forward pass decoding masks for every slot.
std::vector<PredictionSet> forward(ModelState& state, const std::vector<RgbImage>& images);

// Per-image slot outputs from an encoded batch (masks for the listed slots).
SlotOutputs slot_outputs(const EncodedBatch& enc, int64_t image, const torch::Tensor& masks,
                         std::vector<int> mask_slots);

// Decoding rules, independent of the network.
// Slots whose best non-EMPTY probability exceeds the threshold, most
// confident first. Throws NoDetection when none pass.
std::vector<CellPrediction> select_cells(const PredictionSet& preds, double confidence_threshold,
                                         double mask_threshold = 0.5);
// The single most confident non-EMPTY slot.
CellPrediction select_single_cell(const PredictionSet& preds, double mask_threshold = 0.5);

std::vector<CellPrediction> predict_cells(ModelState& state, const RgbImage& image,
                                          double confidence_threshold);
std::vector<CellPrediction> predict_single_cells(ModelState& state,
                                                 const std::vector<RgbImage>& images,
                                                 int batch_size = 32);

// Checkpoint: torch archive with one tensor per parameter or buffer under
// "param/<name>" and a JSON document under "meta" holding the format tag,
// version, model config and caller-supplied training metadata.
inline constexpr const char* kCheckpointFormat = "wbc-checkpoint";
inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const ModelState& state, const std::filesystem::path& path,
                     const nlohmann::json& metadata = nlohmann::json::object());
ModelState load_checkpoint(const std::filesystem::path& path, nlohmann::json* metadata = nullptr);

}  // namespace wbc

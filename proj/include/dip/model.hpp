#pragma once

// Patch-token transformer backbone with a per-patch detailer head.
//
// Image layout: flat H*W*C vectors, (row, col, channel) with channel fastest.
// Token s covers the patch at (row = s / (W/P), col = s % (W/P)); its values
// are ordered (row, col, channel) inside the patch with channel fastest.

#include <dip/flow.hpp>
#include <dip/nn/parameters.hpp>

#include <memory>
#include <optional>

namespace dip {

struct ImagePatchScheme {
  Index height = 32;
  Index width = 32;
  Index channels = 3;
  Index patch = 8;

  void validate() const;
  Index pixels() const { return height * width * channels; }
  Index num_tokens() const { return (height / patch) * (width / patch); }
  Index token_dim() const { return patch * patch * channels; }
};

// index[j] = image position of token-major element j (token s, element e at j = s * token_dim + e).
std::vector<Index> patchify_index(const ImagePatchScheme& scheme);
RowMatrixXd patchify(const VectorXd& image, const ImagePatchScheme& scheme);
VectorXd unpatchify(const RowMatrixXd& tokens, const ImagePatchScheme& scheme);
// Rows of `images` are flat images; result is [rows * N, token_dim].
RowMatrixXd patchify_batch(const MatrixXd& images, const ImagePatchScheme& scheme);
MatrixXd unpatchify_batch(const RowMatrixXd& tokens, const ImagePatchScheme& scheme);

enum class Conditioning { additive, adaln_zero };

struct BackboneConfig {
  Index layers = 4;
  Index hidden = 64;
  Index heads = 4;
  Index num_classes = 1;
  Index time_frequencies = 64;
  Index mlp_ratio = 4;
  Conditioning conditioning = Conditioning::additive;

  void validate() const;
};

enum class DetailerVariant {
  conv_unet,
  standard_mlp,
  coordinate_mlp_stub,
  intra_patch_attention_stub,
  identity_stub,        // returns the noisy patch unchanged
  linear_readout_stub,  // dense map of the context vector, ignores the patch
};

struct DetailerHeadConfig {
  DetailerVariant variant = DetailerVariant::conv_unet;
  // conv_unet channel path after the input channels; its length is the depth.
  std::vector<Index> channels{8, 16, 32};
  Index mlp_hidden = 256;
  Index stub_width = 16;

  void validate(const ImagePatchScheme& scheme) const;
  Index depth() const { return static_cast<Index>(channels.size()); }
};

enum class Placement { post_hoc, intermediate, hybrid };

struct PlacementConfig {
  Placement mode = Placement::post_hoc;
  // The mid-stack head runs after this block (intermediate and hybrid).
  Index insertion_index = 0;
};

struct DipConfig {
  ImagePatchScheme scheme;
  BackboneConfig backbone;
  std::optional<DetailerHeadConfig> head;
  PlacementConfig placement;

  void validate() const;
};

// DiT-style sinusoidal features of 1000 t: [cos(1000 t f_k), sin(1000 t f_k)]
// with f_k = 10000^(-k / half), k < half.
RowMatrixXd timestep_features(std::span<const double> t, Index frequencies);

class DetailerHead {
 public:
  virtual ~DetailerHead() = default;
  // context [M, D], patches [M, token_dim] (token layout) -> [M, token_dim].
  virtual nn::Var forward(const nn::Var& context, const nn::Var& patches) const = 0;
};

std::unique_ptr<DetailerHead> make_detailer(nn::ParameterStore& store, const std::string& prefix,
                                            const DetailerHeadConfig& config, const ImagePatchScheme& scheme,
                                            Index context_dim, RandomStream& rng);

class DipModel {
 public:
  DipModel(const DipConfig& config, std::uint64_t seed);
  DipModel(const DipModel&) = delete;
  DipModel& operator=(const DipModel&) = delete;

  const DipConfig& config() const { return config_; }
  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }

  // images [B, H*W*C] -> velocity tokens [B*N, token_dim].
  nn::Var forward_tokens(const MatrixXd& images, std::span<const double> t, std::span<const int> labels) const;
  // images [B, H*W*C] -> velocity images [B, H*W*C].
  nn::Var forward(const MatrixXd& images, std::span<const double> t, std::span<const int> labels) const;

  // Global context S [B*N, D] from all backbone blocks and the final norm.
  nn::Var backbone_forward(const nn::Var& tokens, std::span<const double> t, std::span<const int> labels) const;
  const DetailerHead* head() const { return head_.get(); }

  // Label row in the class table; -1 (or any negative) is the null label.
  Index label_row(int label) const;

 private:
  struct Block {
    nn::LayerNorm norm1, norm2;
    nn::Dense q, k, v, proj, fc1, fc2, modulation;
  };

  nn::Var conditioning(std::span<const double> t, std::span<const int> labels) const;
  nn::Var run_block(const Block& b, const nn::Var& h, const nn::Var& cond, Index batch) const;
  nn::Var embed(const nn::Var& tokens, const nn::Var& cond) const;
  nn::Var finish(const nn::Var& h, const nn::Var& cond) const;

  DipConfig config_;
  nn::ParameterStore store_;
  nn::Dense embed_, time1_, time2_;
  nn::Var pos_, class_table_;
  std::vector<Block> blocks_;
  nn::LayerNorm final_norm_;
  nn::Dense final_modulation_;
  std::optional<nn::Dense> readout_, inject_;
  std::unique_ptr<DetailerHead> head_, mid_head_;
};

// Adapts a model to the flow-core sampler and loss (no gradients kept).
class DipVelocity final : public VelocityModel {
 public:
  explicit DipVelocity(const DipModel& model) : model_(model) {}
  Index dim() const override { return model_.config().scheme.pixels(); }
  MatrixXd velocity(const MatrixXd& x, std::span<const double> t, std::span<const int> labels) const override;

 private:
  const DipModel& model_;
};

struct ParameterCount {
  Index backbone = 0;
  Index head = 0;      // every detailer head, including a mid-stack one
  Index readout = 0;   // linear token readout
  Index inject = 0;    // mid-stack re-projection
  Index total() const { return backbone + head + readout + inject; }
};

// Closed-form counts matching the parameters DipModel instantiates.
ParameterCount count_parameters(const DipConfig& config);
Index count_head_parameters(const DetailerHeadConfig& head, const ImagePatchScheme& scheme, Index context_dim);

// 256x256x3 pixels, P=16, 26 layers, width 1152, 16 heads, 1000 classes,
// 256 time frequencies, adaLN-Zero; conv U-Net head 64-128-256-512, post hoc.
DipConfig reference_scale_config();

}  // namespace dip

#include <dip/model.hpp>

#include <cmath>

namespace dip {

using namespace dip::nn;

void ImagePatchScheme::validate() const {
  require(height > 0 && width > 0 && channels > 0 && patch > 0, "image scheme: dimensions must be positive");
  require(height % patch == 0 && width % patch == 0,
          "image scheme: patch " + std::to_string(patch) + " must divide " + std::to_string(height) + "x" + std::to_string(width));
}

std::vector<Index> patchify_index(const ImagePatchScheme& s) {
  s.validate();
  const Index per_row = s.width / s.patch, t = s.token_dim();
  std::vector<Index> index(static_cast<std::size_t>(s.pixels()));
  for (Index tok = 0; tok < s.num_tokens(); ++tok) {
    const Index py = tok / per_row, px = tok % per_row;
    for (Index r = 0; r < s.patch; ++r)
      for (Index c = 0; c < s.patch; ++c)
        for (Index ch = 0; ch < s.channels; ++ch)
          index[static_cast<std::size_t>(tok * t + (r * s.patch + c) * s.channels + ch)] =
              ((py * s.patch + r) * s.width + px * s.patch + c) * s.channels + ch;
  }
  return index;
}

RowMatrixXd patchify(const VectorXd& image, const ImagePatchScheme& s) {
  if (image.size() != s.pixels()) throw ShapeMismatch("patchify: image length does not match scheme");
  const auto index = patchify_index(s);
  RowMatrixXd tokens(s.num_tokens(), s.token_dim());
  for (std::size_t j = 0; j < index.size(); ++j) tokens.data()[j] = image(index[j]);
  return tokens;
}

VectorXd unpatchify(const RowMatrixXd& tokens, const ImagePatchScheme& s) {
  if (tokens.rows() != s.num_tokens() || tokens.cols() != s.token_dim())
    throw ShapeMismatch("unpatchify: token matrix does not match scheme");
  const auto index = patchify_index(s);
  VectorXd image(s.pixels());
  for (std::size_t j = 0; j < index.size(); ++j) image(index[j]) = tokens.data()[j];
  return image;
}

RowMatrixXd patchify_batch(const MatrixXd& images, const ImagePatchScheme& s) {
  if (images.cols() != s.pixels()) throw ShapeMismatch("patchify_batch: row length does not match scheme");
  const auto index = patchify_index(s);
  const Index n = s.num_tokens(), t = s.token_dim();
  RowMatrixXd tokens(images.rows() * n, t);
  for (Index b = 0; b < images.rows(); ++b)
    for (std::size_t j = 0; j < index.size(); ++j) tokens.data()[b * n * t + static_cast<Index>(j)] = images(b, index[j]);
  return tokens;
}

MatrixXd unpatchify_batch(const RowMatrixXd& tokens, const ImagePatchScheme& s) {
  const Index n = s.num_tokens(), t = s.token_dim();
  if (tokens.cols() != t || tokens.rows() % n != 0) throw ShapeMismatch("unpatchify_batch: token matrix does not match scheme");
  const auto index = patchify_index(s);
  MatrixXd images(tokens.rows() / n, s.pixels());
  for (Index b = 0; b < images.rows(); ++b)
    for (std::size_t j = 0; j < index.size(); ++j) images(b, index[j]) = tokens.data()[b * n * t + static_cast<Index>(j)];
  return images;
}

void BackboneConfig::validate() const {
  require(layers >= 1 && hidden >= 1 && heads >= 1, "backbone: layers, hidden and heads must be positive");
  require(hidden % heads == 0, "backbone: hidden " + std::to_string(hidden) + " not divisible by heads " + std::to_string(heads));
  require(num_classes >= 0, "backbone: class count must be non-negative");
  require(time_frequencies >= 2 && time_frequencies % 2 == 0, "backbone: time frequencies must be even and >= 2");
  require(mlp_ratio >= 1, "backbone: mlp ratio must be >= 1");
}

void DetailerHeadConfig::validate(const ImagePatchScheme& scheme) const {
  if (variant == DetailerVariant::conv_unet) {
    require(!channels.empty(), "detailer: conv_unet needs at least one stage");
    for (Index c : channels) require(c > 0, "detailer: channel counts must be positive");
    require(depth() < 31 && scheme.patch % (Index{1} << depth()) == 0,
            "detailer: patch " + std::to_string(scheme.patch) + " not divisible by 2^" + std::to_string(depth()));
  }
  require(mlp_hidden > 0 && stub_width > 0, "detailer: widths must be positive");
}

void DipConfig::validate() const {
  scheme.validate();
  backbone.validate();
  if (head) head->validate(scheme);
  if (placement.mode != Placement::post_hoc) {
    require(head.has_value(), "placement: intermediate and hybrid need a detailer head");
    require(placement.insertion_index >= 0 && placement.insertion_index < backbone.layers,
            "placement: insertion index must be < layers");
  }
}

RowMatrixXd timestep_features(std::span<const double> t, Index frequencies) {
  const Index half = frequencies / 2;
  RowMatrixXd out(static_cast<Index>(t.size()), frequencies);
  for (Index i = 0; i < out.rows(); ++i)
    for (Index k = 0; k < half; ++k) {
      const double arg = 1000.0 * t[static_cast<std::size_t>(i)] * std::exp(-std::log(10000.0) * static_cast<double>(k) / half);
      out(i, k) = std::cos(arg);
      out(i, half + k) = std::sin(arg);
    }
  return out;
}

namespace {

Var rows_constant(const RowMatrixXd& m) {
  return constant({{m.rows(), m.cols()}, Eigen::Map<const VectorXd>(m.data(), m.size())});
}

// Token layout [M, P*P*C] <-> NCHW [M, C, P, P].
std::vector<Index> token_to_nchw(Index m, Index p, Index c) {
  std::vector<Index> idx(static_cast<std::size_t>(m * p * p * c));
  for (Index i = 0; i < m; ++i)
    for (Index ch = 0; ch < c; ++ch)
      for (Index r = 0; r < p; ++r)
        for (Index col = 0; col < p; ++col)
          idx[static_cast<std::size_t>(((i * c + ch) * p + r) * p + col)] = i * p * p * c + (r * p + col) * c + ch;
  return idx;
}

std::vector<Index> nchw_to_token(Index m, Index p, Index c) {
  const auto fwd = token_to_nchw(m, p, c);
  std::vector<Index> inv(fwd.size());
  for (std::size_t j = 0; j < fwd.size(); ++j) inv[static_cast<std::size_t>(fwd[j])] = static_cast<Index>(j);
  return inv;
}

class ConvUNet final : public DetailerHead {
 public:
  ConvUNet(ParameterStore& store, const std::string& prefix, const DetailerHeadConfig& cfg, const ImagePatchScheme& s,
           Index context_dim, RandomStream& rng)
      : patch_(s.patch), channels_(s.channels) {
    const auto& ch = cfg.channels;
    const std::size_t depth = ch.size();
    Index in = s.channels;
    for (std::size_t k = 0; k < depth; ++k) {
      down_.push_back(make_conv(store, prefix + ".down" + std::to_string(k), in, ch[k], 3, 1, rng));
      in = ch[k];
    }
    bottleneck_ = make_conv(store, prefix + ".bottleneck", ch.back() + context_dim, ch.back(), 3, 1, rng);
    Index prev = ch.back();
    for (std::size_t k = depth; k-- > 0;) {
      const Index out = k > 0 ? ch[k - 1] : ch[0];
      up_.push_back(make_conv(store, prefix + ".up" + std::to_string(k), prev + ch[k], out, 3, 1, rng));
      prev = out;
    }
    out_ = make_conv(store, prefix + ".out", prev, s.channels, 1, 0, rng, Init::zero);
  }

  Var forward(const Var& context, const Var& patches) const override {
    const Index m = patches.dim(0);
    Var h = gather(patches, {m, channels_, patch_, patch_}, token_to_nchw(m, patch_, channels_));
    std::vector<Var> skips;
    for (const auto& conv : down_) {
      h = silu(conv(h));
      skips.push_back(h);
      h = avg_pool2d(h, 2);
    }
    h = concat_channels(h, broadcast_spatial(context, h.dim(2), h.dim(3)));
    h = silu(bottleneck_(h));
    for (const auto& conv : up_) {
      h = upsample_nearest(h, 2);
      h = concat_channels(h, skips.back());
      skips.pop_back();
      h = silu(conv(h));
    }
    h = out_(h);
    return gather(h, {m, patch_ * patch_ * channels_}, nchw_to_token(m, patch_, channels_));
  }

 private:
  Index patch_, channels_;
  std::vector<Conv2d> down_, up_;
  Conv2d bottleneck_, out_;
};

class StandardMlp final : public DetailerHead {
 public:
  StandardMlp(ParameterStore& store, const std::string& prefix, const DetailerHeadConfig& cfg, const ImagePatchScheme& s,
              Index context_dim, RandomStream& rng) {
    const Index t = s.token_dim(), h = cfg.mlp_hidden;
    // One dense layer over [patch, context], stored as two weight blocks.
    fc1_patch_ = make_dense(store, prefix + ".fc1_patch", t, h, rng);
    fc1_context_ = store.add(prefix + ".fc1_context.weight", {{context_dim, h}, fan_in_uniform(rng, context_dim * h, t + context_dim)});
    fc2_ = make_dense(store, prefix + ".fc2", h, h, rng);
    out_ = make_dense(store, prefix + ".out", h, t, rng, Init::zero);
  }

  Var forward(const Var& context, const Var& patches) const override {
    Var h = silu(add(fc1_patch_(patches), matmul(context, fc1_context_)));
    h = silu(fc2_(h));
    return out_(h);
  }

 private:
  Dense fc1_patch_, fc2_, out_;
  Var fc1_context_;
};

RowMatrixXd pixel_coordinates(Index p) {
  RowMatrixXd xy(p * p, 2);
  for (Index r = 0; r < p; ++r)
    for (Index c = 0; c < p; ++c) {
      xy(r * p + c, 0) = p > 1 ? 2.0 * r / (p - 1) - 1.0 : 0.0;
      xy(r * p + c, 1) = p > 1 ? 2.0 * c / (p - 1) - 1.0 : 0.0;
    }
  return xy;
}

// Experimental: shared per-pixel MLP over (pixel, coordinates, context).
class CoordinateMlpStub final : public DetailerHead {
 public:
  CoordinateMlpStub(ParameterStore& store, const std::string& prefix, const DetailerHeadConfig& cfg,
                    const ImagePatchScheme& s, Index context_dim, RandomStream& rng)
      : patch_(s.patch), channels_(s.channels), coords_(rows_constant(pixel_coordinates(s.patch))) {
    const Index w = cfg.stub_width;
    pixel_ = make_dense(store, prefix + ".pixel", s.channels, w, rng);
    coord_ = store.add(prefix + ".coord.weight", {{2, w}, fan_in_uniform(rng, 2 * w, 2)});
    context_ = store.add(prefix + ".context.weight", {{context_dim, w}, fan_in_uniform(rng, context_dim * w, context_dim)});
    out_ = make_dense(store, prefix + ".out", w, s.channels, rng, Init::zero);
  }

  Var forward(const Var& context, const Var& patches) const override {
    const Index m = patches.dim(0);
    Var h = pixel_(reshape(patches, {m * patch_ * patch_, channels_}));
    h = add_tiled(h, matmul(coords_, coord_));
    h = add_group(h, matmul(context, context_));
    return reshape(out_(silu(h)), {m, patch_ * patch_ * channels_});
  }

 private:
  Index patch_, channels_;
  Var coords_;
  Dense pixel_, out_;
  Var coord_, context_;
};

// Experimental: one self-attention layer over the pixels of each patch.
class IntraPatchAttentionStub final : public DetailerHead {
 public:
  IntraPatchAttentionStub(ParameterStore& store, const std::string& prefix, const DetailerHeadConfig& cfg,
                          const ImagePatchScheme& s, Index context_dim, RandomStream& rng)
      : patch_(s.patch), channels_(s.channels) {
    const Index w = cfg.stub_width;
    in_ = make_dense(store, prefix + ".in", s.channels, w, rng);
    pos_ = store.add(prefix + ".pos", {{s.patch * s.patch, w}, 0.02 * fan_in_uniform(rng, s.patch * s.patch * w, 1)});
    context_ = store.add(prefix + ".context.weight", {{context_dim, w}, fan_in_uniform(rng, context_dim * w, context_dim)});
    q_ = make_dense(store, prefix + ".q", w, w, rng);
    k_ = make_dense(store, prefix + ".k", w, w, rng);
    v_ = make_dense(store, prefix + ".v", w, w, rng);
    out_ = make_dense(store, prefix + ".out", w, s.channels, rng, Init::zero);
  }

  Var forward(const Var& context, const Var& patches) const override {
    const Index m = patches.dim(0);
    Var h = in_(reshape(patches, {m * patch_ * patch_, channels_}));
    h = add_group(add_tiled(h, pos_), matmul(context, context_));
    h = add(h, attention(q_(h), k_(h), v_(h), m, 1));
    return reshape(out_(silu(h)), {m, patch_ * patch_ * channels_});
  }

 private:
  Index patch_, channels_;
  Dense in_, q_, k_, v_, out_;
  Var pos_, context_;
};

class IdentityStub final : public DetailerHead {
 public:
  Var forward(const Var&, const Var& patches) const override { return patches; }
};

class LinearReadoutStub final : public DetailerHead {
 public:
  LinearReadoutStub(ParameterStore& store, const std::string& prefix, const ImagePatchScheme& s, Index context_dim,
                    RandomStream& rng)
      : readout_(make_dense(store, prefix + ".readout", context_dim, s.token_dim(), rng, Init::zero)) {}
  Var forward(const Var& context, const Var&) const override { return readout_(context); }

 private:
  Dense readout_;
};

}  // namespace

std::unique_ptr<DetailerHead> make_detailer(ParameterStore& store, const std::string& prefix, const DetailerHeadConfig& cfg,
                                            const ImagePatchScheme& s, Index context_dim, RandomStream& rng) {
  cfg.validate(s);
  switch (cfg.variant) {
    case DetailerVariant::conv_unet: return std::make_unique<ConvUNet>(store, prefix, cfg, s, context_dim, rng);
    case DetailerVariant::standard_mlp: return std::make_unique<StandardMlp>(store, prefix, cfg, s, context_dim, rng);
    case DetailerVariant::coordinate_mlp_stub: return std::make_unique<CoordinateMlpStub>(store, prefix, cfg, s, context_dim, rng);
    case DetailerVariant::intra_patch_attention_stub:
      return std::make_unique<IntraPatchAttentionStub>(store, prefix, cfg, s, context_dim, rng);
    case DetailerVariant::identity_stub: return std::make_unique<IdentityStub>();
    case DetailerVariant::linear_readout_stub: return std::make_unique<LinearReadoutStub>(store, prefix, s, context_dim, rng);
  }
  throw InvalidParameter("detailer: unknown variant");
}

DipModel::DipModel(const DipConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const auto& s = config_.scheme;
  const auto& bb = config_.backbone;
  const Index d = bb.hidden, t = s.token_dim();
  const bool adaln = bb.conditioning == Conditioning::adaln_zero;
  RandomStream rng(seed, 0x30de1);

  embed_ = make_dense(store_, "backbone.embed", t, d, rng);
  pos_ = store_.add("backbone.pos", {{s.num_tokens(), d}, 0.02 * fan_in_uniform(rng, s.num_tokens() * d, 1)});
  time1_ = make_dense(store_, "backbone.time.fc1", bb.time_frequencies, d, rng);
  time2_ = make_dense(store_, "backbone.time.fc2", d, d, rng);
  class_table_ = store_.add("backbone.class", {{bb.num_classes + 1, d}, 0.02 * fan_in_uniform(rng, (bb.num_classes + 1) * d, 1)});
  for (Index l = 0; l < bb.layers; ++l) {
    const std::string p = "backbone.blocks." + std::to_string(l);
    Block b;
    if (!adaln) {
      b.norm1 = make_layer_norm(store_, p + ".norm1", d);
      b.norm2 = make_layer_norm(store_, p + ".norm2", d);
    }
    b.q = make_dense(store_, p + ".attn.q", d, d, rng);
    b.k = make_dense(store_, p + ".attn.k", d, d, rng);
    b.v = make_dense(store_, p + ".attn.v", d, d, rng);
    // Residual branches start closed: zero output projections (additive) or zero gates (adaLN-Zero).
    b.proj = make_dense(store_, p + ".attn.proj", d, d, rng, adaln ? Init::fan_in : Init::zero);
    b.fc1 = make_dense(store_, p + ".mlp.fc1", d, bb.mlp_ratio * d, rng);
    b.fc2 = make_dense(store_, p + ".mlp.fc2", bb.mlp_ratio * d, d, rng, adaln ? Init::fan_in : Init::zero);
    if (adaln) b.modulation = make_dense(store_, p + ".modulation", d, 6 * d, rng, Init::zero);
    blocks_.push_back(b);
  }
  if (adaln)
    final_modulation_ = make_dense(store_, "backbone.final.modulation", d, 2 * d, rng, Init::zero);
  else
    final_norm_ = make_layer_norm(store_, "backbone.final.norm", d);

  const bool post_head = config_.head && config_.placement.mode != Placement::intermediate;
  if (config_.head && config_.placement.mode != Placement::post_hoc) {
    RandomStream head_rng(seed, 0x4ead2);
    mid_head_ = make_detailer(store_, "head_mid", *config_.head, s, d, head_rng);
    inject_ = make_dense(store_, "inject", t, d, head_rng, Init::zero);
  }
  if (post_head) {
    RandomStream head_rng(seed, 0x4ead1);
    head_ = make_detailer(store_, "head", *config_.head, s, d, head_rng);
  } else {
    readout_ = make_dense(store_, "readout", d, t, rng, Init::zero);
  }
}

Index DipModel::label_row(int label) const {
  const Index k = config_.backbone.num_classes;
  if (label < 0) return k;
  if (label >= k) throw InvalidParameter("label " + std::to_string(label) + " out of range for " + std::to_string(k) + " classes");
  return label;
}

Var DipModel::conditioning(std::span<const double> t, std::span<const int> labels) const {
  const Index batch = static_cast<Index>(t.size());
  if (!labels.empty() && static_cast<Index>(labels.size()) != batch)
    throw ShapeMismatch("model: one label per sample required");
  std::vector<Index> rows(static_cast<std::size_t>(batch));
  for (Index i = 0; i < batch; ++i) rows[static_cast<std::size_t>(i)] = label_row(labels.empty() ? -1 : labels[static_cast<std::size_t>(i)]);
  const Var temb = time2_(silu(time1_(rows_constant(timestep_features(t, config_.backbone.time_frequencies)))));
  return add(temb, embedding(class_table_, rows));
}

Var DipModel::embed(const Var& tokens, const Var& cond) const {
  Var h = add_tiled(embed_(tokens), pos_);
  if (config_.backbone.conditioning == Conditioning::additive) h = add_group(h, cond);
  return h;
}

namespace {

Var modulate(const Var& x, const Var& shift, const Var& scale) { return add_group(mul_group(x, add_scalar(scale, 1.0)), shift); }

}  // namespace

Var DipModel::run_block(const Block& b, const Var& h, const Var& cond, Index batch) const {
  const Index d = config_.backbone.hidden, heads = config_.backbone.heads;
  if (config_.backbone.conditioning == Conditioning::additive) {
    const Var a = b.norm1(h);
    Var out = add(h, b.proj(attention(b.q(a), b.k(a), b.v(a), batch, heads)));
    return add(out, b.fc2(silu(b.fc1(b.norm2(out)))));
  }
  const Var mod = b.modulation(silu(cond));
  const auto chunk = [&](Index i) { return slice_cols(mod, i * d, d); };
  const Var a = modulate(layer_norm(h), chunk(0), chunk(1));
  Var out = add(h, mul_group(b.proj(attention(b.q(a), b.k(a), b.v(a), batch, heads)), chunk(2)));
  const Var m = modulate(layer_norm(out), chunk(3), chunk(4));
  return add(out, mul_group(b.fc2(silu(b.fc1(m))), chunk(5)));
}

Var DipModel::finish(const Var& h, const Var& cond) const {
  if (config_.backbone.conditioning == Conditioning::additive) return final_norm_(h);
  const Index d = config_.backbone.hidden;
  const Var mod = final_modulation_(silu(cond));
  return modulate(layer_norm(h), slice_cols(mod, 0, d), slice_cols(mod, d, d));
}

Var DipModel::backbone_forward(const Var& tokens, std::span<const double> t, std::span<const int> labels) const {
  const Index batch = static_cast<Index>(t.size());
  const auto& s = config_.scheme;
  if (tokens.shape() != Shape{batch * s.num_tokens(), s.token_dim()})
    throw ShapeMismatch("backbone: expected tokens " + shape_string({batch * s.num_tokens(), s.token_dim()}) + ", got " +
                        shape_string(tokens.shape()));
  const Var cond = conditioning(t, labels);
  Var h = embed(tokens, cond);
  for (const auto& b : blocks_) h = run_block(b, h, cond, batch);
  return finish(h, cond);
}

Var DipModel::forward_tokens(const MatrixXd& images, std::span<const double> t, std::span<const int> labels) const {
  const auto& s = config_.scheme;
  if (images.cols() != s.pixels()) throw ShapeMismatch("model: image length does not match scheme");
  if (static_cast<Index>(t.size()) != images.rows()) throw ShapeMismatch("model: one time per image required");
  const Index batch = images.rows();
  const Var tokens = rows_constant(patchify_batch(images, s));
  const Var cond = conditioning(t, labels);
  Var h = embed(tokens, cond);
  for (Index l = 0; l < static_cast<Index>(blocks_.size()); ++l) {
    h = run_block(blocks_[static_cast<std::size_t>(l)], h, cond, batch);
    if (mid_head_ && l == config_.placement.insertion_index) h = add(h, (*inject_)(mid_head_->forward(h, tokens)));
  }
  const Var context = finish(h, cond);
  return head_ ? head_->forward(context, tokens) : (*readout_)(context);
}

Var DipModel::forward(const MatrixXd& images, std::span<const double> t, std::span<const int> labels) const {
  const auto& s = config_.scheme;
  const Index batch = images.rows(), n = s.pixels();
  const auto index = patchify_index(s);
  std::vector<Index> inverse(static_cast<std::size_t>(batch * n));
  for (Index b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < index.size(); ++j) inverse[static_cast<std::size_t>(b * n + index[j])] = b * n + static_cast<Index>(j);
  return gather(forward_tokens(images, t, labels), {batch, n}, std::move(inverse));
}

MatrixXd DipVelocity::velocity(const MatrixXd& x, std::span<const double> t, std::span<const int> labels) const {
  const Var v = model_.forward(x, t, labels);
  return Eigen::Map<const RowMatrixXd>(v.value().data(), x.rows(), x.cols());
}

Index count_head_parameters(const DetailerHeadConfig& h, const ImagePatchScheme& s, Index d) {
  const Index c = s.channels, t = s.token_dim();
  switch (h.variant) {
    case DetailerVariant::conv_unet: {
      const auto conv = [](Index in, Index out, Index k) { return in * out * k * k + out; };
      Index n = 0, in = c;
      for (Index ch : h.channels) {
        n += conv(in, ch, 3);
        in = ch;
      }
      n += conv(h.channels.back() + d, h.channels.back(), 3);
      Index prev = h.channels.back();
      for (std::size_t k = h.channels.size(); k-- > 0;) {
        const Index out = k > 0 ? h.channels[k - 1] : h.channels[0];
        n += conv(prev + h.channels[k], out, 3);
        prev = out;
      }
      return n + conv(prev, c, 1);
    }
    case DetailerVariant::standard_mlp: {
      const Index w = h.mlp_hidden;
      return (t + d) * w + w + w * w + w + w * t + t;
    }
    case DetailerVariant::coordinate_mlp_stub: {
      const Index w = h.stub_width;
      return c * w + w + 2 * w + d * w + w * c + c;
    }
    case DetailerVariant::intra_patch_attention_stub: {
      const Index w = h.stub_width;
      return c * w + w + s.patch * s.patch * w + d * w + 3 * (w * w + w) + w * c + c;
    }
    case DetailerVariant::identity_stub: return 0;
    case DetailerVariant::linear_readout_stub: return d * t + t;
  }
  return 0;
}

ParameterCount count_parameters(const DipConfig& config) {
  config.validate();
  const auto& s = config.scheme;
  const auto& bb = config.backbone;
  const Index d = bb.hidden, t = s.token_dim(), r = bb.mlp_ratio;
  const bool adaln = bb.conditioning == Conditioning::adaln_zero;
  ParameterCount pc;
  pc.backbone = (t * d + d) + s.num_tokens() * d + (bb.time_frequencies * d + d) + (d * d + d) + (bb.num_classes + 1) * d;
  const Index attn = 4 * (d * d + d), mlp = d * r * d + r * d + r * d * d + d;
  const Index per_block = attn + mlp + (adaln ? d * 6 * d + 6 * d : 4 * d);
  pc.backbone += bb.layers * per_block + (adaln ? d * 2 * d + 2 * d : 2 * d);
  if (config.head) {
    const Index one = count_head_parameters(*config.head, s, d);
    if (config.placement.mode != Placement::intermediate) pc.head += one;
    if (config.placement.mode != Placement::post_hoc) {
      pc.head += one;
      pc.inject = t * d + d;
    }
  }
  if (!config.head || config.placement.mode == Placement::intermediate) pc.readout = d * t + t;
  return pc;
}

DipConfig reference_scale_config() {
  DipConfig c;
  c.scheme = {256, 256, 3, 16};
  c.backbone = {26, 1152, 16, 1000, 256, 4, Conditioning::adaln_zero};
  c.head = DetailerHeadConfig{DetailerVariant::conv_unet, {64, 128, 256, 512}, 256, 16};
  c.placement = {Placement::post_hoc, 0};
  return c;
}

}  // namespace dip

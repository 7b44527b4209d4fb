#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrg/corpus.hpp"
#include "mrg/errors.hpp"
#include "mrg/rng.hpp"
#include "mrg/tensor.hpp"
#include "mrg/vocab.hpp"

namespace mrg {

struct ModelConfig {
  int width = 64;
  int layers = 2;
  int heads = 4;
  int proj_dim = 32;
  int patch = 8;
  int image_side = 32;
  int max_len = 64;
  int vocab_size = 0;
  double momentum = 0.995;
  std::string share_mode = "all_but_sa";  // or "sa_only"

  int patches_per_side() const { return image_side / patch; }
  int patch_tokens() const { return patches_per_side() * patches_per_side(); }

  void validate() const {
    if (width <= 0 || layers <= 0 || heads <= 0 || proj_dim <= 0)
      throw ConfigError("model dims must be positive");
    if (width % heads != 0)
      throw ConfigError("width " + std::to_string(width) + " not divisible by heads " +
                        std::to_string(heads));
    if (image_side % patch != 0)
      throw ConfigError("image side " + std::to_string(image_side) +
                        " not divisible by patch " + std::to_string(patch));
    if (vocab_size <= 0) throw ConfigError("vocab_size must be set before building the model");
    if (share_mode != "all_but_sa" && share_mode != "sa_only")
      throw ConfigError("share_mode must be all_but_sa or sa_only, got " + share_mode);
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw ConfigError("momentum must be in [0, 1)");
  }
};

template <typename S>
struct NamedParams {
  std::vector<std::pair<std::string, Tensor<S>>> items;

  // First registration of a storage wins; aliases under later names are skipped.
  void add(const std::string& name, const Tensor<S>& t) {
    for (const auto& [n, p] : items)
      if (p.id() == t.id()) return;
    items.emplace_back(name, t);
  }
  // Keeps every name, including aliases (used for per-encoder views).
  void add_view(const std::string& name, const Tensor<S>& t) { items.emplace_back(name, t); }

  const Tensor<S>* find(const std::string& name) const {
    for (const auto& [n, p] : items)
      if (n == name) return &p;
    return nullptr;
  }
  std::size_t size() const { return items.size(); }
};

template <typename S>
struct AttentionBlock {
  Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
  int heads = 1;
};

template <typename S>
struct FeedForward {
  Tensor<S> w1, b1, w2, b2;
};

template <typename S>
struct LayerNormParams {
  Tensor<S> gain, bias;
};

// Pre-norm residual layer; the cross-attention sublayer only exists on text
// (matching path), fusion and decoder stacks.
template <typename S>
struct TransformerLayer {
  LayerNormParams<S> ln_sa;
  AttentionBlock<S> sa;
  bool has_cross = false;
  LayerNormParams<S> ln_ca;
  AttentionBlock<S> ca;
  LayerNormParams<S> ln_ff;
  FeedForward<S> ff;
};

template <typename S>
struct VisualFeatures {
  Tensor<S> f_i;             // [patches+1, width], row 0 is [CLS]
  Tensor<S> cls_projection;  // [1, proj_dim], unit norm
};

template <typename S>
struct TextFeatures {
  Tensor<S> h_t;
  Tensor<S> cls_projection;
};

enum class TextMode { kBidirectional, kWithImageCross };

// ---------------------------------------------------------------------------
// building blocks
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add_row_bias(const Tensor<S>& x, const Tensor<S>& bias) {
  return add(x, matmul(Tensor<S>::ones(x.rows(), 1), bias));
}

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  return add_row_bias(matmul(x, w), b);
}

// Additive attention bias: 0 where attending is allowed, -1e30 where masked.
template <typename S>
Tensor<S> causal_mask_bias(Index len) {
  MatrixOf<S> m = MatrixOf<S>::Zero(len, len);
  for (Index i = 0; i < len; ++i)
    for (Index j = i + 1; j < len; ++j) m(i, j) = S(-1e30);
  return Tensor<S>(std::move(m));
}

template <typename S>
Tensor<S> multi_head_attention(const Tensor<S>& queries_in, const Tensor<S>& keys_in,
                               const AttentionBlock<S>& block, const Tensor<S>* mask_bias) {
  const Index d = queries_in.cols();
  if (keys_in.cols() != d)
    throw ConfigError("attention width mismatch: " + queries_in.shape_str() + " vs " +
                      keys_in.shape_str());
  if (d % block.heads != 0)
    throw ConfigError("attention width " + std::to_string(d) + " not divisible by " +
                      std::to_string(block.heads) + " heads");
  const Index dk = d / block.heads;
  const S scale_factor = S(1) / std::sqrt(S(dk));
  Tensor<S> q = linear(queries_in, block.wq, block.bq);
  Tensor<S> k = linear(keys_in, block.wk, block.bk);
  Tensor<S> v = linear(keys_in, block.wv, block.bv);
  std::vector<Tensor<S>> heads;
  heads.reserve(block.heads);
  for (int h = 0; h < block.heads; ++h) {
    Tensor<S> qh = take_cols(q, h * dk, dk);
    Tensor<S> kh = take_cols(k, h * dk, dk);
    Tensor<S> vh = take_cols(v, h * dk, dk);
    Tensor<S> scores = scale(matmul(qh, transpose(kh)), scale_factor);
    if (mask_bias) scores = add(scores, *mask_bias);
    heads.push_back(matmul(softmax_rows(scores), vh));
  }
  return linear(concat_cols(heads), block.wo, block.bo);
}

template <typename S>
Tensor<S> self_attention(const Tensor<S>& x, const AttentionBlock<S>& block,
                         const Tensor<S>* mask_bias = nullptr) {
  return multi_head_attention(x, x, block, mask_bias);
}

template <typename S>
Tensor<S> cross_attention(const Tensor<S>& queries_from, const Tensor<S>& keys_values_from,
                          const AttentionBlock<S>& block) {
  return multi_head_attention(queries_from, keys_values_from, block,
                              static_cast<const Tensor<S>*>(nullptr));
}

template <typename S>
Tensor<S> feed_forward(const Tensor<S>& x, const FeedForward<S>& ff) {
  return linear(gelu(linear(x, ff.w1, ff.b1)), ff.w2, ff.b2);
}

template <typename S>
Tensor<S> layer_norm_p(const Tensor<S>& x, const LayerNormParams<S>& ln) {
  return layer_norm(x, ln.gain, ln.bias);
}

template <typename S>
Tensor<S> transformer_layer(const Tensor<S>& x_in, const TransformerLayer<S>& layer,
                            const Tensor<S>* mask_bias, const Tensor<S>* cross_kv) {
  Tensor<S> x = add(x_in, self_attention(layer_norm_p(x_in, layer.ln_sa), layer.sa, mask_bias));
  if (cross_kv) {
    if (!layer.has_cross) throw ConfigError("layer has no cross-attention sublayer");
    x = add(x, cross_attention(layer_norm_p(x, layer.ln_ca), *cross_kv, layer.ca));
  }
  return add(x, feed_forward(layer_norm_p(x, layer.ln_ff), layer.ff));
}

// ---------------------------------------------------------------------------
// the full generation model
// ---------------------------------------------------------------------------

// Owns every learnable tensor of the generator. Sharing is expressed through
// aliased tensor handles:
//   - knowledge encoder: own self-attention blocks; embeddings, positional
//     table, feed-forward and layer-norm tensors are the text encoder's.
//   - decoder (share_mode all_but_sa): own causal self-attention; everything
//     else aliases the text encoder. share_mode sa_only flips that: the
//     self-attention tensors alias the text encoder's and the rest is owned.
template <typename S>
struct ReportModel {
  ModelConfig cfg;

  // vision encoder
  Tensor<S> patch_w, patch_b;
  Tensor<S> vis_cls;  // [1, width]
  Tensor<S> vis_pos;  // [patches+1, width]
  std::vector<TransformerLayer<S>> vis_layers;
  LayerNormParams<S> vis_final_ln;
  Tensor<S> vis_proj_w, vis_proj_b;

  // text encoder (canonical owner of the shared stack)
  Tensor<S> tok_embed;  // [vocab, width]; also the tied output projection
  Tensor<S> pos_embed;  // [max_len, width]
  std::vector<TransformerLayer<S>> txt_layers;  // has_cross = true
  LayerNormParams<S> txt_final_ln;
  Tensor<S> txt_proj_w, txt_proj_b;

  // knowledge encoder: independent attention parameters only
  std::vector<AttentionBlock<S>> knowledge_sa;

  // decoder stack, wired per share_mode
  std::vector<TransformerLayer<S>> dec_layers;
  LayerNormParams<S> dec_final_ln;

  // knowledge fusion block
  AttentionBlock<S> fusion_ca;
  LayerNormParams<S> fusion_ln;

  // image-text matching head (two-way) and contrastive temperature
  Tensor<S> itm_w, itm_b;
  Tensor<S> tau;

  static ReportModel init(const ModelConfig& cfg, std::uint64_t seed);

  NamedParams<S> named_params() const;            // unique storages
  NamedParams<S> text_encoder_view() const;       // role-named views for
  NamedParams<S> knowledge_encoder_view() const;  // sharing checks
  NamedParams<S> decoder_view() const;

  ReportModel clone_detached() const;  // value copy, no grads recorded
};

namespace detail {

template <typename S>
Tensor<S> param(Rng& rng, Index rows, Index cols, Index fan_in) {
  MatrixOf<S> m(rows, cols);
  const double bound = 1.0 / std::sqrt(double(fan_in));
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = S(rng.uniform(-bound, bound));
  return Tensor<S>(std::move(m), true);
}

template <typename S>
Tensor<S> zeros_param(Index rows, Index cols) {
  return Tensor<S>(MatrixOf<S>::Zero(rows, cols), true);
}

template <typename S>
Tensor<S> ones_param(Index rows, Index cols) {
  return Tensor<S>(MatrixOf<S>::Ones(rows, cols), true);
}

template <typename S>
AttentionBlock<S> init_attention(Rng& rng, int width, int heads) {
  AttentionBlock<S> b;
  b.heads = heads;
  b.wq = param<S>(rng, width, width, width);
  b.bq = zeros_param<S>(1, width);
  b.wk = param<S>(rng, width, width, width);
  b.bk = zeros_param<S>(1, width);
  b.wv = param<S>(rng, width, width, width);
  b.bv = zeros_param<S>(1, width);
  b.wo = param<S>(rng, width, width, width);
  b.bo = zeros_param<S>(1, width);
  return b;
}

template <typename S>
FeedForward<S> init_ff(Rng& rng, int width) {
  FeedForward<S> f;
  const int hidden = 4 * width;
  f.w1 = param<S>(rng, width, hidden, width);
  f.b1 = zeros_param<S>(1, hidden);
  f.w2 = param<S>(rng, hidden, width, hidden);
  f.b2 = zeros_param<S>(1, width);
  return f;
}

template <typename S>
LayerNormParams<S> init_ln(int width) {
  return {ones_param<S>(1, width), zeros_param<S>(1, width)};
}

template <typename S>
void add_attention(NamedParams<S>& out, const std::string& prefix, const AttentionBlock<S>& b,
                   bool as_view) {
  auto put = [&](const char* n, const Tensor<S>& t) {
    as_view ? out.add_view(prefix + n, t) : out.add(prefix + n, t);
  };
  put(".wq", b.wq);
  put(".bq", b.bq);
  put(".wk", b.wk);
  put(".bk", b.bk);
  put(".wv", b.wv);
  put(".bv", b.bv);
  put(".wo", b.wo);
  put(".bo", b.bo);
}

template <typename S>
void add_layer(NamedParams<S>& out, const std::string& prefix, const TransformerLayer<S>& l,
               bool as_view) {
  auto put = [&](const std::string& n, const Tensor<S>& t) {
    as_view ? out.add_view(prefix + n, t) : out.add(prefix + n, t);
  };
  put(".ln_sa.g", l.ln_sa.gain);
  put(".ln_sa.b", l.ln_sa.bias);
  add_attention(out, prefix + ".sa", l.sa, as_view);
  if (l.has_cross) {
    put(".ln_ca.g", l.ln_ca.gain);
    put(".ln_ca.b", l.ln_ca.bias);
    add_attention(out, prefix + ".ca", l.ca, as_view);
  }
  put(".ln_ff.g", l.ln_ff.gain);
  put(".ln_ff.b", l.ln_ff.bias);
  put(".ff.w1", l.ff.w1);
  put(".ff.b1", l.ff.b1);
  put(".ff.w2", l.ff.w2);
  put(".ff.b2", l.ff.b2);
}

}  // namespace detail

template <typename S>
ReportModel<S> ReportModel<S>::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(hash_seed(seed, 0xA0DE1));
  ReportModel<S> m;
  m.cfg = cfg;
  const int w = cfg.width;
  const int p2 = cfg.patch * cfg.patch;

  m.patch_w = detail::param<S>(rng, p2, w, p2);
  m.patch_b = detail::zeros_param<S>(1, w);
  m.vis_cls = detail::param<S>(rng, 1, w, w);
  m.vis_pos = detail::param<S>(rng, cfg.patch_tokens() + 1, w, w);
  for (int i = 0; i < cfg.layers; ++i) {
    TransformerLayer<S> l;
    l.ln_sa = detail::init_ln<S>(w);
    l.sa = detail::init_attention<S>(rng, w, cfg.heads);
    l.ln_ff = detail::init_ln<S>(w);
    l.ff = detail::init_ff<S>(rng, w);
    m.vis_layers.push_back(std::move(l));
  }
  m.vis_final_ln = detail::init_ln<S>(w);
  m.vis_proj_w = detail::param<S>(rng, w, cfg.proj_dim, w);
  m.vis_proj_b = detail::zeros_param<S>(1, cfg.proj_dim);

  m.tok_embed = detail::param<S>(rng, cfg.vocab_size, w, w);
  m.pos_embed = detail::param<S>(rng, cfg.max_len, w, w);
  for (int i = 0; i < cfg.layers; ++i) {
    TransformerLayer<S> l;
    l.ln_sa = detail::init_ln<S>(w);
    l.sa = detail::init_attention<S>(rng, w, cfg.heads);
    l.has_cross = true;
    l.ln_ca = detail::init_ln<S>(w);
    l.ca = detail::init_attention<S>(rng, w, cfg.heads);
    l.ln_ff = detail::init_ln<S>(w);
    l.ff = detail::init_ff<S>(rng, w);
    m.txt_layers.push_back(std::move(l));
  }
  m.txt_final_ln = detail::init_ln<S>(w);
  m.txt_proj_w = detail::param<S>(rng, w, cfg.proj_dim, w);
  m.txt_proj_b = detail::zeros_param<S>(1, cfg.proj_dim);

  for (int i = 0; i < cfg.layers; ++i)
    m.knowledge_sa.push_back(detail::init_attention<S>(rng, w, cfg.heads));

  for (int i = 0; i < cfg.layers; ++i) {
    TransformerLayer<S> l;
    if (cfg.share_mode == "all_but_sa") {
      l = m.txt_layers[i];  // aliases ln/ca/ff tensors
      l.sa = detail::init_attention<S>(rng, w, cfg.heads);
    } else {  // sa_only: the causal stack reuses only the self-attention tensors
      l.ln_sa = detail::init_ln<S>(w);
      l.sa = m.txt_layers[i].sa;
      l.has_cross = true;
      l.ln_ca = detail::init_ln<S>(w);
      l.ca = detail::init_attention<S>(rng, w, cfg.heads);
      l.ln_ff = detail::init_ln<S>(w);
      l.ff = detail::init_ff<S>(rng, w);
    }
    m.dec_layers.push_back(std::move(l));
  }
  m.dec_final_ln = cfg.share_mode == "all_but_sa" ? m.txt_final_ln : detail::init_ln<S>(w);

  m.fusion_ca = detail::init_attention<S>(rng, w, cfg.heads);
  m.fusion_ln = detail::init_ln<S>(w);

  m.itm_w = detail::param<S>(rng, w, 2, w);
  m.itm_b = detail::zeros_param<S>(1, 2);
  m.tau = Tensor<S>(MatrixOf<S>::Constant(1, 1, S(0.07)), true);
  return m;
}

template <typename S>
NamedParams<S> ReportModel<S>::named_params() const {
  NamedParams<S> out;
  out.add("vision.patch.w", patch_w);
  out.add("vision.patch.b", patch_b);
  out.add("vision.cls", vis_cls);
  out.add("vision.pos", vis_pos);
  for (std::size_t i = 0; i < vis_layers.size(); ++i)
    detail::add_layer(out, "vision.l" + std::to_string(i), vis_layers[i], false);
  out.add("vision.final_ln.g", vis_final_ln.gain);
  out.add("vision.final_ln.b", vis_final_ln.bias);
  out.add("vision.proj.w", vis_proj_w);
  out.add("vision.proj.b", vis_proj_b);

  out.add("text.embed.tok", tok_embed);
  out.add("text.embed.pos", pos_embed);
  for (std::size_t i = 0; i < txt_layers.size(); ++i)
    detail::add_layer(out, "text.l" + std::to_string(i), txt_layers[i], false);
  out.add("text.final_ln.g", txt_final_ln.gain);
  out.add("text.final_ln.b", txt_final_ln.bias);
  out.add("text.proj.w", txt_proj_w);
  out.add("text.proj.b", txt_proj_b);

  for (std::size_t i = 0; i < knowledge_sa.size(); ++i)
    detail::add_attention(out, "knowledge.l" + std::to_string(i) + ".sa", knowledge_sa[i], false);

  for (std::size_t i = 0; i < dec_layers.size(); ++i)
    detail::add_layer(out, "decoder.l" + std::to_string(i), dec_layers[i], false);
  out.add("decoder.final_ln.g", dec_final_ln.gain);
  out.add("decoder.final_ln.b", dec_final_ln.bias);

  detail::add_attention(out, "fusion.ca", fusion_ca, false);
  out.add("fusion.ln.g", fusion_ln.gain);
  out.add("fusion.ln.b", fusion_ln.bias);

  out.add("itm.head.w", itm_w);
  out.add("itm.head.b", itm_b);
  out.add("itc.tau", tau);
  return out;
}

template <typename S>
NamedParams<S> ReportModel<S>::text_encoder_view() const {
  NamedParams<S> v;
  v.add_view("embed.tok", tok_embed);
  v.add_view("embed.pos", pos_embed);
  for (std::size_t i = 0; i < txt_layers.size(); ++i)
    detail::add_layer(v, "l" + std::to_string(i), txt_layers[i], true);
  v.add_view("final_ln.g", txt_final_ln.gain);
  v.add_view("final_ln.b", txt_final_ln.bias);
  return v;
}

template <typename S>
NamedParams<S> ReportModel<S>::knowledge_encoder_view() const {
  NamedParams<S> v;
  v.add_view("embed.tok", tok_embed);
  v.add_view("embed.pos", pos_embed);
  for (std::size_t i = 0; i < txt_layers.size(); ++i) {
    const std::string p = "l" + std::to_string(i);
    v.add_view(p + ".ln_sa.g", txt_layers[i].ln_sa.gain);
    v.add_view(p + ".ln_sa.b", txt_layers[i].ln_sa.bias);
    detail::add_attention(v, p + ".sa", knowledge_sa[i], true);
    v.add_view(p + ".ln_ff.g", txt_layers[i].ln_ff.gain);
    v.add_view(p + ".ln_ff.b", txt_layers[i].ln_ff.bias);
    v.add_view(p + ".ff.w1", txt_layers[i].ff.w1);
    v.add_view(p + ".ff.b1", txt_layers[i].ff.b1);
    v.add_view(p + ".ff.w2", txt_layers[i].ff.w2);
    v.add_view(p + ".ff.b2", txt_layers[i].ff.b2);
  }
  v.add_view("final_ln.g", txt_final_ln.gain);
  v.add_view("final_ln.b", txt_final_ln.bias);
  return v;
}

template <typename S>
NamedParams<S> ReportModel<S>::decoder_view() const {
  NamedParams<S> v;
  v.add_view("embed.tok", tok_embed);
  v.add_view("embed.pos", pos_embed);
  for (std::size_t i = 0; i < dec_layers.size(); ++i)
    detail::add_layer(v, "l" + std::to_string(i), dec_layers[i], true);
  v.add_view("final_ln.g", dec_final_ln.gain);
  v.add_view("final_ln.b", dec_final_ln.bias);
  return v;
}

template <typename S>
ReportModel<S> ReportModel<S>::clone_detached() const {
  ReportModel<S> copy = init(cfg, 0);
  NamedParams<S> src = named_params();
  NamedParams<S> dst = copy.named_params();
  if (src.size() != dst.size()) throw ContractError("clone: parameter lists disagree");
  for (std::size_t i = 0; i < src.items.size(); ++i) {
    dst.items[i].second.value() = src.items[i].second.value();
    dst.items[i].second.set_requires_grad(false);
  }
  return copy;
}

// ---------------------------------------------------------------------------
// encoder forwards
// ---------------------------------------------------------------------------

// Row-major patch extraction: one row per patch, pixels in reading order.
template <typename S>
Tensor<S> patches_from_image(const SyntheticImage& image, int patch) {
  if (image.height % patch != 0 || image.width % patch != 0)
    throw ConfigError("image " + std::to_string(image.height) + "x" +
                      std::to_string(image.width) + " not divisible into " +
                      std::to_string(patch) + "-pixel patches");
  const int per_side = image.width / patch;
  const int rows = (image.height / patch) * per_side;
  MatrixOf<S> m(rows, patch * patch);
  for (int py = 0; py < image.height / patch; ++py)
    for (int px = 0; px < per_side; ++px)
      for (int r = 0; r < patch; ++r)
        for (int c = 0; c < patch; ++c)
          m(py * per_side + px, r * patch + c) =
              S(image.at(py * patch + r, px * patch + c));
  return Tensor<S>(std::move(m));
}

template <typename S>
Tensor<S> project_visual_cls(const Tensor<S>& features, const ReportModel<S>& m);

template <typename S>
VisualFeatures<S> encode_image(const Tensor<S>& patches, const ReportModel<S>& m) {
  if (patches.rows() != m.cfg.patch_tokens())
    throw ConfigError("expected " + std::to_string(m.cfg.patch_tokens()) + " patches, got " +
                      std::to_string(patches.rows()));
  Tensor<S> x = linear(patches, m.patch_w, m.patch_b);
  x = concat_rows<S>({m.vis_cls, x});
  x = add(x, m.vis_pos);
  for (const auto& layer : m.vis_layers) x = transformer_layer<S>(x, layer, nullptr, nullptr);
  VisualFeatures<S> out;
  out.f_i = layer_norm_p(x, m.vis_final_ln);
  out.cls_projection = project_visual_cls(out.f_i, m);
  return out;
}

template <typename S>
VisualFeatures<S> encode_image(const SyntheticImage& image, const ReportModel<S>& m) {
  return encode_image(patches_from_image<S>(image, m.cfg.patch), m);
}

// Contrastive projection of a visual [CLS] row (raw or knowledge-enhanced).
template <typename S>
Tensor<S> project_visual_cls(const Tensor<S>& features, const ReportModel<S>& m) {
  return l2_normalize_rows(linear(take_rows(features, 0, 1), m.vis_proj_w, m.vis_proj_b));
}

template <typename S>
Tensor<S> embed_tokens(const std::vector<int>& tokens, const ReportModel<S>& m) {
  if (tokens.empty()) throw ContractError("token sequence must be non-empty");
  if (static_cast<int>(tokens.size()) > m.cfg.max_len)
    throw ContractError("sequence of " + std::to_string(tokens.size()) +
                        " tokens exceeds max length " + std::to_string(m.cfg.max_len));
  Tensor<S> x = embedding_lookup(m.tok_embed, tokens);
  return add(x, take_rows(m.pos_embed, 0, static_cast<Index>(tokens.size())));
}

template <typename S>
TextFeatures<S> encode_text(const std::vector<int>& tokens, const ReportModel<S>& m,
                            TextMode mode, const Tensor<S>* enhanced_visual = nullptr) {
  if (mode == TextMode::kWithImageCross && enhanced_visual == nullptr)
    throw ContractError("with_image_cross mode needs enhanced visual features");
  Tensor<S> x = embed_tokens(tokens, m);
  for (const auto& layer : m.txt_layers)
    x = transformer_layer<S>(x, layer, nullptr,
                             mode == TextMode::kWithImageCross ? enhanced_visual : nullptr);
  TextFeatures<S> out;
  out.h_t = layer_norm_p(x, m.txt_final_ln);
  out.cls_projection =
      l2_normalize_rows(linear(take_rows(out.h_t, 0, 1), m.txt_proj_w, m.txt_proj_b));
  return out;
}

// Same stack as the text encoder with the knowledge-specific attention
// weights swapped in; everything else is the identical shared storage.
template <typename S>
Tensor<S> encode_knowledge(const std::vector<int>& tokens, const ReportModel<S>& m) {
  Tensor<S> x = embed_tokens(tokens, m);
  for (std::size_t i = 0; i < m.txt_layers.size(); ++i) {
    const auto& shared = m.txt_layers[i];
    x = add(x, self_attention(layer_norm_p(x, shared.ln_sa), m.knowledge_sa[i]));
    x = add(x, feed_forward(layer_norm_p(x, shared.ln_ff), shared.ff));
  }
  return layer_norm_p(x, m.txt_final_ln);
}

// Queries from the visual rows, keys/values from the knowledge rows; the
// attended value is added residually and layer-normed.
template <typename S>
Tensor<S> fuse_cross_attention(const Tensor<S>& f_i, const Tensor<S>& h_k,
                               const ReportModel<S>& m) {
  if (f_i.cols() != h_k.cols())
    throw ConfigError("fusion width mismatch: " + f_i.shape_str() + " vs " + h_k.shape_str());
  return layer_norm_p(add(f_i, cross_attention(f_i, h_k, m.fusion_ca)), m.fusion_ln);
}

// momentum <- m * momentum + (1 - m) * online, by value, never recorded.
template <typename S>
void momentum_update(const NamedParams<S>& online, NamedParams<S>& momentum, double m) {
  if (!(m >= 0.0 && m < 1.0)) throw ContractError("momentum must be in [0, 1)");
  if (online.size() != momentum.size())
    throw ContractError("momentum_update: parameter lists have different sizes");
  for (std::size_t i = 0; i < online.items.size(); ++i) {
    const auto& [name_o, p_o] = online.items[i];
    auto& [name_m, p_m] = momentum.items[i];
    if (name_o != name_m || p_o.rows() != p_m.rows() || p_o.cols() != p_m.cols())
      throw ContractError("momentum_update: misaligned parameter '" + name_o + "' vs '" +
                          name_m + "'");
    p_m.value() = S(m) * p_m.value() + S(1.0 - m) * p_o.value();
  }
}

}  // namespace mrg

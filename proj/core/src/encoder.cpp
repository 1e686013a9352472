#include "maskdepth/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace maskdepth {

void EncoderConfig::validate() const {
  if (depth < 0) throw ConfigError("encoder depth must be >= 0");
  if (d_model <= 0 || heads <= 0) throw ConfigError("encoder d_model and heads must be positive");
  if (d_model % heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by heads " + std::to_string(heads));
  }
  if (mlp_ratio <= 0.0) throw ConfigError("mlp_ratio must be positive");
  for (int b : skip_blocks) {
    if (b < 0 || b >= depth) throw ConfigError("skip block " + std::to_string(b) + " outside [0, depth)");
  }
}

namespace {

template <class T>
T logit_scale(int d_head, AttentionScale scale) {
  const T root = std::sqrt(T(d_head));
  return scale == AttentionScale::standard ? T(1) / root : root;
}

Mask allowed_matrix(const AttentionMask& mask) {
  const int n = mask.size();
  Mask allowed(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) allowed(i, j) = mask.allowed(i, j);
  }
  return allowed;
}

template <class T>
void softmax_rows(Matrix<T>& logits, const Mask* allowed, const AttentionOptions& opts) {
  if (allowed != nullptr) {
    if (opts.fill == MaskFill::legacy) {
      logits = allowed->select(logits, T(opts.legacy_fill_value));
    } else {
      logits = allowed->select(logits, -std::numeric_limits<T>::infinity());
    }
  }
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    const T peak = row.maxCoeff();
    if (peak == -std::numeric_limits<T>::infinity()) {
      row.setZero();
      continue;
    }
    row = (row.array() - peak).exp().matrix();
    row /= row.sum();
  }
}

template <class T>
void check_finite(const Matrix<T>& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite values in attention ") + what);
}

}  // namespace

template <class T>
Matrix<T> masked_attention(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v, int heads,
                           const AttentionMask* mask, const AttentionOptions& opts,
                           std::vector<Matrix<T>>* probabilities) {
  if (q.rows() != k.rows() || q.rows() != v.rows() || q.cols() != k.cols() || q.cols() != v.cols()) {
    throw ShapeError("attention q/k/v shapes differ: " + shape_of(q) + " " + shape_of(k) + " " + shape_of(v));
  }
  if (heads <= 0 || q.cols() % heads != 0) throw ShapeError("attention width not divisible by heads");
  if (mask != nullptr && mask->size() != q.rows()) {
    throw ShapeError("attention mask size " + std::to_string(mask->size()) + " for " + std::to_string(q.rows()) +
                     " tokens");
  }
  if (opts.check_finite) {
    check_finite(q, "queries");
    check_finite(k, "keys");
    check_finite(v, "values");
  }
  const int d_head = static_cast<int>(q.cols()) / heads;
  const T scale = logit_scale<T>(d_head, opts.scale);
  Mask allowed;
  if (mask != nullptr) allowed = allowed_matrix(*mask);
  const Mask* allowed_ptr = mask != nullptr ? &allowed : nullptr;

  Matrix<T> out(q.rows(), q.cols());
  if (probabilities != nullptr) probabilities->assign(static_cast<std::size_t>(heads), Matrix<T>());
  for (int h = 0; h < heads; ++h) {
    const auto qh = q.middleCols(h * d_head, d_head);
    const auto kh = k.middleCols(h * d_head, d_head);
    const auto vh = v.middleCols(h * d_head, d_head);
    Matrix<T> weights = (qh * kh.transpose()) * scale;
    softmax_rows(weights, allowed_ptr, opts);
    out.middleCols(h * d_head, d_head).noalias() = weights * vh;
    if (probabilities != nullptr) (*probabilities)[h] = std::move(weights);
  }
  return out;
}

template <class T>
AttentionGradients<T> masked_attention_backward(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v, int heads,
                                                const std::vector<Matrix<T>>& probabilities, const Matrix<T>& dout,
                                                const AttentionMask* mask, const AttentionOptions& opts) {
  const int d_head = static_cast<int>(q.cols()) / heads;
  const T scale = logit_scale<T>(d_head, opts.scale);
  Mask allowed;
  const bool zero_disallowed = mask != nullptr && opts.fill == MaskFill::legacy;
  if (zero_disallowed) allowed = allowed_matrix(*mask);

  AttentionGradients<T> grads{Matrix<T>(q.rows(), q.cols()), Matrix<T>(k.rows(), k.cols()),
                              Matrix<T>(v.rows(), v.cols())};
  for (int h = 0; h < heads; ++h) {
    const Matrix<T>& weights = probabilities[h];
    const auto dout_h = dout.middleCols(h * d_head, d_head);
    grads.dv.middleCols(h * d_head, d_head).noalias() = weights.transpose() * dout_h;
    const Matrix<T> dweights = dout_h * v.middleCols(h * d_head, d_head).transpose();
    const Eigen::Matrix<T, Eigen::Dynamic, 1> row_dot = (dweights.array() * weights.array()).rowwise().sum();
    Matrix<T> dlogits = (weights.array() * (dweights.array().colwise() - row_dot.array())).matrix();
    if (zero_disallowed) dlogits = allowed.select(dlogits, T(0));
    dlogits *= scale;
    grads.dq.middleCols(h * d_head, d_head).noalias() = dlogits * k.middleCols(h * d_head, d_head);
    grads.dk.middleCols(h * d_head, d_head).noalias() = dlogits.transpose() * q.middleCols(h * d_head, d_head);
  }
  return grads;
}

// ------------------------------------------------------ TransformerBlock

template <class T>
TransformerBlock<T>::TransformerBlock(int index, const EncoderConfig& cfg)
    : heads_(cfg.heads), d_model_(cfg.d_model), attn_(cfg.attention_options()) {
  const std::string prefix = "encoder.block" + std::to_string(index);
  const auto group = nn::ParamGroup::encoder;
  ln1 = nn::LayerNorm<T>(prefix + ".ln1", cfg.d_model, group);
  qkv = nn::Linear<T>(prefix + ".qkv", cfg.d_model, 3 * cfg.d_model, group);
  proj = nn::Linear<T>(prefix + ".proj", cfg.d_model, cfg.d_model, group);
  ln2 = nn::LayerNorm<T>(prefix + ".ln2", cfg.d_model, group);
  fc1 = nn::Linear<T>(prefix + ".fc1", cfg.d_model, cfg.mlp_width(), group);
  fc2 = nn::Linear<T>(prefix + ".fc2", cfg.mlp_width(), cfg.d_model, group);
}

template <class T>
void TransformerBlock<T>::init(Rng& rng) {
  qkv.init_xavier(rng);
  proj.init_xavier(rng);
  fc1.init_xavier(rng);
  fc2.init_xavier(rng);
}

template <class T>
Matrix<T> TransformerBlock<T>::forward(const Matrix<T>& x, const AttentionMask* mask, Cache* cache) const {
  typename nn::LayerNorm<T>::Cache ln1_cache;
  typename nn::LayerNorm<T>::Cache ln2_cache;
  const bool keep = cache != nullptr;

  Matrix<T> normed1 = ln1.forward(x, keep ? &ln1_cache : nullptr);
  Matrix<T> packed = qkv.forward(normed1);
  const int d = d_model_;
  const Matrix<T> q = packed.middleCols(0, d);
  const Matrix<T> k = packed.middleCols(d, d);
  const Matrix<T> v = packed.middleCols(2 * d, d);
  std::vector<Matrix<T>> probs;
  Matrix<T> attended = masked_attention(q, k, v, heads_, mask, attn_, keep ? &probs : nullptr);
  Matrix<T> residual = x + proj.forward(attended);

  Matrix<T> normed2 = ln2.forward(residual, keep ? &ln2_cache : nullptr);
  Matrix<T> hidden_pre = fc1.forward(normed2);
  Matrix<T> hidden = nn::gelu(hidden_pre);
  Matrix<T> y = residual + fc2.forward(hidden);

  if (keep) {
    cache->ln1 = std::move(ln1_cache);
    cache->ln2 = std::move(ln2_cache);
    cache->normed1 = std::move(normed1);
    cache->qkv = std::move(packed);
    cache->probabilities = std::move(probs);
    cache->attended = std::move(attended);
    cache->normed2 = std::move(normed2);
    cache->hidden_pre = std::move(hidden_pre);
    cache->hidden = std::move(hidden);
  }
  return y;
}

template <class T>
Matrix<T> TransformerBlock<T>::backward(const Cache& cache, const Matrix<T>& dy, const AttentionMask* mask) {
  const int d = d_model_;
  // MLP branch.
  const Matrix<T> dhidden = fc2.backward(cache.hidden, dy);
  const Matrix<T> dhidden_pre = nn::gelu_backward(cache.hidden_pre, dhidden);
  const Matrix<T> dnormed2 = fc1.backward(cache.normed2, dhidden_pre);
  Matrix<T> dresidual = dy + ln2.backward(cache.ln2, dnormed2);

  // Attention branch.
  const Matrix<T> dattended = proj.backward(cache.attended, dresidual);
  const Matrix<T> q = cache.qkv.middleCols(0, d);
  const Matrix<T> k = cache.qkv.middleCols(d, d);
  const Matrix<T> v = cache.qkv.middleCols(2 * d, d);
  const auto grads = masked_attention_backward(q, k, v, heads_, cache.probabilities, dattended, mask, attn_);
  Matrix<T> dpacked(cache.qkv.rows(), cache.qkv.cols());
  dpacked.middleCols(0, d) = grads.dq;
  dpacked.middleCols(d, d) = grads.dk;
  dpacked.middleCols(2 * d, d) = grads.dv;
  const Matrix<T> dnormed1 = qkv.backward(cache.normed1, dpacked);
  return dresidual + ln1.backward(cache.ln1, dnormed1);
}

template <class T>
void TransformerBlock<T>::visit(const nn::ParamVisitor<T>& f) {
  ln1.visit(f);
  qkv.visit(f);
  proj.visit(f);
  ln2.visit(f);
  fc1.visit(f);
  fc2.visit(f);
}

template <class T>
void TransformerBlock<T>::visit(const nn::ConstParamVisitor<T>& f) const {
  ln1.visit(f);
  qkv.visit(f);
  proj.visit(f);
  ln2.visit(f);
  fc1.visit(f);
  fc2.visit(f);
}

// --------------------------------------------------------------- Encoder

template <class T>
Encoder<T>::Encoder(EncoderConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  blocks.reserve(static_cast<std::size_t>(cfg_.depth));
  for (int b = 0; b < cfg_.depth; ++b) blocks.emplace_back(b, cfg_);
}

template <class T>
void Encoder<T>::init(Rng& rng) {
  for (auto& block : blocks) block.init(rng);
}

template <class T>
EncodedTokens<T> Encoder<T>::forward(const Matrix<T>& tokens, const AttentionMask* mask, Cache* cache) const {
  if (tokens.cols() != cfg_.d_model) {
    throw ShapeError("encoder expects width " + std::to_string(cfg_.d_model) + ", got " + shape_of(tokens));
  }
  if (mask != nullptr && mask->size() != tokens.rows()) throw ShapeError("encoder: mask/sequence length mismatch");
  if (cache != nullptr) {
    cache->mask = mask;
    cache->blocks.assign(blocks.size(), {});
  }
  EncodedTokens<T> out;
  out.skips.resize(cfg_.skip_blocks.size());
  Matrix<T> x = tokens;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    x = blocks[b].forward(x, mask, cache != nullptr ? &cache->blocks[b] : nullptr);
    for (std::size_t s = 0; s < cfg_.skip_blocks.size(); ++s) {
      if (cfg_.skip_blocks[s] == static_cast<int>(b)) out.skips[s] = x;
    }
  }
  out.final = std::move(x);
  return out;
}

template <class T>
Matrix<T> Encoder<T>::backward(const Cache& cache, const Matrix<T>& d_final, const std::vector<Matrix<T>>& d_skips) {
  Matrix<T> dx = d_final;
  for (std::size_t b = blocks.size(); b-- > 0;) {
    for (std::size_t s = 0; s < cfg_.skip_blocks.size() && s < d_skips.size(); ++s) {
      if (cfg_.skip_blocks[s] == static_cast<int>(b) && d_skips[s].size() > 0) dx += d_skips[s];
    }
    dx = blocks[b].backward(cache.blocks[b], dx, cache.mask);
  }
  return dx;
}

template <class T>
void Encoder<T>::visit(const nn::ParamVisitor<T>& f) {
  for (auto& block : blocks) block.visit(f);
}

template <class T>
void Encoder<T>::visit(const nn::ConstParamVisitor<T>& f) const {
  for (const auto& block : blocks) block.visit(f);
}

// ----------------------------------------------------------- entry points

template <class T>
EncodedTokens<T> encode(const Encoder<T>& encoder, const TokenSequence<T>& seq, const AttentionMask* mask) {
  if (mask != nullptr && mask->size() != seq.size()) throw ShapeError("encode: mask/sequence length mismatch");
  return encoder.forward(seq.tokens, mask, nullptr);
}

template <class T>
EncodedTokens<T> encode_masked(const Encoder<T>& encoder, const TokenSequence<T>& seq, const Partition& part) {
  if (seq.permutation.has_value()) throw ShapeError("encode_masked: sequence must be in spatial order");
  const AttentionMask mask = build_attention_mask(part);
  EncodedTokens<T> shuffled = encoder.forward(shuffle_tokens(seq.tokens, part), &mask, nullptr);
  EncodedTokens<T> out;
  out.final = reassemble(shuffled.final, part);
  for (const auto& skip : shuffled.skips) out.skips.push_back(reassemble(skip, part));
  return out;
}

template <class T>
EncodedTokens<T> encode_subsets_oracle(const Encoder<T>& encoder, const TokenSequence<T>& seq, const Partition& part) {
  if (encoder.config().mask_fill != MaskFill::exact) {
    throw ConfigError("subset oracle requires exact mask fill; legacy fill leaks attention across subsets");
  }
  if (seq.permutation.has_value()) throw ShapeError("encode_subsets_oracle: sequence must be in spatial order");
  if (seq.size() != part.n) throw ShapeError("encode_subsets_oracle: partition/sequence length mismatch");

  const auto d = seq.tokens.cols();
  const std::size_t num_skips = encoder.config().skip_blocks.size();
  Matrix<T> final_shuffled(part.n, d);
  std::vector<Matrix<T>> skips_shuffled(num_skips, Matrix<T>(part.n, d));
  for (int s = 0; s < part.k; ++s) {
    const int begin = part.split_points[s];
    const int size = part.subset_size(s);
    if (size == 0) continue;
    Matrix<T> subset(size, d);
    for (int i = 0; i < size; ++i) subset.row(i) = seq.tokens.row(part.subsets[s][i]);
    const EncodedTokens<T> z = encoder.forward(subset, nullptr, nullptr);
    final_shuffled.middleRows(begin, size) = z.final;
    for (std::size_t j = 0; j < num_skips; ++j) skips_shuffled[j].middleRows(begin, size) = z.skips[j];
  }
  EncodedTokens<T> out;
  out.final = reassemble(final_shuffled, part);
  for (const auto& skip : skips_shuffled) out.skips.push_back(reassemble(skip, part));
  return out;
}

#define MASKDEPTH_INSTANTIATE_ENCODER(T)                                                                            \
  template Matrix<T> masked_attention<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&, int,                \
                                         const AttentionMask*, const AttentionOptions&, std::vector<Matrix<T>>*);  \
  template AttentionGradients<T> masked_attention_backward<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&, \
                                                              int, const std::vector<Matrix<T>>&, const Matrix<T>&, \
                                                              const AttentionMask*, const AttentionOptions&);      \
  template class TransformerBlock<T>;                                                                               \
  template class Encoder<T>;                                                                                        \
  template EncodedTokens<T> encode<T>(const Encoder<T>&, const TokenSequence<T>&, const AttentionMask*);            \
  template EncodedTokens<T> encode_masked<T>(const Encoder<T>&, const TokenSequence<T>&, const Partition&);         \
  template EncodedTokens<T> encode_subsets_oracle<T>(const Encoder<T>&, const TokenSequence<T>&, const Partition&);

MASKDEPTH_INSTANTIATE_ENCODER(float)
MASKDEPTH_INSTANTIATE_ENCODER(double)

}  // namespace maskdepth

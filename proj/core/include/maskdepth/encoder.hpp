#pragma once

#include <vector>

#include "maskdepth/common.hpp"
#include "maskdepth/masking.hpp"
#include "maskdepth/nn.hpp"
#include "maskdepth/tokens.hpp"

namespace maskdepth {

/// How disallowed attention logits are treated.
/// exact: additive -inf, giving exactly zero weight after softmax.
/// legacy: logits replaced by a constant (-10), which leaks weight across subsets.
enum class MaskFill { exact, legacy };

/// standard: logits * 1/sqrt(d_head). legacy: logits * sqrt(d_head).
enum class AttentionScale { standard, legacy };

struct AttentionOptions {
  MaskFill fill = MaskFill::exact;
  AttentionScale scale = AttentionScale::standard;
  double legacy_fill_value = -10.0;
  bool check_finite = kDebugBuild;
};

struct EncoderConfig {
  int depth = 4;
  int d_model = 64;
  int heads = 4;
  double mlp_ratio = 4.0;
  std::vector<int> skip_blocks{0, 1, 2, 3};
  MaskFill mask_fill = MaskFill::exact;
  AttentionScale attn_scale = AttentionScale::standard;

  [[nodiscard]] int d_head() const { return d_model / heads; }
  [[nodiscard]] int mlp_width() const { return static_cast<int>(d_model * mlp_ratio); }
  [[nodiscard]] AttentionOptions attention_options() const {
    AttentionOptions opts;
    opts.fill = mask_fill;
    opts.scale = attn_scale;
    return opts;
  }
  /// Throws ConfigError.
  void validate() const;
};

/// Encoder output: final block tokens plus the outputs of each skip block.
template <class T>
struct EncodedTokens {
  Matrix<T> final;
  std::vector<Matrix<T>> skips;
};

/// Multi-head attention on packed projections q, k, v: [N, heads*d_head];
/// head h uses columns [h*d_head, (h+1)*d_head). `mask` is in the same token
/// order as q/k/v. Rows with no allowed key produce zeros. When
/// `probabilities` is non-null it receives the per-head attention weights.
template <class T>
Matrix<T> masked_attention(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v, int heads,
                           const AttentionMask* mask, const AttentionOptions& opts,
                           std::vector<Matrix<T>>* probabilities = nullptr);

template <class T>
struct AttentionGradients {
  Matrix<T> dq;
  Matrix<T> dk;
  Matrix<T> dv;
};

template <class T>
AttentionGradients<T> masked_attention_backward(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v, int heads,
                                                const std::vector<Matrix<T>>& probabilities, const Matrix<T>& dout,
                                                const AttentionMask* mask, const AttentionOptions& opts);

/// Pre-norm transformer block: x + proj(attn(LN(x))), then h + MLP(LN(h)).
template <class T>
class TransformerBlock {
 public:
  struct Cache {
    typename nn::LayerNorm<T>::Cache ln1;
    typename nn::LayerNorm<T>::Cache ln2;
    Matrix<T> normed1;
    Matrix<T> qkv;
    std::vector<Matrix<T>> probabilities;
    Matrix<T> attended;
    Matrix<T> normed2;
    Matrix<T> hidden_pre;
    Matrix<T> hidden;
  };

  TransformerBlock() = default;
  TransformerBlock(int index, const EncoderConfig& cfg);

  void init(Rng& rng);
  [[nodiscard]] Matrix<T> forward(const Matrix<T>& x, const AttentionMask* mask, Cache* cache) const;
  Matrix<T> backward(const Cache& cache, const Matrix<T>& dy, const AttentionMask* mask);

  void visit(const nn::ParamVisitor<T>& f);
  void visit(const nn::ConstParamVisitor<T>& f) const;

  nn::LayerNorm<T> ln1;
  nn::Linear<T> qkv;
  nn::Linear<T> proj;
  nn::LayerNorm<T> ln2;
  nn::Linear<T> fc1;
  nn::Linear<T> fc2;

 private:
  int heads_ = 1;
  int d_model_ = 0;
  AttentionOptions attn_;
};

template <class T>
class Encoder {
 public:
  struct Cache {
    const AttentionMask* mask = nullptr;
    std::vector<typename TransformerBlock<T>::Cache> blocks;
  };

  Encoder() = default;
  explicit Encoder(EncoderConfig cfg);

  void init(Rng& rng);
  /// `mask` must outlive `cache`.
  [[nodiscard]] EncodedTokens<T> forward(const Matrix<T>& tokens, const AttentionMask* mask, Cache* cache) const;
  /// `d_skips` may be shorter than the skip list or hold empty matrices for
  /// unused levels. Returns the gradient w.r.t. the input tokens.
  Matrix<T> backward(const Cache& cache, const Matrix<T>& d_final, const std::vector<Matrix<T>>& d_skips);

  [[nodiscard]] const EncoderConfig& config() const { return cfg_; }

  void visit(const nn::ParamVisitor<T>& f);
  void visit(const nn::ConstParamVisitor<T>& f) const;

  std::vector<TransformerBlock<T>> blocks;

 private:
  EncoderConfig cfg_;
};

/// Encodes a sequence in its current token order.
template <class T>
EncodedTokens<T> encode(const Encoder<T>& encoder, const TokenSequence<T>& seq, const AttentionMask* mask);

/// Joint K-way masked encoding: shuffle by `part`, encode once with the
/// block mask, reassemble outputs to spatial order. `seq` must be spatial.
template <class T>
EncodedTokens<T> encode_masked(const Encoder<T>& encoder, const TokenSequence<T>& seq, const Partition& part);

/// Reference path: each non-empty subset encoded as its own sequence,
/// concatenated in subset order, then reassembled to spatial order.
/// Only valid with MaskFill::exact.
template <class T>
EncodedTokens<T> encode_subsets_oracle(const Encoder<T>& encoder, const TokenSequence<T>& seq, const Partition& part);

}  // namespace maskdepth

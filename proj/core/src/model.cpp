#include "maskdepth/model.hpp"

#include <string>

namespace maskdepth {

void ModelConfig::finalize() {
  if (patch_size <= 0) throw ConfigError("patch_size must be positive");
  if (image_height % patch_size != 0 || image_width % patch_size != 0) {
    throw ShapeError("image " + shape_string(image_height, image_width) + " not divisible by patch size " +
                     std::to_string(patch_size));
  }
  encoder.validate();
  if (encoder.skip_blocks.size() != kDecoderLevels) {
    throw ConfigError("decoder needs exactly " + std::to_string(kDecoderLevels) + " skip blocks");
  }
  decoder.d_model = encoder.d_model;
  decoder.patch_size = patch_size;
  decoder.validate(image_height, image_width);
}

ModelConfig ModelConfig::desk() {
  ModelConfig cfg;
  cfg.finalize();
  return cfg;
}

ModelConfig ModelConfig::full() {
  ModelConfig cfg;
  cfg.image_height = 192;
  cfg.image_width = 640;
  cfg.patch_size = 16;
  cfg.encoder.depth = 12;
  cfg.encoder.d_model = 768;
  cfg.encoder.heads = 12;
  cfg.encoder.skip_blocks = {2, 5, 8, 11};
  cfg.decoder.level_widths = {96, 192, 384, 768};
  cfg.decoder.fusion_width = 256;
  cfg.decoder.head_width = 32;
  cfg.finalize();
  return cfg;
}

template <class T>
Model<T>::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.finalize();
  embedding = PatchEmbedding<T>(cfg_.patch_dim(), cfg_.encoder.d_model, cfg_.num_tokens());
  encoder = Encoder<T>(cfg_.encoder);
  decoder = Decoder<T>(cfg_.decoder);
  predictor = PredictorHead<T>(cfg_.encoder.d_model);
}

template <class T>
void Model<T>::init(std::uint64_t seed) {
  const Rng root(seed);
  Rng embed_rng = root.derive(1);
  Rng encoder_rng = root.derive(2);
  Rng decoder_rng = root.derive(3);
  Rng head_rng = root.derive(4);
  embedding.init(embed_rng);
  encoder.init(encoder_rng);
  decoder.init(decoder_rng);
  predictor.init(head_rng);
}

template <class T>
ForwardOutput<T> Model<T>::forward(const FeatureMap<T>& image, const Partition* partition, Cache* cache) const {
  if (image.channels != 3 || image.height != cfg_.image_height || image.width != cfg_.image_width) {
    throw ShapeError("model expects a 3x" + std::to_string(cfg_.image_height) + "x" +
                     std::to_string(cfg_.image_width) + " image");
  }
  if (partition != nullptr && partition->n != cfg_.num_tokens()) {
    throw ShapeError("partition covers " + std::to_string(partition->n) + " tokens, model has " +
                     std::to_string(cfg_.num_tokens()));
  }
  Matrix<T> patches = patchify(image, cfg_.patch_size);
  const Matrix<T> tokens = embedding.forward(patches);

  // A single non-empty subset is full attention; encoding is permutation
  // equivariant, so shuffle and reassemble would only reorder float sums.
  if (partition != nullptr && partition->non_empty_subsets() <= 1) partition = nullptr;

  EncodedTokens<T> encoded;
  if (partition == nullptr) {
    encoded = encoder.forward(tokens, nullptr, cache != nullptr ? &cache->encoder : nullptr);
  } else {
    auto mask = std::make_shared<const AttentionMask>(build_attention_mask(*partition));
    EncodedTokens<T> shuffled =
        encoder.forward(shuffle_tokens(tokens, *partition), mask.get(), cache != nullptr ? &cache->encoder : nullptr);
    encoded.final = reassemble(shuffled.final, *partition);
    for (const auto& skip : shuffled.skips) encoded.skips.push_back(reassemble(skip, *partition));
    if (cache != nullptr) {
      cache->partition = std::make_shared<const Partition>(*partition);
      cache->mask = std::move(mask);
    }
  }

  ForwardOutput<T> out;
  out.prediction = decoder.forward(encoded.skips, cfg_.grid_rows(), cfg_.grid_cols(),
                                   cache != nullptr ? &cache->decoder : nullptr);
  out.features = std::move(encoded.final);
  if (cache != nullptr) {
    cache->patches = std::move(patches);
    if (partition == nullptr) {
      cache->partition.reset();
      cache->mask.reset();
    }
  }
  return out;
}

template <class T>
void Model<T>::backward(const Cache& cache, const Matrix<T>& d_depth, const Matrix<T>& d_log_u,
                        const Matrix<T>& d_features) {
  const int h = cfg_.image_height;
  const int w = cfg_.image_width;
  const Matrix<T> zero_map = Matrix<T>::Zero(h, w);
  std::vector<Matrix<T>> d_skips =
      decoder.backward(cache.decoder, d_depth.size() > 0 ? d_depth : zero_map, d_log_u.size() > 0 ? d_log_u : zero_map);
  Matrix<T> d_final = d_features.size() > 0 ? d_features : Matrix<T>::Zero(cfg_.num_tokens(), cfg_.encoder.d_model);

  Matrix<T> d_tokens;
  if (cache.partition) {
    for (auto& d : d_skips) d = shuffle_tokens(d, *cache.partition);
    d_final = shuffle_tokens(d_final, *cache.partition);
    d_tokens = reassemble(encoder.backward(cache.encoder, d_final, d_skips), *cache.partition);
  } else {
    d_tokens = encoder.backward(cache.encoder, d_final, d_skips);
  }
  embedding.backward(cache.patches, d_tokens);
}

template <class T>
void Model<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <class T>
std::vector<nn::Param<T>*> Model<T>::parameters() {
  std::vector<nn::Param<T>*> out;
  const nn::ParamVisitor<T> collect = [&out](nn::Param<T>& p) { out.push_back(&p); };
  embedding.visit(collect);
  encoder.visit(collect);
  decoder.visit(collect);
  predictor.visit(collect);
  return out;
}

template <class T>
std::vector<const nn::Param<T>*> Model<T>::parameters() const {
  std::vector<const nn::Param<T>*> out;
  const nn::ConstParamVisitor<T> collect = [&out](const nn::Param<T>& p) { out.push_back(&p); };
  embedding.visit(collect);
  encoder.visit(collect);
  decoder.visit(collect);
  predictor.visit(collect);
  return out;
}

template <class T>
std::size_t Model<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto* p : parameters()) total += static_cast<std::size_t>(p->size());
  return total;
}

template class Model<float>;
template class Model<double>;

}  // namespace maskdepth

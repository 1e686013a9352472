#include "maskdepth/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <type_traits>

#include <nlohmann/json.hpp>

namespace maskdepth {

using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Config

namespace {

std::string enum_name(ConsistencyWeighting v) {
  switch (v) {
    case ConsistencyWeighting::confidence: return "confidence";
    case ConsistencyWeighting::literal: return "literal";
    case ConsistencyWeighting::none: return "none";
  }
  return "?";
}
std::string enum_name(PredictorKind v) { return v == PredictorKind::mlp ? "mlp" : "none"; }
std::string enum_name(MaskFill v) { return v == MaskFill::exact ? "exact" : "legacy"; }
std::string enum_name(AttentionScale v) { return v == AttentionScale::standard ? "standard" : "legacy"; }
std::string enum_name(DepthOutput v) { return v == DepthOutput::linear_depth ? "linear" : "affine_inverse"; }

template <class E, std::size_t N>
void parse_enum(const std::string& key, const std::string& text, E& out, const std::array<E, N>& values) {
  for (E v : values) {
    if (enum_name(v) == text) {
      out = v;
      return;
    }
  }
  std::string allowed;
  for (E v : values) allowed += (allowed.empty() ? "" : ", ") + enum_name(v);
  throw ConfigError("config key '" + key + "': unknown value '" + text + "' (expected one of " + allowed + ")");
}

void parse_enum(const std::string& key, const std::string& text, ConsistencyWeighting& out) {
  parse_enum(key, text, out,
             std::array{ConsistencyWeighting::confidence, ConsistencyWeighting::literal, ConsistencyWeighting::none});
}
void parse_enum(const std::string& key, const std::string& text, PredictorKind& out) {
  parse_enum(key, text, out, std::array{PredictorKind::mlp, PredictorKind::none});
}
void parse_enum(const std::string& key, const std::string& text, MaskFill& out) {
  parse_enum(key, text, out, std::array{MaskFill::exact, MaskFill::legacy});
}
void parse_enum(const std::string& key, const std::string& text, AttentionScale& out) {
  parse_enum(key, text, out, std::array{AttentionScale::standard, AttentionScale::legacy});
}
void parse_enum(const std::string& key, const std::string& text, DepthOutput& out) {
  parse_enum(key, text, out, std::array{DepthOutput::linear_depth, DepthOutput::affine_inverse_depth});
}

template <class C, class F>
void for_each_field(C& c, F&& f) {
  f("batch_size", c.batch_size);
  f("labeled_fraction_per_batch", c.labeled_fraction_per_batch);
  f("lr_encoder", c.lr_encoder);
  f("lr_decoder", c.lr_decoder);
  f("adam_beta1", c.adam_beta1);
  f("adam_beta2", c.adam_beta2);
  f("adam_eps", c.adam_eps);
  f("steps", c.steps);
  f("seed", c.seed);
  f("lambda_dc", c.lambda_dc);
  f("lambda_uc", c.lambda_uc);
  f("lambda_fc", c.lambda_fc);
  f("weak_K", c.weak_K);
  f("strong_K", c.strong_K);
  f("consistency_weighting", c.consistency_weighting);
  f("predictor_head", c.predictor_head);
  f("flip", c.flip);
  f("jitter", c.jitter);
  f("image_height", c.image_height);
  f("image_width", c.image_width);
  f("patch_size", c.patch_size);
  f("d_model", c.d_model);
  f("depth", c.depth);
  f("heads", c.heads);
  f("mlp_ratio", c.mlp_ratio);
  f("skip_blocks", c.skip_blocks);
  f("mask_fill", c.mask_fill);
  f("attn_scale", c.attn_scale);
  f("level_widths", c.level_widths);
  f("fusion_width", c.fusion_width);
  f("head_width", c.head_width);
  f("d_min", c.d_min);
  f("d_max", c.d_max);
  f("depth_output", c.depth_output);
  f("log_every", c.log_every);
  f("eval_every", c.eval_every);
  f("eval_cap", c.eval_cap);
  f("checkpoint_every", c.checkpoint_every);
}

[[noreturn]] void type_error(const std::string& key, const char* expected) {
  throw ConfigError("config key '" + key + "' must be " + expected);
}

template <class V>
void read_value(const std::string& key, const json& j, V& out) {
  if constexpr (std::is_same_v<V, bool>) {
    if (!j.is_boolean()) type_error(key, "a boolean");
    out = j.get<bool>();
  } else if constexpr (std::is_same_v<V, std::uint64_t>) {
    if (!j.is_number_unsigned()) type_error(key, "a non-negative integer");
    out = j.get<std::uint64_t>();
  } else if constexpr (std::is_integral_v<V>) {
    if (!j.is_number_integer()) type_error(key, "an integer");
    out = j.get<V>();
  } else if constexpr (std::is_floating_point_v<V>) {
    if (!j.is_number()) type_error(key, "a number");
    out = j.get<V>();
  } else if constexpr (std::is_enum_v<V>) {
    if (!j.is_string()) type_error(key, "a string");
    parse_enum(key, j.get<std::string>(), out);
  } else {
    if (!j.is_array()) type_error(key, "an array of integers");
    out.clear();
    for (const auto& item : j) {
      if (!item.is_number_integer()) type_error(key, "an array of integers");
      out.push_back(item.get<int>());
    }
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(labeled_fraction_per_batch > 0.0 && labeled_fraction_per_batch <= 1.0)) {
    throw ConfigError("labeled_fraction_per_batch must be in (0, 1]");
  }
  if (steps < 0) throw ConfigError("steps must be non-negative");
  loss_weights().validate();
  if (weak_K < 1 || strong_K < 1) throw ConfigError("weak_K and strong_K must be at least 1");
  if (!(jitter >= 0.0 && jitter < 1.0)) throw ConfigError("jitter must be in [0, 1)");
  adam_config().validate();
  (void)model_config();
  if (log_every < 1) throw ConfigError("log_every must be at least 1");
  if (eval_every < 0 || checkpoint_every < 0) throw ConfigError("eval_every and checkpoint_every must be >= 0");
  EvalProtocol{eval_cap}.validate();
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.image_height = image_height;
  m.image_width = image_width;
  m.patch_size = patch_size;
  m.encoder.d_model = d_model;
  m.encoder.depth = depth;
  m.encoder.heads = heads;
  m.encoder.mlp_ratio = mlp_ratio;
  m.encoder.skip_blocks = skip_blocks;
  m.encoder.mask_fill = mask_fill;
  m.encoder.attn_scale = attn_scale;
  if (level_widths.size() != static_cast<std::size_t>(kDecoderLevels)) {
    throw ConfigError("level_widths needs " + std::to_string(kDecoderLevels) + " entries");
  }
  std::copy(level_widths.begin(), level_widths.end(), m.decoder.level_widths.begin());
  m.decoder.fusion_width = fusion_width;
  m.decoder.head_width = head_width;
  m.decoder.d_min = d_min;
  m.decoder.d_max = d_max;
  m.decoder.output = depth_output;
  m.finalize();
  return m;
}

LossWeights TrainConfig::loss_weights() const {
  LossWeights w;
  w.lambda_dc = lambda_dc;
  w.lambda_uc = lambda_uc;
  w.lambda_fc = lambda_fc;
  w.weak_k = weak_K;
  w.strong_k = strong_K;
  return w;
}

AdamConfig TrainConfig::adam_config() const {
  AdamConfig a;
  a.lr_encoder = lr_encoder;
  a.lr_decoder = lr_decoder;
  a.beta1 = adam_beta1;
  a.beta2 = adam_beta2;
  a.eps = adam_eps;
  return a;
}

int TrainConfig::labeled_per_batch(bool have_unlabeled) const {
  if (!have_unlabeled) return batch_size;
  const auto n = static_cast<int>(std::lround(batch_size * labeled_fraction_per_batch));
  return std::clamp(n, 1, batch_size);
}

std::string to_json(const TrainConfig& cfg) {
  ordered_json j;
  for_each_field(cfg, [&j](const char* key, const auto& value) {
    using V = std::decay_t<decltype(value)>;
    if constexpr (std::is_enum_v<V>) {
      j[key] = enum_name(value);
    } else {
      j[key] = value;
    }
  });
  return j.dump(2);
}

TrainConfig config_from_json(const std::string& text, TrainConfig base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  std::set<std::string> known;
  for_each_field(base, [&](const char* key, auto& value) {
    known.insert(key);
    if (const auto it = j.find(key); it != j.end()) read_value(key, *it, value);
  });
  for (const auto& item : j.items()) {
    if (!known.contains(item.key())) throw ConfigError("unknown config key '" + item.key() + "'");
  }
  return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str(), std::move(base));
}

// ---------------------------------------------------------------------------
// Batches and augmentation

namespace {

constexpr std::uint64_t kLabeledStream = 10;
constexpr std::uint64_t kUnlabeledStream = 11;
constexpr std::uint64_t kAugmentStream = 12;
constexpr std::uint64_t kStrongPartitionStream = 13;
constexpr std::uint64_t kWeakPartitionStream = 14;

const Sample* pick(std::span<const Sample* const> pool, const Rng& root, std::uint64_t stream, std::uint64_t index) {
  const std::uint64_t size = pool.size();
  const std::uint64_t epoch = index / size;
  std::vector<std::size_t> order(size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = root.derive(stream, epoch);
  rng.shuffle(std::span<std::size_t>(order));
  return pool[order[index % size]];
}

void jitter_in_place(ImageTensor& image, Rng& rng, double strength) {
  if (strength == 0.0) return;
  const auto brightness = static_cast<float>(1.0 + rng.uniform(-strength, strength));
  const auto contrast = static_cast<float>(1.0 + rng.uniform(-strength, strength));
  const auto saturation = static_cast<float>(1.0 + rng.uniform(-strength, strength));
  image.data *= brightness;
  const Eigen::RowVectorXf gray = 0.299f * image.data.row(0) + 0.587f * image.data.row(1) + 0.114f * image.data.row(2);
  const float mean = gray.mean();
  for (int c = 0; c < 3; ++c) {
    image.data.row(c) = (image.data.row(c) - gray) * saturation + gray;
    image.data.row(c) = (image.data.row(c).array() - mean) * contrast + mean;
  }
  image.data = image.data.cwiseMax(0.0f).cwiseMin(1.0f);
}

}  // namespace

int Batch::labeled_count() const {
  return static_cast<int>(std::count_if(items.begin(), items.end(), [](const BatchItem& b) { return b.is_labeled(); }));
}

Batch compose_batch(std::span<const Sample* const> labeled, std::span<const Sample* const> unlabeled,
                    const TrainConfig& cfg, std::uint64_t step) {
  if (labeled.empty()) throw DataError("compose_batch: labeled pool is empty");
  const Rng root(cfg.seed);
  const int n_labeled = cfg.labeled_per_batch(!unlabeled.empty());
  const int n_unlabeled = cfg.batch_size - n_labeled;
  Batch batch;
  for (int i = 0; i < n_labeled; ++i) {
    batch.items.push_back({pick(labeled, root, kLabeledStream, step * n_labeled + i)});
  }
  for (int i = 0; i < n_unlabeled; ++i) {
    batch.items.push_back({pick(unlabeled, root, kUnlabeledStream, step * n_unlabeled + i)});
  }
  return batch;
}

ImageTensor flip_horizontal(const ImageTensor& image) {
  ImageTensor out(image.channels, image.height, image.width);
  for (int c = 0; c < image.channels; ++c) {
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) out.at(c, y, x) = image.at(c, y, image.width - 1 - x);
    }
  }
  return out;
}

SparseDepth<float> flip_horizontal(const SparseDepth<float>& depth) {
  SparseDepth<float> out;
  out.values = depth.values.rowwise().reverse();
  out.valid = depth.valid.rowwise().reverse();
  return out;
}

AugmentedPair augment_pair(const ImageTensor& image, Rng& rng, const TrainConfig& cfg) {
  AugmentedPair pair;
  pair.flipped = cfg.flip && rng.bernoulli(0.5);
  pair.weak = pair.flipped ? flip_horizontal(image) : image;
  pair.strong = pair.weak;
  jitter_in_place(pair.weak, rng, cfg.jitter);
  jitter_in_place(pair.strong, rng, cfg.jitter);
  return pair;
}

// ---------------------------------------------------------------------------
// Training

StepRecord train_step(Model<float>& model, Adam& adam, const Batch& batch, const TrainConfig& cfg,
                      std::uint64_t step) {
  if (batch.items.empty()) throw DataError("train_step: empty batch");
  const LossWeights weights = cfg.loss_weights();
  weights.validate();
  const ModelConfig& mc = model.config();
  const Rng root(cfg.seed);
  const bool need_weak = cfg.lambda_dc > 0.0 || cfg.lambda_fc > 0.0;
  // Without a trained uncertainty head its output carries no information.
  const ConsistencyWeighting weighting =
      cfg.lambda_uc > 0.0 ? cfg.consistency_weighting : ConsistencyWeighting::none;

  struct Prepared {
    AugmentedPair views;
    std::optional<SparseDepth<float>> gt;
  };
  std::vector<Prepared> prepared;
  int n_supervised = 0;
  for (std::size_t i = 0; i < batch.items.size(); ++i) {
    const Sample& s = *batch.items[i].sample;
    Rng aug = root.derive(kAugmentStream, step).derive(i);
    Prepared p{augment_pair(s.image, aug, cfg), std::nullopt};
    if (s.depth && s.depth->valid_count() > 0) {
      p.gt = p.views.flipped ? flip_horizontal(*s.depth) : *s.depth;
      ++n_supervised;
    }
    prepared.push_back(std::move(p));
  }

  model.zero_grad();
  const auto batch_n = static_cast<float>(batch.items.size());
  double sum_gt = 0, sum_uc = 0, sum_dc = 0, sum_fc = 0;
  for (std::size_t i = 0; i < prepared.size(); ++i) {
    const Prepared& p = prepared[i];

    // Labeled samples are supervised on both branches, so the weak branch
    // keeps a cache for them. Its outputs stay constant targets for L_dc/L_fc.
    std::optional<ForwardOutput<float>> weak;
    Model<float>::Cache weak_cache;
    const bool weak_supervised = need_weak && p.gt.has_value();
    if (need_weak) {
      std::optional<Partition> weak_partition;
      if (cfg.weak_K > 1) {
        Rng r = root.derive(kWeakPartitionStream, step).derive(i);
        weak_partition = sample_partition(mc.num_tokens(), cfg.weak_K, r);
      }
      weak = model.forward(p.views.weak, weak_partition ? &*weak_partition : nullptr,
                           weak_supervised ? &weak_cache : nullptr);
    }

    std::optional<Partition> partition;
    if (cfg.strong_K > 1) {
      Rng r = root.derive(kStrongPartitionStream, step).derive(i);
      partition = sample_partition(mc.num_tokens(), cfg.strong_K, r);
    }
    Model<float>::Cache cache;
    const ForwardOutput<float> strong = model.forward(p.views.strong, partition ? &*partition : nullptr, &cache);

    Matrix<float> d_depth = Matrix<float>::Zero(mc.image_height, mc.image_width);
    Matrix<float> d_log_u;
    Matrix<float> d_features;
    if (p.gt) {
      const auto inv = 1.0f / static_cast<float>(n_supervised);
      // The uncertainty describes whichever branch produces the pseudo-labels.
      const ForwardOutput<float>& target_branch = weak_supervised ? *weak : strong;
      Matrix<float> d_weak_depth;
      Matrix<float> d_weak_log_u;
      const LossResult<float> gt = supervised_l1(strong.prediction.depth, *p.gt);
      if (weak_supervised) {
        const LossResult<float> gt_weak = supervised_l1(weak->prediction.depth, *p.gt);
        sum_gt += 0.5 * (gt.value + gt_weak.value);
        d_depth += 0.5f * inv * gt.grad_pred;
        d_weak_depth = 0.5f * inv * gt_weak.grad_pred;
      } else {
        sum_gt += gt.value;
        d_depth += inv * gt.grad_pred;
      }
      // An untrained uncertainty head can drift anywhere, so the term is
      // only evaluated when it is part of the objective.
      if (cfg.lambda_uc > 0.0) {
        const LossResult<float> uc = uncertainty_nll(target_branch.prediction.depth,
                                                     target_branch.prediction.log_uncertainty, *p.gt);
        sum_uc += uc.value;
        const auto scale = static_cast<float>(cfg.lambda_uc) * inv;
        if (weak_supervised) {
          d_weak_depth += scale * uc.grad_pred;
          d_weak_log_u = scale * uc.grad_log_u;
        } else {
          d_depth += scale * uc.grad_pred;
          d_log_u = scale * uc.grad_log_u;
        }
      }
      if (weak_supervised) model.backward(weak_cache, d_weak_depth, d_weak_log_u, Matrix<float>());
    }
    if (weak) {
      const LossResult<float> dc = depth_consistency(weak->prediction, strong.prediction.depth, weighting, true);
      sum_dc += dc.value;
      if (cfg.lambda_dc > 0.0) d_depth += static_cast<float>(cfg.lambda_dc) / batch_n * dc.grad_pred;

      const auto fc_scale = static_cast<float>(cfg.lambda_fc) / batch_n;
      if (cfg.predictor_head == PredictorKind::mlp) {
        PredictorHead<float>::Cache head_cache;
        const Matrix<float> predicted = model.predictor.forward(strong.features, &head_cache);
        const LossResult<float> fc = feature_consistency(weak->features, predicted, true);
        sum_fc += fc.value;
        if (cfg.lambda_fc > 0.0) d_features = model.predictor.backward(head_cache, fc_scale * fc.grad_pred);
      } else {
        const LossResult<float> fc = feature_consistency(weak->features, strong.features, true);
        sum_fc += fc.value;
        if (cfg.lambda_fc > 0.0) d_features = fc_scale * fc.grad_pred;
      }
    }
    model.backward(cache, d_depth, d_log_u, d_features);
  }

  LossTerms terms;
  if (n_supervised > 0) {
    terms.l_gt = sum_gt / n_supervised;
    terms.l_uc = sum_uc / n_supervised;
  }
  terms.l_dc = sum_dc / batch.items.size();
  terms.l_fc = sum_fc / batch.items.size();

  StepRecord record;
  record.step = step + 1;
  record.losses = total_loss(terms, weights);
  record.has_labels = n_supervised > 0;
  record.lr_enc = cfg.lr_encoder;
  record.lr_dec = cfg.lr_decoder;

  const LossBreakdown& l = record.losses;
  bool finite = std::isfinite(l.l_gt) && std::isfinite(l.l_dc) && std::isfinite(l.l_uc) && std::isfinite(l.l_fc) &&
                std::isfinite(l.total);
  std::string bad_grad;
  const auto params = model.parameters();
  for (const auto* param : params) {
    if (!param->grad.allFinite()) {
      bad_grad = param->name;
      finite = false;
      break;
    }
  }
  if (!finite) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << record.step << ": l_gt=" << l.l_gt << " l_dc=" << l.l_dc
        << " l_uc=" << l.l_uc << " l_fc=" << l.l_fc << " total=" << l.total;
    if (!bad_grad.empty()) msg << " (non-finite gradient in " << bad_grad << ")";
    throw NumericError(msg.str());
  }
  adam.step(params);
  return record;
}

std::string to_json_line(const StepRecord& record) {
  ordered_json j;
  j["step"] = record.step;
  j["l_gt"] = record.has_labels ? ordered_json(record.losses.l_gt) : ordered_json(nullptr);
  j["l_dc"] = record.losses.l_dc;
  j["l_uc"] = record.has_labels ? ordered_json(record.losses.l_uc) : ordered_json(nullptr);
  j["l_fc"] = record.losses.l_fc;
  j["total"] = record.losses.total;
  j["lr_enc"] = record.lr_enc;
  j["lr_dec"] = record.lr_dec;
  return j.dump();
}

std::string to_json_line(std::uint64_t step, const DepthMetrics& m) {
  ordered_json j;
  j["step"] = step;
  j["abs_rel"] = m.abs_rel;
  j["sq_rel"] = m.sq_rel;
  j["rmse"] = m.rmse;
  j["rmse_log"] = m.rmse_log;
  j["delta1"] = m.delta1;
  j["delta2"] = m.delta2;
  j["delta3"] = m.delta3;
  j["log10"] = m.log10;
  return j.dump();
}

FitResult fit(const TrainConfig& cfg, std::span<const Sample> train, std::span<const Sample> eval,
              const FitOptions& options) {
  cfg.validate();
  std::vector<const Sample*> labeled;
  std::vector<const Sample*> unlabeled;
  for (const auto& s : train) (s.depth ? labeled : unlabeled).push_back(&s);
  if (labeled.empty()) throw DataError("training set has no labeled samples");
  if (!unlabeled.empty() && cfg.batch_size < 2) {
    throw ConfigError("batch_size must be at least 2 when unlabeled data is present");
  }
  const bool can_eval =
      std::any_of(eval.begin(), eval.end(), [](const Sample& s) { return s.depth.has_value(); });
  const EvalProtocol protocol{cfg.eval_cap};

  Model<float> model(cfg.model_config());
  model.init(cfg.seed);
  Adam adam(cfg.adam_config());
  std::uint64_t start = 0;
  if (options.resume) {
    const Checkpoint ckpt = load_checkpoint(*options.resume);
    apply_checkpoint(ckpt, model, adam);
    start = ckpt.step;
  }

  std::filesystem::create_directories(options.out_dir);
  const std::filesystem::path log_path = options.out_dir / "log.jsonl";
  std::ofstream log(log_path, options.resume ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError("cannot write log " + log_path.string());
  const auto emit = [&](const std::string& line) {
    log << line << '\n';
    log.flush();
    if (options.echo != nullptr) *options.echo << line << '\n';
  };

  FitResult result;
  result.checkpoint = options.out_dir / "checkpoint.bin";
  const std::string config_echo = to_json(cfg);
  const auto save = [&](std::uint64_t step) {
    save_checkpoint(result.checkpoint, make_checkpoint(model, adam, step, config_echo));
  };

  const auto total = static_cast<std::uint64_t>(cfg.steps);
  std::optional<std::uint64_t> last_eval;
  for (std::uint64_t step = start; step < total; ++step) {
    const Batch batch = compose_batch(labeled, unlabeled, cfg, step);
    const StepRecord record = train_step(model, adam, batch, cfg, step);
    result.last = record;
    const std::uint64_t done = step + 1;
    if (done % static_cast<std::uint64_t>(cfg.log_every) == 0 || done == total) emit(to_json_line(record));
    if (can_eval && cfg.eval_every > 0 && done % static_cast<std::uint64_t>(cfg.eval_every) == 0) {
      result.final_metrics = evaluate(model, eval, protocol);
      emit(to_json_line(done, *result.final_metrics));
      last_eval = done;
    }
    if (cfg.checkpoint_every > 0 && done % static_cast<std::uint64_t>(cfg.checkpoint_every) == 0) save(done);
  }
  result.steps_done = std::max(start, total);
  if (can_eval && last_eval != result.steps_done) {
    result.final_metrics = evaluate(model, eval, protocol);
    emit(to_json_line(result.steps_done, *result.final_metrics));
  }
  save(result.steps_done);
  return result;
}

Model<float> model_from_checkpoint(const Checkpoint& ckpt) {
  const TrainConfig cfg = config_from_json(ckpt.config_json);
  Model<float> model(cfg.model_config());
  apply_checkpoint(ckpt, model);
  return model;
}

}  // namespace maskdepth

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ser/autograd.hpp"
#include "ser/dsp.hpp"
#include "ser/emotion.hpp"

namespace ser::model {

using ag::Index;
using ag::Mode;
using ag::NamedTensors;
using ag::Tensor;

/// Which losses supervise training: softmax (S), reconstruction (A), center (C).
enum class Variant { S, SA, SC, SAC };

inline constexpr std::array<Variant, 4> kAllVariants = {Variant::S, Variant::SA, Variant::SC, Variant::SAC};

constexpr bool has_decoder(Variant v) { return v == Variant::SA || v == Variant::SAC; }
constexpr bool has_centers(Variant v) { return v == Variant::SC || v == Variant::SAC; }
std::string variant_name(Variant v);  // "S", "S+A", "S+C", "S+A+C"
Variant parse_variant(const std::string& s);  // case-insensitive

enum class CenterMetric { L2, L1 };

/// Placement of batch norm inside the classifier and decoder FC blocks.
enum class FcOrder { BatchNormThenRelu, ReluThenBatchNorm };

struct KernelSize {
  int height = 0;
  int width = 0;
  bool operator==(const KernelSize&) const = default;
};

struct ModelConfig {
  Variant variant = Variant::S;
  dsp::FeatureKind input_kind = dsp::FeatureKind::MelSpectrogram;
  int input_rows = dsp::kMelBands;
  int input_cols = 188;
  int kernels_per_path = 200;
  std::vector<KernelSize> kernel_sizes = {{4, 6}, {6, 8}, {8, 10}, {10, 12}};
  int fc_width = 64;
  double dropout_rate = 0.5;
  double lambda1 = 4.0;
  double lambda2 = 1.0;
  CenterMetric center_metric = CenterMetric::L2;
  std::vector<int> decoder_hidden = {256};
  FcOrder fc_order = FcOrder::BatchNormThenRelu;
  double bn_momentum = 0.9;
  double bn_epsilon = 1e-5;
  std::uint64_t seed = 0;

  /// Defaults for a feature kind: 128 x 188 spectrogram or 40 x 188 MFCC.
  static ModelConfig defaults(dsp::FeatureKind kind, Variant variant = Variant::S);

  /// Throws InvalidConfig or KernelTooLarge.
  void validate() const;
};

std::string fc_order_name(FcOrder order);  // "bn-relu" or "relu-bn"
FcOrder parse_fc_order(const std::string& name);

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& text);

/// Per-path conv output and pooling window; pooled output is always 2 x 2.
struct PathGeometry {
  KernelSize kernel;
  Index conv_rows = 0, conv_cols = 0;
  Index pool_rows = 0, pool_cols = 0;
};

template <typename T>
class Model {
 public:
  /// Deterministic from cfg.seed: each tensor draws from a stream keyed by its
  /// name, so shared parts are identical across variants.
  explicit Model(const ModelConfig& cfg);

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const std::array<PathGeometry, 4>& geometry() const { return geometry_; }
  Index concat_width() const { return 4 * Index(cfg_.kernels_per_path) * 4; }
  Index embedding_width() const { return cfg_.fc_width; }
  Index input_size() const { return Index(cfg_.input_rows) * cfg_.input_cols; }
  bool has_decoder() const { return model::has_decoder(cfg_.variant); }
  bool has_centers() const { return model::has_centers(cfg_.variant); }

  /// Conv -> relu -> maxpool per path, flattened and concatenated: [n x 16K].
  Tensor<T> trunk_features(const Tensor<T>& x) const;
  /// Classifier FC stack on the concatenated features: linear, then batchnorm
  /// and relu in fc_order. The result is the deep feature f(x) used by the
  /// center loss.
  Tensor<T> embed(const Tensor<T>& features, Mode mode);
  /// trunk_features followed by embed.
  Tensor<T> forward_trunk(const Tensor<T>& x, Mode mode);
  /// Dropout then a single linear map to four logits.
  Tensor<T> forward_logits(const Tensor<T>& embedding, Mode mode);
  /// Independent upper FC layer and decoder chain; sigmoid output [n x H*W].
  Tensor<T> forward_reconstruction(const Tensor<T>& features, Mode mode);

  const Tensor<T>& centers() const;

  /// Trainable tensors by name, ClassCenters included when present.
  NamedTensors<T> parameters() const { return params_; }
  /// parameters() plus batch-norm running statistics, for checkpoints.
  NamedTensors<T> state() const;
  void load_state(const std::map<std::string, ag::CheckpointRecord>& records);

  using Snapshot = std::map<std::string, ag::Vector<T>>;
  Snapshot snapshot() const;
  void restore(const Snapshot& snap);

  void reseed_dropout(std::uint64_t seed);

  /// Running sums of the inputs to each batch-norm layer.
  struct BatchNormCensus {
    Eigen::VectorXd cls_sum, cls_square, dec_sum, dec_square;
    double count = 0.0;
  };
  /// Adds the pre-normalization activations for one batch of trunk features.
  void tally_batchnorm(const Tensor<T>& features, BatchNormCensus& census) const;
  /// Replaces the running statistics with the census mean and biased variance.
  void apply_batchnorm(const BatchNormCensus& census);

  /// Trainable scalars excluding ClassCenters and running statistics.
  Index param_count() const;

 private:
  const Tensor<T>& p(const std::string& name) const { return params_.at(name); }

  ModelConfig cfg_;
  std::array<PathGeometry, 4> geometry_{};
  NamedTensors<T> params_;
  ag::BatchNormState<T> cls_bn_;
  ag::BatchNormState<T> dec_bn_;
  Rng cls_dropout_rng_;
  Rng dec_dropout_rng_;
};

template <typename T>
Model<T> build_model(const ModelConfig& cfg) {
  return Model<T>(cfg);
}

/// Stacks scaled features into [n x 1 x H x W]; throws ShapeMismatch.
template <typename T>
Tensor<T> make_input(std::span<const dsp::FeatureMatrix* const> features, const ModelConfig& cfg);
template <typename T>
Tensor<T> make_input(const dsp::FeatureMatrix& feature, const ModelConfig& cfg);

/// L2: 1/2 sum_i ||f_i - c_{y_i}||^2.  L1: sum_i ||f_i - c_{y_i}||_1.
template <typename T>
Tensor<T> center_loss(const Tensor<T>& embeddings, std::span<const int> labels, const Tensor<T>& centers,
                      CenterMetric metric);

/// L = L_S + lambda1 L_C + lambda2 L_A; the supplied terms must match the variant.
template <typename T>
Tensor<T> joint_loss(const ModelConfig& cfg, const Tensor<T>& softmax_loss,
                     const std::optional<Tensor<T>>& center_term,
                     const std::optional<Tensor<T>>& reconstruction_term);

template <typename T>
Index param_count(const Model<T>& model) {
  return model.param_count();
}

/// Eval-mode argmax; ties go to the lowest class index.
template <typename T>
EmotionClass predict(Model<T>& model, const dsp::FeatureMatrix& x);

/// Argmax per row with lowest-index tie-break.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits);

}  // namespace ser::model

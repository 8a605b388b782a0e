#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ser/audio.hpp"
#include "ser/dsp.hpp"
#include "ser/model.hpp"

namespace ser::train {

using ag::Index;
using ag::Vector;
using model::Model;
using model::ModelConfig;

// ---------------------------------------------------------------------------
// Adadelta

template <typename T>
struct AdadeltaState {
  double rho = 0.95;
  double epsilon = 1e-6;
  std::map<std::string, Vector<T>> mean_sq_grad;   // E[g^2]
  std::map<std::string, Vector<T>> mean_sq_delta;  // E[dx^2]
};

/// One Adadelta step on a flat buffer:
///   E[g^2] <- rho E[g^2] + (1 - rho) g^2
///   dx     <- -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
///   E[dx^2] <- rho E[dx^2] + (1 - rho) dx^2
///   x      <- x + dx
template <typename T>
void adadelta_update(Eigen::Ref<Vector<T>> x, const Eigen::Ref<const Vector<T>>& grad, Vector<T>& mean_sq_grad,
                     Vector<T>& mean_sq_delta, T rho, T epsilon) {
  if (mean_sq_grad.size() != x.size()) mean_sq_grad = Vector<T>::Zero(x.size());
  if (mean_sq_delta.size() != x.size()) mean_sq_delta = Vector<T>::Zero(x.size());
  mean_sq_grad = rho * mean_sq_grad + (T(1) - rho) * grad.cwiseAbs2();
  const Vector<T> delta = -((mean_sq_delta.array() + epsilon).sqrt() / (mean_sq_grad.array() + epsilon).sqrt() *
                            grad.array())
                               .matrix();
  mean_sq_delta = rho * mean_sq_delta + (T(1) - rho) * delta.cwiseAbs2();
  x += delta;
}

/// Applies adadelta_update to every tensor using its accumulated gradient.
/// Throws NonFiniteGradient before touching any parameter.
template <typename T>
void adadelta_step(ag::NamedTensors<T>& params, AdadeltaState<T>& state);

// ---------------------------------------------------------------------------
// Features

/// Scaled feature matrices keyed by entry_key().
class FeatureStore {
 public:
  void insert(std::string key, dsp::FeatureMatrix feature);
  bool contains(const std::string& key) const { return features_.count(key) != 0; }
  const dsp::FeatureMatrix& at(const std::string& key) const;
  const dsp::FeatureMatrix& at(const audio::DatasetEntry& entry) const { return at(audio::entry_key(entry)); }
  std::size_t size() const { return features_.size(); }

  /// Reads <dir>/<key>.serf for every manifest entry; MissingFeature if absent.
  static FeatureStore load(const std::filesystem::path& dir, const audio::CorpusManifest& manifest);

 private:
  std::map<std::string, dsp::FeatureMatrix> features_;
};

std::filesystem::path feature_path(const std::filesystem::path& dir, const audio::DatasetEntry& entry);

/// Loads, duration-fits and featurizes every clip, writing one SERF file each.
void build_feature_cache(const audio::CorpusManifest& manifest, dsp::FeatureKind kind,
                         const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Protocol

struct FoldPlan {
  int fold_index = 1;
  std::vector<int> train_sessions;
  int held_out_session = 1;
  std::string val_speaker;
  std::string test_speaker;
};

/// Fold i holds out session i; its lexicographically first speaker validates
/// and the second tests.
std::vector<FoldPlan> make_fold_plans(const audio::CorpusManifest& manifest);

enum class Split { Train, Validation, Test };

std::vector<audio::DatasetEntry> select_entries(const audio::CorpusManifest& manifest, const FoldPlan& plan,
                                                Split split);

struct EpochLosses {
  int epoch = 0;
  double total = 0.0;
  double softmax = 0.0;
  double center = 0.0;
  double mse = 0.0;
};

struct FoldMetrics {
  int fold = 0;
  double overall_accuracy = 0.0;
  double class_accuracy = 0.0;
  std::array<std::array<long, kNumClasses>, kNumClasses> confusion{};  // [true][predicted]
  std::optional<double> reconstruction_mse;
  std::vector<EpochLosses> train_curve;
  int best_epoch = 0;
};

/// Overall = correct / total; class = mean recall over classes present.
FoldMetrics metrics_from_predictions(std::span<const int> labels, std::span<const int> predictions);

struct TrainOptions {
  int epochs = 50;
  int batch_size = 16;
  std::uint64_t seed = 0;
  int patience = 10;  // epochs without validation improvement before stopping
  double rho = 0.95;
  double epsilon = 1e-6;
  /// Called with (fold index, batch entries) before every optimizer step.
  std::function<void(int, std::span<const audio::DatasetEntry* const>)> on_batch;
  /// Called after every epoch with its losses and the validation class
  /// accuracy (NaN without a validation set).
  std::function<void(const EpochLosses&, double)> on_epoch;
  /// Stop once validation class accuracy reaches this value.
  std::optional<double> target_score;
};

template <typename T>
struct TrainResult {
  Model<T> model;
  std::vector<EpochLosses> curve;
  int best_epoch = 0;
};

/// Seeded mini-batch training with early stopping on validation class
/// accuracy (disabled when `validation` is empty). A trailing batch of one is
/// merged into the previous batch because batch norm needs two rows.
template <typename T>
TrainResult<T> train_model(const ModelConfig& cfg, std::span<const audio::DatasetEntry> training,
                           std::span<const audio::DatasetEntry> validation, const FeatureStore& features,
                           const TrainOptions& options, int fold_index = 0);

template <typename T>
FoldMetrics evaluate(Model<T>& model, std::span<const audio::DatasetEntry> entries, const FeatureStore& features);

template <typename T>
struct FitResult {
  Model<T> model;
  FoldMetrics metrics;
};

template <typename T>
FitResult<T> fit(const ModelConfig& cfg, const FoldPlan& plan, const audio::CorpusManifest& manifest,
                 const FeatureStore& features, const TrainOptions& options);

struct CvResult {
  model::Variant variant = model::Variant::S;
  dsp::FeatureKind input_kind = dsp::FeatureKind::MelSpectrogram;
  std::vector<FoldMetrics> folds;
  double mean_overall = 0.0;
  double mean_class = 0.0;
  std::optional<double> mean_reconstruction_mse;
};

/// Runs fit on all five folds; `jobs` > 1 trains folds concurrently.
template <typename T>
CvResult cross_validate(const ModelConfig& cfg, const audio::CorpusManifest& manifest, const FeatureStore& features,
                        const TrainOptions& options, int jobs = 1);

// CSV: variant,input,fold,overall_acc,class_acc,recon_mse
void write_report_header(std::ostream& out);
void write_report_rows(std::ostream& out, const CvResult& result);
void write_metrics_row(std::ostream& out, model::Variant variant, dsp::FeatureKind kind, const std::string& fold,
                       const FoldMetrics& metrics);
// CSV: epoch,loss_total,loss_softmax,loss_center,loss_mse
void write_curve(std::ostream& out, const std::vector<EpochLosses>& curve);

std::string format_number(double v);

}  // namespace ser::train

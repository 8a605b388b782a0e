#include "ser/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>
#include <limits>
#include <numeric>
#include <set>

namespace ser::train {

namespace fs = std::filesystem;

template <typename T>
void adadelta_step(ag::NamedTensors<T>& params, AdadeltaState<T>& state) {
  for (auto& [name, t] : params) {
    if (t.has_grad() && !t.grad().allFinite()) {
      throw Error(ErrorCode::NonFiniteGradient, "gradient of '" + name + "' is not finite");
    }
  }
  for (auto& [name, t] : params) {
    if (!t.has_grad()) {
      // A parameter outside the loss graph still sees its accumulators decay.
      const Vector<T> zero = Vector<T>::Zero(t.size());
      adadelta_update<T>(t.mutable_values(), zero, state.mean_sq_grad[name], state.mean_sq_delta[name],
                         T(state.rho), T(state.epsilon));
      continue;
    }
    adadelta_update<T>(t.mutable_values(), t.mutable_grad(), state.mean_sq_grad[name], state.mean_sq_delta[name],
                       T(state.rho), T(state.epsilon));
  }
}

void FeatureStore::insert(std::string key, dsp::FeatureMatrix feature) {
  features_.insert_or_assign(std::move(key), std::move(feature));
}

const dsp::FeatureMatrix& FeatureStore::at(const std::string& key) const {
  auto it = features_.find(key);
  if (it == features_.end()) throw Error(ErrorCode::MissingFeature, "no cached feature for '" + key + "'");
  return it->second;
}

fs::path feature_path(const fs::path& dir, const audio::DatasetEntry& entry) {
  return dir / (audio::entry_key(entry) + ".serf");
}

FeatureStore FeatureStore::load(const fs::path& dir, const audio::CorpusManifest& manifest) {
  FeatureStore store;
  for (const auto& e : manifest.entries) {
    const fs::path path = feature_path(dir, e);
    if (!fs::exists(path)) throw Error(ErrorCode::MissingFeature, path.string());
    store.insert(audio::entry_key(e), dsp::read_serf(path));
  }
  return store;
}

void build_feature_cache(const audio::CorpusManifest& manifest, dsp::FeatureKind kind, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + out_dir.string());
  for (const auto& e : manifest.entries) {
    const auto clip = audio::fit_duration(audio::load_wav(manifest.resolve(e)));
    dsp::write_serf(feature_path(out_dir, e), dsp::featurize(clip, kind));
  }
}

std::vector<FoldPlan> make_fold_plans(const audio::CorpusManifest& manifest) {
  std::map<int, std::set<std::string>> speakers;
  for (const auto& e : manifest.entries) speakers[e.session].insert(e.speaker);
  for (int s = 1; s <= 5; ++s) {
    if (!speakers.count(s)) {
      throw Error(ErrorCode::InsufficientSessions,
                  "five-fold protocol needs sessions 1..5; session " + std::to_string(s) + " is empty");
    }
  }
  std::vector<FoldPlan> plans;
  for (int s = 1; s <= 5; ++s) {
    const auto& spk = speakers[s];
    if (spk.size() < 2) {
      throw Error(ErrorCode::InsufficientSpeakers, "session " + std::to_string(s) + " has fewer than two speakers");
    }
    FoldPlan plan;
    plan.fold_index = s;
    plan.held_out_session = s;
    for (int t = 1; t <= 5; ++t) {
      if (t != s) plan.train_sessions.push_back(t);
    }
    auto it = spk.begin();
    plan.val_speaker = *it++;
    plan.test_speaker = *it;
    plans.push_back(std::move(plan));
  }
  return plans;
}

std::vector<audio::DatasetEntry> select_entries(const audio::CorpusManifest& manifest, const FoldPlan& plan,
                                                Split split) {
  std::vector<audio::DatasetEntry> out;
  for (const auto& e : manifest.entries) {
    bool take = false;
    switch (split) {
      case Split::Train:
        take = std::find(plan.train_sessions.begin(), plan.train_sessions.end(), e.session) !=
               plan.train_sessions.end();
        break;
      case Split::Validation:
        take = e.session == plan.held_out_session && e.speaker == plan.val_speaker;
        break;
      case Split::Test:
        take = e.session == plan.held_out_session && e.speaker == plan.test_speaker;
        break;
    }
    if (take) out.push_back(e);
  }
  return out;
}

FoldMetrics metrics_from_predictions(std::span<const int> labels, std::span<const int> predictions) {
  if (labels.empty()) throw Error(ErrorCode::EmptyEvaluationSet, "no samples to evaluate");
  if (labels.size() != predictions.size()) throw Error(ErrorCode::ShapeMismatch, "label/prediction count mismatch");
  FoldMetrics m;
  long correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = predictions[i];
    if (y < 0 || y >= kNumClasses || p < 0 || p >= kNumClasses) {
      throw Error(ErrorCode::LabelOutOfRange, "class index out of range");
    }
    ++m.confusion[static_cast<std::size_t>(y)][static_cast<std::size_t>(p)];
    if (y == p) ++correct;
  }
  m.overall_accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  double recall_sum = 0.0;
  int present = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const long support = std::accumulate(m.confusion[c].begin(), m.confusion[c].end(), 0L);
    if (support == 0) continue;
    recall_sum += static_cast<double>(m.confusion[c][c]) / static_cast<double>(support);
    ++present;
  }
  m.class_accuracy = recall_sum / present;
  return m;
}

namespace {

template <typename T>
struct BatchLosses {
  ag::Tensor<T> total;
  double softmax = 0.0, center = 0.0, mse = 0.0;
};

template <typename T>
BatchLosses<T> batch_loss(Model<T>& model, std::span<const audio::DatasetEntry* const> batch,
                          const FeatureStore& features) {
  const ModelConfig& cfg = model.config();
  std::vector<const dsp::FeatureMatrix*> xs;
  std::vector<int> labels;
  for (const auto* e : batch) {
    xs.push_back(&features.at(*e));
    labels.push_back(class_index(e->label));
  }
  const auto x = model::make_input<T>(xs, cfg);
  const auto concat = model.trunk_features(x);
  const auto embedding = model.embed(concat, ag::Mode::Train);
  const auto logits = model.forward_logits(embedding, ag::Mode::Train);

  BatchLosses<T> out;
  const auto softmax = ag::softmax_cross_entropy<T>(logits, labels);
  out.softmax = static_cast<double>(softmax.item());
  std::optional<ag::Tensor<T>> center, recon;
  if (model.has_centers()) {
    center = model::center_loss<T>(embedding, labels, model.centers(), cfg.center_metric);
    out.center = static_cast<double>(center->item());
  }
  if (model.has_decoder()) {
    const auto target = ag::Tensor<T>({x.dim(0), model.input_size()}, x.values());
    recon = ag::mse_loss(model.forward_reconstruction(concat, ag::Mode::Train), target);
    out.mse = static_cast<double>(recon->item());
  }
  out.total = model::joint_loss<T>(cfg, softmax, center, recon);
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch_size) {
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (std::size_t start = 0; start < n; start += batch_size) {
    ranges.emplace_back(start, std::min(n, start + batch_size));
  }
  if (ranges.size() > 1 && ranges.back().second - ranges.back().first == 1) {
    ranges.pop_back();
    ranges.back().second = n;
  }
  return ranges;
}

constexpr std::size_t kEvalBatch = 32;

// Running averages lag the pre-normalization activations, whose mean drifts
// several batch standard deviations within a few Adadelta steps. Evaluation
// therefore uses the exact training-set statistics of the current weights.
template <typename T>
void refresh_batchnorm(Model<T>& model, std::span<const audio::DatasetEntry> training,
                       const FeatureStore& features) {
  typename Model<T>::BatchNormCensus census;
  for (std::size_t start = 0; start < training.size(); start += kEvalBatch) {
    const std::size_t end = std::min(training.size(), start + kEvalBatch);
    std::vector<const dsp::FeatureMatrix*> xs;
    for (std::size_t i = start; i < end; ++i) xs.push_back(&features.at(training[i]));
    model.tally_batchnorm(model.trunk_features(model::make_input<T>(xs, model.config())), census);
  }
  model.apply_batchnorm(census);
}

}  // namespace

template <typename T>
TrainResult<T> train_model(const ModelConfig& cfg, std::span<const audio::DatasetEntry> training,
                           std::span<const audio::DatasetEntry> validation, const FeatureStore& features,
                           const TrainOptions& options, int fold_index) {
  if (options.batch_size < 2) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 2");
  if (training.size() < 2) throw Error(ErrorCode::BatchTooSmall, "need at least two training samples");
  if (options.epochs < 1) throw Error(ErrorCode::InvalidConfig, "epochs must be >= 1");
  for (const auto& e : training) features.at(e);
  for (const auto& e : validation) features.at(e);

  TrainResult<T> result{Model<T>(cfg), {}, 0};
  Model<T>& model = result.model;
  model.reseed_dropout(mix_seed(cfg.seed, options.seed));
  auto params = model.parameters();
  AdadeltaState<T> state;
  state.rho = options.rho;
  state.epsilon = options.epsilon;

  Rng shuffle_rng(mix_seed(options.seed, hash_name("shuffle")));
  std::vector<const audio::DatasetEntry*> order;
  for (const auto& e : training) order.push_back(&e);

  double best_score = -1.0;
  std::optional<typename Model<T>::Snapshot> best;
  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    shuffle_rng.shuffle(order.begin(), order.end());
    EpochLosses losses;
    losses.epoch = epoch;
    const auto ranges = batch_ranges(order.size(), static_cast<std::size_t>(options.batch_size));
    for (const auto& [begin, end] : ranges) {
      std::span<const audio::DatasetEntry* const> batch(order.data() + begin, end - begin);
      if (options.on_batch) options.on_batch(fold_index, batch);
      auto loss = batch_loss(model, batch, features);
      const double total = static_cast<double>(loss.total.item());
      if (!std::isfinite(total)) {
        throw Error(ErrorCode::DivergedLoss, "non-finite loss at epoch " + std::to_string(epoch));
      }
      for (auto& [name, t] : params) t.zero_grad();
      ag::backward(loss.total);
      adadelta_step(params, state);
      losses.total += total;
      losses.softmax += loss.softmax;
      losses.center += loss.center;
      losses.mse += loss.mse;
    }
    const auto batches = static_cast<double>(ranges.size());
    losses.total /= batches;
    losses.softmax /= batches;
    losses.center /= batches;
    losses.mse /= batches;
    result.curve.push_back(losses);
    if (!validation.empty() || epoch == options.epochs) refresh_batchnorm(model, training, features);

    if (validation.empty()) {
      result.best_epoch = epoch;
      if (options.on_epoch) options.on_epoch(losses, std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double score = evaluate(model, validation, features).class_accuracy;
    if (options.on_epoch) options.on_epoch(losses, score);
    if (score > best_score) {
      best_score = score;
      best = model.snapshot();
      result.best_epoch = epoch;
      if (options.target_score && score >= *options.target_score) break;
    } else if (epoch - result.best_epoch >= options.patience) {
      break;
    }
  }
  if (best) model.restore(*best);
  return result;
}

template <typename T>
FoldMetrics evaluate(Model<T>& model, std::span<const audio::DatasetEntry> entries, const FeatureStore& features) {
  if (entries.empty()) throw Error(ErrorCode::EmptyEvaluationSet, "no entries to evaluate");
  std::vector<int> labels, predictions;
  double squared_error = 0.0;
  for (std::size_t start = 0; start < entries.size(); start += kEvalBatch) {
    const std::size_t end = std::min(entries.size(), start + kEvalBatch);
    std::vector<const dsp::FeatureMatrix*> xs;
    for (std::size_t i = start; i < end; ++i) {
      xs.push_back(&features.at(entries[i]));
      labels.push_back(class_index(entries[i].label));
    }
    const auto x = model::make_input<T>(xs, model.config());
    const auto concat = model.trunk_features(x);
    const auto logits = model.forward_logits(model.embed(concat, ag::Mode::Eval), ag::Mode::Eval);
    for (int p : model::argmax_rows(logits)) predictions.push_back(p);
    if (model.has_decoder()) {
      const auto recon = model.forward_reconstruction(concat, ag::Mode::Eval);
      squared_error += static_cast<double>((recon.values() - x.values()).squaredNorm());
    }
  }
  FoldMetrics m = metrics_from_predictions(labels, predictions);
  if (model.has_decoder()) {
    m.reconstruction_mse = squared_error / (static_cast<double>(entries.size()) * static_cast<double>(model.input_size()));
  }
  return m;
}

template <typename T>
FitResult<T> fit(const ModelConfig& cfg, const FoldPlan& plan, const audio::CorpusManifest& manifest,
                 const FeatureStore& features, const TrainOptions& options) {
  const auto training = select_entries(manifest, plan, Split::Train);
  const auto validation = select_entries(manifest, plan, Split::Validation);
  const auto test = select_entries(manifest, plan, Split::Test);
  auto trained = train_model<T>(cfg, training, validation, features, options, plan.fold_index);
  FoldMetrics metrics = evaluate(trained.model, test, features);
  metrics.fold = plan.fold_index;
  metrics.train_curve = std::move(trained.curve);
  metrics.best_epoch = trained.best_epoch;
  return {std::move(trained.model), std::move(metrics)};
}

template <typename T>
CvResult cross_validate(const ModelConfig& cfg, const audio::CorpusManifest& manifest, const FeatureStore& features,
                        const TrainOptions& options, int jobs) {
  const auto plans = make_fold_plans(manifest);
  CvResult result;
  result.variant = cfg.variant;
  result.input_kind = cfg.input_kind;
  result.folds.resize(plans.size());
  auto run = [&](std::size_t i) { result.folds[i] = fit<T>(cfg, plans[i], manifest, features, options).metrics; };
  if (jobs <= 1) {
    for (std::size_t i = 0; i < plans.size(); ++i) run(i);
  } else {
    for (std::size_t start = 0; start < plans.size(); start += static_cast<std::size_t>(jobs)) {
      std::vector<std::future<void>> pending;
      for (std::size_t i = start; i < std::min(plans.size(), start + static_cast<std::size_t>(jobs)); ++i) {
        pending.push_back(std::async(std::launch::async, run, i));
      }
      for (auto& f : pending) f.get();
    }
  }
  double overall = 0.0, cls = 0.0, mse = 0.0;
  for (const auto& f : result.folds) {
    overall += f.overall_accuracy;
    cls += f.class_accuracy;
    if (f.reconstruction_mse) mse += *f.reconstruction_mse;
  }
  const auto n = static_cast<double>(result.folds.size());
  result.mean_overall = overall / n;
  result.mean_class = cls / n;
  if (model::has_decoder(cfg.variant)) result.mean_reconstruction_mse = mse / n;
  return result;
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_report_header(std::ostream& out) { out << "variant,input,fold,overall_acc,class_acc,recon_mse\n"; }

void write_metrics_row(std::ostream& out, model::Variant variant, dsp::FeatureKind kind, const std::string& fold,
                       const FoldMetrics& m) {
  out << model::variant_name(variant) << ',' << dsp::feature_kind_name(kind) << ',' << fold << ','
      << format_number(m.overall_accuracy) << ',' << format_number(m.class_accuracy) << ','
      << (m.reconstruction_mse ? format_number(*m.reconstruction_mse) : std::string()) << '\n';
}

void write_report_rows(std::ostream& out, const CvResult& result) {
  for (const auto& f : result.folds) {
    write_metrics_row(out, result.variant, result.input_kind, std::to_string(f.fold), f);
  }
  FoldMetrics mean;
  mean.overall_accuracy = result.mean_overall;
  mean.class_accuracy = result.mean_class;
  mean.reconstruction_mse = result.mean_reconstruction_mse;
  write_metrics_row(out, result.variant, result.input_kind, "mean", mean);
}

void write_curve(std::ostream& out, const std::vector<EpochLosses>& curve) {
  out << "epoch,loss_total,loss_softmax,loss_center,loss_mse\n";
  for (const auto& e : curve) {
    out << e.epoch << ',' << format_number(e.total) << ',' << format_number(e.softmax) << ','
        << format_number(e.center) << ',' << format_number(e.mse) << '\n';
  }
}

#define SER_TRAIN_INSTANTIATE(T)                                                                                \
  template void adadelta_step(ag::NamedTensors<T>&, AdadeltaState<T>&);                                        \
  template TrainResult<T> train_model(const ModelConfig&, std::span<const audio::DatasetEntry>,                 \
                                      std::span<const audio::DatasetEntry>, const FeatureStore&,                \
                                      const TrainOptions&, int);                                                \
  template FoldMetrics evaluate(Model<T>&, std::span<const audio::DatasetEntry>, const FeatureStore&);          \
  template FitResult<T> fit(const ModelConfig&, const FoldPlan&, const audio::CorpusManifest&,                  \
                            const FeatureStore&, const TrainOptions&);                                          \
  template CvResult cross_validate<T>(const ModelConfig&, const audio::CorpusManifest&, const FeatureStore&,   \
                                      const TrainOptions&, int);

SER_TRAIN_INSTANTIATE(float)
SER_TRAIN_INSTANTIATE(double)

#undef SER_TRAIN_INSTANTIATE

}  // namespace ser::train

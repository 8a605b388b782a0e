#include "ser/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "json.hpp"

namespace ser::model {

using ag::Vector;

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::S: return "S";
    case Variant::SA: return "S+A";
    case Variant::SC: return "S+C";
    case Variant::SAC: return "S+A+C";
  }
  return "S";
}

Variant parse_variant(const std::string& s) {
  std::string upper = s;
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  for (auto v : kAllVariants) {
    if (variant_name(v) == upper) return v;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown variant '" + s + "' (expected s, s+a, s+c or s+a+c)");
}

ModelConfig ModelConfig::defaults(dsp::FeatureKind kind, Variant variant) {
  ModelConfig cfg;
  cfg.variant = variant;
  cfg.input_kind = kind;
  cfg.input_rows = dsp::feature_rows(kind);
  return cfg;
}

namespace {

PathGeometry path_geometry(const KernelSize& k, int rows, int cols) {
  PathGeometry g;
  g.kernel = k;
  g.conv_rows = rows - k.height + 1;
  g.conv_cols = cols - k.width + 1;
  g.pool_rows = g.conv_rows / 2;
  g.pool_cols = g.conv_cols / 2;
  return g;
}

}  // namespace

void ModelConfig::validate() const {
  auto invalid = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (kernel_sizes.size() != 4) invalid("exactly 4 kernel sizes are required");
  if (input_rows < 1 || input_cols < 1) invalid("input dimensions must be positive");
  if (kernels_per_path < 1) invalid("kernels_per_path must be >= 1");
  if (fc_width < 1) invalid("fc_width must be >= 1");
  if (dropout_rate < 0.25 || dropout_rate > 0.75) invalid("dropout_rate must be in [0.25, 0.75]");
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) invalid("lambda1 and lambda2 must be >= 0");
  for (int h : decoder_hidden) {
    if (h < 1) invalid("decoder hidden widths must be >= 1");
  }
  if (!(bn_momentum >= 0.0 && bn_momentum < 1.0) || !(bn_epsilon > 0.0)) invalid("bad batch-norm constants");
  for (const auto& k : kernel_sizes) {
    if (k.height < 1 || k.width < 1) invalid("kernel sizes must be positive");
    if (k.height > input_rows || k.width > input_cols) {
      throw Error(ErrorCode::KernelTooLarge, "kernel " + std::to_string(k.height) + "x" + std::to_string(k.width) +
                                                 " does not fit a " + std::to_string(input_rows) + "x" +
                                                 std::to_string(input_cols) + " input");
    }
  }
  for (const auto& k : kernel_sizes) {
    // Each path must pool to exactly 2 x 2 (K x 4 features per path).
    const PathGeometry g = path_geometry(k, input_rows, input_cols);
    if (g.pool_rows < 1 || g.pool_cols < 1 || g.conv_rows / g.pool_rows != 2 || g.conv_cols / g.pool_cols != 2) {
      invalid("kernel " + std::to_string(k.height) + "x" + std::to_string(k.width) +
              " does not pool to 2x2 on this input");
    }
  }
}

std::string fc_order_name(FcOrder order) {
  return order == FcOrder::BatchNormThenRelu ? "bn-relu" : "relu-bn";
}

FcOrder parse_fc_order(const std::string& name) {
  if (name == "bn-relu") return FcOrder::BatchNormThenRelu;
  if (name == "relu-bn") return FcOrder::ReluThenBatchNorm;
  throw Error(ErrorCode::InvalidConfig, "unknown fc order '" + name + "' (expected bn-relu or relu-bn)");
}

std::string config_to_json(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["variant"] = variant_name(cfg.variant);
  j["input_kind"] = dsp::feature_kind_name(cfg.input_kind);
  j["input_rows"] = cfg.input_rows;
  j["input_cols"] = cfg.input_cols;
  j["kernels_per_path"] = cfg.kernels_per_path;
  auto sizes = nlohmann::ordered_json::array();
  for (const auto& k : cfg.kernel_sizes) sizes.push_back({k.height, k.width});
  j["kernel_sizes"] = sizes;
  j["fc_width"] = cfg.fc_width;
  j["dropout_rate"] = cfg.dropout_rate;
  j["lambda1"] = cfg.lambda1;
  j["lambda2"] = cfg.lambda2;
  j["center_metric"] = cfg.center_metric == CenterMetric::L2 ? "l2" : "l1";
  j["decoder_hidden"] = cfg.decoder_hidden;
  j["fc_order"] = fc_order_name(cfg.fc_order);
  j["bn_momentum"] = cfg.bn_momentum;
  j["bn_epsilon"] = cfg.bn_epsilon;
  j["seed"] = cfg.seed;
  return j.dump(2) + "\n";
}

ModelConfig config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("model config: ") + e.what());
  }
  try {
    ModelConfig cfg;
    cfg.variant = parse_variant(j.at("variant").get<std::string>());
    cfg.input_kind = dsp::parse_feature_kind(j.at("input_kind").get<std::string>());
    cfg.input_rows = j.at("input_rows").get<int>();
    cfg.input_cols = j.at("input_cols").get<int>();
    cfg.kernels_per_path = j.at("kernels_per_path").get<int>();
    cfg.kernel_sizes.clear();
    for (const auto& k : j.at("kernel_sizes")) cfg.kernel_sizes.push_back({k.at(0).get<int>(), k.at(1).get<int>()});
    cfg.fc_width = j.at("fc_width").get<int>();
    cfg.dropout_rate = j.at("dropout_rate").get<double>();
    cfg.lambda1 = j.at("lambda1").get<double>();
    cfg.lambda2 = j.at("lambda2").get<double>();
    cfg.center_metric = j.at("center_metric").get<std::string>() == "l1" ? CenterMetric::L1 : CenterMetric::L2;
    cfg.decoder_hidden = j.at("decoder_hidden").get<std::vector<int>>();
    cfg.fc_order = parse_fc_order(j.at("fc_order").get<std::string>());
    cfg.bn_momentum = j.at("bn_momentum").get<double>();
    cfg.bn_epsilon = j.at("bn_epsilon").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("model config: ") + e.what());
  }
}

namespace {

// Glorot-uniform weights from a stream keyed by (seed, name).
template <typename T>
Tensor<T> glorot(const std::string& name, ag::Shape shape, Index fan_in, Index fan_out, std::uint64_t seed) {
  Rng rng(mix_seed(seed, hash_name(name)));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Vector<T> v(ag::shape_size(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<T>(rng.uniform(-limit, limit));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T> zeros(Index n) {
  return Tensor<T>::zeros({n}, true);
}

}  // namespace

template <typename T>
Model<T>::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const Index k = cfg_.kernels_per_path;
  for (std::size_t i = 0; i < 4; ++i) {
    const KernelSize ks = cfg_.kernel_sizes[i];
    geometry_[i] = path_geometry(ks, cfg_.input_rows, cfg_.input_cols);
    const std::string prefix = "trunk.path" + std::to_string(i);
    params_[prefix + ".kernel"] =
        glorot<T>(prefix + ".kernel", {k, 1, ks.height, ks.width}, Index(ks.height) * ks.width,
                  k * ks.height * ks.width, cfg_.seed);
    params_[prefix + ".bias"] = zeros<T>(k);
  }

  const Index concat = concat_width();
  const Index fc = cfg_.fc_width;
  params_["cls.fc.weight"] = glorot<T>("cls.fc.weight", {concat, fc}, concat, fc, cfg_.seed);
  params_["cls.fc.bias"] = zeros<T>(fc);
  params_["cls.bn.gamma"] = Tensor<T>::full({fc}, T(1), true);
  params_["cls.bn.beta"] = zeros<T>(fc);
  params_["cls.head.weight"] = glorot<T>("cls.head.weight", {fc, kNumClasses}, fc, kNumClasses, cfg_.seed);
  params_["cls.head.bias"] = zeros<T>(kNumClasses);
  cls_bn_ = ag::BatchNormState<T>(fc, T(cfg_.bn_momentum), T(cfg_.bn_epsilon));

  if (has_decoder()) {
    params_["dec.fc.weight"] = glorot<T>("dec.fc.weight", {concat, fc}, concat, fc, cfg_.seed);
    params_["dec.fc.bias"] = zeros<T>(fc);
    params_["dec.bn.gamma"] = Tensor<T>::full({fc}, T(1), true);
    params_["dec.bn.beta"] = zeros<T>(fc);
    dec_bn_ = ag::BatchNormState<T>(fc, T(cfg_.bn_momentum), T(cfg_.bn_epsilon));
    Index width = fc;
    for (std::size_t i = 0; i < cfg_.decoder_hidden.size(); ++i) {
      const Index next = cfg_.decoder_hidden[i];
      const std::string prefix = "dec.hidden" + std::to_string(i);
      params_[prefix + ".weight"] = glorot<T>(prefix + ".weight", {width, next}, width, next, cfg_.seed);
      params_[prefix + ".bias"] = zeros<T>(next);
      width = next;
    }
    const Index out = input_size();
    params_["dec.out.weight"] = glorot<T>("dec.out.weight", {width, out}, width, out, cfg_.seed);
    params_["dec.out.bias"] = zeros<T>(out);
  }
  if (has_centers()) params_["centers"] = Tensor<T>::zeros({kNumClasses, fc}, true);

  reseed_dropout(cfg_.seed);
}

template <typename T>
void Model<T>::reseed_dropout(std::uint64_t seed) {
  cls_dropout_rng_ = Rng(mix_seed(seed, hash_name("cls.dropout")));
  dec_dropout_rng_ = Rng(mix_seed(seed, hash_name("dec.dropout")));
}

template <typename T>
Tensor<T> Model<T>::trunk_features(const Tensor<T>& x) const {
  if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != cfg_.input_rows || x.dim(3) != cfg_.input_cols) {
    throw Error(ErrorCode::ShapeMismatch, "model expects [n x 1 x " + std::to_string(cfg_.input_rows) + " x " +
                                              std::to_string(cfg_.input_cols) + "], got " +
                                              ag::shape_string(x.shape()));
  }
  std::vector<Tensor<T>> pooled;
  pooled.reserve(4);
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string prefix = "trunk.path" + std::to_string(i);
    const PathGeometry& g = geometry_[i];
    auto conv = ag::conv2d_valid(x, p(prefix + ".kernel"), p(prefix + ".bias"));
    pooled.push_back(ag::maxpool2d(ag::relu(conv), g.pool_rows, g.pool_cols));
  }
  return ag::concat_flatten<T>(pooled);
}

template <typename T>
Tensor<T> Model<T>::embed(const Tensor<T>& features, Mode mode) {
  auto h = ag::linear(features, p("cls.fc.weight"), p("cls.fc.bias"));
  if (cfg_.fc_order == FcOrder::ReluThenBatchNorm) {
    return ag::batchnorm(ag::relu(h), p("cls.bn.gamma"), p("cls.bn.beta"), cls_bn_, mode);
  }
  h = ag::batchnorm(h, p("cls.bn.gamma"), p("cls.bn.beta"), cls_bn_, mode);
  return ag::relu(h);
}

template <typename T>
Tensor<T> Model<T>::forward_trunk(const Tensor<T>& x, Mode mode) {
  return embed(trunk_features(x), mode);
}

template <typename T>
Tensor<T> Model<T>::forward_logits(const Tensor<T>& embedding, Mode mode) {
  auto h = ag::dropout(embedding, cfg_.dropout_rate, mode, cls_dropout_rng_);
  return ag::linear(h, p("cls.head.weight"), p("cls.head.bias"));
}

template <typename T>
Tensor<T> Model<T>::forward_reconstruction(const Tensor<T>& features, Mode mode) {
  if (!has_decoder()) {
    throw Error(ErrorCode::VariantLacksDecoder, "variant " + variant_name(cfg_.variant) + " has no decoder");
  }
  auto h = ag::linear(features, p("dec.fc.weight"), p("dec.fc.bias"));
  if (cfg_.fc_order == FcOrder::ReluThenBatchNorm) {
    h = ag::batchnorm(ag::relu(h), p("dec.bn.gamma"), p("dec.bn.beta"), dec_bn_, mode);
  } else {
    h = ag::relu(ag::batchnorm(h, p("dec.bn.gamma"), p("dec.bn.beta"), dec_bn_, mode));
  }
  h = ag::dropout(h, cfg_.dropout_rate, mode, dec_dropout_rng_);
  for (std::size_t i = 0; i < cfg_.decoder_hidden.size(); ++i) {
    const std::string prefix = "dec.hidden" + std::to_string(i);
    h = ag::relu(ag::linear(h, p(prefix + ".weight"), p(prefix + ".bias")));
  }
  return ag::sigmoid(ag::linear(h, p("dec.out.weight"), p("dec.out.bias")));
}

template <typename T>
const Tensor<T>& Model<T>::centers() const {
  auto it = params_.find("centers");
  if (it == params_.end()) {
    throw Error(ErrorCode::InvalidConfig, "variant " + variant_name(cfg_.variant) + " has no class centers");
  }
  return it->second;
}

template <typename T>
NamedTensors<T> Model<T>::state() const {
  NamedTensors<T> out = params_;
  const Index fc = cfg_.fc_width;
  out["cls.bn.running_mean"] = Tensor<T>({fc}, cls_bn_.running_mean);
  out["cls.bn.running_var"] = Tensor<T>({fc}, cls_bn_.running_var);
  if (has_decoder()) {
    out["dec.bn.running_mean"] = Tensor<T>({fc}, dec_bn_.running_mean);
    out["dec.bn.running_var"] = Tensor<T>({fc}, dec_bn_.running_var);
  }
  return out;
}

template <typename T>
void Model<T>::load_state(const std::map<std::string, ag::CheckpointRecord>& records) {
  auto fetch = [&](const std::string& name, Vector<T>& dst, const ag::Shape& shape) {
    auto it = records.find(name);
    if (it == records.end()) throw Error(ErrorCode::FormatError, "checkpoint lacks '" + name + "'");
    if (it->second.shape != shape) {
      throw Error(ErrorCode::ShapeMismatch, "checkpoint '" + name + "' has shape " +
                                                ag::shape_string(it->second.shape) + ", model expects " +
                                                ag::shape_string(shape));
    }
    for (Index i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second.values[static_cast<std::size_t>(i)]);
  };
  for (auto& [name, t] : params_) fetch(name, t.mutable_values(), t.shape());
  const ag::Shape fc{cfg_.fc_width};
  fetch("cls.bn.running_mean", cls_bn_.running_mean, fc);
  fetch("cls.bn.running_var", cls_bn_.running_var, fc);
  if (has_decoder()) {
    fetch("dec.bn.running_mean", dec_bn_.running_mean, fc);
    fetch("dec.bn.running_var", dec_bn_.running_var, fc);
  }
}

template <typename T>
typename Model<T>::Snapshot Model<T>::snapshot() const {
  Snapshot snap;
  for (const auto& [name, t] : state()) snap[name] = t.values();
  return snap;
}

template <typename T>
void Model<T>::restore(const Snapshot& snap) {
  for (auto& [name, t] : params_) t.mutable_values() = snap.at(name);
  cls_bn_.running_mean = snap.at("cls.bn.running_mean");
  cls_bn_.running_var = snap.at("cls.bn.running_var");
  if (has_decoder()) {
    dec_bn_.running_mean = snap.at("dec.bn.running_mean");
    dec_bn_.running_var = snap.at("dec.bn.running_var");
  }
}

template <typename T>
void Model<T>::tally_batchnorm(const Tensor<T>& features, BatchNormCensus& census) const {
  auto add = [&](Tensor<T> pre, Eigen::VectorXd& sum, Eigen::VectorXd& square) {
    if (cfg_.fc_order == FcOrder::ReluThenBatchNorm) pre = ag::relu(pre);
    const Eigen::MatrixXd m =
        ag::ConstMatrixMap<T>(pre.values().data(), pre.dim(0), pre.dim(1)).template cast<double>();
    if (sum.size() == 0) {
      sum = Eigen::VectorXd::Zero(m.cols());
      square = Eigen::VectorXd::Zero(m.cols());
    }
    sum += m.colwise().sum().transpose();
    square += m.array().square().matrix().colwise().sum().transpose();
  };
  add(ag::linear(features, p("cls.fc.weight"), p("cls.fc.bias")), census.cls_sum, census.cls_square);
  if (has_decoder()) {
    add(ag::linear(features, p("dec.fc.weight"), p("dec.fc.bias")), census.dec_sum, census.dec_square);
  }
  census.count += static_cast<double>(features.dim(0));
}

template <typename T>
void Model<T>::apply_batchnorm(const BatchNormCensus& census) {
  if (census.count < 1.0) throw Error(ErrorCode::BatchTooSmall, "batch-norm census is empty");
  auto set = [&](ag::BatchNormState<T>& bn, const Eigen::VectorXd& sum, const Eigen::VectorXd& square) {
    const Eigen::VectorXd mean = sum / census.count;
    const Eigen::VectorXd var = (square / census.count - mean.cwiseProduct(mean)).cwiseMax(0.0);
    bn.running_mean = mean.cast<T>();
    bn.running_var = var.cast<T>();
  };
  set(cls_bn_, census.cls_sum, census.cls_square);
  if (has_decoder()) set(dec_bn_, census.dec_sum, census.dec_square);
}

template <typename T>
Index Model<T>::param_count() const {
  Index n = 0;
  for (const auto& [name, t] : params_) {
    if (name != "centers") n += t.size();
  }
  return n;
}

template <typename T>
Tensor<T> make_input(std::span<const dsp::FeatureMatrix* const> features, const ModelConfig& cfg) {
  const Index rows = cfg.input_rows, cols = cfg.input_cols;
  const Index n = static_cast<Index>(features.size());
  Vector<T> v(n * rows * cols);
  for (Index i = 0; i < n; ++i) {
    const dsp::FeatureMatrix& f = *features[static_cast<std::size_t>(i)];
    if (f.rows() != rows || f.cols() != cols) {
      throw Error(ErrorCode::ShapeMismatch, "feature is " + std::to_string(f.rows()) + "x" +
                                                std::to_string(f.cols()) + ", model expects " +
                                                std::to_string(rows) + "x" + std::to_string(cols));
    }
    v.segment(i * rows * cols, rows * cols) =
        Eigen::Map<const Eigen::VectorXf>(f.values.data(), rows * cols).template cast<T>();
  }
  return Tensor<T>({n, 1, rows, cols}, std::move(v));
}

template <typename T>
Tensor<T> make_input(const dsp::FeatureMatrix& feature, const ModelConfig& cfg) {
  const dsp::FeatureMatrix* one[] = {&feature};
  return make_input<T>(std::span<const dsp::FeatureMatrix* const>(one), cfg);
}

template <typename T>
Tensor<T> center_loss(const Tensor<T>& embeddings, std::span<const int> labels, const Tensor<T>& centers,
                      CenterMetric metric) {
  if (embeddings.rank() != 2 || centers.rank() != 2 || embeddings.dim(1) != centers.dim(1)) {
    throw Error(ErrorCode::ShapeMismatch, "center_loss: embeddings " + ag::shape_string(embeddings.shape()) +
                                              " vs centers " + ag::shape_string(centers.shape()));
  }
  const Index n = embeddings.dim(0), d = embeddings.dim(1), classes = centers.dim(0);
  if (static_cast<Index>(labels.size()) != n) throw Error(ErrorCode::ShapeMismatch, "center_loss: one label per row");
  for (int y : labels) {
    if (y < 0 || y >= classes) throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(y));
  }
  ag::ConstMatrixMap<T> e(embeddings.values().data(), n, d);
  ag::ConstMatrixMap<T> c(centers.values().data(), classes, d);
  ag::RowMatrix<T> diff(n, d);
  for (Index i = 0; i < n; ++i) diff.row(i) = e.row(i) - c.row(labels[static_cast<std::size_t>(i)]);

  Vector<T> value(1);
  ag::RowMatrix<T> slope;  // d loss / d embedding
  if (metric == CenterMetric::L2) {
    value[0] = T(0.5) * diff.squaredNorm();
    slope = diff;
  } else {
    value[0] = diff.cwiseAbs().sum();
    slope = diff.unaryExpr([](T x) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
  }
  auto ie = embeddings.impl(), ic = centers.impl();
  std::vector<int> ys(labels.begin(), labels.end());
  return ag::detail::make_result<T>(
      ag::Shape{}, std::move(value), {embeddings, centers}, "center_loss",
      [ie, ic, ys, slope = std::move(slope), n, d, classes](const Vector<T>&, const Vector<T>& g) {
        if (ie->requires_grad) ag::MatrixMap<T>(ie->grad_buffer().data(), n, d) += slope * g[0];
        if (ic->requires_grad) {
          ag::MatrixMap<T> gc(ic->grad_buffer().data(), classes, d);
          for (Index i = 0; i < n; ++i) gc.row(ys[static_cast<std::size_t>(i)]) -= slope.row(i) * g[0];
        }
      });
}

template <typename T>
Tensor<T> joint_loss(const ModelConfig& cfg, const Tensor<T>& softmax_loss,
                     const std::optional<Tensor<T>>& center_term,
                     const std::optional<Tensor<T>>& reconstruction_term) {
  if (center_term.has_value() != has_centers(cfg.variant) ||
      reconstruction_term.has_value() != has_decoder(cfg.variant)) {
    throw Error(ErrorCode::VariantTermMismatch,
                "loss terms do not match variant " + variant_name(cfg.variant));
  }
  Tensor<T> total = softmax_loss;
  if (center_term) total = ag::add(total, ag::scale(*center_term, T(cfg.lambda1)));
  if (reconstruction_term) total = ag::add(total, ag::scale(*reconstruction_term, T(cfg.lambda2)));
  return total;
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  ag::ConstMatrixMap<T> z(logits.values().data(), logits.dim(0), logits.dim(1));
  std::vector<int> out(static_cast<std::size_t>(z.rows()));
  for (Index i = 0; i < z.rows(); ++i) {
    Index best = 0;
    for (Index j = 1; j < z.cols(); ++j) {
      if (z(i, j) > z(i, best)) best = j;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

template <typename T>
EmotionClass predict(Model<T>& model, const dsp::FeatureMatrix& x) {
  const auto input = make_input<T>(x, model.config());
  const auto logits = model.forward_logits(model.forward_trunk(input, Mode::Eval), Mode::Eval);
  return static_cast<EmotionClass>(argmax_rows(logits).front());
}

#define SER_MODEL_INSTANTIATE(T)                                                                           \
  template class Model<T>;                                                                                 \
  template Tensor<T> make_input(std::span<const dsp::FeatureMatrix* const>, const ModelConfig&);           \
  template Tensor<T> make_input(const dsp::FeatureMatrix&, const ModelConfig&);                            \
  template Tensor<T> center_loss(const Tensor<T>&, std::span<const int>, const Tensor<T>&, CenterMetric); \
  template Tensor<T> joint_loss(const ModelConfig&, const Tensor<T>&, const std::optional<Tensor<T>>&,     \
                                const std::optional<Tensor<T>>&);                                          \
  template std::vector<int> argmax_rows(const Tensor<T>&);                                                 \
  template EmotionClass predict(Model<T>&, const dsp::FeatureMatrix&);

SER_MODEL_INSTANTIATE(float)
SER_MODEL_INSTANTIATE(double)

#undef SER_MODEL_INSTANTIATE

}  // namespace ser::model

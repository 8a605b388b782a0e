#include "ser/analyze.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace ser::analyze {

namespace {

constexpr std::size_t kBatch = 32;

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

template <typename T>
EmbeddingSet export_embeddings(model::Model<T>& model, std::span<const audio::DatasetEntry> entries,
                               const train::FeatureStore& features, int per_class, std::uint64_t seed) {
  if (per_class < 1) throw Error(ErrorCode::InvalidConfig, "per_class must be >= 1");
  EmbeddingSet set;
  set.source_variant = model.config().variant;
  std::vector<std::size_t> chosen;
  for (auto c : kAllClasses) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].label == c) idx.push_back(i);
    }
    if (idx.empty()) {
      throw Error(ErrorCode::EmptyClass, "no entries of class " + std::string(label_name(c)));
    }
    if (idx.size() < static_cast<std::size_t>(per_class)) {
      set.warnings.push_back("class " + std::string(label_name(c)) + " has only " + std::to_string(idx.size()) +
                             " entries; taking all");
    } else {
      Rng rng(mix_seed(seed, static_cast<std::uint64_t>(class_index(c))));
      rng.shuffle(idx.begin(), idx.end());
      idx.resize(static_cast<std::size_t>(per_class));
      std::sort(idx.begin(), idx.end());
    }
    chosen.insert(chosen.end(), idx.begin(), idx.end());
  }

  set.rows.resize(static_cast<Eigen::Index>(chosen.size()), model.embedding_width());
  for (std::size_t start = 0; start < chosen.size(); start += kBatch) {
    const std::size_t end = std::min(chosen.size(), start + kBatch);
    std::vector<const dsp::FeatureMatrix*> xs;
    for (std::size_t i = start; i < end; ++i) {
      xs.push_back(&features.at(entries[chosen[i]]));
      set.labels.push_back(class_index(entries[chosen[i]].label));
    }
    const auto x = model::make_input<T>(xs, model.config());
    const auto emb = model.embed(model.trunk_features(x), ag::Mode::Eval);
    const ag::ConstMatrixMap<T> m(emb.values().data(), emb.dim(0), emb.dim(1));
    set.rows.middleRows(static_cast<Eigen::Index>(start), m.rows()) = m.template cast<double>();
  }
  return set;
}

namespace {

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = (x.row(i) - x.row(j)).squaredNorm();
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

// Conditional row P_{j|i} whose entropy matches log(perplexity).
void conditional_row(const Eigen::MatrixXd& d, Eigen::Index i, double log_perplexity, Eigen::MatrixXd& p) {
  const Eigen::Index n = d.rows();
  double beta = 1.0, lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
  Eigen::VectorXd row(n);
  for (int attempt = 0; attempt < 50; ++attempt) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      row(j) = j == i ? 0.0 : std::exp(-d(i, j) * beta);
      sum += row(j);
    }
    if (sum <= 0.0) sum = std::numeric_limits<double>::min();
    double weighted = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) weighted += d(i, j) * row(j);
    const double entropy = std::log(sum) + beta * weighted / sum;
    row /= sum;
    const double diff = entropy - log_perplexity;
    if (std::abs(diff) < 1e-5) break;
    if (diff > 0) {
      lo = beta;
      beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
    } else {
      hi = beta;
      beta = std::isinf(lo) ? beta / 2.0 : (beta + lo) / 2.0;
    }
  }
  p.row(i) = row.transpose();
}

}  // namespace

Eigen::MatrixXd joint_probabilities(const Eigen::MatrixXd& x, double perplexity) {
  const Eigen::MatrixXd d = squared_distances(x);
  Eigen::MatrixXd p(x.rows(), x.rows());
  const double log_perplexity = std::log(perplexity);
  for (Eigen::Index i = 0; i < x.rows(); ++i) conditional_row(d, i, log_perplexity, p);
  Eigen::MatrixXd joint = p + p.transpose();
  joint /= joint.sum();
  return joint.cwiseMax(1e-12);
}

TsneResult tsne2d(const EmbeddingSet& set, const TsneConfig& cfg) {
  const Eigen::Index n = set.rows.rows();
  if (cfg.perplexity <= 0.0 || static_cast<double>(n) < 3.0 * cfg.perplexity + 1.0) {
    throw Error(ErrorCode::PerplexityTooLarge, "perplexity " + format_value(cfg.perplexity) + " needs at least " +
                                                   format_value(3.0 * cfg.perplexity + 1.0) + " points, got " +
                                                   std::to_string(n));
  }
  if (!set.rows.allFinite()) throw Error(ErrorCode::NonFiniteInput, "embeddings contain non-finite values");
  if (cfg.iterations < 1) throw Error(ErrorCode::InvalidConfig, "iterations must be >= 1");

  const Eigen::MatrixXd p = joint_probabilities(set.rows, cfg.perplexity);
  double p_entropy_term = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j) p_entropy_term += p(i, j) * std::log(p(i, j));
    }
  }

  Rng rng(mix_seed(cfg.seed, hash_name("tsne")));
  Eigen::MatrixXd y(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i, 0) = 1e-4 * rng.normal();
    y(i, 1) = 1e-4 * rng.normal();
  }
  Eigen::MatrixXd velocity = Eigen::MatrixXd::Zero(n, 2);
  Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(n, 2);
  Eigen::MatrixXd num(n, n), grad(n, 2);

  TsneResult result;
  result.kl.reserve(static_cast<std::size_t>(cfg.iterations));
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const double exaggeration = iter < cfg.exaggeration_iterations ? cfg.exaggeration : 1.0;
    const double momentum = iter < cfg.exaggeration_iterations ? cfg.initial_momentum : cfg.final_momentum;

    double z = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      num(i, i) = 0.0;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double dx = y(i, 0) - y(j, 0), dy = y(i, 1) - y(j, 1);
        const double v = 1.0 / (1.0 + dx * dx + dy * dy);
        num(i, j) = v;
        num(j, i) = v;
        z += 2.0 * v;
      }
    }

    double cross = 0.0;
    grad.setZero();
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double q = std::max(num(i, j) / z, 1e-12);
        cross += p(i, j) * std::log(q);
        const double w = 4.0 * (exaggeration * p(i, j) - q) * num(i, j);
        grad(i, 0) += w * (y(i, 0) - y(j, 0));
        grad(i, 1) += w * (y(i, 1) - y(j, 1));
      }
    }

    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index k = 0; k < 2; ++k) {
        const bool same_sign = (grad(i, k) > 0.0) == (velocity(i, k) > 0.0);
        gains(i, k) = std::max(same_sign ? gains(i, k) * 0.8 : gains(i, k) + 0.2, 0.01);
        velocity(i, k) = momentum * velocity(i, k) - cfg.learning_rate * gains(i, k) * grad(i, k);
        y(i, k) += velocity(i, k);
      }
    }
    y.rowwise() -= y.colwise().mean();
    // KL of the layout this iteration started from.
    result.kl.push_back(p_entropy_term - cross);
  }
  result.coordinates = std::move(y);
  return result;
}

double compaction_ratio(const EmbeddingSet& set) {
  if (set.rows.rows() != static_cast<Eigen::Index>(set.labels.size())) {
    throw Error(ErrorCode::ShapeMismatch, "row and label counts differ");
  }
  std::vector<int> counts(kNumClasses, 0);
  for (int y : set.labels) {
    if (y < 0 || y >= kNumClasses) throw Error(ErrorCode::LabelOutOfRange, "label out of range");
    ++counts[static_cast<std::size_t>(y)];
  }
  std::vector<int> present;
  for (int c = 0; c < kNumClasses; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 1) {
      throw Error(ErrorCode::DegenerateClass, "class " + std::to_string(c) + " has a single point");
    }
    if (counts[static_cast<std::size_t>(c)] >= 2) present.push_back(c);
  }
  if (present.size() < 2) throw Error(ErrorCode::DegenerateClass, "need at least two classes");

  Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(kNumClasses, set.rows.cols());
  for (std::size_t i = 0; i < set.labels.size(); ++i) {
    centroids.row(set.labels[i]) += set.rows.row(static_cast<Eigen::Index>(i));
  }
  for (int c : present) centroids.row(c) /= counts[static_cast<std::size_t>(c)];

  double within = 0.0;
  for (std::size_t i = 0; i < set.labels.size(); ++i) {
    within += (set.rows.row(static_cast<Eigen::Index>(i)) - centroids.row(set.labels[i])).norm();
  }
  within /= static_cast<double>(set.labels.size());

  double between = 0.0;
  int pairs = 0;
  for (std::size_t a = 0; a < present.size(); ++a) {
    for (std::size_t b = a + 1; b < present.size(); ++b) {
      between += (centroids.row(present[a]) - centroids.row(present[b])).norm();
      ++pairs;
    }
  }
  between /= pairs;
  if (!(between > 0.0)) throw Error(ErrorCode::DegenerateClass, "class centroids coincide");
  return within / between;
}

template <typename T>
std::vector<ReconstructionRow> reconstruction_report(std::span<model::Model<T>* const> models,
                                                     std::span<const audio::DatasetEntry> entries,
                                                     const train::FeatureStore& features) {
  if (entries.empty()) throw Error(ErrorCode::EmptyEvaluationSet, "no entries for reconstruction report");
  std::vector<ReconstructionRow> rows;
  for (auto* m : models) {
    if (!m->has_decoder()) {
      throw Error(ErrorCode::VariantLacksDecoder, model::variant_name(m->config().variant) + " has no decoder");
    }
    double total = 0.0;
    for (std::size_t start = 0; start < entries.size(); start += kBatch) {
      const std::size_t end = std::min(entries.size(), start + kBatch);
      std::vector<const dsp::FeatureMatrix*> xs;
      for (std::size_t i = start; i < end; ++i) xs.push_back(&features.at(entries[i]));
      const auto x = model::make_input<T>(xs, m->config());
      const auto recon = m->forward_reconstruction(m->trunk_features(x), ag::Mode::Eval);
      total += static_cast<double>((recon.values() - x.values()).squaredNorm());
    }
    ReconstructionRow row;
    row.variant = m->config().variant;
    row.input_kind = m->config().input_kind;
    row.mse = total / (static_cast<double>(entries.size()) * static_cast<double>(m->input_size()));
    rows.push_back(row);
  }
  return rows;
}

void write_embeddings(std::ostream& out, const EmbeddingSet& set) {
  out << "label";
  for (Eigen::Index k = 0; k < set.rows.cols(); ++k) out << ",e" << k;
  out << '\n';
  for (Eigen::Index i = 0; i < set.rows.rows(); ++i) {
    out << label_name(static_cast<EmotionClass>(set.labels[static_cast<std::size_t>(i)]));
    for (Eigen::Index k = 0; k < set.rows.cols(); ++k) out << ',' << format_value(set.rows(i, k));
    out << '\n';
  }
}

EmbeddingSet read_embeddings(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("label", 0) != 0) {
    throw Error(ErrorCode::FormatError, "embedding CSV must start with a label header");
  }
  const auto width = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ','));
  std::vector<std::vector<double>> values;
  EmbeddingSet set;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    const auto label = parse_label(cell);
    if (!label) throw Error(ErrorCode::FormatError, "line " + std::to_string(line_no) + ": unknown label '" + cell + "'");
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw Error(ErrorCode::FormatError, "line " + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
    }
    if (static_cast<Eigen::Index>(row.size()) != width) {
      throw Error(ErrorCode::FormatError, "line " + std::to_string(line_no) + ": expected " + std::to_string(width) +
                                              " values");
    }
    set.labels.push_back(class_index(*label));
    values.push_back(std::move(row));
  }
  set.rows.resize(static_cast<Eigen::Index>(values.size()), width);
  for (std::size_t i = 0; i < values.size(); ++i) {
    for (Eigen::Index k = 0; k < width; ++k) set.rows(static_cast<Eigen::Index>(i), k) = values[i][static_cast<std::size_t>(k)];
  }
  return set;
}

void write_tsne(std::ostream& out, const EmbeddingSet& set, const Eigen::MatrixXd& coordinates) {
  out << "label,x,y\n";
  for (Eigen::Index i = 0; i < coordinates.rows(); ++i) {
    out << label_name(static_cast<EmotionClass>(set.labels[static_cast<std::size_t>(i)])) << ','
        << format_value(coordinates(i, 0)) << ',' << format_value(coordinates(i, 1)) << '\n';
  }
}

void write_reconstruction_report(std::ostream& out, std::span<const ReconstructionRow> rows) {
  out << "variant,input,mse\n";
  for (const auto& r : rows) {
    out << model::variant_name(r.variant) << ',' << dsp::feature_kind_name(r.input_kind) << ','
        << train::format_number(r.mse) << '\n';
  }
}

#define SER_ANALYZE_INSTANTIATE(T)                                                                              \
  template EmbeddingSet export_embeddings(model::Model<T>&, std::span<const audio::DatasetEntry>,               \
                                          const train::FeatureStore&, int, std::uint64_t);                      \
  template std::vector<ReconstructionRow> reconstruction_report(std::span<model::Model<T>* const>,              \
                                                                std::span<const audio::DatasetEntry>,           \
                                                                const train::FeatureStore&);

SER_ANALYZE_INSTANTIATE(float)
SER_ANALYZE_INSTANTIATE(double)

#undef SER_ANALYZE_INSTANTIATE

}  // namespace ser::analyze

#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ser/model.hpp"
#include "ser/train.hpp"

namespace ser::analyze {

struct EmbeddingSet {
  Eigen::MatrixXd rows;  // n x d
  std::vector<int> labels;
  model::Variant source_variant = model::Variant::S;
  std::vector<std::string> warnings;
};

/// Eval-mode embeddings of a seeded sample of `per_class` entries per class,
/// grouped by class and kept in manifest order within a class. A class with
/// fewer entries contributes all of them and records a warning.
template <typename T>
EmbeddingSet export_embeddings(model::Model<T>& model, std::span<const audio::DatasetEntry> entries,
                               const train::FeatureStore& features, int per_class, std::uint64_t seed);

struct TsneConfig {
  double perplexity = 30.0;
  int iterations = 1000;
  double learning_rate = 200.0;
  double exaggeration = 12.0;
  int exaggeration_iterations = 250;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  std::uint64_t seed = 0;
};

struct TsneResult {
  Eigen::MatrixXd coordinates;  // n x 2
  std::vector<double> kl;       // KL(P || Q) after each iteration, unexaggerated P
};

/// Exact t-SNE to two dimensions. Requires n >= 3 * perplexity + 1.
TsneResult tsne2d(const EmbeddingSet& set, const TsneConfig& cfg);

/// Symmetrized joint affinities P (n x n, zero diagonal, sums to one).
Eigen::MatrixXd joint_probabilities(const Eigen::MatrixXd& x, double perplexity);

/// Mean distance of each point to its class centroid divided by the mean
/// distance between class centroids.
double compaction_ratio(const EmbeddingSet& set);

struct ReconstructionRow {
  model::Variant variant = model::Variant::SA;
  dsp::FeatureKind input_kind = dsp::FeatureKind::MelSpectrogram;
  double mse = 0.0;
};

/// Mean eval-mode reconstruction MSE per model.
template <typename T>
std::vector<ReconstructionRow> reconstruction_report(std::span<model::Model<T>* const> models,
                                                     std::span<const audio::DatasetEntry> entries,
                                                     const train::FeatureStore& features);

// CSV: label,e0,e1,...
void write_embeddings(std::ostream& out, const EmbeddingSet& set);
EmbeddingSet read_embeddings(std::istream& in);
// CSV: label,x,y
void write_tsne(std::ostream& out, const EmbeddingSet& set, const Eigen::MatrixXd& coordinates);
// CSV: variant,input,mse
void write_reconstruction_report(std::ostream& out, std::span<const ReconstructionRow> rows);

}  // namespace ser::analyze

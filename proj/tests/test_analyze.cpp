#include "doctest.h"

#include <algorithm>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "ser/analyze.hpp"
#include "ser/error.hpp"

using namespace ser;
using namespace ser::analyze;
using model::Variant;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected ser::Error");
  return ErrorCode::IoError;
}

EmbeddingSet blobs(int per_class, int classes, int dim, double sigma, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  EmbeddingSet s;
  s.rows.resize(per_class * classes, dim);
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < per_class; ++i) {
      const int r = c * per_class + i;
      for (int d = 0; d < dim; ++d) s.rows(r, d) = (d == c ? 1.0 : 0.0) + noise(gen);
      s.labels.push_back(c);
    }
  }
  return s;
}

// Independent of compaction_ratio: explicit loops over points and centroid pairs.
double brute_compaction(const EmbeddingSet& s) {
  std::map<int, std::vector<int>> members;
  for (std::size_t i = 0; i < s.labels.size(); ++i) members[s.labels[i]].push_back(int(i));
  std::vector<std::vector<double>> centroids;
  double within = 0;
  long points = 0;
  for (const auto& [label, idx] : members) {
    std::vector<double> c(std::size_t(s.rows.cols()), 0.0);
    for (int i : idx)
      for (long d = 0; d < s.rows.cols(); ++d) c[std::size_t(d)] += s.rows(i, d) / double(idx.size());
    for (int i : idx) {
      double sq = 0;
      for (long d = 0; d < s.rows.cols(); ++d) sq += (s.rows(i, d) - c[std::size_t(d)]) * (s.rows(i, d) - c[std::size_t(d)]);
      within += std::sqrt(sq);
      ++points;
    }
    centroids.push_back(c);
  }
  double between = 0;
  long pairs = 0;
  for (std::size_t a = 0; a < centroids.size(); ++a) {
    for (std::size_t b = a + 1; b < centroids.size(); ++b) {
      double sq = 0;
      for (std::size_t d = 0; d < centroids[a].size(); ++d) sq += std::pow(centroids[a][d] - centroids[b][d], 2);
      between += std::sqrt(sq);
      ++pairs;
    }
  }
  return (within / double(points)) / (between / double(pairs));
}

}  // namespace

TEST_CASE("compaction of zero-scatter classes is zero") {
  EmbeddingSet s;
  s.rows.resize(4, 2);
  s.rows << 0, 0, 0, 0, 1, 0, 1, 0;
  s.labels = {0, 0, 1, 1};
  CHECK(compaction_ratio(s) == 0.0);
}

TEST_CASE("compaction degenerate inputs") {
  EmbeddingSet same;
  same.rows.resize(4, 2);
  same.rows << 0, 1, 0, -1, 1, 0, -1, 0;
  same.labels = {0, 0, 1, 1};
  CHECK(code_of([&] { compaction_ratio(same); }) == ErrorCode::DegenerateClass);

  EmbeddingSet one_class = same;
  one_class.labels = {2, 2, 2, 2};
  CHECK(code_of([&] { compaction_ratio(one_class); }) == ErrorCode::DegenerateClass);

  EmbeddingSet singleton = same;
  singleton.labels = {0, 0, 0, 1};
  CHECK(code_of([&] { compaction_ratio(singleton); }) == ErrorCode::DegenerateClass);
}

TEST_CASE("compaction matches brute force on gaussian blobs") {
  const auto s = blobs(200, 2, 2, 0.1, 7);
  const double r = compaction_ratio(s);
  CHECK(r == doctest::Approx(brute_compaction(s)).epsilon(1e-12));
  // Mean radius of a 2-D gaussian is sigma * sqrt(pi / 2); centers sit sqrt(2) apart.
  CHECK(r == doctest::Approx(0.1 * std::sqrt(M_PI / 2) / std::sqrt(2.0)).epsilon(0.1));

  const auto four = blobs(50, 4, 6, 0.3, 9);
  CHECK(compaction_ratio(four) == doctest::Approx(brute_compaction(four)).epsilon(1e-12));
}

TEST_CASE("compaction is rotation and scale invariant") {
  const auto s = blobs(40, 3, 5, 0.2, 3);
  const double base = compaction_ratio(s);
  std::mt19937 gen(1);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd a(5, 5);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = n(gen);
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ();
    EmbeddingSet t = s;
    t.rows = (s.rows * q) * (0.5 + trial * 3.0);
    CHECK(compaction_ratio(t) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("joint probabilities are a symmetric distribution") {
  const auto s = blobs(15, 3, 4, 0.3, 2);
  const auto p = joint_probabilities(s.rows, 5.0);
  CHECK(p.rows() == 45);
  CHECK((p - p.transpose()).cwiseAbs().maxCoeff() == 0.0);
  // The 1e-12 floor on each entry lifts the total slightly above one.
  CHECK(std::abs(p.sum() - 1.0) <= 45.0 * 45.0 * 1e-12);
  CHECK(p.minCoeff() > 0.0);
  for (int i = 0; i < 45; ++i) CHECK(p(i, i) <= 1e-12);
}

TEST_CASE("tsne output and objective descent") {
  auto s = blobs(25, 4, 8, 0.3, 5);
  s.rows.row(99) = s.rows.row(98);  // duplicated point
  TsneConfig cfg;
  cfg.perplexity = 10;
  cfg.seed = 11;
  const auto r = tsne2d(s, cfg);
  REQUIRE(r.coordinates.rows() == 100);
  REQUIRE(r.coordinates.cols() == 2);
  CHECK(r.coordinates.allFinite());
  REQUIRE(r.kl.size() == 1000);
  CHECK(r.kl[999] < r.kl[249]);

  std::vector<double> d;
  for (int i = 0; i < 100; ++i)
    for (int j = i + 1; j < 100; ++j) d.push_back((r.coordinates.row(i) - r.coordinates.row(j)).norm());
  std::nth_element(d.begin(), d.begin() + long(d.size() / 2), d.end());
  const double median = d[d.size() / 2];
  CHECK((r.coordinates.row(98) - r.coordinates.row(99)).norm() < median);

  const auto again = tsne2d(s, cfg);
  CHECK(again.coordinates == r.coordinates);
}

TEST_CASE("tsne cost is translation invariant") {
  // Dyadic values keep every pairwise difference exact after the shift.
  std::mt19937 gen(8);
  std::uniform_int_distribution<int> u(-64, 64);
  EmbeddingSet s;
  s.rows.resize(40, 3);
  for (Eigen::Index i = 0; i < s.rows.size(); ++i) s.rows.data()[i] = u(gen) / 16.0;
  s.labels.assign(40, 0);
  EmbeddingSet shifted = s;
  shifted.rows.rowwise() += Eigen::RowVector3d(32.0, -8.0, 0.5);
  TsneConfig cfg;
  cfg.perplexity = 5;
  cfg.iterations = 300;
  cfg.seed = 2;
  const auto a = tsne2d(s, cfg);
  const auto b = tsne2d(shifted, cfg);
  CHECK(a.kl == b.kl);
}

TEST_CASE("tsne perplexity bound") {
  const auto s = blobs(30, 3, 4, 0.2, 1);  // n = 90
  TsneConfig cfg;
  CHECK(code_of([&] { tsne2d(s, cfg); }) == ErrorCode::PerplexityTooLarge);
  auto bigger = blobs(91, 1, 4, 0.2, 1);
  cfg.iterations = 5;
  CHECK(tsne2d(bigger, cfg).coordinates.rows() == 91);
}

TEST_CASE("export_embeddings samples per class") {
  const auto m = fixture::manifest(3);
  const auto store = fixture::store(m, 16, 20, 4);
  model::Model<float> net(fixture::small_config(Variant::SC));
  const auto set = export_embeddings(net, m.entries, store, 2, 5);
  CHECK(set.rows.rows() == 8);
  CHECK(set.rows.cols() == 8);
  CHECK(set.labels == std::vector<int>{0, 0, 1, 1, 2, 2, 3, 3});
  CHECK(set.source_variant == Variant::SC);
  CHECK(set.warnings.empty());

  const auto again = export_embeddings(net, m.entries, store, 2, 5);
  CHECK(again.rows == set.rows);
  const auto other = export_embeddings(net, m.entries, store, 2, 6);
  CHECK(other.rows != set.rows);

  // Each exported row equals the embedding of some entry with the same label.
  std::vector<const dsp::FeatureMatrix*> all;
  for (const auto& e : m.entries) all.push_back(&store.at(e));
  const auto x = model::make_input<float>(all, net.config());
  const auto emb = net.embed(net.trunk_features(x), ag::Mode::Eval);
  const long d = 8;
  for (int r = 0; r < 8; ++r) {
    bool found = false;
    for (std::size_t i = 0; i < m.entries.size() && !found; ++i) {
      Eigen::VectorXd row(d);
      for (long k = 0; k < d; ++k) row[k] = double(emb.values()[long(i) * d + k]);
      found = (row.transpose() - set.rows.row(r)).cwiseAbs().maxCoeff() < 1e-5 &&
              class_index(m.entries[i].label) == set.labels[std::size_t(r)];
    }
    CHECK(found);
  }
}

TEST_CASE("export_embeddings with scarce classes") {
  const auto m = fixture::manifest(1);
  const auto store = fixture::store(m, 16, 20, 4);
  model::Model<float> net(fixture::small_config(Variant::S));
  const auto set = export_embeddings(net, m.entries, store, 250, 1);
  CHECK(set.rows.rows() == long(m.entries.size()));
  CHECK(set.warnings.size() == 4);

  std::vector<audio::DatasetEntry> no_anger;
  for (const auto& e : m.entries)
    if (e.label != EmotionClass::Anger) no_anger.push_back(e);
  CHECK(code_of([&] { export_embeddings(net, no_anger, store, 2, 1); }) == ErrorCode::EmptyClass);
}

TEST_CASE("embedding csv round trip") {
  auto s = blobs(3, 2, 4, 0.5, 6);
  std::ostringstream out;
  write_embeddings(out, s);
  CHECK(out.str().rfind("label,e0,e1,e2,e3\n", 0) == 0);
  std::istringstream in(out.str());
  const auto back = read_embeddings(in);
  CHECK(back.labels == s.labels);
  CHECK((back.rows - s.rows).cwiseAbs().maxCoeff() < 1e-8);

  std::istringstream bad("label,e0\n1,abc\n");
  CHECK(code_of([&] { read_embeddings(bad); }) == ErrorCode::FormatError);

  std::ostringstream t;
  Eigen::MatrixXd y(1, 2);
  y << 0.5, -1.0;
  EmbeddingSet one;
  one.labels = {2};
  write_tsne(t, one, y);
  CHECK(t.str().rfind("label,x,y\nsadness,", 0) == 0);
}

TEST_CASE("reconstruction report bounds and errors") {
  const auto m = fixture::manifest(1);
  const auto store = fixture::store(m, 16, 20, 4);
  model::Model<float> sa(fixture::small_config(Variant::SA));
  model::Model<float> sac(fixture::small_config(Variant::SAC));
  std::vector<model::Model<float>*> models{&sa, &sac};
  const auto rows = reconstruction_report<float>(models, m.entries, store);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].variant == Variant::SA);
  CHECK(rows[1].variant == Variant::SAC);
  for (const auto& r : rows) {
    CHECK(r.mse >= 0.0);
    CHECK(r.mse <= 1.0);
    CHECK(r.input_kind == dsp::FeatureKind::Mfcc);
  }
  std::ostringstream out;
  write_reconstruction_report(out, rows);
  CHECK(out.str().rfind("variant,input,mse\nS+A,mfcc,", 0) == 0);

  model::Model<float> s(fixture::small_config(Variant::S));
  std::vector<model::Model<float>*> bad{&sa, &s};
  CHECK(code_of([&] { reconstruction_report<float>(bad, m.entries, store); }) == ErrorCode::VariantLacksDecoder);
}

TEST_CASE("decoder overfits a single clip") {
  const auto m = fixture::manifest(1);
  const auto store = fixture::store(m, 16, 20, 4);
  // Two copies of one clip so batch norm sees a batch of two.
  auto first = m.entries.front();
  auto copy = first;
  copy.clip_path = "clips/copy.wav";
  train::FeatureStore twin;
  twin.insert(audio::entry_key(first), store.at(first));
  twin.insert(audio::entry_key(copy), store.at(first));
  const std::vector<audio::DatasetEntry> pair{first, copy};
  auto cfg = fixture::small_config(Variant::SA);
  train::TrainOptions opts;
  opts.epochs = 10000;
  opts.batch_size = 2;
  auto r = train::train_model<double>(cfg, pair, {}, twin, opts);
  std::vector<model::Model<double>*> models{&r.model};
  const std::vector<audio::DatasetEntry> only{first};
  const auto rows = reconstruction_report<double>(models, only, twin);
  MESSAGE("single-clip reconstruction mse " << rows[0].mse);
  CHECK(rows[0].mse < 1e-2);
}

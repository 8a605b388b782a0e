#include "doctest.h"

#include <random>

#include "oracles.hpp"
#include "ser/dsp.hpp"
#include "ser/error.hpp"
#include "test_util.hpp"

using namespace ser;
using namespace ser::dsp;

namespace {

Eigen::VectorXd random_signal(long n, unsigned seed) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd x(n);
  for (long i = 0; i < n; ++i) x[i] = u(gen);
  return x;
}

audio::AudioClip sine(double hz, long n = 96000) {
  audio::AudioClip c;
  c.samples.resize(n);
  for (long i = 0; i < n; ++i) c.samples[i] = static_cast<float>(0.5 * std::sin(2 * M_PI * hz * i / 16000.0));
  return c;
}

}  // namespace

TEST_CASE("hann window values") {
  const auto w = hann_window<double>(2048);
  CHECK(w[0] == 0.0);
  CHECK(w[1024] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(w[512] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(w.sum() == doctest::Approx(1024.0).epsilon(1e-12));
  CHECK_THROWS_AS(hann_window<double>(1), Error);
}

TEST_CASE("stft shape and trivial inputs") {
  const StftConfig cfg;
  CHECK(cfg.frames(96000) == 188);
  const auto zero = stft_magnitude(Eigen::VectorXd::Zero(96000), cfg);
  CHECK(zero.rows() == 1025);
  CHECK(zero.cols() == 188);
  CHECK(zero.maxCoeff() == 0.0);

  const auto ones = stft_magnitude(Eigen::VectorXd::Ones(8192), cfg);
  CHECK(std::abs(ones(0, 8) - 1024.0) < 1e-6);

  StftConfig bad;
  bad.hop = 300;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("stft matches direct DFT") {
  for (long n : {4096L, 3000L, 2049L}) {
    const auto x = random_signal(n, static_cast<unsigned>(n));
    const auto fast = stft_magnitude(x, StftConfig{});
    const auto slow = oracle::stft_magnitude(x, 2048, 512);
    REQUIRE(fast.rows() == slow.rows());
    REQUIRE(fast.cols() == slow.cols());
    CHECK((fast - slow).cwiseAbs().maxCoeff() < 1e-6);
  }
  StftConfig small{256, 256, 64, true};
  const auto x = random_signal(1000, 3);
  CHECK((stft_magnitude(x, small) - oracle::stft_magnitude(x, 256, 64)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("Parseval on one frame") {
  const auto x = random_signal(2048, 9);
  const StftConfig cfg{2048, 2048, 512, false};
  const auto mag = stft_magnitude(x, cfg);
  REQUIRE(mag.cols() == 1);
  const Eigen::VectorXd wx = hann_window<double>(2048).cwiseProduct(x);
  // Half spectrum: interior bins stand for a conjugate pair.
  double power = mag(0, 0) * mag(0, 0) + mag(1024, 0) * mag(1024, 0);
  for (int k = 1; k < 1024; ++k) power += 2 * mag(k, 0) * mag(k, 0);
  const double expect = 2048.0 * wx.squaredNorm();
  CHECK(std::abs(power - expect) / expect < 1e-6);
}

TEST_CASE("mel scale and filterbank") {
  CHECK(hz_to_mel(1000.0) == doctest::Approx(15.0));
  CHECK(mel_to_hz(hz_to_mel(3210.0)) == doctest::Approx(3210.0));
  const auto fb = mel_filterbank(128, 2048, 16000.0);
  CHECK(fb.rows() == 128);
  CHECK(fb.cols() == 1025);
  CHECK(fb.minCoeff() >= 0.0);
  Eigen::Index prev_peak = -1;
  for (Eigen::Index m = 0; m < fb.rows(); ++m) {
    Eigen::Index first = -1, last = -1;
    for (Eigen::Index k = 0; k < fb.cols(); ++k) {
      if (fb(m, k) > 0) {
        if (first < 0) first = k;
        last = k;
      }
    }
    if (first < 0) continue;  // the lowest bands can fall between FFT bins
    for (Eigen::Index k = first; k <= last; ++k) CHECK(fb(m, k) > 0);
    Eigen::Index peak = 0;
    fb.row(m).maxCoeff(&peak);
    CHECK(peak >= prev_peak);
    prev_peak = peak;
  }
  const auto edges = mel_band_edges(128, 16000.0);
  CHECK(edges.size() == 130);
  CHECK(edges[0] == doctest::Approx(0.0));
  CHECK(edges[129] == doctest::Approx(8000.0));
  for (Eigen::Index i = 1; i < edges.size(); ++i) CHECK(edges[i] > edges[i - 1]);
}

TEST_CASE("power_to_db floor") {
  Eigen::MatrixXd p(1, 3);
  p << 1.0, 1e-12, 0.0;
  const auto db = power_to_db(p);
  CHECK(db(0, 0) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(db(0, 1) == doctest::Approx(-80.0));
  CHECK(db(0, 2) == doctest::Approx(-80.0));
}

TEST_CASE("feature shapes and ranges") {
  const auto clip = audio::fit_duration(audio::synth_clip(EmotionClass::Neutral, 4));
  const auto mel = mel_spectrogram(clip);
  CHECK(mel.rows() == 128);
  CHECK(mel.cols() == 188);
  CHECK(mel.scaled);
  CHECK(mel.values.minCoeff() == 0.0f);
  CHECK(mel.values.maxCoeff() == 1.0f);
  const auto mf = mfcc(clip);
  CHECK(mf.rows() == 40);
  CHECK(mf.cols() == 188);
  CHECK(mf.kind == FeatureKind::Mfcc);
  CHECK(mf.values.minCoeff() >= 0.0f);
  CHECK(mf.values.maxCoeff() <= 1.0f);

  audio::AudioClip silence{Eigen::VectorXf::Zero(96000), 16000};
  CHECK(mel_spectrogram(silence).values.cwiseAbs().maxCoeff() == 0.0f);
  // Only coefficient 0 is non-zero for a constant dB mel matrix.
  const auto quiet = mfcc(silence);
  CHECK(quiet.values.row(0).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((quiet.values.bottomRows(39).array() - 1.0f).abs().maxCoeff() < 1e-6f);
}

TEST_CASE("1 kHz sine peaks at the filter centered nearest 1 kHz") {
  const auto db = log_mel_spectrogram(sine(1000.0));
  const auto edges = mel_band_edges(128, 16000.0);
  Eigen::Index nearest = 0;
  (edges.segment(1, 128).array() - 1000.0).abs().minCoeff(&nearest);
  for (Eigen::Index t = 10; t < 178; t += 17) {
    Eigen::Index arg = 0;
    db.col(t).maxCoeff(&arg);
    CHECK(arg == nearest);
  }
}

TEST_CASE("DCT-II matches the cosine-sum oracle") {
  const auto x = random_signal(128, 21);
  const auto basis = dct_ii_matrix(40, 128);
  const Eigen::VectorXd fast = basis * x;
  const auto slow = oracle::dct_ii(std::vector<double>(x.data(), x.data() + x.size()), 40);
  double err = 0;
  for (int k = 0; k < 40; ++k) err = std::max(err, std::abs(fast[k] - slow[static_cast<std::size_t>(k)]));
  CHECK(err < 1e-8);

  const auto full = dct_ii_matrix(128, 128);
  CHECK((full * full.transpose() - Eigen::MatrixXd::Identity(128, 128)).cwiseAbs().maxCoeff() < 1e-12);

  const Eigen::VectorXd flat = Eigen::VectorXd::Constant(128, -37.5);
  const Eigen::VectorXd c = basis * flat;
  CHECK(c[0] != 0.0);
  CHECK(c.tail(39).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("scale01") {
  Eigen::MatrixXd m(2, 2);
  m << 0, 5, 10, 5;
  Eigen::MatrixXd expect(2, 2);
  expect << 0, 0.5, 1, 0.5;
  CHECK(scale01(m) == expect);
  CHECK(scale01(Eigen::MatrixXd::Constant(3, 3, 7.0)).cwiseAbs().maxCoeff() == 0.0);

  std::mt19937 gen(5);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd x(4, 6);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(gen);
    const double a = std::abs(u(gen)) + 0.1, b = u(gen);
    const Eigen::MatrixXd y = (a * x.array() + b).matrix();
    CHECK((scale01(y) - scale01(x)).cwiseAbs().maxCoeff() < 1e-12);
    const auto s = scale01(x);
    CHECK(s.minCoeff() == 0.0);
    CHECK(s.maxCoeff() == 1.0);
  }
  Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(2, 2);
  bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(scale01(bad), Error);
}

TEST_CASE("SERF round trip") {
  FeatureMatrix m;
  m.kind = FeatureKind::Mfcc;
  m.values = FeatureValues::Random(40, 188);
  m.scaled = true;
  const auto bytes = encode_serf(m);
  CHECK(bytes.size() == 16 + 4 * 40 * 188);
  CHECK(bytes.substr(0, 4) == "SERF");
  const auto back = decode_serf(bytes);
  CHECK(back.kind == FeatureKind::Mfcc);
  CHECK(back.values == m.values);

  testutil::TempDir dir("serf");
  write_serf(dir / "x.serf", m);
  CHECK(testutil::read_bytes(dir / "x.serf") == bytes);
  CHECK(read_serf(dir / "x.serf").values == m.values);

  auto corrupt = bytes;
  corrupt[0] = 'X';
  CHECK_THROWS_AS(decode_serf(corrupt), Error);
  CHECK_THROWS_AS(decode_serf(bytes.substr(0, bytes.size() - 1)), Error);
}

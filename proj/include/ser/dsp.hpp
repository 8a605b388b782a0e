#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>

#include <Eigen/Core>

#include "ser/audio.hpp"
#include "ser/error.hpp"

namespace ser::dsp {

using Eigen::Index;

enum class FeatureKind : std::uint8_t { MelSpectrogram = 0, Mfcc = 1 };

inline constexpr int kMelBands = 128;
inline constexpr int kMfccCoefficients = 40;
inline constexpr double kTopDb = 80.0;
inline constexpr double kLogEpsilon = 1e-10;

constexpr int feature_rows(FeatureKind kind) {
  return kind == FeatureKind::MelSpectrogram ? kMelBands : kMfccCoefficients;
}

/// "mel"/"spectrogram" or "mfcc".
FeatureKind parse_feature_kind(const std::string& name);
std::string feature_kind_name(FeatureKind kind);

struct StftConfig {
  Index window_length = 2048;
  Index fft_size = 2048;
  Index hop = 512;
  bool centered = true;

  void validate() const;
  Index bins() const { return fft_size / 2 + 1; }
  Index frames(Index signal_length) const;
};

using FeatureValues = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Time-frequency feature, rows = bands/coefficients, cols = frames.
struct FeatureMatrix {
  FeatureKind kind = FeatureKind::MelSpectrogram;
  FeatureValues values;
  bool scaled = false;

  Index rows() const { return values.rows(); }
  Index cols() const { return values.cols(); }
};

/// Periodic hann: w[k] = 0.5 (1 - cos(2 pi k / n)).
template <typename Scalar = double>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> hann_window(Index n) {
  if (n < 2) throw Error(ErrorCode::InvalidLength, "hann window needs n >= 2");
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> w(n);
  for (Index k = 0; k < n; ++k) {
    w[k] = Scalar(0.5) * (Scalar(1) - std::cos(Scalar(2) * std::numbers::pi_v<Scalar> *
                                                Scalar(k) / Scalar(n)));
  }
  return w;
}

/// Magnitude STFT, (fft_size/2 + 1) x frames. Centered framing reflect-pads
/// fft_size/2 samples on both sides.
Eigen::MatrixXd stft_magnitude(const Eigen::Ref<const Eigen::VectorXd>& signal,
                               const StftConfig& cfg = {});
Eigen::MatrixXd stft_magnitude(const audio::AudioClip& clip, const StftConfig& cfg = {});

double hz_to_mel(double hz);  // Slaney: linear below 1 kHz, logarithmic above
double mel_to_hz(double mel);

/// The n_mels + 2 band edge frequencies in Hz, evenly spaced in mel.
Eigen::VectorXd mel_band_edges(int n_mels, double sample_rate);

/// Area-normalized triangular filters, n_mels x (fft_size/2 + 1).
Eigen::MatrixXd mel_filterbank(int n_mels, Index fft_size, double sample_rate);

/// 10 log10(x + 1e-10), floored at max - top_db.
Eigen::MatrixXd power_to_db(const Eigen::Ref<const Eigen::MatrixXd>& power, double top_db = kTopDb);

/// Unscaled dB mel-spectrogram, 128 x frames.
Eigen::MatrixXd log_mel_spectrogram(const audio::AudioClip& clip);

/// Orthonormal DCT-II basis, rows = kept coefficients, cols = input length.
Eigen::MatrixXd dct_ii_matrix(Index keep, Index length);

/// (x - min) / (max - min); a constant input maps to all zeros.
template <typename Derived>
typename Derived::PlainObject scale01(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  if (!m.allFinite()) throw Error(ErrorCode::NonFiniteInput, "scale01 input has non-finite values");
  typename Derived::PlainObject out(m.rows(), m.cols());
  if (m.size() == 0) return out;
  const Scalar lo = m.minCoeff();
  const Scalar hi = m.maxCoeff();
  if (hi == lo) {
    out.setZero();
    return out;
  }
  out = ((m.array() - lo) / (hi - lo)).matrix();
  return out;
}

FeatureMatrix mel_spectrogram(const audio::AudioClip& clip);
FeatureMatrix mfcc(const audio::AudioClip& clip);
FeatureMatrix featurize(const audio::AudioClip& clip, FeatureKind kind);

// SERF v1 feature cache: 16-byte header then row-major little-endian f32.
std::string encode_serf(const FeatureMatrix& m);
FeatureMatrix decode_serf(const std::string& bytes);
void write_serf(const std::filesystem::path& path, const FeatureMatrix& m);
FeatureMatrix read_serf(const std::filesystem::path& path);

}  // namespace ser::dsp

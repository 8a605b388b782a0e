#include "ser/dsp.hpp"

#include <algorithm>
#include <complex>
#include <cstring>
#include <fstream>
#include <vector>

#include <unsupported/Eigen/FFT>

namespace ser::dsp {

FeatureKind parse_feature_kind(const std::string& name) {
  if (name == "mel" || name == "spectrogram" || name == "melspectrogram") return FeatureKind::MelSpectrogram;
  if (name == "mfcc") return FeatureKind::Mfcc;
  throw Error(ErrorCode::InvalidConfig, "unknown input kind '" + name + "'");
}

std::string feature_kind_name(FeatureKind kind) {
  return kind == FeatureKind::MelSpectrogram ? "spectrogram" : "mfcc";
}

void StftConfig::validate() const {
  if (window_length != fft_size) throw Error(ErrorCode::InvalidConfig, "window_length must equal fft_size");
  if (fft_size < 2 || (fft_size & (fft_size - 1)) != 0) {
    throw Error(ErrorCode::InvalidConfig, "fft_size must be a power of two");
  }
  if (hop < 1 || window_length % hop != 0) throw Error(ErrorCode::InvalidConfig, "hop must divide window_length");
}

Index StftConfig::frames(Index signal_length) const {
  if (centered) return 1 + signal_length / hop;
  if (signal_length < fft_size) return 0;
  return 1 + (signal_length - fft_size) / hop;
}

namespace {

// numpy-style "reflect" (edge sample not repeated), periodic for long pads.
Index reflect_index(Index i, Index len) {
  if (len == 1) return 0;
  const Index period = 2 * (len - 1);
  i %= period;
  if (i < 0) i += period;
  return i >= len ? period - i : i;
}

}  // namespace

Eigen::MatrixXd stft_magnitude(const Eigen::Ref<const Eigen::VectorXd>& signal, const StftConfig& cfg) {
  cfg.validate();
  if (signal.size() < 1) throw Error(ErrorCode::InvalidLength, "stft needs at least one sample");
  const Index n = cfg.fft_size;
  const Index frames = cfg.frames(signal.size());
  const Index offset = cfg.centered ? n / 2 : 0;
  const Eigen::VectorXd window = hann_window<double>(n);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(static_cast<std::size_t>(n));
  std::vector<std::complex<double>> spectrum(static_cast<std::size_t>(cfg.bins()));

  Eigen::MatrixXd mag(cfg.bins(), frames);
  for (Index t = 0; t < frames; ++t) {
    const Index start = t * cfg.hop - offset;
    for (Index k = 0; k < n; ++k) {
      frame[static_cast<std::size_t>(k)] = window[k] * signal[reflect_index(start + k, signal.size())];
    }
    fft.fwd(spectrum.data(), frame.data(), n);
    for (Index b = 0; b < cfg.bins(); ++b) mag(b, t) = std::abs(spectrum[static_cast<std::size_t>(b)]);
  }
  return mag;
}

Eigen::MatrixXd stft_magnitude(const audio::AudioClip& clip, const StftConfig& cfg) {
  return stft_magnitude(clip.samples.cast<double>(), cfg);
}

namespace {
constexpr double kFSp = 200.0 / 3.0;
constexpr double kMinLogHz = 1000.0;
constexpr double kMinLogMel = kMinLogHz / kFSp;
const double kLogStep = std::log(6.4) / 27.0;
}  // namespace

double hz_to_mel(double hz) {
  if (hz >= kMinLogHz) return kMinLogMel + std::log(hz / kMinLogHz) / kLogStep;
  return hz / kFSp;
}

double mel_to_hz(double mel) {
  if (mel >= kMinLogMel) return kMinLogHz * std::exp(kLogStep * (mel - kMinLogMel));
  return kFSp * mel;
}

Eigen::VectorXd mel_band_edges(int n_mels, double sample_rate) {
  const double lo = hz_to_mel(0.0);
  const double hi = hz_to_mel(sample_rate / 2.0);
  const Index count = n_mels + 2;
  Eigen::VectorXd edges(count);
  const double step = (hi - lo) / static_cast<double>(count - 1);
  for (Index i = 0; i < count; ++i) {
    edges[i] = mel_to_hz(i == count - 1 ? hi : lo + step * static_cast<double>(i));
  }
  return edges;
}

Eigen::MatrixXd mel_filterbank(int n_mels, Index fft_size, double sample_rate) {
  if (n_mels < 1) throw Error(ErrorCode::InvalidConfig, "n_mels must be >= 1");
  if (fft_size < 2 || (fft_size & (fft_size - 1)) != 0) {
    throw Error(ErrorCode::InvalidConfig, "fft_size must be a power of two");
  }
  const Index bins = fft_size / 2 + 1;
  const Eigen::VectorXd edges = mel_band_edges(n_mels, sample_rate);
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(n_mels, bins);
  for (int m = 0; m < n_mels; ++m) {
    const double f_lo = edges[m], f_mid = edges[m + 1], f_hi = edges[m + 2];
    const double norm = 2.0 / (f_hi - f_lo);
    for (Index b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * sample_rate / static_cast<double>(fft_size);
      const double rising = (f - f_lo) / (f_mid - f_lo);
      const double falling = (f_hi - f) / (f_hi - f_mid);
      fb(m, b) = norm * std::max(0.0, std::min(rising, falling));
    }
  }
  return fb;
}

Eigen::MatrixXd power_to_db(const Eigen::Ref<const Eigen::MatrixXd>& power, double top_db) {
  Eigen::MatrixXd db = ((power.array() + kLogEpsilon).log10() * 10.0).matrix();
  const double floor = db.maxCoeff() - top_db;
  return db.cwiseMax(floor);
}

Eigen::MatrixXd log_mel_spectrogram(const audio::AudioClip& clip) {
  static const Eigen::MatrixXd filters = mel_filterbank(kMelBands, 2048, audio::kSampleRate);
  const Eigen::MatrixXd power = stft_magnitude(clip).array().square().matrix();
  return power_to_db(filters * power);
}

Eigen::MatrixXd dct_ii_matrix(Index keep, Index length) {
  Eigen::MatrixXd basis(keep, length);
  const double n = static_cast<double>(length);
  for (Index k = 0; k < keep; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (Index i = 0; i < length; ++i) {
      basis(k, i) = s * std::cos(std::numbers::pi * static_cast<double>(k) *
                                 (2.0 * static_cast<double>(i) + 1.0) / (2.0 * n));
    }
  }
  return basis;
}

namespace {

FeatureMatrix to_feature(FeatureKind kind, const Eigen::MatrixXd& unscaled) {
  FeatureMatrix out;
  out.kind = kind;
  out.values = scale01(unscaled).cast<float>();
  out.scaled = true;
  return out;
}

}  // namespace

FeatureMatrix mel_spectrogram(const audio::AudioClip& clip) {
  return to_feature(FeatureKind::MelSpectrogram, log_mel_spectrogram(clip));
}

FeatureMatrix mfcc(const audio::AudioClip& clip) {
  static const Eigen::MatrixXd dct = dct_ii_matrix(kMfccCoefficients, kMelBands);
  return to_feature(FeatureKind::Mfcc, dct * log_mel_spectrogram(clip));
}

FeatureMatrix featurize(const audio::AudioClip& clip, FeatureKind kind) {
  return kind == FeatureKind::MelSpectrogram ? mel_spectrogram(clip) : mfcc(clip);
}

std::string encode_serf(const FeatureMatrix& m) {
  if (m.rows() > 0xffff || m.cols() > 0xffffffffLL) throw Error(ErrorCode::FormatError, "feature too large");
  std::string out;
  out.reserve(16 + 4 * static_cast<std::size_t>(m.values.size()));
  out += "SERF";
  out.push_back(1);
  out.push_back(static_cast<char>(m.kind));
  const auto rows = static_cast<std::uint16_t>(m.rows());
  const auto cols = static_cast<std::uint32_t>(m.cols());
  out.push_back(static_cast<char>(rows & 0xff));
  out.push_back(static_cast<char>(rows >> 8));
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((cols >> (8 * i)) & 0xff));
  out.append(4, '\0');
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      std::uint32_t raw;
      const float v = m.values(r, c);
      std::memcpy(&raw, &v, sizeof raw);
      for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((raw >> (8 * i)) & 0xff));
    }
  }
  return out;
}

FeatureMatrix decode_serf(const std::string& bytes) {
  if (bytes.size() < 16 || bytes.compare(0, 4, "SERF") != 0) {
    throw Error(ErrorCode::FormatError, "not a SERF file");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (p[4] != 1) throw Error(ErrorCode::FormatError, "unsupported SERF version " + std::to_string(p[4]));
  if (p[5] > 1) throw Error(ErrorCode::FormatError, "unknown SERF feature kind");
  const Index rows = p[6] | (p[7] << 8);
  const Index cols = static_cast<Index>(static_cast<std::uint32_t>(p[8]) | (static_cast<std::uint32_t>(p[9]) << 8) |
                                        (static_cast<std::uint32_t>(p[10]) << 16) |
                                        (static_cast<std::uint32_t>(p[11]) << 24));
  if (bytes.size() != 16 + 4 * static_cast<std::size_t>(rows * cols)) {
    throw Error(ErrorCode::FormatError, "SERF payload size mismatch");
  }
  FeatureMatrix m;
  m.kind = static_cast<FeatureKind>(p[5]);
  m.values.resize(rows, cols);
  const unsigned char* data = p + 16;
  for (Index i = 0; i < rows * cols; ++i) {
    const std::uint32_t raw = static_cast<std::uint32_t>(data[4 * i]) |
                              (static_cast<std::uint32_t>(data[4 * i + 1]) << 8) |
                              (static_cast<std::uint32_t>(data[4 * i + 2]) << 16) |
                              (static_cast<std::uint32_t>(data[4 * i + 3]) << 24);
    float v;
    std::memcpy(&v, &raw, sizeof v);
    m.values.data()[i] = v;
  }
  m.scaled = m.values.size() == 0 || (m.values.minCoeff() >= 0.0f && m.values.maxCoeff() <= 1.0f);
  return m;
}

void write_serf(const std::filesystem::path& path, const FeatureMatrix& m) {
  const std::string bytes = encode_serf(m);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

FeatureMatrix read_serf(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::FileNotFound, path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_serf(bytes);
}

}  // namespace ser::dsp

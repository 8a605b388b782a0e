#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ser/emotion.hpp"

namespace ser::audio {

inline constexpr int kSampleRate = 16000;
inline constexpr Eigen::Index kClipSamples = 6 * kSampleRate;  // 96000

/// Mono waveform; samples lie in [-1, 1].
struct AudioClip {
  Eigen::VectorXf samples;
  int sample_rate = kSampleRate;

  Eigen::Index size() const { return samples.size(); }
};

enum class WavEncoding { Pcm16, Float32 };

/// Reads a mono RIFF/WAVE file (PCM16 or float32). 16-bit values are divided
/// by 32768. Throws FileNotFound, UnsupportedFormat or UnsupportedSampleRate.
AudioClip load_wav(const std::filesystem::path& path);

void write_wav(const std::filesystem::path& path, const AudioClip& clip,
               WavEncoding encoding = WavEncoding::Pcm16);

/// Zero-pads or truncates (keeping the head) to exactly 96000 samples.
AudioClip fit_duration(const AudioClip& clip);

/// Deterministic labelled clip of 2-6 s; each class has its own pitch band,
/// harmonic roll-off and amplitude modulation.
AudioClip synth_clip(EmotionClass label, std::uint64_t seed);

struct DatasetEntry {
  std::string clip_path;  // as written in the manifest, relative to it
  EmotionClass label = EmotionClass::Neutral;
  int session = 1;
  std::string speaker;
};

struct CorpusManifest {
  std::vector<DatasetEntry> entries;
  std::array<int, kNumClasses> class_counts{};
  std::filesystem::path base_dir;  // directory holding the manifest file

  void recount();
  std::filesystem::path resolve(const DatasetEntry& e) const { return base_dir / e.clip_path; }
  /// Checks label/session ranges and class_counts; optionally two speakers per session.
  void validate(bool require_two_speakers) const;
};

/// Key used to name cached features: the clip file stem.
std::string entry_key(const DatasetEntry& e);

CorpusManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const CorpusManifest& manifest);

struct SynthOptions {
  int per_class = 8;   // clips per class per session (balanced mode)
  int sessions = 5;
  std::uint64_t seed = 0;
  /// Optional class shares in percent (neutral, happiness, sadness, anger)
  /// with an absolute total; overrides per_class when set.
  std::optional<std::array<double, kNumClasses>> imbalance_percent;
  int total = 0;
};

/// Largest-remainder apportionment of `total` over percentage shares.
std::array<int, kNumClasses> apportion(const std::array<double, kNumClasses>& percent, int total);

/// Writes clips under out_dir/clips and out_dir/manifest.csv.
CorpusManifest synth_corpus(const SynthOptions& options, const std::filesystem::path& out_dir);

}  // namespace ser::audio

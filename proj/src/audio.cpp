#include "ser/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "ser/error.hpp"
#include "ser/random.hpp"

namespace ser::audio {

namespace fs = std::filesystem;

namespace {

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

}  // namespace

AudioClip load_wav(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::FileNotFound, path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw Error(ErrorCode::UnsupportedFormat, path.string() + ": not a RIFF/WAVE file");
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) throw Error(ErrorCode::UnsupportedFormat, "truncated fmt chunk");
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      bits = read_u16(chunk + 22);
      if (format == kFormatExtensible) {
        if (avail < 26) throw Error(ErrorCode::UnsupportedFormat, "truncated extensible fmt");
        format = read_u16(chunk + 8 + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = avail;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt || data == nullptr) {
    throw Error(ErrorCode::UnsupportedFormat, path.string() + ": missing fmt or data chunk");
  }
  if (channels != 1) {
    throw Error(ErrorCode::UnsupportedFormat,
                path.string() + ": expected mono, got " + std::to_string(channels) + " channels");
  }
  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool float32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !float32) {
    throw Error(ErrorCode::UnsupportedFormat, path.string() + ": encoding format " +
                                                  std::to_string(format) + "/" +
                                                  std::to_string(bits) + " bits");
  }
  if (rate != static_cast<std::uint32_t>(kSampleRate)) {
    throw Error(ErrorCode::UnsupportedSampleRate, path.string() + ": " + std::to_string(rate) + " Hz");
  }

  AudioClip clip;
  clip.sample_rate = kSampleRate;
  if (pcm16) {
    const auto n = static_cast<Eigen::Index>(data_size / 2);
    clip.samples.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto v = static_cast<std::int16_t>(read_u16(data + 2 * i));
      clip.samples[i] = static_cast<float>(v) / 32768.0f;
    }
  } else {
    const auto n = static_cast<Eigen::Index>(data_size / 4);
    clip.samples.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const std::uint32_t raw = read_u32(data + 4 * i);
      float v;
      std::memcpy(&v, &raw, sizeof v);
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteInput, path.string());
      clip.samples[i] = std::clamp(v, -1.0f, 1.0f);
    }
  }
  return clip;
}

void write_wav(const fs::path& path, const AudioClip& clip, WavEncoding encoding) {
  const bool pcm = encoding == WavEncoding::Pcm16;
  const std::uint16_t bits = pcm ? 16 : 32;
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  const std::uint32_t data_bytes = n * (bits / 8);

  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, pcm ? kFormatPcm : kFormatFloat);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * (bits / 8));
  put_u16(out, bits / 8);
  put_u16(out, bits);
  out += "data";
  put_u32(out, data_bytes);
  for (std::uint32_t i = 0; i < n; ++i) {
    const float x = clip.samples[i];
    if (pcm) {
      const long q = std::lround(static_cast<double>(x) * 32768.0);
      put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L))));
    } else {
      std::uint32_t raw;
      std::memcpy(&raw, &x, sizeof raw);
      put_u32(out, raw);
    }
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

AudioClip fit_duration(const AudioClip& clip) {
  if (clip.samples.size() == 0) throw Error(ErrorCode::EmptyClip, "clip has no samples");
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.samples = Eigen::VectorXf::Zero(kClipSamples);
  const Eigen::Index keep = std::min(kClipSamples, clip.samples.size());
  out.samples.head(keep) = clip.samples.head(keep);
  return out;
}

namespace {

struct Voice {
  double f0;           // Hz
  double f0_spread;    // +- Hz drawn per clip
  double glide;        // relative pitch change over the clip
  double vibrato_hz;
  double vibrato_depth;  // relative
  double am_hz;
  double am_depth;
  int harmonics;
  double rolloff;      // harmonic h has amplitude h^-rolloff
};

Voice voice_for(EmotionClass label) {
  switch (label) {
    case EmotionClass::Neutral: return {140.0, 8.0, 0.0, 0.0, 0.0, 3.0, 0.2, 6, 1.0};
    case EmotionClass::Happiness: return {270.0, 12.0, 0.12, 5.0, 0.03, 6.0, 0.4, 8, 1.0};
    case EmotionClass::Sadness: return {100.0, 6.0, -0.10, 0.0, 0.0, 1.5, 0.3, 4, 2.0};
    case EmotionClass::Anger: return {210.0, 10.0, 0.0, 0.0, 0.0, 9.0, 0.7, 12, 0.5};
  }
  return {};
}

}  // namespace

AudioClip synth_clip(EmotionClass label, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x5e7c11b5ULL + static_cast<std::uint64_t>(class_index(label))));
  const Voice v = voice_for(label);

  const double seconds = rng.uniform(2.0, 6.0);
  const auto n = static_cast<Eigen::Index>(std::lround(seconds * kSampleRate));
  const double f0 = v.f0 + rng.uniform(-v.f0_spread, v.f0_spread);
  const double am_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

  Eigen::VectorXd wave(n);
  double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double dt = 1.0 / kSampleRate;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dt;
    const double frac = static_cast<double>(i) / static_cast<double>(n);
    const double pitch = f0 * (1.0 + v.glide * frac) *
                         (1.0 + v.vibrato_depth * std::sin(2.0 * std::numbers::pi * v.vibrato_hz * t));
    phase += 2.0 * std::numbers::pi * pitch * dt;
    double s = 0.0;
    for (int h = 1; h <= v.harmonics; ++h) {
      s += std::pow(static_cast<double>(h), -v.rolloff) * std::sin(h * phase);
    }
    const double envelope =
        1.0 - v.am_depth * 0.5 * (1.0 + std::sin(2.0 * std::numbers::pi * v.am_hz * t + am_phase));
    wave[i] = s * envelope;
  }
  const double peak = wave.cwiseAbs().maxCoeff();
  if (peak > 0.0) wave *= 0.7 / peak;

  AudioClip clip;
  clip.samples.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = wave[i] + 0.01 * rng.normal();
    clip.samples[i] = static_cast<float>(std::clamp(x, -1.0, 1.0));
  }
  return clip;
}

void CorpusManifest::recount() {
  class_counts.fill(0);
  for (const auto& e : entries) ++class_counts[static_cast<std::size_t>(class_index(e.label))];
}

void CorpusManifest::validate(bool require_two_speakers) const {
  std::array<int, kNumClasses> counts{};
  std::map<int, std::set<std::string>> speakers;
  for (const auto& e : entries) {
    const int c = class_index(e.label);
    if (c < 0 || c >= kNumClasses) throw Error(ErrorCode::FormatError, "label out of range");
    if (e.session < 1 || e.session > 5) {
      throw Error(ErrorCode::FormatError, "session out of range: " + std::to_string(e.session));
    }
    ++counts[static_cast<std::size_t>(c)];
    speakers[e.session].insert(e.speaker);
  }
  if (counts != class_counts) throw Error(ErrorCode::FormatError, "class_counts inconsistent with entries");
  if (require_two_speakers) {
    for (const auto& [session, spk] : speakers) {
      if (spk.size() < 2) {
        throw Error(ErrorCode::InsufficientSpeakers,
                    "session " + std::to_string(session) + " has fewer than two speakers");
      }
    }
  }
}

std::string entry_key(const DatasetEntry& e) { return fs::path(e.clip_path).stem().string(); }

CorpusManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::FileNotFound, path.string());
  CorpusManifest m;
  m.base_dir = path.parent_path();
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != "path,label,session,speaker") {
        throw Error(ErrorCode::FormatError, path.string() + ": bad manifest header");
      }
      continue;
    }
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 4) {
      throw Error(ErrorCode::FormatError, path.string() + ":" + std::to_string(line_no) + ": expected 4 fields");
    }
    const auto label = parse_label(fields[1]);
    if (!label) {
      throw Error(ErrorCode::FormatError,
                  path.string() + ":" + std::to_string(line_no) + ": unknown label '" + fields[1] + "'");
    }
    DatasetEntry e;
    e.clip_path = fields[0];
    e.label = *label;
    try {
      e.session = std::stoi(fields[2]);
    } catch (const std::exception&) {
      throw Error(ErrorCode::FormatError, path.string() + ":" + std::to_string(line_no) + ": bad session");
    }
    e.speaker = fields[3];
    m.entries.push_back(std::move(e));
  }
  m.recount();
  m.validate(false);
  return m;
}

void write_manifest(const fs::path& path, const CorpusManifest& manifest) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "path,label,session,speaker\n";
  for (const auto& e : manifest.entries) {
    out << e.clip_path << ',' << label_name(e.label) << ',' << e.session << ',' << e.speaker << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

std::array<int, kNumClasses> apportion(const std::array<double, kNumClasses>& percent, int total) {
  double sum = 0.0;
  for (double p : percent) sum += p;
  std::array<int, kNumClasses> counts{};
  std::array<double, kNumClasses> remainder{};
  int assigned = 0;
  for (std::size_t c = 0; c < percent.size(); ++c) {
    const double exact = percent[c] / sum * total;
    counts[c] = static_cast<int>(std::floor(exact + 1e-9));
    remainder[c] = exact - counts[c];
    assigned += counts[c];
  }
  while (assigned < total) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < remainder.size(); ++c) {
      if (remainder[c] > remainder[best]) best = c;
    }
    ++counts[best];
    remainder[best] = -1.0;
    ++assigned;
  }
  return counts;
}

CorpusManifest synth_corpus(const SynthOptions& options, const fs::path& out_dir) {
  if (options.sessions < 1 || options.sessions > 5) {
    throw Error(ErrorCode::InvalidConfig, "sessions must be in 1..5");
  }
  std::array<int, kNumClasses> per_class_total{};
  const bool imbalanced = options.imbalance_percent.has_value();
  if (imbalanced) {
    if (options.total < 1) throw Error(ErrorCode::InvalidConfig, "total must be positive");
    per_class_total = apportion(*options.imbalance_percent, options.total);
  } else {
    if (options.per_class < 1) throw Error(ErrorCode::InvalidConfig, "per_class must be >= 1");
    per_class_total.fill(options.per_class * options.sessions);
  }

  std::error_code ec;
  fs::create_directories(out_dir / "clips", ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + (out_dir / "clips").string());

  CorpusManifest m;
  m.base_dir = out_dir;
  // Clip j of a class goes to session (j mod sessions) + 1; speakers alternate
  // between consecutive passes over the sessions, offset by class so that a
  // single clip per class and session still yields two speakers.
  for (int session = 1; session <= options.sessions; ++session) {
    for (int speaker = 0; speaker < 2; ++speaker) {
      for (auto label : kAllClasses) {
        const int count = per_class_total[static_cast<std::size_t>(class_index(label))];
        for (int j = 0; j < count; ++j) {
          if (j % options.sessions + 1 != session || (j / options.sessions + class_index(label)) % 2 != speaker) continue;
          // Disjoint seed range per (session, speaker).
          const std::uint64_t clip_seed = options.seed * 1'000'000ULL +
                                          static_cast<std::uint64_t>(session) * 100'000ULL +
                                          static_cast<std::uint64_t>(speaker) * 50'000ULL +
                                          static_cast<std::uint64_t>(class_index(label)) * 10'000ULL +
                                          static_cast<std::uint64_t>(j);
          DatasetEntry e;
          e.label = label;
          e.session = session;
          e.speaker = "s" + std::to_string(session) + (speaker == 0 ? "a" : "b");
          char name[64];
          std::snprintf(name, sizeof name, "%s_%s_%05d.wav", e.speaker.c_str(),
                        std::string(label_name(label)).c_str(), j);
          e.clip_path = std::string("clips/") + name;
          write_wav(out_dir / e.clip_path, synth_clip(label, clip_seed));
          m.entries.push_back(std::move(e));
        }
      }
    }
  }
  m.recount();
  write_manifest(out_dir / "manifest.csv", m);
  return m;
}

}  // namespace ser::audio

#pragma once

// In-memory corpora for training tests: a manifest with two speakers per
// session and class-separable feature matrices, no audio involved.

#include <random>
#include <string>

#include "ser/train.hpp"

namespace fixture {

// `per_speaker` clips of every class for each of two speakers per session.
inline ser::audio::CorpusManifest manifest(int per_speaker, int sessions = 5) {
  ser::audio::CorpusManifest m;
  int serial = 0;
  for (int s = 1; s <= sessions; ++s) {
    for (const char* spk : {"a", "b"}) {
      for (auto c : ser::kAllClasses) {
        for (int i = 0; i < per_speaker; ++i) {
          ser::audio::DatasetEntry e;
          e.clip_path = "clips/c" + std::to_string(serial++) + ".wav";
          e.label = c;
          e.session = s;
          e.speaker = "s" + std::to_string(s) + spk;
          m.entries.push_back(e);
        }
      }
    }
  }
  m.recount();
  return m;
}

// Class c lights up a horizontal band of rows; uniform noise elsewhere.
inline ser::dsp::FeatureMatrix separable_feature(ser::EmotionClass c, int rows, int cols, std::mt19937& gen,
                                                 float noise = 0.3f) {
  std::uniform_real_distribution<float> u(0.0f, noise);
  ser::dsp::FeatureMatrix f;
  f.kind = ser::dsp::FeatureKind::Mfcc;
  f.values.resize(rows, cols);
  const int band = rows / ser::kNumClasses;
  const int k = ser::class_index(c);
  for (int r = 0; r < rows; ++r) {
    for (int t = 0; t < cols; ++t) {
      const bool lit = r >= k * band && r < (k + 1) * band;
      f.values(r, t) = (lit ? 0.7f : 0.0f) + u(gen);
    }
  }
  f.scaled = true;
  return f;
}

inline ser::train::FeatureStore store(const ser::audio::CorpusManifest& m, int rows, int cols, unsigned seed,
                                      float noise = 0.3f) {
  std::mt19937 gen(seed);
  ser::train::FeatureStore s;
  for (const auto& e : m.entries) s.insert(ser::audio::entry_key(e), separable_feature(e.label, rows, cols, gen, noise));
  return s;
}

// Small MFCC-kind model that trains in milliseconds on 16 x 20 inputs.
inline ser::model::ModelConfig small_config(ser::model::Variant v, int kernels = 4) {
  auto cfg = ser::model::ModelConfig::defaults(ser::dsp::FeatureKind::Mfcc, v);
  cfg.input_rows = 16;
  cfg.input_cols = 20;
  cfg.kernels_per_path = kernels;
  cfg.fc_width = 8;
  cfg.decoder_hidden = {16};
  cfg.dropout_rate = 0.25;
  cfg.seed = 5;
  return cfg;
}

}  // namespace fixture

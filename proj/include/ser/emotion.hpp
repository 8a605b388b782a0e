#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace ser {

enum class EmotionClass : int { Neutral = 0, Happiness = 1, Sadness = 2, Anger = 3 };

inline constexpr int kNumClasses = 4;

inline constexpr std::array<EmotionClass, kNumClasses> kAllClasses = {
    EmotionClass::Neutral, EmotionClass::Happiness, EmotionClass::Sadness, EmotionClass::Anger};

/// Manifest spelling: neutral|happiness|sadness|anger.
constexpr std::string_view label_name(EmotionClass c) {
  switch (c) {
    case EmotionClass::Neutral: return "neutral";
    case EmotionClass::Happiness: return "happiness";
    case EmotionClass::Sadness: return "sadness";
    case EmotionClass::Anger: return "anger";
  }
  return "neutral";
}

constexpr std::optional<EmotionClass> parse_label(std::string_view s) {
  for (auto c : kAllClasses) {
    if (label_name(c) == s) return c;
  }
  return std::nullopt;
}

constexpr int class_index(EmotionClass c) { return static_cast<int>(c); }

}  // namespace ser

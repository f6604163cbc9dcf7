#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace miml {

// The 14 technique labels, using the annotation-file strings byte for byte.
// Enum order is alphabetical; tie-breaks elsewhere rely on this index order.
inline constexpr int kNumTechniques = 14;

inline constexpr std::array<std::string_view, kNumTechniques> kTechniqueNames = {
    "Appeal_to_Authority",
    "Appeal_to_fear-prejudice",
    "Bandwagon,Reductio_ad_hitlerum",
    "Black-and-White_Fallacy",
    "Causal_Oversimplification",
    "Doubt",
    "Exaggeration,Minimisation",
    "Flag-Waving",
    "Loaded_Language",
    "Name_Calling,Labeling",
    "Repetition",
    "Slogans",
    "Thought-terminating_Cliches",
    "Whataboutism,Straw_Men,Red_Herring",
};

inline std::string_view technique_name(int t) { return kTechniqueNames.at(static_cast<std::size_t>(t)); }

inline std::optional<int> technique_from_name(std::string_view name) {
  for (int i = 0; i < kNumTechniques; ++i) {
    if (kTechniqueNames[static_cast<std::size_t>(i)] == name) return i;
  }
  return std::nullopt;
}

}  // namespace miml

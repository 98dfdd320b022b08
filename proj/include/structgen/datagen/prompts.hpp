// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <string>
#include <string_view>
#include <vector>

#include "structgen/core/error.hpp"
#include "structgen/datagen/scene.hpp"

namespace structgen::datagen {

/// Fixed prompt vocabulary (64 entries). Id 0 is padding and never emitted.
inline constexpr std::array<std::string_view, 64> kVocabulary{
    "<pad>",  "<unk>",   "this",   "item",    ",",       "without", "any",     "change",  "rotate",  "turn",
    "left",   "right",   "the",    "object",  "with",    "text",    "slightly", "a",      "an",      "to",
    "view",   "from",    "side",   "keep",    "same",    "label",   "logo",    "front",   "back",    "tilt",
    "shape",  "box",     "card",   "sign",    "rectangle", "ellipse", "triangle", "red",  "green",   "blue",
    "yellow", "white",   "black",  "dark",    "light",   "color",   "bright",  "small",   "large",   "new",
    "angle",  "pose",    "show",   "it",      "again",   "please",  "clockwise", "counter", "on",   "of",
    "and",    "in",      "its",    "."};

using TokenIds = std::vector<int>;

inline int token_id(std::string_view word) {
    const auto it = std::find(kVocabulary.begin(), kVocabulary.end(), word);
    return it == kVocabulary.end() ? 1 : static_cast<int>(it - kVocabulary.begin());
}

/// Lower-cases, splits on whitespace, and emits ',' and '.' as their own tokens.
inline TokenIds tokenize(std::string_view prompt) {
    TokenIds ids;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) ids.push_back(token_id(word)), word.clear();
    };
    for (char ch : prompt) {
        if (std::isspace(static_cast<unsigned char>(ch))) flush();
        else if (ch == ',' || ch == '.') flush(), ids.push_back(token_id(std::string(1, ch)));
        else word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
    flush();
    return ids;
}

/// An edit prompt and the pose change it asks for.
struct PromptTemplate {
    std::string_view text;
    Pose delta;
};

/// Template 0 is the neutral prompt used for the reconstruction experiment.
inline constexpr int kNeutralPrompt = 0;
inline const std::array<PromptTemplate, 5> kPromptTemplates{{
    {"this item, without any change", {0.0, 0.0}},
    {"rotate this item left", {0.0, -15.0}},
    {"rotate this item right", {0.0, 15.0}},
    {"turn this item left", {-0.25, 0.0}},
    {"turn this item right", {0.25, 0.0}},
}};

inline const PromptTemplate& prompt_template(int id) {
    require(id >= 0 && id < static_cast<int>(kPromptTemplates.size()), ErrorKind::config,
            "prompt template id out of range: " + std::to_string(id));
    return kPromptTemplates[static_cast<std::size_t>(id)];
}

}  // namespace structgen::datagen

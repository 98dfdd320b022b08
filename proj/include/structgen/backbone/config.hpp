// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "structgen/core/error.hpp"

namespace structgen::backbone {

struct BackboneConfig {
    int image_size = 64;
    int patch_size = 8;
    int channels = 3;
    int width = 256;  // d; > patch_dim leaves room for the time and role embeddings beside the patch
    int depth = 4;
    int heads = 4;
    int mlp_ratio = 4;
    int text_vocab = 64;
    int max_text_len = 8;

    int grid() const { return image_size / patch_size; }
    int latent_tokens() const { return grid() * grid(); }
    int patch_dim() const { return patch_size * patch_size * channels; }
    int head_dim() const { return width / heads; }
    int mlp_width() const { return width * mlp_ratio; }

    void validate() const {
        auto positive = [](int v, const char* name) {
            require(v > 0, ErrorKind::config, std::string("backbone.") + name + " must be > 0");
        };
        positive(image_size, "image_size");
        positive(patch_size, "patch_size");
        positive(channels, "channels");
        positive(width, "width");
        positive(depth, "depth");
        positive(heads, "heads");
        positive(mlp_ratio, "mlp_ratio");
        positive(text_vocab, "text_vocab");
        positive(max_text_len, "max_text_len");
        require(image_size % patch_size == 0, ErrorKind::config, "backbone.image_size must be divisible by backbone.patch_size");
        require(width % heads == 0, ErrorKind::config, "backbone.width must be divisible by backbone.heads");
        // Two rotary axes, each made of (cos, sin) pairs.
        require(head_dim() % 4 == 0, ErrorKind::config, "backbone.width / backbone.heads must be divisible by 4");
    }

    bool operator==(const BackboneConfig&) const = default;

    std::map<std::string, int*> fields() {
        return {{"image_size", &image_size}, {"patch_size", &patch_size}, {"channels", &channels},
                {"width", &width},           {"depth", &depth},           {"heads", &heads},
                {"mlp_ratio", &mlp_ratio},   {"text_vocab", &text_vocab}, {"max_text_len", &max_text_len}};
    }
};

/// `key = value` lines, one per field, sorted by key.
inline std::string to_kv(BackboneConfig cfg) {
    std::ostringstream os;
    for (const auto& [k, v] : cfg.fields()) os << k << " = " << *v << "\n";
    return os.str();
}

inline BackboneConfig from_kv(const std::string& text) {
    BackboneConfig cfg;
    auto fields = cfg.fields();
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        require(eq != std::string::npos, ErrorKind::config, "malformed config line: " + line);
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t"), b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        auto it = fields.find(key);
        require(it != fields.end(), ErrorKind::config, "unknown backbone key '" + key + "'");
        try {
            std::size_t used = 0;
            *it->second = std::stoi(value, &used);
            require(used == value.size(), ErrorKind::config, "non-integer value for '" + key + "'");
        } catch (const std::logic_error&) {
            fail(ErrorKind::config, "non-integer value for '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

}  // namespace structgen::backbone

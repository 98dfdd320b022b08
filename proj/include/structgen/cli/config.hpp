// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "structgen/backbone/config.hpp"
#include "structgen/datagen/dataset.hpp"
#include "structgen/eval/report.hpp"
#include "structgen/pipeline/train.hpp"

namespace structgen::cli {

using Json = nlohmann::json;

/// Every configurable key with its default. Values are numbers, strings or number arrays.
inline Json default_config() {
    const backbone::BackboneConfig b;
    const pipeline::TrainConfig t;
    const structure::CannyParams c;
    const flow::SamplerConfig s;
    return Json{
        {"backbone.image_size", b.image_size},
        {"backbone.patch_size", b.patch_size},
        {"backbone.channels", b.channels},
        {"backbone.width", b.width},
        {"backbone.depth", b.depth},
        {"backbone.heads", b.heads},
        {"backbone.mlp_ratio", b.mlp_ratio},
        {"backbone.text_vocab", b.text_vocab},
        {"backbone.max_text_len", b.max_text_len},
        {"backbone.seed", 0},
        {"lora.rank", t.rank},
        {"lora.alpha", t.alpha},
        {"train.batch", t.batch},
        {"train.steps", t.steps},
        {"train.lr", t.lr},
        {"train.momentum", t.momentum},
        {"train.optimizer", t.optimizer},
        {"train.seed", t.seed},
        {"train.log_every", 100},
        {"data.mix", t.mix},
        {"sampler.steps", s.steps},
        {"sampler.seed", s.seed},
        {"canny.sigma", c.sigma},
        {"canny.low", c.low},
        {"canny.high", c.high},
        {"datagen.image_size", 64},
        {"datagen.min_conf", 0.7},
        {"eval.tolerance_px", 1},
        {"eval.max_grids", 8},
        {"vlm.client", "mock"},
        {"vlm.endpoint", ""},
        {"vlm.model", "vlm-judge"},
        {"vlm.token_env", "STRUCTGEN_VLM_TOKEN"},
        {"vlm.timeout_s", 60},
        {"vlm.concurrency", 1},
        {"workers", 1},
    };
}

namespace detail {

/// Coerces v to the JSON type of the default for `key`; integers stay integers.
inline Json coerce(const std::string& key, const Json& def, const Json& v) {
    auto bad = [&](const std::string& want) -> Json {
        fail(ErrorKind::config, "key '" + key + "' expects " + want + ", got " + v.dump());
    };
    if (def.is_number_integer()) {
        if (v.is_number_integer()) return v;
        if (v.is_number_float() && v.get<double>() == static_cast<double>(static_cast<long long>(v.get<double>())))
            return static_cast<long long>(v.get<double>());
        return bad("an integer");
    }
    if (def.is_number()) return v.is_number() ? Json(v.get<double>()) : bad("a number");
    if (def.is_string()) return v.is_string() ? v : bad("a string");
    if (def.is_array()) {
        if (!v.is_array()) return bad("an array of numbers");
        Json out = Json::array();
        for (const auto& e : v) out.push_back(e.is_number() ? e.get<double>() : bad("an array of numbers").get<double>());
        return out;
    }
    return bad("a known type");
}

/// Parses a flag value string as the default's type: "0.8,0.2" for arrays, plain text for strings.
inline Json parse_flag_value(const std::string& key, const Json& def, const std::string& text) {
    if (def.is_string()) return text;
    if (def.is_array()) {
        Json arr = Json::array();
        std::stringstream ss(text);
        std::string part;
        while (std::getline(ss, part, ',')) {
            try {
                std::size_t used = 0;
                arr.push_back(std::stod(part, &used));
                require(used == part.size(), ErrorKind::config, "");
            } catch (const std::exception&) {
                fail(ErrorKind::config, "key '" + key + "' expects comma-separated numbers, got '" + text + "'");
            }
        }
        return arr;
    }
    Json v;
    try {
        v = Json::parse(text);
    } catch (const Json::exception&) {
        fail(ErrorKind::config, "key '" + key + "' expects a number, got '" + text + "'");
    }
    return coerce(key, def, v);
}

}  // namespace detail

/// Precedence: flags > file > defaults. Unknown keys are rejected with their name.
inline Json resolve_config(const Json& defaults, const Json& file, const std::vector<std::pair<std::string, std::string>>& flags) {
    Json cfg = defaults;
    if (!file.is_null()) {
        require(file.is_object(), ErrorKind::config, "config file must hold a flat JSON object");
        for (const auto& [k, v] : file.items()) {
            require(defaults.contains(k), ErrorKind::config, "unknown configuration key '" + k + "'");
            cfg[k] = detail::coerce(k, defaults[k], v);
        }
    }
    for (const auto& [k, text] : flags) {
        require(defaults.contains(k), ErrorKind::config, "unknown configuration key '" + k + "'");
        cfg[k] = detail::parse_flag_value(k, defaults[k], text);
    }
    return cfg;
}

inline Json load_config_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) fail(ErrorKind::io, "cannot read config " + path.string());
    try {
        return Json::parse(f);
    } catch (const Json::exception& e) {
        fail(ErrorKind::config, "config " + path.string() + " is not valid JSON: " + e.what());
    }
}

// Typed views over a resolved config.

inline backbone::BackboneConfig backbone_config(const Json& c) {
    backbone::BackboneConfig b;
    for (auto& [name, field] : b.fields()) *field = c.at("backbone." + name).get<int>();
    b.validate();
    return b;
}

inline structure::CannyParams canny_params(const Json& c) {
    structure::CannyParams p{c.at("canny.sigma").get<double>(), c.at("canny.low").get<double>(), c.at("canny.high").get<double>()};
    p.validate();
    return p;
}

inline flow::SamplerConfig sampler_config(const Json& c) {
    flow::SamplerConfig s;
    s.steps = c.at("sampler.steps").get<int>();
    s.seed = c.at("sampler.seed").get<std::uint64_t>();
    s.validate();
    return s;
}

inline pipeline::TrainConfig train_config(const Json& c) {
    pipeline::TrainConfig t;
    t.batch = c.at("train.batch").get<int>();
    t.steps = c.at("train.steps").get<int>();
    t.lr = c.at("train.lr").get<double>();
    t.momentum = c.at("train.momentum").get<double>();
    t.optimizer = c.at("train.optimizer").get<std::string>();
    t.seed = c.at("train.seed").get<std::uint64_t>();
    t.log_every = c.at("train.log_every").get<int>();
    t.rank = c.at("lora.rank").get<int>();
    t.alpha = c.at("lora.alpha").get<double>();
    t.mix = c.at("data.mix").get<std::vector<double>>();
    t.sampler_steps = c.at("sampler.steps").get<int>();
    t.canny = canny_params(c);
    t.validate();
    return t;
}

inline datagen::BuildOptions build_options(const Json& c) {
    datagen::BuildOptions o;
    o.image_size = c.at("datagen.image_size").get<int>();
    o.min_conf = c.at("datagen.min_conf").get<double>();
    o.workers = c.at("workers").get<int>();
    o.params = canny_params(c);
    require(o.image_size >= 16, ErrorKind::config, "datagen.image_size must be >= 16");
    require(o.min_conf > 0.0 && o.min_conf <= 1.0, ErrorKind::config, "datagen.min_conf must lie in (0, 1]");
    require(o.workers >= 1, ErrorKind::config, "workers must be >= 1");
    return o;
}

inline eval::EvalConfig eval_config(const Json& c) {
    eval::EvalConfig e;
    e.sampler = sampler_config(c);
    e.tolerance_px = c.at("eval.tolerance_px").get<int>();
    e.max_grids = c.at("eval.max_grids").get<int>();
    e.vlm_concurrency = c.at("vlm.concurrency").get<int>();
    require(e.tolerance_px >= 0, ErrorKind::config, "eval.tolerance_px must be >= 0");
    require(e.vlm_concurrency >= 1, ErrorKind::config, "vlm.concurrency must be >= 1");
    return e;
}

/// Human-readable key list for --help.
inline std::string describe_keys(const Json& defaults = default_config()) {
    std::ostringstream os;
    os << "Configuration keys (flat JSON file via --config, or --set key=value):\n";
    for (const auto& [k, v] : defaults.items()) os << "  " << k << " = " << v.dump() << "\n";
    return os.str();
}

}  // namespace structgen::cli

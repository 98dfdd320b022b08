// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdlib>
#include <string>

#include <httplib.h>

#include "structgen/eval/vlm.hpp"

namespace structgen::eval {

struct VlmHttpConfig {
    std::string endpoint;  // http://host:port/path
    std::string model = "vlm-judge";
    std::string token_env = "STRUCTGEN_VLM_TOKEN";
    int timeout_s = 60;
};

/// POSTs {"model", "rubric", "prompt", "source_png_base64", "generated_png_base64"} as JSON and
/// expects {"SC", "PA", "PQ"} back. Plain HTTP only.
class HttpVlmClient final : public VlmClient {
public:
    explicit HttpVlmClient(VlmHttpConfig cfg) : cfg_(std::move(cfg)) {
        const auto scheme = cfg_.endpoint.find("://");
        require(scheme != std::string::npos, ErrorKind::config, "vlm.endpoint must be a URL");
        const auto slash = cfg_.endpoint.find('/', scheme + 3);
        base_ = cfg_.endpoint.substr(0, slash);
        path_ = slash == std::string::npos ? "/" : cfg_.endpoint.substr(slash);
    }

    std::string name() const override { return cfg_.model + "@" + cfg_.endpoint; }

    std::string send(const VlmRequest& r) override {
        const nlohmann::json body = {
            {"model", cfg_.model},
            {"rubric", r.rubric},
            {"prompt", r.prompt},
            {"source_png_base64", httplib::detail::base64_encode(std::string(r.source_png.begin(), r.source_png.end()))},
            {"generated_png_base64",
             httplib::detail::base64_encode(std::string(r.generated_png.begin(), r.generated_png.end()))}};
        httplib::Client client(base_);
        client.set_connection_timeout(cfg_.timeout_s);
        client.set_read_timeout(cfg_.timeout_s);
        httplib::Headers headers;
        if (const char* token = std::getenv(cfg_.token_env.c_str())) headers.emplace("Authorization", std::string("Bearer ") + token);
        auto res = client.Post(path_, headers, body.dump(), "application/json");
        if (!res) fail(ErrorKind::io, "vlm request failed: " + httplib::to_string(res.error()));
        if (res->status != 200) fail(ErrorKind::io, "vlm endpoint returned HTTP " + std::to_string(res->status));
        return res->body;
    }

private:
    VlmHttpConfig cfg_;
    std::string base_, path_;
};

}  // namespace structgen::eval

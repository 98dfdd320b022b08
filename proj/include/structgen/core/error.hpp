// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace structgen {

/// Error classes. The CLI maps each class onto a process exit code.
enum class ErrorKind {
    config,       // invalid configuration value or unknown key
    shape,        // tensor / grid dimension mismatch
    domain,       // argument outside its mathematical domain
    encoding,     // token id out of vocabulary, prompt too long
    contract,     // API used out of protocol (e.g. wrong conditioning streams)
    layout,       // scene text does not fit its shape
    pose,         // pose outside renderer limits
    integration,  // sampler received a malformed velocity
    validation,   // dataset record fails its invariants
    pipeline,     // dataset pipeline health failure
    training,     // non-finite loss or similar training abort
    io,           // filesystem / serialization failure
    usage,        // CLI misuse
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::config: return "configuration error";
        case ErrorKind::shape: return "shape error";
        case ErrorKind::domain: return "domain error";
        case ErrorKind::encoding: return "encoding error";
        case ErrorKind::contract: return "contract error";
        case ErrorKind::layout: return "layout error";
        case ErrorKind::pose: return "pose error";
        case ErrorKind::integration: return "integration error";
        case ErrorKind::validation: return "validation error";
        case ErrorKind::pipeline: return "pipeline health error";
        case ErrorKind::training: return "training aborted";
        case ErrorKind::io: return "io error";
        case ErrorKind::usage: return "usage error";
    }
    return "error";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) fail(kind, what);
}

}  // namespace structgen

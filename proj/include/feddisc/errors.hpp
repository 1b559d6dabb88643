#pragma once

#include <stdexcept>
#include <string>

namespace feddisc {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionMismatch : Error {
    DimensionMismatch(const std::string& where, std::size_t expected, std::size_t got)
        : Error(where + ": expected dimension " + std::to_string(expected) +
                ", got " + std::to_string(got)) {}
};

struct ZeroVectorError : Error {
    explicit ZeroVectorError(const std::string& where)
        : Error(where + ": vector norm below 1e-12") {}
};

struct EmptyCategoryError : Error {
    explicit EmptyCategoryError(int category)
        : Error("category " + std::to_string(category) + " has no samples"), category(category) {}
    int category;
};

struct EmptyClientError : Error {
    explicit EmptyClientError(int client_id)
        : Error("client " + std::to_string(client_id) + " has an empty view") {}
};

struct IntensityOutOfRange : Error {
    IntensityOutOfRange(int n, int t_max)
        : Error("noise intensity " + std::to_string(n) + " exceeds schedule T=" +
                std::to_string(t_max)) {}
};

struct ProtocolViolation : Error {
    explicit ProtocolViolation(const std::string& msg) : Error("protocol violation: " + msg) {}
};

struct DivergedTraining : Error {
    DivergedTraining(const std::string& what, long step)
        : Error(what + ": non-finite loss at step " + std::to_string(step)) {}
};

struct SamplerDivergence : Error {
    explicit SamplerDivergence(int step)
        : Error("non-finite sampler state at step " + std::to_string(step)) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config: " + msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io: " + msg) {}
};

}  // namespace feddisc

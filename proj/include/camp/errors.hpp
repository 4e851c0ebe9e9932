#pragma once

#include <stdexcept>
#include <string>

namespace camp {

// Error taxonomy shared across the library. Each kind maps to one class of
// contract violation so callers can handle them separately.

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error("domain error: " + msg) {}
};

struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};

struct SingularityError : std::runtime_error {
    explicit SingularityError(const std::string& msg) : std::runtime_error("singular system: " + msg) {}
};

struct ConvergenceError : std::runtime_error {
    ConvergenceError(const std::string& msg, double residual)
        : std::runtime_error("convergence failure: " + msg), final_residual(residual) {}
    double final_residual;
};

struct InsufficientSampleError : std::runtime_error {
    explicit InsufficientSampleError(const std::string& msg)
        : std::runtime_error("insufficient samples: " + msg) {}
};

struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& msg) : std::runtime_error("divergence: " + msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct PluginError : std::runtime_error {
    PluginError(const std::string& method, const std::string& msg)
        : std::runtime_error("plugin '" + method + "': " + msg), method_name(method) {}
    std::string method_name;
};

struct LabelError : std::runtime_error {
    explicit LabelError(const std::string& msg) : std::runtime_error("label error: " + msg) {}
};

struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error("parse error: " + msg) {}
};

struct TrainingError : std::runtime_error {
    TrainingError(const std::string& msg, size_t step)
        : std::runtime_error("training error at step " + std::to_string(step) + ": " + msg), step_index(step) {}
    size_t step_index;
};

struct CheckpointError : std::runtime_error {
    enum class Kind { VersionMismatch, CorruptHeader, FingerprintMismatch, Io };
    CheckpointError(Kind k, const std::string& msg)
        : std::runtime_error("checkpoint error: " + msg), kind(k) {}
    Kind kind;
};

struct FitError : std::runtime_error {
    explicit FitError(const std::string& msg) : std::runtime_error("fit error: " + msg) {}
};

}  // namespace camp

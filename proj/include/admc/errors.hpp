#pragma once

#include <stdexcept>
#include <string>

namespace admc {

// Error taxonomy shared by the whole library. The CLI maps categories to
// distinct exit codes; tests match on category rather than message text.
enum class ErrorCategory {
    Shape,       // tensor dimension mismatch
    Config,      // invalid configuration value or file
    Format,      // malformed binary/text file content
    State,       // operation invalid in current state (stale graph, missing stage)
    Training,    // divergence, NaN loss
    Optimizer,   // non-finite gradient fed to the optimizer
    Step,        // diffusion step index out of range
    Usage,       // caller misuse of an API contract
    Registry,    // unknown fusion pattern
    Integrity,   // frozen-parameter mutation or checkpoint hash mismatch
    Metric,      // metric undefined for the given confusion matrix
    Sampling,    // requested more samples than available
    Input,       // invalid input data (e.g. sequence too short)
    Prerequisite,// pipeline stage ordering violation
    Io,          // filesystem failure
};

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& message)
        : std::runtime_error(message), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

inline const char* to_string(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::Shape: return "shape";
        case ErrorCategory::Config: return "config";
        case ErrorCategory::Format: return "format";
        case ErrorCategory::State: return "state";
        case ErrorCategory::Training: return "training";
        case ErrorCategory::Optimizer: return "optimizer";
        case ErrorCategory::Step: return "step";
        case ErrorCategory::Usage: return "usage";
        case ErrorCategory::Registry: return "registry";
        case ErrorCategory::Integrity: return "integrity";
        case ErrorCategory::Metric: return "metric";
        case ErrorCategory::Sampling: return "sampling";
        case ErrorCategory::Input: return "input";
        case ErrorCategory::Prerequisite: return "prerequisite";
        case ErrorCategory::Io: return "io";
    }
    return "unknown";
}

[[noreturn]] inline void raise(ErrorCategory c, const std::string& message) {
    throw Error(c, message);
}

} // namespace admc

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mwp {

enum class ErrorKind {
    malformed_options,
    missing_field,
    invalid_correct_label,
    empty_fold,
    budget_exceeds_corpus,
    invalid_argument,
    length_overflow,
    missing_predictions,
    partial_coverage,
    zero_variance,
    empty_validation,
    training_diverged,
    io,
    config,
    unknown_command,
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::malformed_options: return "malformed-options";
    case ErrorKind::missing_field: return "missing-field";
    case ErrorKind::invalid_correct_label: return "invalid-correct-label";
    case ErrorKind::empty_fold: return "empty-fold";
    case ErrorKind::budget_exceeds_corpus: return "budget-exceeds-corpus";
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::length_overflow: return "length-overflow";
    case ErrorKind::missing_predictions: return "missing-predictions";
    case ErrorKind::partial_coverage: return "partial-coverage";
    case ErrorKind::zero_variance: return "zero-variance";
    case ErrorKind::empty_validation: return "empty-validation";
    case ErrorKind::training_diverged: return "training-diverged";
    case ErrorKind::io: return "io";
    case ErrorKind::config: return "config";
    case ErrorKind::unknown_command: return "unknown-command";
    }
    return "unknown";
}

/// Every recoverable failure in the library is reported through this type so
/// the CLI can turn it into a machine-readable error record.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace mwp

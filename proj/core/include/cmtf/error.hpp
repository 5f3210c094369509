#pragma once

#include <stdexcept>
#include <string>

namespace cmtf {

/// Root of every error thrown by the library. `exit_code()` maps the error
/// family onto the CLI's process exit status.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 1; }
};

/// Invalid or inconsistent configuration (bad ratios, odd d_model, b < 1, ...).
class ConfigError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

/// Input data that fails schema or invariant validation.
class DataError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

/// Not enough rows for the requested window / fold layout.
class WindowError : public DataError {
public:
    using DataError::DataError;
};

class NumericError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 4; }
};

/// Shape mismatch between operands.
class DimensionError : public NumericError {
public:
    using NumericError::NumericError;
};

/// Caller broke an API precondition (non-scalar loss, out-of-order period, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

class ConvergenceError : public NumericError {
public:
    ConvergenceError(const std::string& what, double last_objective)
        : NumericError(what), last_objective_(last_objective) {}
    double last_objective() const noexcept { return last_objective_; }

private:
    double last_objective_;
};

class TrainingError : public NumericError {
public:
    TrainingError(const std::string& what, int epoch) : NumericError(what), epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

/// Hyperparameter study could not produce a result.
class StudyError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 4; }
};

/// A pipeline stage was started before its upstream artifacts exist.
class PipelineError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

}  // namespace cmtf

#pragma once

#include <stdexcept>
#include <string>

namespace mactok {

/// Base class for every failure the library reports. The CLI maps these to
/// exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor or grid dimensions do not fit together.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A configuration value or key is invalid.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input data violates a precondition (NaN scores, zero-norm vectors, ...).
class InvalidInputError : public Error {
public:
    using Error::Error;
};

/// The pretrained feature backbone cannot be used; fall back to stub or cache.
class BackboneUnavailableError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// A loss term went non-finite during training.
class DivergenceError : public Error {
public:
    DivergenceError(std::string term, std::string last_good_checkpoint)
        : Error("training diverged: non-finite " + term +
                (last_good_checkpoint.empty() ? std::string(" (no checkpoint written yet)")
                                              : " (last good checkpoint: " + last_good_checkpoint + ")")),
          term_(std::move(term)),
          checkpoint_(std::move(last_good_checkpoint)) {}

    const std::string& term() const noexcept { return term_; }
    const std::string& last_good_checkpoint() const noexcept { return checkpoint_; }

private:
    std::string term_;
    std::string checkpoint_;
};

class AdversarialHookError : public Error {
public:
    explicit AdversarialHookError(const std::string& what) : Error("adversarial hook: " + what) {}
};

}  // namespace mactok

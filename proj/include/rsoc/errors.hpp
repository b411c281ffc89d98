#pragma once

#include <stdexcept>
#include <string>

namespace rsoc {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SingularProjection : public Error {
public:
    using Error::Error;
};

class CutLocus : public Error {
public:
    using Error::Error;
};

class NonTangentField : public Error {
public:
    using Error::Error;
};

class IllConditionedRegression : public Error {
public:
    using Error::Error;
};

class ContractionViolated : public Error {
public:
    using Error::Error;
};

class GridMismatch : public Error {
public:
    using Error::Error;
};

/// Raised by the BSDE comparison check; carries the offending node.
class ComparisonViolated : public Error {
public:
    ComparisonViolated(std::size_t step, std::size_t path, double excess)
        : Error("comparison violated at step " + std::to_string(step) + ", path " +
                std::to_string(path) + " (excess " + std::to_string(excess) + ")"),
          step_(step), path_(path), excess_(excess) {}

    std::size_t step() const noexcept { return step_; }
    std::size_t path() const noexcept { return path_; }
    double excess() const noexcept { return excess_; }

private:
    std::size_t step_;
    std::size_t path_;
    double excess_;
};

/// Catalog lookup of an unknown manifold, field, driver, terminal or probe id.
class UnknownIdentifier : public Error {
public:
    using Error::Error;
};

class CflViolated : public Error {
public:
    using Error::Error;
};

/// Invalid experiment configuration. `field()` names the offending key.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& message)
        : Error(field + ": " + message), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

}  // namespace rsoc

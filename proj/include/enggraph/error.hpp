#pragma once

#include <stdexcept>
#include <string>

namespace enggraph {

/// Base of every error thrown by the library. `kind()` is a stable short tag
/// used in CLI diagnostics.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define ENGGRAPH_ERROR_TYPE(Name, tag)                                  \
    class Name : public Error {                                         \
    public:                                                             \
        explicit Name(const std::string& what) : Error(tag, what) {}    \
    };

ENGGRAPH_ERROR_TYPE(DimensionError, "dimension")
ENGGRAPH_ERROR_TYPE(DomainError, "numeric-domain")
ENGGRAPH_ERROR_TYPE(ContractError, "contract")
ENGGRAPH_ERROR_TYPE(StateError, "state")
ENGGRAPH_ERROR_TYPE(ParameterError, "parameter")
ENGGRAPH_ERROR_TYPE(SchemaError, "schema")
ENGGRAPH_ERROR_TYPE(ConfigError, "config")
ENGGRAPH_ERROR_TYPE(DegenerateGeometryError, "degenerate-geometry")
ENGGRAPH_ERROR_TYPE(AsymmetricGeometryError, "asymmetric-geometry")
ENGGRAPH_ERROR_TYPE(InvalidSampleError, "invalid-sample")
ENGGRAPH_ERROR_TYPE(IoError, "io")

#undef ENGGRAPH_ERROR_TYPE

/// Raised when a gradient or loss turns non-finite during training.
class DivergenceError : public Error {
public:
    DivergenceError(std::string parameter, const std::string& what)
        : Error("training-divergence", what), parameter_(std::move(parameter)) {}
    const std::string& parameter() const noexcept { return parameter_; }

private:
    std::string parameter_;
};

}  // namespace enggraph

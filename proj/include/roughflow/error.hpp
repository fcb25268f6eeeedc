/// @file error.hpp
/// @brief Exception hierarchy shared by every roughflow module.
///
/// Each error carries a short machine-readable kind tag so the CLI can print
/// a single-line `error: <kind>: <message>` diagnostic.
#pragma once

#include <stdexcept>
#include <string>

namespace roughflow {

class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define ROUGHFLOW_DEFINE_ERROR(Name, tag)                                   \
    class Name : public Error {                                             \
    public:                                                                 \
        explicit Name(const std::string& message) : Error(tag, message) {}  \
    }

ROUGHFLOW_DEFINE_ERROR(ParameterError, "parameter");
ROUGHFLOW_DEFINE_ERROR(GeometryError, "geometry");
ROUGHFLOW_DEFINE_ERROR(InstabilityError, "instability");
ROUGHFLOW_DEFINE_ERROR(UnsupportedActivationError, "unsupported-activation");
ROUGHFLOW_DEFINE_ERROR(SingularDensityError, "singular-density");
ROUGHFLOW_DEFINE_ERROR(ContractError, "contract");
ROUGHFLOW_DEFINE_ERROR(UndefinedMetricError, "undefined-metric");
ROUGHFLOW_DEFINE_ERROR(RangeError, "range");
ROUGHFLOW_DEFINE_ERROR(ConfigError, "config");
ROUGHFLOW_DEFINE_ERROR(FormatError, "format");
ROUGHFLOW_DEFINE_ERROR(ShapeError, "shape");
ROUGHFLOW_DEFINE_ERROR(NumericError, "numeric");

#undef ROUGHFLOW_DEFINE_ERROR

}  // namespace roughflow

#pragma once

#include <stdexcept>
#include <string>

namespace seis {

/// Filesystem / serialization failure. Mapped to exit code 3 by the CLI.
class IoError : public std::runtime_error {
public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite value where the numerics must stay finite (e.g. a NaN loss
/// during training). Mapped to exit code 4 by the CLI.
class NumericalError : public std::runtime_error {
public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace seis

#ifndef FLDM_ERROR_HPP
#define FLDM_ERROR_HPP

#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>

namespace fldm {

// Error hierarchy. The CLI maps these onto process exit codes
// (ConfigError -> 1, DataError -> 2, DivergenceError -> 3).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

struct DivergenceError : Error {
  using Error::Error;
};

struct GraphError : Error {
  using Error::Error;
};

// Warnings go through a replaceable sink so tests can capture them.
using WarningSink = std::function<void(const std::string&)>;

inline WarningSink& warning_sink() {
  static WarningSink sink = [](const std::string& msg) {
    std::cerr << "[fldm] warning: " << msg << '\n';
  };
  return sink;
}

inline void warn(const std::string& msg) {
  if (warning_sink()) warning_sink()(msg);
}

}  // namespace fldm

#endif  // FLDM_ERROR_HPP

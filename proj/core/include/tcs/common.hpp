#pragma once

#include <stdexcept>
#include <string>

namespace tcs {

// Thrown for scenario/schema problems. The message always starts with the
// config path of the offending field, e.g. "dhn.edges[3].length_m: ...".
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown for malformed run directories, unreadable files and similar.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr double kCelsiusOffset = 273.15;
constexpr double kBarToPascal = 1.0e5;
constexpr double kWattToMegawatt = 1.0e-6;

inline double celsius_to_kelvin(double c) { return c + kCelsiusOffset; }
inline double kelvin_to_celsius(double k) { return k - kCelsiusOffset; }

}  // namespace tcs

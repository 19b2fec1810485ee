#ifndef HESSLAB_ERRORS_HPP
#define HESSLAB_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace hesslab {

inline constexpr const char* version = "0.1.0";

/// Caller violated a precondition (bad dimensions, bad flag value, ...).
class usage_error : public std::invalid_argument {
 public:
  explicit usage_error(const std::string& what) : std::invalid_argument(what) {}
};

/// A computation produced non-finite or otherwise unusable results.
class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace hesslab

#endif

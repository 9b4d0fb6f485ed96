#pragma once

#include <stdexcept>
#include <string>

namespace ridgegen {

inline constexpr const char* kVersion = "0.1.0";

// Error taxonomy. The CLI maps config/usage/integrity errors to exit code 2
// and training/runtime faults to exit code 3.
class config_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class usage_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class integrity_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class training_fault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void check_config(bool ok, const std::string& msg) {
  if (!ok) throw config_error(msg);
}

inline void check_usage(bool ok, const std::string& msg) {
  if (!ok) throw usage_error(msg);
}

inline void check_integrity(bool ok, const std::string& msg) {
  if (!ok) throw integrity_error(msg);
}

}  // namespace ridgegen

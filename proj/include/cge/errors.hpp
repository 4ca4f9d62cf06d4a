#pragma once

#include <stdexcept>
#include <string>

namespace cge {

// Bad user input: configs, fractions, unknown keys, malformed sequences.
// The CLI maps this to exit code 1, everything else to 2.
class ValidationError : public std::runtime_error {
  public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public std::runtime_error {
  public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

class CheckpointError : public std::runtime_error {
  public:
    enum class Kind { bad_magic, version_mismatch, truncated, shape_mismatch };

    CheckpointError(Kind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    Kind kind() const { return kind_; }

  private:
    Kind kind_;
};

} // namespace cge

#pragma once

#include <stdexcept>
#include <string>

namespace winnet {

/// Bad argument value (negative threshold, dilation < 1, sigma_N == 0, ...).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Shape or rank mismatch between operands.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// All patch weights vanished in the noise estimator.
class DegenerateWeightsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingDivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DeblurError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ImageError : public std::runtime_error {
 public:
  enum class Kind { Unreadable, NotGrayscale, Unwritable };
  ImageError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class ModelFormatError : public std::runtime_error {
 public:
  enum class Kind { Io, Version, Truncated, Shape, MissingTensor, Config };
  ModelFormatError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace winnet

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace detguard {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shape disagreement inside an op; `op` names the failing node.
class ShapeError : public Error {
 public:
  ShapeError(std::string op, const std::string& detail)
      : Error(op + ": " + detail), op_(std::move(op)) {}
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

// Invalid configuration or argument outside its documented domain.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed file content. `offset` is the byte position where parsing failed.
class ParseError : public Error {
 public:
  ParseError(std::string file, std::size_t offset, const std::string& detail)
      : Error(file + " @" + std::to_string(offset) + ": " + detail),
        file_(std::move(file)),
        offset_(offset) {}
  const std::string& file() const noexcept { return file_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::string file_;
  std::size_t offset_;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace detguard

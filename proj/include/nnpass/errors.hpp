#pragma once

#include <stdexcept>
#include <string>

namespace nnpass {

class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class ShapeError : public Error {
public:
  explicit ShapeError(const std::string& what) : Error("shape error: " + what) {}
};

class LabelError : public Error {
public:
  explicit LabelError(const std::string& what) : Error("label error: " + what) {}
};

class NumericsError : public Error {
public:
  explicit NumericsError(const std::string& what) : Error("numerics error: " + what) {}
};

class RangeError : public Error {
public:
  explicit RangeError(const std::string& what) : Error("range error: " + what) {}
};

class PassportError : public Error {
public:
  explicit PassportError(const std::string& what) : Error("passport error: " + what) {}
};

class AttackError : public Error {
public:
  explicit AttackError(const std::string& what) : Error("attack error: " + what) {}
};

class DataError : public Error {
public:
  explicit DataError(const std::string& what) : Error("data error: " + what) {}
};

class FormatError : public Error {
public:
  explicit FormatError(const std::string& what) : Error("format error: " + what) {}
};

class VerificationError : public Error {
public:
  explicit VerificationError(const std::string& what) : Error("verification error: " + what) {}
};

class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& what) : Error("config error: " + what) {}
};

}  // namespace nnpass

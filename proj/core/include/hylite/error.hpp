#pragma once

#include <stdexcept>
#include <string>

namespace hylite {

enum class Err {
  ShapeMismatch,
  NonFinite,
  NotScalar,
  EmptyAxis,
  BadMagic,
  DimOverflow,
  TruncatedPayload,
  UnlabeledCenter,
  EmptySplit,
  FractionOutOfRange,
  TargetOutOfRange,
  LengthMismatch,
  NegativeLambda,
  InvalidConfig,
  ConfigMismatch,
  UnknownAxis,
  UnknownKey,
  CheckpointMismatch,
  Io,
};

const char* err_name(Err e);

/// Library-wide exception. what() always starts with the error name so callers
/// (and the CLI) can surface the failing contract by name.
class Error : public std::runtime_error {
 public:
  Error(Err kind, const std::string& msg)
      : std::runtime_error(std::string(err_name(kind)) + ": " + msg), kind_(kind) {}
  Err kind() const { return kind_; }

 private:
  Err kind_;
};

[[noreturn]] inline void fail(Err kind, const std::string& msg) { throw Error(kind, msg); }

}  // namespace hylite

#include "hylite/error.hpp"

namespace hylite {

const char* err_name(Err e) {
  switch (e) {
    case Err::ShapeMismatch: return "ShapeMismatch";
    case Err::NonFinite: return "NonFinite";
    case Err::NotScalar: return "NotScalar";
    case Err::EmptyAxis: return "EmptyAxis";
    case Err::BadMagic: return "BadMagic";
    case Err::DimOverflow: return "DimOverflow";
    case Err::TruncatedPayload: return "TruncatedPayload";
    case Err::UnlabeledCenter: return "UnlabeledCenter";
    case Err::EmptySplit: return "EmptySplit";
    case Err::FractionOutOfRange: return "FractionOutOfRange";
    case Err::TargetOutOfRange: return "TargetOutOfRange";
    case Err::LengthMismatch: return "LengthMismatch";
    case Err::NegativeLambda: return "NegativeLambda";
    case Err::InvalidConfig: return "InvalidConfig";
    case Err::ConfigMismatch: return "ConfigMismatch";
    case Err::UnknownAxis: return "UnknownAxis";
    case Err::UnknownKey: return "UnknownKey";
    case Err::CheckpointMismatch: return "CheckpointMismatch";
    case Err::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace hylite

#include "smc/error.hpp"

namespace smc {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::NumericalError: return "NumericalError";
    case ErrorCode::DegenerateRepresentation: return "DegenerateRepresentation";
    case ErrorCode::BaseModelMismatch: return "BaseModelMismatch";
    case ErrorCode::ZeroSignalPower: return "ZeroSignalPower";
    case ErrorCode::UnknownFormat: return "UnknownFormat";
    case ErrorCode::CorruptPackage: return "CorruptPackage";
    case ErrorCode::NotAvailable: return "NotAvailable";
    case ErrorCode::TransportError: return "TransportError";
    case ErrorCode::ProtocolError: return "ProtocolError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), message_(message) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace smc

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace urbancausal {

enum class ErrorKind {
  Validation,
  MissingColumn,
  NonNumericCell,
  EmptyTable,
  ZeroVariance,
  TooFewRows,
  CyclicGraph,
  DimensionMismatch,
  ShapeMismatch,
  TooManyFactors,
  NoAcyclicSample,
  NotAnEdge,
  Degenerate,
  SingleLevel,
  UnknownFactor,
  LengthMismatch,
  NonFiniteLoss,
  InvalidGraphSpec,
  MissingStageOutput,
  Io,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Validation: return "Validation";
    case ErrorKind::MissingColumn: return "MissingColumn";
    case ErrorKind::NonNumericCell: return "NonNumericCell";
    case ErrorKind::EmptyTable: return "EmptyTable";
    case ErrorKind::ZeroVariance: return "ZeroVariance";
    case ErrorKind::TooFewRows: return "TooFewRows";
    case ErrorKind::CyclicGraph: return "CyclicGraph";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::TooManyFactors: return "TooManyFactors";
    case ErrorKind::NoAcyclicSample: return "NoAcyclicSample";
    case ErrorKind::NotAnEdge: return "NotAnEdge";
    case ErrorKind::Degenerate: return "Degenerate";
    case ErrorKind::SingleLevel: return "SingleLevel";
    case ErrorKind::UnknownFactor: return "UnknownFactor";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::InvalidGraphSpec: return "InvalidGraphSpec";
    case ErrorKind::MissingStageOutput: return "MissingStageOutput";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-readable kind so
/// callers (the CLI in particular) can map it to an exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace urbancausal

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ppscm {

enum class ErrorKind {
  RaggedPanel,
  InconsistentTreatment,
  MalformedInput,
  NoDonors,
  NoCovariates,
  InsufficientPrePeriods,
  EventOutOfRange,
  RegimeUnsupported,
  BothZero,
  AllTreated,
  InsufficientData,
  InvalidConfig,
};

[[nodiscard]] constexpr std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::RaggedPanel: return "RaggedPanel";
    case ErrorKind::InconsistentTreatment: return "InconsistentTreatment";
    case ErrorKind::MalformedInput: return "MalformedInput";
    case ErrorKind::NoDonors: return "NoDonors";
    case ErrorKind::NoCovariates: return "NoCovariates";
    case ErrorKind::InsufficientPrePeriods: return "InsufficientPrePeriods";
    case ErrorKind::EventOutOfRange: return "EventOutOfRange";
    case ErrorKind::RegimeUnsupported: return "RegimeUnsupported";
    case ErrorKind::BothZero: return "BothZero";
    case ErrorKind::AllTreated: return "AllTreated";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a kind so callers (the CLI in
/// particular) can map it to an exit status without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

  /// Configuration mistakes as opposed to problems with the data itself.
  [[nodiscard]] bool is_config_error() const noexcept {
    return kind_ == ErrorKind::InvalidConfig;
  }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace ppscm

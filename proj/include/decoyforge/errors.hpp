#pragma once

#include <stdexcept>
#include <string>

namespace decoyforge {

enum class Errc {
  MalformedRecord,
  DuplicatePort,
  EmptyCorpus,
  InvalidSpec,
  InvalidMatrix,
  NotNormalized,
  DegenerateClustering,
  LabelMismatch,
  ConditionRequired,
  ConditionNotAllowed,
  IoFailure,
  VersionMismatch,
  UnknownPersonality,
  PoolExhausted,
  InvalidArgument,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::MalformedRecord: return "malformed-record";
    case Errc::DuplicatePort: return "duplicate-port";
    case Errc::EmptyCorpus: return "empty-corpus";
    case Errc::InvalidSpec: return "invalid-spec";
    case Errc::InvalidMatrix: return "invalid-matrix";
    case Errc::NotNormalized: return "not-normalized";
    case Errc::DegenerateClustering: return "degenerate-clustering";
    case Errc::LabelMismatch: return "label-mismatch";
    case Errc::ConditionRequired: return "condition-required";
    case Errc::ConditionNotAllowed: return "condition-not-allowed";
    case Errc::IoFailure: return "io-failure";
    case Errc::VersionMismatch: return "version-mismatch";
    case Errc::UnknownPersonality: return "unknown-personality";
    case Errc::PoolExhausted: return "pool-exhausted";
    case Errc::InvalidArgument: return "invalid-argument";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg)
      : std::runtime_error(std::string(errc_name(code)) + ": " + msg), code_(code) {}

  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

} // namespace decoyforge

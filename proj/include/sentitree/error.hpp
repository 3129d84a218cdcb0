#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sentitree {

enum class Errc {
  // treebank
  EmptyInput,
  UnbalancedParens,
  NonBinaryNode,
  BadLabel,
  BadHeader,
  SyntaxError,
  EntityFlagInconsistent,
  // neural
  ShapeMismatch,
  NoLabeledNodes,
  EmbeddingDimMismatch,
  // aggregate
  EmptyTweet,
  // stack
  SchemaMismatch,
  SingleClassInput,
  TooFewGroups,
  // tasks
  MissingClass,
  MissingPrior,
  CountOutOfRange,
  ZeroColumn,
  EmptyEntity,
  // metrics
  EmptyGoldClass,
  LengthMismatch,
  // generic
  FormatError,
  NumericFailure,
  IoError,
  UsageError,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::UnbalancedParens: return "UnbalancedParens";
    case Errc::NonBinaryNode: return "NonBinaryNode";
    case Errc::BadLabel: return "BadLabel";
    case Errc::BadHeader: return "BadHeader";
    case Errc::SyntaxError: return "SyntaxError";
    case Errc::EntityFlagInconsistent: return "EntityFlagInconsistent";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NoLabeledNodes: return "NoLabeledNodes";
    case Errc::EmbeddingDimMismatch: return "EmbeddingDimMismatch";
    case Errc::EmptyTweet: return "EmptyTweet";
    case Errc::SchemaMismatch: return "SchemaMismatch";
    case Errc::SingleClassInput: return "SingleClassInput";
    case Errc::TooFewGroups: return "TooFewGroups";
    case Errc::MissingClass: return "MissingClass";
    case Errc::MissingPrior: return "MissingPrior";
    case Errc::CountOutOfRange: return "CountOutOfRange";
    case Errc::ZeroColumn: return "ZeroColumn";
    case Errc::EmptyEntity: return "EmptyEntity";
    case Errc::EmptyGoldClass: return "EmptyGoldClass";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::FormatError: return "FormatError";
    case Errc::NumericFailure: return "NumericFailure";
    case Errc::IoError: return "IoError";
    case Errc::UsageError: return "UsageError";
  }
  return "Unknown";
}

/// Exit-code class of an error as reported by the command-line tool.
enum class ErrorClass { Usage = 2, Data = 3, Numeric = 4, Io = 5 };

constexpr ErrorClass error_class(Errc code) noexcept {
  switch (code) {
    case Errc::UsageError: return ErrorClass::Usage;
    case Errc::NumericFailure: return ErrorClass::Numeric;
    case Errc::IoError: return ErrorClass::Io;
    default: return ErrorClass::Data;
  }
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) { throw Error(code, message); }

}  // namespace sentitree

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace marg {

/// Base class for every error thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// corpus
struct MalformedIpc : Error {
  using Error::Error;
};
struct EmptyRatings : Error {
  EmptyRatings() : Error("ratings list is empty") {}
};
struct OutOfRangeRating : Error {
  int value;
  explicit OutOfRangeRating(int rating)
      : Error("rating " + std::to_string(rating) + " outside [1,5]"), value(rating) {}
};
struct TooFewRatings : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct SchemaError : Error {
  SchemaError(std::size_t line_no, const std::string& what)
      : Error("line " + std::to_string(line_no) + ": " + what), line(line_no) {}
  std::size_t line;
};

// gateway
struct TransportError : Error {
  using Error::Error;
};
struct BackendUnconfigured : Error {
  using Error::Error;
};
struct ScriptMiss : Error {
  using Error::Error;
};

// prompt kit
struct ParseFailure : Error {
  using Error::Error;
};
struct MissingContextField : Error {
  explicit MissingContextField(const std::string& field)
      : Error("no binding for placeholder '" + field + "'"), field_name(field) {}
  std::string field_name;
};

// engine
struct StageError : Error {
  StageError(std::string node, const std::string& cause)
      : Error("stage '" + node + "' failed: " + cause), node_id(std::move(node)) {}
  std::string node_id;
};
struct DegenerateWeights : Error {
  DegenerateWeights() : Error("raw weights sum to zero") {}
  explicit DegenerateWeights(const std::string& what) : Error(what) {}
};

// baselines
struct SingularDesign : Error {
  using Error::Error;
};

// evalkit
struct ConstantInput : Error {
  using Error::Error;
};
struct LengthMismatch : Error {
  using Error::Error;
};
struct UnequalRaterCounts : Error {
  using Error::Error;
};
struct DegenerateAgreement : Error {
  using Error::Error;
};
struct ZeroTotalVariance : Error {
  ZeroTotalVariance() : Error("total-score variance is zero") {}
};

}  // namespace marg

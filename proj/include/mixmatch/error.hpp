#pragma once

#include <stdexcept>
#include <string>

namespace mixmatch {

// Error classes map one-to-one onto CLI exit codes.
enum class ErrorCategory : int {
  kGeneric = 1,
  kConfig = 2,
  kDimension = 3,
  kParameter = 4,
  kContract = 5,
  kComposition = 6,
  kProtocol = 7,
  kFormat = 8,
  kNumeric = 9,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }
  int exit_code() const noexcept { return static_cast<int>(category_); }

 private:
  ErrorCategory category_;
};

#define MIXMATCH_DEFINE_ERROR(Name, Category)                        \
  class Name : public Error {                                        \
   public:                                                           \
    explicit Name(const std::string& what) : Error(Category, what) {} \
  };

MIXMATCH_DEFINE_ERROR(ConfigError, ErrorCategory::kConfig)
MIXMATCH_DEFINE_ERROR(DimensionError, ErrorCategory::kDimension)
MIXMATCH_DEFINE_ERROR(ParameterError, ErrorCategory::kParameter)
MIXMATCH_DEFINE_ERROR(ContractError, ErrorCategory::kContract)
MIXMATCH_DEFINE_ERROR(CompositionError, ErrorCategory::kComposition)
MIXMATCH_DEFINE_ERROR(ProtocolError, ErrorCategory::kProtocol)
MIXMATCH_DEFINE_ERROR(FormatError, ErrorCategory::kFormat)
MIXMATCH_DEFINE_ERROR(NumericError, ErrorCategory::kNumeric)

#undef MIXMATCH_DEFINE_ERROR

}  // namespace mixmatch

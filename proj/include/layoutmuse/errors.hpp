#pragma once

#include <stdexcept>
#include <string>

namespace layoutmuse {

/// Base of every error raised by the library. `code()` is a stable,
/// machine-readable identifier used by the CLI and the HTTP service.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

#define LAYOUTMUSE_DEFINE_ERROR(Name)                                    \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& message) : Error(#Name, message) {} \
  }

// imaging
LAYOUTMUSE_DEFINE_ERROR(DecodeError);
LAYOUTMUSE_DEFINE_ERROR(DimensionMismatch);
LAYOUTMUSE_DEFINE_ERROR(NoRegions);
// features
LAYOUTMUSE_DEFINE_ERROR(EmptyBag);
LAYOUTMUSE_DEFINE_ERROR(FormatError);
LAYOUTMUSE_DEFINE_ERROR(LengthError);
// layout codec / compositor
LAYOUTMUSE_DEFINE_ERROR(CardinalityMismatch);
// graph analysis
LAYOUTMUSE_DEFINE_ERROR(DuplicatePoints);
LAYOUTMUSE_DEFINE_ERROR(WidthMismatch);
LAYOUTMUSE_DEFINE_ERROR(EmptyCorpus);
// autodiff / networks
LAYOUTMUSE_DEFINE_ERROR(ShapeMismatch);
LAYOUTMUSE_DEFINE_ERROR(NonScalarOutput);
LAYOUTMUSE_DEFINE_ERROR(UnsupportedSecondOrder);
LAYOUTMUSE_DEFINE_ERROR(NonFiniteValue);
LAYOUTMUSE_DEFINE_ERROR(AnchorOutOfRange);
// service
LAYOUTMUSE_DEFINE_ERROR(NoEnabledRegions);
LAYOUTMUSE_DEFINE_ERROR(NotFound);
LAYOUTMUSE_DEFINE_ERROR(NoCheckpoint);
LAYOUTMUSE_DEFINE_ERROR(InvalidArgument);

#undef LAYOUTMUSE_DEFINE_ERROR

}  // namespace layoutmuse

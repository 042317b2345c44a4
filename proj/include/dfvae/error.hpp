#pragma once

#include <stdexcept>
#include <string>

namespace dfvae {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define DFVAE_DEFINE_ERROR(Name)              \
  class Name : public Error {                 \
   public:                                    \
    using Error::Error;                       \
  }

DFVAE_DEFINE_ERROR(ShapeError);
DFVAE_DEFINE_ERROR(DomainError);
DFVAE_DEFINE_ERROR(ValidationError);
DFVAE_DEFINE_ERROR(ArityError);
DFVAE_DEFINE_ERROR(DecodeError);
DFVAE_DEFINE_ERROR(IoError);
DFVAE_DEFINE_ERROR(PairingError);
DFVAE_DEFINE_ERROR(LookupError);
DFVAE_DEFINE_ERROR(ExtractionError);
DFVAE_DEFINE_ERROR(DegenerateStyleError);
DFVAE_DEFINE_ERROR(DivergenceError);
DFVAE_DEFINE_ERROR(LeakageError);
DFVAE_DEFINE_ERROR(SubmissionError);
DFVAE_DEFINE_ERROR(DetectorError);
DFVAE_DEFINE_ERROR(InsufficientRatingsError);
DFVAE_DEFINE_ERROR(NumericError);

#undef DFVAE_DEFINE_ERROR

}  // namespace dfvae

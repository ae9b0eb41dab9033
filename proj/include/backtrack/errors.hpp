#pragma once

#include <stdexcept>
#include <string>

namespace backtrack {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define BACKTRACK_DEFINE_ERROR(Name)        \
  class Name : public Error {               \
   public:                                  \
    using Error::Error;                     \
  }

BACKTRACK_DEFINE_ERROR(CyclicGraph);
BACKTRACK_DEFINE_ERROR(InvalidGraph);
BACKTRACK_DEFINE_ERROR(DimensionMismatch);
BACKTRACK_DEFINE_ERROR(InversionFailure);
BACKTRACK_DEFINE_ERROR(NumericalFailure);
BACKTRACK_DEFINE_ERROR(OscillationDetected);
BACKTRACK_DEFINE_ERROR(NonFinite);
BACKTRACK_DEFINE_ERROR(InfeasibleSparsity);
BACKTRACK_DEFINE_ERROR(UnknownDistanceKind);
BACKTRACK_DEFINE_ERROR(EmptyDataset);
BACKTRACK_DEFINE_ERROR(IoFailure);
BACKTRACK_DEFINE_ERROR(InvalidPlan);
BACKTRACK_DEFINE_ERROR(ModelNotFound);
BACKTRACK_DEFINE_ERROR(FormatError);

#undef BACKTRACK_DEFINE_ERROR

}  // namespace backtrack

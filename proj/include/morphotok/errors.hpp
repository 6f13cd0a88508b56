#pragma once

#include <stdexcept>
#include <string>

namespace morphotok {

/// Base class for all domain errors thrown by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define MORPHOTOK_DEFINE_ERROR(NAME)                                       \
    class NAME : public Error {                                            \
    public:                                                                \
        explicit NAME(const std::string& msg) : Error(#NAME ": " + msg) {} \
    }

// corpus
MORPHOTOK_DEFINE_ERROR(DecodeError);
MORPHOTOK_DEFINE_ERROR(MixedDomainError);
MORPHOTOK_DEFINE_ERROR(EmptyCorpusError);
MORPHOTOK_DEFINE_ERROR(TooFewSequences);

// boundary model
MORPHOTOK_DEFINE_ERROR(PositionOutOfRange);
MORPHOTOK_DEFINE_ERROR(InfeasibleConstraints);
MORPHOTOK_DEFINE_ERROR(SequenceTooLong);

// embedding manifold
MORPHOTOK_DEFINE_ERROR(EmptyContext);
MORPHOTOK_DEFINE_ERROR(DimensionMismatch);
MORPHOTOK_DEFINE_ERROR(NonTangentInput);
MORPHOTOK_DEFINE_ERROR(LengthMismatch);

// metrics
MORPHOTOK_DEFINE_ERROR(EmptyState);
MORPHOTOK_DEFINE_ERROR(EmptyEval);
MORPHOTOK_DEFINE_ERROR(NonpositiveInput);
MORPHOTOK_DEFINE_ERROR(TooFewTraces);
MORPHOTOK_DEFINE_ERROR(NoSharedForms);
MORPHOTOK_DEFINE_ERROR(TooFewIterations);
MORPHOTOK_DEFINE_ERROR(MetricRangeError);

// cli / pipeline
MORPHOTOK_DEFINE_ERROR(ConfigError);
MORPHOTOK_DEFINE_ERROR(EmptyBucket);
MORPHOTOK_DEFINE_ERROR(MissingReport);
MORPHOTOK_DEFINE_ERROR(MalformedReport);

#undef MORPHOTOK_DEFINE_ERROR

} // namespace morphotok

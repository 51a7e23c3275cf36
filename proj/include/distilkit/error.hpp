#pragma once

#include <stdexcept>
#include <string>

namespace distilkit {

// Base for all library errors. `code()` is the stable machine-readable name
// that the CLI prints on failure paths.
class Error : public std::runtime_error {
public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(code + ": " + what), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

private:
  std::string code_;
};

#define DISTILKIT_DEFINE_ERROR(Name)                        \
  class Name : public Error {                               \
  public:                                                   \
    explicit Name(const std::string& what)                  \
        : Error(#Name, what) {}                             \
  }

// tensor-core
DISTILKIT_DEFINE_ERROR(DimensionMismatch);
DISTILKIT_DEFINE_ERROR(InvalidAxis);
DISTILKIT_DEFINE_ERROR(NonScalarLoss);
DISTILKIT_DEFINE_ERROR(DetachedGraph);
DISTILKIT_DEFINE_ERROR(NonDeterministicFunction);

// encoder-model
DISTILKIT_DEFINE_ERROR(SequenceTooLong);
DISTILKIT_DEFINE_ERROR(UnknownTokenId);
DISTILKIT_DEFINE_ERROR(MissingHead);
DISTILKIT_DEFINE_ERROR(PositionOutOfRange);

// objectives
DISTILKIT_DEFINE_ERROR(ShapeMismatch);
DISTILKIT_DEFINE_ERROR(NonpositiveTemperature);
DISTILKIT_DEFINE_ERROR(MissingProjection);
DISTILKIT_DEFINE_ERROR(LengthMismatch);
DISTILKIT_DEFINE_ERROR(BatchTooSmall);
DISTILKIT_DEFINE_ERROR(HeadCountMismatch);
DISTILKIT_DEFINE_ERROR(InvalidDistribution);
DISTILKIT_DEFINE_ERROR(MissingTerm);

// init-map
DISTILKIT_DEFINE_ERROR(IndivisibleDepth);
DISTILKIT_DEFINE_ERROR(InvalidExplicitList);
DISTILKIT_DEFINE_ERROR(MapLengthMismatch);
DISTILKIT_DEFINE_ERROR(EmptyMapForTaskSpecific);

// trainer
DISTILKIT_DEFINE_ERROR(MissingTeacher);
DISTILKIT_DEFINE_ERROR(UntrainedTeacher);
DISTILKIT_DEFINE_ERROR(EmptyCorpus);
DISTILKIT_DEFINE_ERROR(NoDevSplit);
DISTILKIT_DEFINE_ERROR(StepOutOfRange);

// data-eval
DISTILKIT_DEFINE_ERROR(MissingColumn);
DISTILKIT_DEFINE_ERROR(EmptyFile);
DISTILKIT_DEFINE_ERROR(InvalidSize);
DISTILKIT_DEFINE_ERROR(TooFewPairs);
DISTILKIT_DEFINE_ERROR(EmptyRecords);
DISTILKIT_DEFINE_ERROR(DuplicateSeed);

// cli
DISTILKIT_DEFINE_ERROR(ConfigInvalid);
DISTILKIT_DEFINE_ERROR(RuntimeFailure);

#undef DISTILKIT_DEFINE_ERROR

}  // namespace distilkit

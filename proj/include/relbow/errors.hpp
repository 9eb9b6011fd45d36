#ifndef RELBOW_ERRORS_HPP
#define RELBOW_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace relbow {

// Base type for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define RELBOW_DEFINE_ERROR(Name)            \
  class Name : public Error {                \
   public:                                   \
    using Error::Error;                      \
  }

// corpus
RELBOW_DEFINE_ERROR(IoError);
RELBOW_DEFINE_ERROR(SchemaError);
RELBOW_DEFINE_ERROR(DuplicateUser);
RELBOW_DEFINE_ERROR(EmptyCorpus);
RELBOW_DEFINE_ERROR(SampleTooLarge);
RELBOW_DEFINE_ERROR(InvalidConfig);
RELBOW_DEFINE_ERROR(DegenerateSplit);

// relevance
RELBOW_DEFINE_ERROR(InvalidTemplate);
RELBOW_DEFINE_ERROR(Unparseable);
RELBOW_DEFINE_ERROR(EndpointError);
RELBOW_DEFINE_ERROR(ConfigError);
RELBOW_DEFINE_ERROR(UnknownPost);
RELBOW_DEFINE_ERROR(EmptyInput);

// propagation
RELBOW_DEFINE_ERROR(InsufficientLabels);

// features
RELBOW_DEFINE_ERROR(MissingLabel);
RELBOW_DEFINE_ERROR(SingleClass);

// classifier
RELBOW_DEFINE_ERROR(DimensionMismatch);
RELBOW_DEFINE_ERROR(LengthMismatch);

// artifacts
RELBOW_DEFINE_ERROR(VersionMismatch);

#undef RELBOW_DEFINE_ERROR

// Raised when a pipeline stage is requested before its upstream stage has run.
class MissingArtifact : public Error {
 public:
  MissingArtifact(std::string stage, const std::string& message)
      : Error(message), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace relbow

#endif  // RELBOW_ERRORS_HPP

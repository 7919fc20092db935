#pragma once

#include <stdexcept>
#include <string>

namespace gslosh {

/// Error categories. The numeric values are shared with the C API status codes.
enum class ErrorKind : int {
  config = 1,
  state = 2,
  training = 3,
  data = 4,
  integration = 5,
  projection = 6,
  io = 7,
  pipeline = 8,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define GSLOSH_DEFINE_ERROR(Name, Kind)                                     \
  class Name : public Error {                                               \
   public:                                                                  \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

GSLOSH_DEFINE_ERROR(ConfigError, config)
GSLOSH_DEFINE_ERROR(StateError, state)
GSLOSH_DEFINE_ERROR(TrainingError, training)
GSLOSH_DEFINE_ERROR(DataError, data)
GSLOSH_DEFINE_ERROR(IntegrationError, integration)
GSLOSH_DEFINE_ERROR(ProjectionError, projection)
GSLOSH_DEFINE_ERROR(IoError, io)
GSLOSH_DEFINE_ERROR(PipelineError, pipeline)

#undef GSLOSH_DEFINE_ERROR

}  // namespace gslosh

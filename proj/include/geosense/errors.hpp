#pragma once

#include <stdexcept>
#include <string>

namespace geosense {

// Every failure raised by the library derives from Error so callers (the CLI in
// particular) can catch one type and print a one-line diagnostic.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define GEOSENSE_DEFINE_ERROR(Name)     \
  class Name : public Error {           \
   public:                              \
    using Error::Error;                 \
  }

GEOSENSE_DEFINE_ERROR(DimensionError);
GEOSENSE_DEFINE_ERROR(NumericError);
GEOSENSE_DEFINE_ERROR(ContractError);
GEOSENSE_DEFINE_ERROR(EmptySupervisionError);
GEOSENSE_DEFINE_ERROR(AssemblyError);
GEOSENSE_DEFINE_ERROR(CapacityError);
GEOSENSE_DEFINE_ERROR(ConfigError);
GEOSENSE_DEFINE_ERROR(FormatError);
GEOSENSE_DEFINE_ERROR(VersionError);
GEOSENSE_DEFINE_ERROR(CorruptionError);
GEOSENSE_DEFINE_ERROR(UsageError);

#undef GEOSENSE_DEFINE_ERROR

}  // namespace geosense

#pragma once

#include <stdexcept>
#include <string>

namespace absa {

/// Root of every exception thrown by the library. The CLI maps each
/// subclass to a distinct exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class ContractError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class LabelError : public Error { using Error::Error; };
class ParseError : public Error { using Error::Error; };
class ValidationError : public Error { using Error::Error; };
class StratificationError : public Error { using Error::Error; };
class EncodingError : public Error { using Error::Error; };
class LookupError : public Error { using Error::Error; };
class TrainingError : public Error { using Error::Error; };
class AggregationError : public Error { using Error::Error; };
class ReportError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };

}  // namespace absa

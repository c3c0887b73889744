#pragma once

#include <stdexcept>
#include <string>

namespace encfm {

/// Error classes; the CLI maps each to a distinct exit code.
enum class ErrorKind {
    Parse,
    Parameter,
    InvalidInput,
    Encoding,
    Domain,
    Format,
    Key,
    Decode,
    Io,
    Unsupported,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

#define ENCFM_DEFINE_ERROR(Name, Kind)                                      \
    class Name : public Error {                                             \
    public:                                                                 \
        explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
    };

ENCFM_DEFINE_ERROR(ParseError, Parse)
ENCFM_DEFINE_ERROR(ParameterError, Parameter)
ENCFM_DEFINE_ERROR(InvalidInputError, InvalidInput)
ENCFM_DEFINE_ERROR(EncodingError, Encoding)
ENCFM_DEFINE_ERROR(DomainError, Domain)
ENCFM_DEFINE_ERROR(FormatError, Format)
ENCFM_DEFINE_ERROR(KeyError, Key)
ENCFM_DEFINE_ERROR(DecodeError, Decode)
ENCFM_DEFINE_ERROR(IoError, Io)
ENCFM_DEFINE_ERROR(UnsupportedPatternError, Unsupported)

#undef ENCFM_DEFINE_ERROR

}  // namespace encfm

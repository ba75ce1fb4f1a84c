#pragma once

#include <stdexcept>
#include <string>

namespace cdw {

// Error categories shared by the library, the C API and the CLI exit codes.
enum class ErrorKind {
    InvalidLetter,
    InvalidDescriptor,
    DepthTooSmall,
    NonMinimalTimeout,
    SameOrbitDetected,
    HorizonExceeded,
    HypothesisViolated,
    HypothesisFailed,
    NotCompatible,
    NoMatching,
    IncoherentFragment,
    NoWitness,
    ChoiceExhausted,
    Unsupported,
    Internal,
};

const char* error_kind_name(ErrorKind k);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace cdw

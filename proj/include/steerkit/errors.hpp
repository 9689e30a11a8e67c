#pragma once

#include <stdexcept>
#include <string>

namespace steerkit {

// Base of every error the library throws. Callers that only care about
// "steerkit failed" catch this; the subclasses exist for tests and for the
// CLI's exit-code mapping.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

// Token id >= vocab_size.
class TokenOutOfVocabulary : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

// Sequence (prompt + generation budget) longer than max_seq_len.
class ContextOverflow : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

class NonFiniteValue : public Error {
public:
    using Error::Error;
};

// Malformed weight/bank/profile files.
class FormatError : public Error {
public:
    using Error::Error;
};

class ChecksumMismatch : public FormatError {
public:
    using FormatError::FormatError;
};

class ShapeMismatch : public FormatError {
public:
    using FormatError::FormatError;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Annotator transport (network) failure after all retries.
class TransportError : public Error {
public:
    using Error::Error;
};

class AuthenticationError : public Error {
public:
    using Error::Error;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace steerkit

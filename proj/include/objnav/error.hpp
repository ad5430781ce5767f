#pragma once

#include <stdexcept>
#include <string>

namespace objnav {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

/// A domain invariant (world, unroll, config) does not hold.
class InvariantError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced by a forward computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

class EpisodeError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class TruncatedFrameError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

class UnknownTypeError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

class LengthOverflowError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

class UnderfilledError : public Error {
 public:
  using Error::Error;
};

class TransportError : public Error {
 public:
  using Error::Error;
};

}  // namespace objnav

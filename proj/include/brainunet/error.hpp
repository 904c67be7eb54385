#pragma once

#include <stdexcept>
#include <string>

namespace brainunet {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Filesystem failures: missing files, unwritable paths, short reads.
class IoError : public Error {
public:
    using Error::Error;
};

/// Well-formedness failures of on-disk content (NIfTI headers, checkpoints, manifests).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Tensor or volume shapes that do not satisfy an operation's contract.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Argument values outside their documented domain.
class ValueError : public Error {
public:
    using Error::Error;
};

/// Raised by the training loop (non-finite loss or gradient).
class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace brainunet

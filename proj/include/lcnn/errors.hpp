#ifndef LCNN_ERRORS_HPP
#define LCNN_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace lcnn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor extents that do not line up.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Invalid layer, model, split or run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Bad runtime input (label out of range, wrong stream count, ...).
class InputError : public Error {
public:
    using Error::Error;
};

/// API used out of order (non-scalar loss, missing gradient, ...).
class UsageError : public Error {
public:
    using Error::Error;
};

/// Binary file does not follow its declared layout.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Well-formed file holding impossible values.
class CorruptionError : public Error {
public:
    using Error::Error;
};

/// Two files that should describe the same items disagree.
class ConsistencyError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, int epoch, int batch)
        : Error(what), epoch_(epoch), batch_(batch) {}
    int epoch() const noexcept { return epoch_; }
    int batch() const noexcept { return batch_; }

private:
    int epoch_;
    int batch_;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace lcnn

#endif // LCNN_ERRORS_HPP

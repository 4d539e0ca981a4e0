#pragma once

#include <stdexcept>
#include <string>

namespace dfc {

/// Root of every error raised by the library. Each subclass names one
/// failure category so callers can map it to an exit code or retry policy.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error { public: using Error::Error; };
class RangeError : public Error { public: using Error::Error; };
class NonFiniteError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class EstimatorError : public Error { public: using Error::Error; };
class GeometryError : public Error { public: using Error::Error; };
class TooSmallError : public Error { public: using Error::Error; };
class EmptyDatasetError : public Error { public: using Error::Error; };
class LayoutError : public Error { public: using Error::Error; };
class MixedSizeError : public Error { public: using Error::Error; };
class IoError : public Error { public: using Error::Error; };
class NonFiniteLossError : public Error { public: using Error::Error; };
class VersionError : public Error { public: using Error::Error; };
class CorruptionError : public Error { public: using Error::Error; };

}  // namespace dfc

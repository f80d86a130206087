#pragma once

#include <stdexcept>
#include <string>

namespace hlab {

// Base of every error thrown by the library. Subclasses map onto the error
// categories used in the module contracts.
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
   public:
    using Error::Error;
};

class ConfigError : public Error {
   public:
    using Error::Error;
};

class ContractError : public Error {
   public:
    using Error::Error;
};

class InputError : public Error {
   public:
    using Error::Error;
};

class LengthError : public Error {
   public:
    using Error::Error;
};

class LoadError : public Error {
   public:
    using Error::Error;
};

}  // namespace hlab

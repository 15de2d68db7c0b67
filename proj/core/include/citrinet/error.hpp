#pragma once

#include <stdexcept>
#include <string>

namespace citrinet {

// Root of every error the library throws.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Operand shapes are incompatible with the requested operation.
class DimensionError : public Error {
  public:
    using Error::Error;
};

// A model/layer/op was configured with values it cannot honor
// (even kernel, indivisible channel groups, unknown config key, ...).
class ConfigError : public Error {
  public:
    using Error::Error;
};

// Caller supplied data that violates an input precondition
// (too-short waveform, empty corpus, out-of-range token id, ...).
class InputError : public Error {
  public:
    using Error::Error;
};

// An internal contract was broken (non-scalar loss, fully masked
// attention row, ...).
class ContractError : public Error {
  public:
    using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
  public:
    using Error::Error;
};

} // namespace citrinet

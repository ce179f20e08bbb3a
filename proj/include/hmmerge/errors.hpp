#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hmmerge {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: corpus or model files, unknown symbols, empty corpora.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure at runtime (zero-probability samples, degenerate priors).
class NumericalError : public Error {
 public:
  using Error::Error;
};

class UnknownSymbol : public InputError {
 public:
  explicit UnknownSymbol(const std::string& symbol)
      : InputError("unknown symbol '" + symbol + "'"), symbol_(symbol) {}
  const std::string& symbol() const noexcept { return symbol_; }

 private:
  std::string symbol_;
};

class FormatError : public InputError {
 public:
  using InputError::InputError;
};

class EmptyCorpus : public InputError {
 public:
  EmptyCorpus() : InputError("corpus contains no samples") {}
};

class UnknownCaseStudy : public InputError {
 public:
  explicit UnknownCaseStudy(const std::string& name)
      : InputError("unknown case study '" + name + "'") {}
};

/// Samples that have no generating path. Carries the offending strings.
class UnparseableSample : public NumericalError {
 public:
  explicit UnparseableSample(std::vector<std::string> offenders)
      : NumericalError(describe("unparseable sample", offenders)),
        offenders_(std::move(offenders)) {}
  const std::vector<std::string>& offenders() const noexcept { return offenders_; }

 protected:
  static std::string describe(const std::string& what, const std::vector<std::string>& items) {
    std::string msg = what + (items.size() == 1 ? "" : "s") + ":";
    for (std::size_t i = 0; i < items.size() && i < 5; ++i) msg += " [" + items[i] + "]";
    if (items.size() > 5) msg += " ... (" + std::to_string(items.size()) + " total)";
    return msg;
  }

 private:
  std::vector<std::string> offenders_;
};

class ZeroProbabilitySample : public UnparseableSample {
 public:
  explicit ZeroProbabilitySample(std::vector<std::string> offenders)
      : UnparseableSample(std::move(offenders)) {}
};

class MaxLengthExceeded : public NumericalError {
 public:
  explicit MaxLengthExceeded(std::size_t cap)
      : NumericalError("sampled string exceeded the length cap of " + std::to_string(cap)),
        cap_(cap) {}
  std::size_t cap() const noexcept { return cap_; }

 private:
  std::size_t cap_;
};

class EmptyModel : public NumericalError {
 public:
  EmptyModel() : NumericalError("pruning disconnected the initial state from the final state") {}
};

class DimensionMismatch : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class NonPositiveAlpha : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class OffSimplex : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class DegenerateBernoulli : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class InvalidPair : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

}  // namespace hmmerge

#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace attnlimits {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Failure categories. The C API and the CLI map these onto exit codes.
enum class ErrorKind {
  input,        // malformed word, foreign symbol, bad flag value
  config,       // parameter out of range
  schema,       // model file structure
  version,      // model file version mismatch
  unsupported,  // operation not defined for this model kind
  numeric,      // non-finite activation, non-converging iteration
  reduction,    // restriction resampling budget exhausted
  io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

const char* to_string(ErrorKind kind);

// Every stochastic routine takes an explicit 64-bit seed.
using Rng = std::mt19937_64;

// Stable sub-seed derivation: splitmix64 over (seed, FNV-1a(label)).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

std::uint64_t fnv1a64(std::string_view bytes);

double uniform01(Rng& rng);

// Runs body(i) for i in [0, count) on `threads` workers. Work is split into
// contiguous blocks so results written to per-index slots do not depend on
// the thread count.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& body);

unsigned default_threads();

}  // namespace attnlimits

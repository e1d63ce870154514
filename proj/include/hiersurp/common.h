#ifndef HIERSURP_COMMON_H_
#define HIERSURP_COMMON_H_

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace hiersurp {

// Error hierarchy. The CLI maps the three families onto exit codes
// (usage 2, data 3, numerical 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class IdOutOfRange : public DataError {
 public:
  IdOutOfRange(long long id, std::size_t size)
      : DataError("id " + std::to_string(id) + " outside vocabulary of size " +
                  std::to_string(size)) {}
};

// Deterministic random source. Only the raw 64-bit engine output is used so
// that streams are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n);

  // Standard normal via Box-Muller; one engine pair per draw.
  double normal();

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
};

// Shortest-safe round-trip text for a double ("%.17g").
std::string fmt(double v);

// splitmix64 finalizer; used to derive independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace hiersurp

#endif  // HIERSURP_COMMON_H_

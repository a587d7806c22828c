#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace seqnd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Input violates an operation's precondition.
class InvalidArgument : public Error {
public:
  using Error::Error;
};

/// A referenced entity (file, topic, cluster, resource) does not exist.
class NotFound : public Error {
public:
  using Error::Error;
};

/// A cluster definition that is not a total, non-empty grouping of a topic set.
class IncompleteDefinition : public Error {
public:
  IncompleteDefinition(std::string msg, std::vector<std::size_t> missing)
      : Error(std::move(msg)), missing_(std::move(missing)) {}
  const std::vector<std::size_t>& missing() const noexcept { return missing_; }

private:
  std::vector<std::size_t> missing_;
};

using TokenId = std::uint32_t;
using Rng = std::mt19937_64;

// Portable [0,1) draw: 53 high bits of one engine output.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Portable integer in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

inline double uniform_range(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Draw from an unnormalized discrete distribution.
inline std::size_t sample_discrete(Rng& rng, const std::vector<double>& weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = uniform01(rng) * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    u -= weights[i];
    if (u < 0.0) return i;
  }
  // u can survive the loop through rounding; land on the last positive weight.
  for (std::size_t i = weights.size(); i-- > 0;)
    if (weights[i] > 0.0) return i;
  return weights.size() - 1;
}

template <class T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = uniform_index(rng, i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace seqnd

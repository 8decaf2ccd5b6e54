#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace sgec {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// Raised when operands have incompatible shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised on NaN/Inf or a domain violation inside numerical code.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Fixed stream ids for splitting one run seed into independent generators.
enum class Stream : std::uint64_t {
  kInit = 1,
  kSampling = 2,
  kNoise = 3,
  kProbe = 4,
  kSearch = 5,
  kData = 6,
};

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive well-mixed seeds for each stream.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline Rng make_rng(std::uint64_t seed, Stream stream, std::uint64_t substream = 0) {
  std::uint64_t s = mix_seed(seed);
  s = mix_seed(s ^ static_cast<std::uint64_t>(stream));
  s = mix_seed(s ^ substream);
  return Rng(s);
}

}  // namespace sgec

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "ridgegen/common.hpp"

namespace ridgegen {

namespace detail {

// splitmix64 finalizer, used to derive independent child streams.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

// Seedable random source. Gaussian sampling is implemented via Box-Muller on
// top of the (standardized) mt19937_64 bit stream rather than
// std::normal_distribution, whose output is implementation-defined; this keeps
// sampled values identical across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

  uint64_t seed() const { return seed_; }

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1), 53 bits of precision.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  uint64_t uniform_int(uint64_t n) {
    check_usage(n > 0, "uniform_int: n must be positive");
    // Rejection sampling to avoid modulo bias.
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0,1] so the log is finite.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Independent child stream; a pure function of the constructing seed and
  // the stream index, so derivation order does not matter.
  Rng derive(uint64_t stream) const {
    return Rng(detail::mix64(seed_ ^ detail::mix64(stream + 0x5851f42d4c957f2dULL)));
  }

  // Exact state round trip (engine state is textual per the standard; the
  // cached Box-Muller spare is bit-preserved).
  std::string serialize() const {
    std::ostringstream os;
    os << seed_ << " " << gen_ << " " << (have_spare_ ? 1 : 0) << " "
       << std::bit_cast<uint64_t>(spare_);
    return os.str();
  }

  static Rng deserialize(const std::string& s) {
    std::istringstream is(s);
    uint64_t seed = 0, spare_bits = 0;
    int have_spare = 0;
    Rng r(0);
    is >> seed >> r.gen_ >> have_spare >> spare_bits;
    check_integrity(static_cast<bool>(is), "rng: malformed serialized state");
    r.seed_ = seed;
    r.have_spare_ = have_spare != 0;
    r.spare_ = std::bit_cast<double>(spare_bits);
    return r;
  }

 private:
  uint64_t seed_;
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ridgegen

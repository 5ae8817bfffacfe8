#ifndef GRADMA_RNG_HPP
#define GRADMA_RNG_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace gradma {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stream tags keep independent consumers of one run seed apart.
enum class Stream : std::uint64_t {
  init = 1,
  sampling = 2,
  partition = 3,
  batches = 4,
  anchor = 5,
  synthetic_means = 6,
  synthetic_points = 7,
  qp_fuzz = 8,
};

// Seed for a counter-based substream: f(seed, stream, counters...).
inline std::uint64_t derive_seed(std::uint64_t seed, Stream stream, std::initializer_list<std::uint64_t> counters = {}) {
  std::uint64_t h = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(stream)));
  for (auto c : counters) h = splitmix64(h ^ splitmix64(c + 0x632be59bd9b4e019ULL));
  return h;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, Stream stream, std::initializer_list<std::uint64_t> counters = {}) {
  return Rng(derive_seed(seed, stream, counters));
}

// Dirichlet(alpha 1_k) sampled in log space. For alpha < 1 a Gamma(alpha) draw
// is Gamma(alpha + 1) * U^(1/alpha), whose logarithm stays finite even when the
// draw itself underflows (alpha = 0.01 routinely produces values below 1e-300).
inline std::vector<double> sample_dirichlet(Rng& rng, int k, double alpha) {
  std::vector<double> logs(static_cast<std::size_t>(k));
  const bool boost = alpha < 1.0;
  std::gamma_distribution<double> gamma(boost ? alpha + 1.0 : alpha, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (auto& l : logs) {
    double lg = std::log(gamma(rng));
    if (boost) {
      double u = unif(rng);
      while (u <= 0.0) u = unif(rng);
      lg += std::log(u) / alpha;
    }
    l = lg;
  }
  double mx = -INFINITY;
  for (double l : logs) mx = std::max(mx, l);
  double total = 0;
  for (auto& l : logs) {
    l = std::exp(l - mx);
    total += l;
  }
  for (auto& l : logs) l /= total;
  return logs;
}

}  // namespace gradma

#endif  // GRADMA_RNG_HPP

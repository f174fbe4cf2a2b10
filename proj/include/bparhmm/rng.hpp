#ifndef BPARHMM_RNG_HPP
#define BPARHMM_RNG_HPP

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace bparhmm {

// Random number generator with self-contained distribution code.  All draws
// consume engine output directly, so the full sampler state is the engine
// state and checkpoints can restore the exact stream position.
class Rng {
public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed), seed_(seed) {}

  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);
  int uniformInt(int n);                  // {0, ..., n-1}
  double normal();                        // standard normal
  double gammaDraw(double shape);         // Gamma(shape, 1)
  double gammaDraw(double shape, double rate) { return gammaDraw(shape) / rate; }
  double betaDraw(double a, double b);
  int poisson(double lambda);
  std::vector<double> dirichlet(const std::vector<double>& conc);

  // Deterministic substream derivation for parallel-safe per-unit RNGs.
  Rng substream(std::uint64_t a, std::uint64_t b) const;

  std::string serialize() const;
  void deserialize(const std::string& s);

  std::mt19937_64& engine() { return engine_; }

private:
  std::mt19937_64 engine_;
  std::uint64_t seed_ = 0;
};

}  // namespace bparhmm

#endif

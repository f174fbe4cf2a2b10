#include "bparhmm/rng.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace bparhmm {

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

double Rng::uniform() {
  // 53-bit mantissa, never returns 1.0
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int Rng::uniformInt(int n) {
  if (n <= 0) throw std::invalid_argument("uniformInt: n must be positive");
  // rejection to avoid modulo bias
  const std::uint64_t un = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return static_cast<int>(x % un);
}

double Rng::normal() {
  // Box-Muller without caching the second variate
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double Rng::gammaDraw(double shape) {
  if (!(shape > 0.0)) throw std::invalid_argument("gammaDraw: shape must be positive");
  if (shape < 1.0) {
    // boost to shape+1, then scale back; floor guards against underflow to
    // exact zero, which would break downstream log and normalization steps
    const double u = uniform();
    const double x = gammaDraw(shape + 1.0) * std::pow(u > 0.0 ? u : 1e-300, 1.0 / shape);
    return std::max(x, 1e-300);
  }
  // Marsaglia-Tsang squeeze
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double Rng::betaDraw(double a, double b) {
  const double x = gammaDraw(a);
  const double y = gammaDraw(b);
  return x / (x + y);
}

int Rng::poisson(double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("poisson: negative rate");
  if (lambda == 0.0) return 0;
  if (lambda > 60.0) {
    // split to keep the inversion loop numerically safe
    const double half = lambda / 2.0;
    return poisson(half) + poisson(lambda - half);
  }
  const double l = std::exp(-lambda);
  int k = 0;
  double p = 1.0;
  do {
    ++k;
    p *= uniform();
  } while (p > l);
  return k - 1;
}

std::vector<double> Rng::dirichlet(const std::vector<double>& conc) {
  std::vector<double> out(conc.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < conc.size(); ++i) {
    out[i] = gammaDraw(conc[i]);
    sum += out[i];
  }
  if (sum <= 0.0) {
    // all shapes tiny; fall back to uniform over the simplex corner mass
    for (auto& v : out) v = 1.0 / static_cast<double>(out.size());
    return out;
  }
  for (auto& v : out) v /= sum;
  return out;
}

Rng Rng::substream(std::uint64_t a, std::uint64_t b) const {
  return Rng(splitmix64(seed_ ^ splitmix64(a ^ splitmix64(b + 0x51ed2701ULL))));
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << seed_ << ' ' << engine_;
  return os.str();
}

void Rng::deserialize(const std::string& s) {
  std::istringstream is(s);
  is >> seed_ >> engine_;
  if (!is) throw std::invalid_argument("Rng::deserialize: malformed state string");
}

}  // namespace bparhmm

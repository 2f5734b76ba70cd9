#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "rat/tensor.hpp"

namespace rat {

// Deterministic RNG: mt19937_64 plus a hand-rolled Box-Muller so gaussian
// draws are identical across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() {
    return double(gen_() >> 11) * (1.0 / 9007199254740992.0);
  }

  int64_t uniform_int(int64_t n) {  // [0, n)
    return static_cast<int64_t>(uniform() * double(n)) % n;
  }

  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  template <typename T>
  TensorT<T> gaussian_tensor(Shape shape, double std_dev) {
    TensorT<T> t = TensorT<T>::zeros(std::move(shape));
    for (auto& v : *t.data) v = T(gaussian() * std_dev);
    return t;
  }

  template <typename T>
  TensorT<T> uniform_tensor(Shape shape, double lo, double hi) {
    TensorT<T> t = TensorT<T>::zeros(std::move(shape));
    for (auto& v : *t.data) v = T(lo + uniform() * (hi - lo));
    return t;
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace rat

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "mpcimit/types.hpp"

namespace mpcimit {

// splitmix64 step; used to derive independent sub-stream seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index) {
    std::uint64_t s = root ^ (0x632be59bd9b4e019ULL * (index + 1));
    return splitmix64(s);
}

// Deterministic RNG. Draws raw bits from mt19937_64 and maps them to doubles
// explicitly, so streams are reproducible across standard libraries (the
// std distributions are implementation-defined).
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}

    std::uint64_t bits() { return eng_(); }

    // Uniform on (0, 1).
    double uniform() { return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(eng_() % span);
    }

    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    Vector uniform_box(const Vector& lo, const Vector& hi) {
        Vector x(lo.size());
        for (Eigen::Index i = 0; i < lo.size(); ++i) x[i] = uniform(lo[i], hi[i]);
        return x;
    }

    Vector gaussian(int dim) {
        Vector x(dim);
        for (int i = 0; i < dim; ++i) x[i] = normal();
        return x;
    }

    // Uniform on the sphere of the given radius.
    Vector sphere(int dim, double radius) {
        Vector x = gaussian(dim);
        const double nrm = x.norm();
        if (nrm < 1e-300) return sphere(dim, radius);
        return x * (radius / nrm);
    }

    // Uniform in the ball of the given radius.
    Vector ball(int dim, double radius) {
        Vector x = sphere(dim, radius);
        return x * std::pow(uniform(), 1.0 / dim);
    }

  private:
    std::mt19937_64 eng_;
};

}  // namespace mpcimit

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace kdstm {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// log floor used for every log() of a probability
inline constexpr double kLogEps = 1e-10;

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

inline double clamp(double x, double lo, double hi) {
    return x < lo ? lo : (x > hi ? hi : x);
}

// Deterministic RNG. All draws go through explicit transforms of the
// mt19937_64 stream so results are reproducible across runs of the same
// binary regardless of stdlib distribution internals.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t raw() { return gen_(); }

    // uniform on (0, 1), never exactly 0 or 1
    double uniform_open() {
        return (static_cast<double>(gen_() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    }

    // uniform on [0, 1)
    double uniform() {
        return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double normal() {
        double u1 = uniform_open();
        double u2 = uniform_open();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // integer in [0, n)
    uint64_t below(uint64_t n) { return gen_() % n; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

    // Marsaglia-Tsang gamma sampler; shape > 0, unit scale
    double gamma(double shape) {
        if (shape < 1.0) {
            double u = uniform_open();
            return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
        }
        double d = shape - 1.0 / 3.0;
        double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            double u = uniform_open();
            if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) {
                return d * v;
            }
        }
    }

    double beta(double a, double b) {
        double x = gamma(a);
        double y = gamma(b);
        return x / (x + y);
    }

private:
    std::mt19937_64 gen_;
};

} // namespace kdstm

#pragma once

#include "kdstm/common.hpp"

#include <cmath>
#include <limits>

// Modified Bessel functions of the first kind, log domain, for the vMF
// normalizer and concentration gradients. Three regimes:
//   x < 0.1*(nu+1)   direct power series (a handful of terms)
//   x > 50*(nu+1)    Hankel large-argument asymptotic expansion
//   otherwise        power series summed in log domain
// The ratio A(x) = I_{nu+1}(x)/I_nu(x) uses a Gautschi-style continued
// fraction except in the asymptotic regime.

namespace kdstm::bessel {

namespace detail {

// log( I_nu(x) * Gamma(nu+1) / (x/2)^nu ), i.e. the series
// s = sum_k (x^2/4)^k / (k! (nu+1)_k), in log space. s >= 1, -> 1 as x -> 0.
inline double log_normalized_series(double nu, double x) {
    const double q = 0.25 * x * x;
    // fast path: terms decay immediately, plain summation
    if (q < 0.9 * (nu + 1.0)) {
        double term = 1.0;
        double sum = 1.0;
        for (int k = 0; k < 500; ++k) {
            term *= q / ((k + 1.0) * (nu + k + 1.0));
            sum += term;
            if (term < sum * 1e-17) return std::log(sum);
        }
        throw Error("bessel: normalized series failed to converge");
    }
    // log-domain summation around the largest term
    double log_term = 0.0;
    double max_log = 0.0;
    std::vector<double> logs;
    logs.push_back(0.0);
    for (int k = 0; k < 100000; ++k) {
        log_term += std::log(q) - std::log(k + 1.0) - std::log(nu + k + 1.0);
        logs.push_back(log_term);
        if (log_term > max_log) max_log = log_term;
        if (log_term < max_log - 40.0 && q < (k + 1.0) * (nu + k + 1.0)) break;
    }
    double sum = 0.0;
    for (double lt : logs) sum += std::exp(lt - max_log);
    return max_log + std::log(sum);
}

// log of the Hankel asymptotic sum: I_nu(x) ~ e^x / sqrt(2 pi x) * S,
// S = 1 - (m-1)/(8x) + (m-1)(m-9)/(2!(8x)^2) - ..., m = 4 nu^2.
inline double log_asymptotic_sum(double nu, double x) {
    const double m = 4.0 * nu * nu;
    double term = 1.0;
    double sum = 1.0;
    for (int k = 1; k <= 12; ++k) {
        double odd = 2.0 * k - 1.0;
        term *= -(m - odd * odd) / (k * 8.0 * x);
        sum += term;
        if (std::fabs(term) < 1e-17 * std::fabs(sum)) break;
    }
    if (sum <= 0.0) throw Error("bessel: asymptotic sum non-positive");
    return std::log(sum);
}

} // namespace detail

inline bool in_asymptotic_regime(double nu, double x) {
    return x > 50.0 * (nu + 1.0);
}

// log I_nu(x) for nu >= 0, x > 0; throws instead of returning inf/nan
inline double log_bessel_i(double nu, double x) {
    if (nu < 0.0 || x <= 0.0) throw Error("bessel: require nu >= 0 and x > 0");
    double r;
    if (in_asymptotic_regime(nu, x)) {
        r = x - 0.5 * std::log(2.0 * M_PI * x) + detail::log_asymptotic_sum(nu, x);
    } else {
        r = nu * std::log(0.5 * x) - std::lgamma(nu + 1.0) +
            detail::log_normalized_series(nu, x);
    }
    if (!std::isfinite(r)) throw Error("bessel: log I_nu overflowed");
    return r;
}

// A(x) = I_{nu+1}(x) / I_nu(x) via modified-Lentz continued fraction:
// A = 1 / (2(nu+1)/x + 1 / (2(nu+2)/x + ...))
inline double bessel_ratio(double nu, double x) {
    if (nu < 0.0 || x <= 0.0) throw Error("bessel: require nu >= 0 and x > 0");
    if (in_asymptotic_regime(nu, x)) {
        double r = std::exp(log_bessel_i(nu + 1.0, x) - log_bessel_i(nu, x));
        if (!std::isfinite(r)) throw Error("bessel: ratio overflowed");
        return r;
    }
    const double tiny = 1e-300;
    double f = tiny, c = f, d = 0.0;
    for (int j = 1; j <= 20000; ++j) {
        double b = 2.0 * (nu + j) / x;
        d = b + d;
        if (d == 0.0) d = tiny;
        c = b + 1.0 / c;
        if (c == 0.0) c = tiny;
        d = 1.0 / d;
        double delta = c * d;
        f *= delta;
        if (std::fabs(delta - 1.0) < 1e-16) {
            if (!std::isfinite(f) || f < 0.0) throw Error("bessel: ratio CF diverged");
            return f;
        }
    }
    throw Error("bessel: ratio CF did not converge");
}

struct LogBesselResult {
    double log_i;  // log I_nu(kappa)
    double ratio;  // I_{nu+1}(kappa) / I_nu(kappa)
};

inline LogBesselResult log_bessel_ratio(double nu, double kappa) {
    return {log_bessel_i(nu, kappa), bessel_ratio(nu, kappa)};
}

// d/dx of the ratio A(x) = I_{nu+1}/I_nu, from the recurrences:
// A'(x) = 1 - A^2 - (2 nu + 1)/x * A
inline double bessel_ratio_derivative(double nu, double x, double ratio) {
    return 1.0 - ratio * ratio - (2.0 * nu + 1.0) / x * ratio;
}

} // namespace kdstm::bessel

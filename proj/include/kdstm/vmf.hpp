#pragma once

#include "kdstm/bessel.hpp"
#include "kdstm/common.hpp"

#include <array>
#include <cmath>

// von Mises-Fisher distribution on the unit sphere in R^M: density,
// KL divergence to the uniform sphere, Wood rejection sampling, and an
// inverse-CDF reparameterized sampler with pathwise gradients.

namespace kdstm::vmf {

inline constexpr double kKappaMin = 1e-4;
inline constexpr double kKappaMax = 1e4;

struct VmfParams {
    Vec mu;       // unit direction
    double kappa; // concentration, clamped to [kKappaMin, kKappaMax]

    VmfParams(Vec direction, double concentration)
        : mu(std::move(direction)), kappa(clamp(concentration, kKappaMin, kKappaMax)) {
        double n = mu.norm();
        if (std::fabs(n - 1.0) > 1e-6) throw Error("VmfParams: mu is not unit length");
        mu /= n;
        if (!std::isfinite(concentration)) throw Error("VmfParams: kappa not finite");
    }

    int dim() const { return static_cast<int>(mu.size()); }
};

namespace detail {

// 64-point Gauss-Legendre nodes/weights on [-1, 1], computed once by
// Newton iteration on the Legendre polynomial.
struct GaussLegendre64 {
    std::array<double, 64> node{};
    std::array<double, 64> weight{};

    GaussLegendre64() {
        const int n = 64;
        for (int i = 0; i < (n + 1) / 2; ++i) {
            double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
            double pp = 0.0;
            for (int it = 0; it < 100; ++it) {
                double p0 = 1.0, p1 = 0.0;
                for (int j = 0; j < n; ++j) {
                    double p2 = p1;
                    p1 = p0;
                    p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
                }
                pp = n * (x * p0 - p1) / (x * x - 1.0);
                double dx = p0 / pp;
                x -= dx;
                if (std::fabs(dx) < 1e-15) break;
            }
            node[i] = -x;
            node[n - 1 - i] = x;
            weight[i] = 2.0 / ((1.0 - x * x) * pp * pp);
            weight[n - 1 - i] = weight[i];
        }
    }
};

inline const GaussLegendre64& gl64() {
    static const GaussLegendre64 table;
    return table;
}

// scalar-marginal integrand, scaled by e^{-kappa} so it never overflows:
// f(t) = exp(kappa (t - 1)) (1 - t^2)^p, p = (M - 3) / 2
struct OmegaMarginal {
    double kappa;
    double p;

    explicit OmegaMarginal(double kappa_, int m)
        : kappa(kappa_), p(0.5 * (m - 3)) {}

    double density(double t) const {
        double base = 1.0 - t * t;
        if (base <= 0.0) base = 0.0;
        return std::exp(kappa * (t - 1.0)) * std::pow(base, p);
    }

    // effective lower end of the support: mass below is < e^-50 relative
    double lower() const {
        return std::max(-1.0, 1.0 - 50.0 / std::max(kappa, 1e-12));
    }

    template <typename F>
    double integrate(double a, double b, F&& g) const {
        if (b <= a) return 0.0;
        const auto& q = gl64();
        double mid = 0.5 * (a + b), half = 0.5 * (b - a);
        double acc = 0.0;
        for (int i = 0; i < 64; ++i) {
            double t = mid + half * q.node[i];
            acc += q.weight[i] * density(t) * g(t);
        }
        return acc * half;
    }

    double mass(double a, double b) const {
        return integrate(a, b, [](double) { return 1.0; });
    }

    double normalizer() const { return mass(lower(), 1.0); }
};

} // namespace detail

// log surface area of the unit sphere S^{M-1} embedded in R^M
inline double log_surface_area(int m) {
    return std::log(2.0) + 0.5 * m * std::log(M_PI) - std::lgamma(0.5 * m);
}

// log( I_nu(kappa) Gamma(nu+1) / (kappa/2)^nu ); 0 at kappa -> 0
inline double log_relative_bessel(double nu, double kappa) {
    if (bessel::in_asymptotic_regime(nu, kappa)) {
        return bessel::log_bessel_i(nu, kappa) + std::lgamma(nu + 1.0) -
               nu * std::log(0.5 * kappa);
    }
    return bessel::detail::log_normalized_series(nu, kappa);
}

// log C_M(kappa), the vMF normalizing constant
inline double log_normalizer(int m, double kappa) {
    double nu = 0.5 * m - 1.0;
    return -log_surface_area(m) - log_relative_bessel(nu, kappa);
}

inline double log_density(const Vec& z, const VmfParams& params) {
    if (std::fabs(z.norm() - 1.0) > 1e-6) throw Error("log_density: z is not unit length");
    return log_normalizer(params.dim(), params.kappa) + params.kappa * params.mu.dot(z);
}

// KL( vMF(mu, kappa) || vMF(., 0) ) = kappa A(kappa) + log C(kappa) - log C(0);
// independent of mu, exactly 0 at kappa = 0.
inline double kl_to_uniform(double kappa, int m) {
    if (m < 2) throw Error("kl_to_uniform: need M >= 2");
    if (kappa <= 0.0) return 0.0;
    double nu = 0.5 * m - 1.0;
    double ratio = bessel::bessel_ratio(nu, kappa);
    return kappa * ratio - log_relative_bessel(nu, kappa);
}

// d KL / d kappa = kappa A'(kappa), A'(kappa) = 1 - A^2 - (M-1)/kappa A
inline double kl_to_uniform_grad(double kappa, int m) {
    if (kappa <= 0.0) return 0.0;
    double nu = 0.5 * m - 1.0;
    double ratio = bessel::bessel_ratio(nu, kappa);
    return kappa * bessel::bessel_ratio_derivative(nu, kappa, ratio);
}

namespace detail {

// Householder reflection taking the north pole e1 onto mu. Returns the
// (unit) reflection vector, or an empty vector when mu == e1.
inline Vec householder_vector(const Vec& mu) {
    Vec w = -mu;
    w[0] += 1.0;
    double n = w.norm();
    if (n < 1e-12) return Vec();
    return w / n;
}

inline Vec householder_apply(const Vec& u, const Vec& y) {
    if (u.size() == 0) return y;
    return y - 2.0 * u.dot(y) * u;
}

} // namespace detail

// Wood rejection sampling of z ~ vMF(mu, kappa)
inline Vec sample(const VmfParams& params, Rng& rng, int max_rejections = 1000) {
    const int m = params.dim();
    const double kappa = params.kappa;
    const double dm = m - 1.0;
    double b = dm / (std::sqrt(4.0 * kappa * kappa + dm * dm) + 2.0 * kappa);
    double x0 = (1.0 - b) / (1.0 + b);
    double c = kappa * x0 + dm * std::log(1.0 - x0 * x0);

    double omega = 0.0;
    bool accepted = false;
    for (int it = 0; it < max_rejections; ++it) {
        double zb = rng.beta(0.5 * dm, 0.5 * dm);
        double w = (1.0 - (1.0 + b) * zb) / (1.0 - (1.0 - b) * zb);
        double u = rng.uniform_open();
        if (kappa * w + dm * std::log(1.0 - x0 * w) - c >= std::log(u)) {
            omega = w;
            accepted = true;
            break;
        }
    }
    if (!accepted) throw Error("vmf::sample: rejection loop exceeded limit");

    // tangent direction at the north pole, rotated onto mu
    Vec v0 = Vec::Zero(m);
    double n2 = 0.0;
    for (int i = 1; i < m; ++i) {
        v0[i] = rng.normal();
        n2 += v0[i] * v0[i];
    }
    v0 /= std::sqrt(n2);
    Vec u_h = detail::householder_vector(params.mu);
    double s = std::sqrt(std::max(0.0, 1.0 - omega * omega));
    Vec y = s * v0;
    y[0] += omega;
    return detail::householder_apply(u_h, y);
}

// noise driving one reparameterized draw: a uniform for the scalar
// omega and a unit tangent direction in R^{M-1}
struct VmfNoise {
    double u;
    Vec dir;
};

inline VmfNoise draw_noise(int m, Rng& rng) {
    VmfNoise n;
    n.u = rng.uniform_open();
    n.dir = Vec(m - 1);
    double s2 = 0.0;
    for (int i = 0; i < m - 1; ++i) {
        n.dir[i] = rng.normal();
        s2 += n.dir[i] * n.dir[i];
    }
    n.dir /= std::sqrt(s2);
    return n;
}

struct ReparamSample {
    Vec z;
    // cached state for the backward pass
    Vec mu;
    Vec v0;  // tangent at the north pole, first component 0
    Vec u_h; // householder vector (empty when mu == e1)
    Vec y;   // pre-rotation sample
    double kappa = 0.0;
    double omega = 0.0;
    double sin_part = 0.0;
};

// Inverts the omega-marginal CDF F(omega; kappa) = u by bisection.
inline double invert_omega_cdf(double u, double kappa, int m,
                               double tol = 1e-12, int max_iter = 200) {
    detail::OmegaMarginal marg(kappa, m);
    double lo_support = marg.lower();
    double target = u * marg.normalizer();
    double lo = -1.0, hi = 1.0;
    for (int it = 0; it < max_iter; ++it) {
        double mid = 0.5 * (lo + hi);
        double f = mid <= lo_support ? 0.0 : marg.mass(lo_support, mid);
        if (f < target) lo = mid; else hi = mid;
        if (hi - lo < tol) return 0.5 * (lo + hi);
    }
    throw Error("vmf: omega CDF inversion did not converge");
}

// d omega / d kappa by implicit differentiation of F(omega; kappa) = u
inline double omega_kappa_grad(double omega, double kappa, int m) {
    detail::OmegaMarginal marg(kappa, m);
    double lo = marg.lower();
    double c = marg.normalizer();
    double cdf = marg.mass(lo, omega);
    auto shift = [](double t) { return t - 1.0; };
    double dnum = marg.integrate(lo, omega, shift);
    double dc = marg.integrate(lo, 1.0, shift);
    double df_dkappa = (dnum - cdf / c * dc) / c;
    double f_omega = marg.density(omega) / c;
    if (f_omega <= 0.0 || !std::isfinite(df_dkappa)) {
        throw Error("vmf: omega gradient degenerate");
    }
    return -df_dkappa / f_omega;
}

inline ReparamSample sample_reparameterized(const VmfParams& params, const VmfNoise& noise) {
    if (noise.u <= 0.0 || noise.u >= 1.0) throw Error("vmf: noise u must lie in (0,1)");
    const int m = params.dim();
    if (noise.dir.size() != m - 1) throw Error("vmf: tangent noise has wrong dimension");

    ReparamSample s;
    s.mu = params.mu;
    s.kappa = params.kappa;
    s.omega = invert_omega_cdf(noise.u, params.kappa, m);
    s.sin_part = std::sqrt(std::max(1e-300, 1.0 - s.omega * s.omega));
    s.v0 = Vec::Zero(m);
    s.v0.tail(m - 1) = noise.dir / noise.dir.norm();
    s.y = s.sin_part * s.v0;
    s.y[0] += s.omega;
    s.u_h = detail::householder_vector(params.mu);
    s.z = detail::householder_apply(s.u_h, s.y);
    return s;
}

// Vector-Jacobian product through the reparameterized sample:
// given dL/dz, produce dL/dmu and dL/dkappa with the noise held fixed.
inline void reparam_backward(const ReparamSample& s, const Vec& grad_z,
                             Vec& grad_mu, double& grad_kappa) {
    const int m = static_cast<int>(s.mu.size());
    Vec gy = detail::householder_apply(s.u_h, grad_z); // H is symmetric
    grad_mu = Vec::Zero(m);
    if (s.u_h.size() != 0) {
        double uy = s.u_h.dot(s.y);
        double ug = s.u_h.dot(grad_z);
        Vec duh = -2.0 * (uy * grad_z + ug * s.y);
        Vec e1mu = -s.mu;
        e1mu[0] += 1.0;
        double wn = e1mu.norm();
        Vec dw = (duh - s.u_h.dot(duh) * s.u_h) / wn;
        grad_mu = -dw;
    }
    // y = omega e1 + sqrt(1 - omega^2) v0
    double domega = gy[0] - (s.omega / s.sin_part) * gy.dot(s.v0);
    grad_kappa = domega * omega_kappa_grad(s.omega, s.kappa, m);
}

} // namespace kdstm::vmf

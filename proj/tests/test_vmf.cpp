#include "kdstm/vmf.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace kdstm;

namespace {

// Composite-Simpson quadrature over t = cos(angle to mu) in [-1, 1];
// independent of the library's Gauss-Legendre machinery. For a zonal
// integrand f(t) on the 2-sphere: integral = 2 pi * int f(t) dt.
template <typename F>
double simpson(F&& f, double a, double b, int n = 4000) {
    double h = (b - a) / n;
    double acc = f(a) + f(b);
    for (int i = 1; i < n; ++i) acc += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return acc * h / 3.0;
}

// KL(vMF(mu,kappa) || uniform) on the 2-sphere by direct quadrature,
// normalizing the density numerically as well.
double kl_sphere_quadrature(double kappa) {
    double z = 2.0 * M_PI * simpson([&](double t) { return std::exp(kappa * t); }, -1.0, 1.0);
    return 2.0 * M_PI *
           simpson(
               [&](double t) {
                   double q = std::exp(kappa * t) / z;
                   return q * (kappa * t - std::log(z) + std::log(4.0 * M_PI));
               },
               -1.0, 1.0);
}

Vec unit3(double a, double b, double c) {
    Vec v(3);
    v << a, b, c;
    return v / v.norm();
}

} // namespace

TEST_CASE("log density approaches the uniform sphere as kappa -> 0") {
    vmf::VmfParams p(unit3(0, 0, 1), 1e-4);
    Vec z = unit3(1, 1, 0);
    REQUIRE(vmf::log_density(z, p) == Catch::Approx(-std::log(4.0 * M_PI)).margin(1e-4));
}

TEST_CASE("log density is maximized at z = mu") {
    vmf::VmfParams p(unit3(0.3, -0.5, 0.2), 2.5);
    double at_mu = vmf::log_density(p.mu, p);
    Rng rng(42);
    for (int i = 0; i < 200; ++i) {
        Vec z(3);
        for (int j = 0; j < 3; ++j) z[j] = rng.normal();
        z /= z.norm();
        REQUIRE(vmf::log_density(z, p) <= at_mu + 1e-12);
    }
    REQUIRE_THROWS_AS(vmf::log_density(2.0 * p.mu, p), Error);
}

TEST_CASE("density integrates to one over the sphere") {
    // normalizer check at M=3 for kappa in {0.5, 1, 5}, and the spec's
    // M=3 kappa=2 point
    Vec mu = unit3(0, 0, 1);
    for (double kappa : {0.5, 1.0, 2.0, 5.0}) {
        vmf::VmfParams p(mu, kappa);
        double total = 2.0 * M_PI * simpson(
                                        [&](double t) {
                                            Vec z(3);
                                            z << std::sqrt(std::max(0.0, 1.0 - t * t)), 0.0, t;
                                            return std::exp(vmf::log_density(z, p));
                                        },
                                        -1.0, 1.0);
        REQUIRE(total == Catch::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("kl to uniform is exactly zero at kappa = 0") {
    for (int m = 2; m <= 64; ++m) {
        REQUIRE(std::fabs(vmf::kl_to_uniform(0.0, m)) < 1e-10);
    }
}

TEST_CASE("kl to uniform is strictly increasing in kappa") {
    for (int m : {2, 3, 8, 32}) {
        double prev = 0.0;
        for (double kappa : {0.1, 0.5, 1.0, 2.0, 5.0, 20.0, 100.0, 1e3, 1e4}) {
            double kl = vmf::kl_to_uniform(kappa, m);
            REQUIRE(kl > prev);
            prev = kl;
        }
    }
}

TEST_CASE("kl matches sphere quadrature at M=3") {
    for (double kappa : {0.5, 1.0, 5.0}) {
        double oracle = kl_sphere_quadrature(kappa);
        REQUIRE(vmf::kl_to_uniform(kappa, 3) == Catch::Approx(oracle).epsilon(1e-4));
    }
}

TEST_CASE("kl gradient matches finite differences") {
    for (int m : {2, 3, 4, 16}) {
        for (double kappa : {0.3, 1.0, 4.0, 50.0}) {
            double h = 1e-6 * kappa;
            double fd = (vmf::kl_to_uniform(kappa + h, m) -
                         vmf::kl_to_uniform(kappa - h, m)) /
                        (2.0 * h);
            REQUIRE(vmf::kl_to_uniform_grad(kappa, m) ==
                    Catch::Approx(fd).epsilon(1e-6).margin(1e-9));
        }
    }
}

TEST_CASE("samples lie on the unit sphere") {
    Rng rng(7);
    for (int m : {2, 3, 4, 16}) {
        Vec mu = Vec::Zero(m);
        mu[m - 1] = 1.0;
        vmf::VmfParams p(mu, 3.0);
        for (int i = 0; i < 200; ++i) {
            Vec z = vmf::sample(p, rng);
            REQUIRE(std::fabs(z.norm() - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("samples concentrate at mu for huge kappa") {
    Rng rng(11);
    vmf::VmfParams p(unit3(1, 2, -1), 1e4);
    double mean_cos = 0.0;
    for (int i = 0; i < 1000; ++i) mean_cos += p.mu.dot(vmf::sample(p, rng));
    mean_cos /= 1000.0;
    REQUIRE(mean_cos > 0.99);
}

TEST_CASE("mean resultant length matches the closed form at M=3 kappa=2") {
    // E[mu . z] = coth(kappa) - 1/kappa
    Rng rng(2024);
    vmf::VmfParams p(unit3(0.2, 0.9, -0.4), 2.0);
    double acc = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) acc += p.mu.dot(vmf::sample(p, rng));
    double expected = 1.0 / std::tanh(2.0) - 0.5;
    REQUIRE(acc / n == Catch::Approx(expected).margin(0.02));
}

TEST_CASE("reparameterized sampling is deterministic in the noise") {
    vmf::VmfParams p(unit3(0.5, -1.0, 0.25), 3.0);
    vmf::VmfNoise noise;
    noise.u = 0.37;
    noise.dir = Vec(2);
    noise.dir << 0.6, -0.8;
    Vec z1 = vmf::sample_reparameterized(p, noise).z;
    Vec z2 = vmf::sample_reparameterized(p, noise).z;
    REQUIRE(z1 == z2);
    REQUIRE(std::fabs(z1.norm() - 1.0) < 1e-9);
}

TEST_CASE("omega gradient is positive for all u") {
    for (int m : {3, 4, 8}) {
        for (double kappa : {0.2, 1.0, 3.0, 20.0}) {
            for (double u : {0.05, 0.25, 0.5, 0.75, 0.95}) {
                double omega = vmf::invert_omega_cdf(u, kappa, m);
                REQUIRE(vmf::omega_kappa_grad(omega, kappa, m) > 0.0);
            }
        }
    }
}

TEST_CASE("omega gradient matches finite differences of the inverse CDF") {
    // the spec's pinned point: M=4, kappa=3, u=0.5
    {
        double kappa = 3.0, u = 0.5;
        int m = 4;
        double omega = vmf::invert_omega_cdf(u, kappa, m);
        double h = 1e-4;
        double fd = (vmf::invert_omega_cdf(u, kappa + h, m) -
                     vmf::invert_omega_cdf(u, kappa - h, m)) /
                    (2.0 * h);
        REQUIRE(vmf::omega_kappa_grad(omega, kappa, m) ==
                Catch::Approx(fd).epsilon(1e-4));
    }
    // 20 random (M, kappa, u) triples
    Rng rng(5150);
    for (int trial = 0; trial < 20; ++trial) {
        int m = 3 + static_cast<int>(rng.below(10));
        double kappa = 0.2 + 8.0 * rng.uniform();
        double u = 0.05 + 0.9 * rng.uniform();
        double omega = vmf::invert_omega_cdf(u, kappa, m);
        double h = 1e-4 * std::max(1.0, kappa);
        double fd = (vmf::invert_omega_cdf(u, kappa + h, m) -
                     vmf::invert_omega_cdf(u, kappa - h, m)) /
                    (2.0 * h);
        REQUIRE(vmf::omega_kappa_grad(omega, kappa, m) ==
                Catch::Approx(fd).epsilon(1e-4).margin(1e-10));
    }
}

TEST_CASE("full reparameterized backward matches finite differences") {
    // scalar head L = c . z with fixed noise; wiggle mu (pre-normalization)
    // and kappa
    Vec a(4);
    a << 0.4, -0.3, 0.8, 0.1;
    double kappa = 2.2;
    vmf::VmfNoise noise;
    noise.u = 0.31;
    noise.dir = Vec(3);
    noise.dir << 0.48, -0.6, 0.64;
    Vec c(4);
    c << 1.0, -2.0, 0.5, 0.7;

    auto loss = [&](const Vec& a_raw, double k) {
        vmf::VmfParams p(Vec(a_raw / a_raw.norm()), k);
        return c.dot(vmf::sample_reparameterized(p, noise).z);
    };

    vmf::VmfParams p(Vec(a / a.norm()), kappa);
    auto s = vmf::sample_reparameterized(p, noise);
    Vec gmu;
    double gkappa = 0.0;
    vmf::reparam_backward(s, c, gmu, gkappa);
    // chain through the normalization a -> mu
    double an = a.norm();
    Vec mu = a / an;
    Vec ga = (gmu - mu.dot(gmu) * mu) / an;

    for (int i = 0; i < 4; ++i) {
        Vec ap = a, am = a;
        ap[i] += 1e-6;
        am[i] -= 1e-6;
        double fd = (loss(ap, kappa) - loss(am, kappa)) / 2e-6;
        REQUIRE(ga[i] == Catch::Approx(fd).epsilon(1e-4).margin(1e-8));
    }
    double fdk = (loss(a, kappa + 1e-6) - loss(a, kappa - 1e-6)) / 2e-6;
    REQUIRE(gkappa == Catch::Approx(fdk).epsilon(1e-4).margin(1e-8));
}

TEST_CASE("params validation") {
    Vec bad(3);
    bad << 1.0, 1.0, 1.0;
    REQUIRE_THROWS_AS(vmf::VmfParams(bad, 1.0), Error);
    vmf::VmfParams clamped(unit3(1, 0, 0), 1e9);
    REQUIRE(clamped.kappa == vmf::kKappaMax);
    vmf::VmfParams floored(unit3(1, 0, 0), 0.0);
    REQUIRE(floored.kappa == vmf::kKappaMin);
}

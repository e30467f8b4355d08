#pragma once

// Log-scale modified Bessel function of the second kind, K_nu(x), real nu.
//
// Orders are reduced to mu = nu - n with |mu| <= 1/2. K_mu and K_{mu+1} come
// from Temme's series (x <= 2) or Steed's continued fraction CF2 (x > 2,
// evaluated with the e^{-x} factor split off), then the ratio
// r_k = K_{k+1}/K_k is carried upward in log space.

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <utility>

#include "malrisk/error.hpp"

namespace malrisk {

namespace detail {

// Taylor coefficients of 1/Gamma(z) about 0, c[k] multiplies z^k.
inline constexpr std::array<double, 29> kRecipGamma = {
    0.0,
    1.0,
    0.57721566490153286061,
    -0.65587807152025388108,
    -0.042002635034095235529,
    0.1665386113822914895,
    -0.042197734555544336748,
    -0.0096219715278769735621,
    0.0072189432466630995424,
    -0.0011651675918590651121,
    -0.00021524167411495097282,
    0.00012805028238811618615,
    -0.000020134854780788238656,
    -1.2504934821426706573e-6,
    1.1330272319816958824e-6,
    -2.0563384169776071035e-7,
    6.1160951044814158179e-9,
    5.0020076444692229301e-9,
    -1.1812745704870201446e-9,
    1.0434267116911005105e-10,
    7.782263439905071254e-12,
    -3.6968056186422057082e-12,
    5.100370287454475979e-13,
    -2.0583260535665067832e-14,
    -5.3481225394230179824e-15,
    1.2267786282382607902e-15,
    -1.1812593016974587695e-16,
    1.1866922547516003326e-18,
    1.4123806553180317816e-18,
};

struct TemmeGammas {
    double gam1;   // (1/G(1-mu) - 1/G(1+mu)) / (2 mu)
    double gam2;   // (1/G(1-mu) + 1/G(1+mu)) / 2
    double gampl;  // 1/G(1+mu)
    double gammi;  // 1/G(1-mu)
};

// 1/G(1+mu) = sum_k c[k] mu^{k-1}; split into even and odd parts in mu.
inline TemmeGammas temme_gammas(double mu) {
    const double m2 = mu * mu;
    // Horner in mu^2: odd k gives the even part, even k the odd part over mu.
    double even = 0.0;
    for (int k = 27; k >= 1; k -= 2) even = even * m2 + kRecipGamma[k];
    double odd = 0.0;
    for (int k = 28; k >= 2; k -= 2) odd = odd * m2 + kRecipGamma[k];
    TemmeGammas g;
    g.gam2 = even;
    g.gam1 = -odd;
    g.gampl = even + mu * odd;
    g.gammi = even - mu * odd;
    return g;
}

struct LogKPair {
    double log_k;      // log K_mu(x)
    double log_ratio;  // log(K_{mu+1}(x) / K_mu(x))
};

// |mu| <= 1/2, x > 0.
inline LogKPair log_k_base(double mu, double x) {
    constexpr double eps = 1e-16;
    constexpr int max_iter = 100000;
    constexpr double pi = std::numbers::pi;
    if (x <= 2.0) {
        const double x2 = 0.5 * x;
        const double pimu = pi * mu;
        const double fact = std::abs(pimu) < eps ? 1.0 : pimu / std::sin(pimu);
        double d = -std::log(x2);
        double e = mu * d;
        const double fact2 = std::abs(e) < eps ? 1.0 : std::sinh(e) / e;
        const TemmeGammas g = temme_gammas(mu);
        double ff = fact * (g.gam1 * std::cosh(e) + g.gam2 * fact2 * d);
        double sum = ff;
        e = std::exp(e);
        double p = 0.5 * e / g.gampl;
        double q = 0.5 / (e * g.gammi);
        double c = 1.0;
        d = x2 * x2;
        double sum1 = p;
        int i = 1;
        for (; i < max_iter; ++i) {
            const double di = static_cast<double>(i);
            ff = (di * ff + p + q) / (di * di - mu * mu);
            c *= d / di;
            p /= (di - mu);
            q /= (di + mu);
            const double del = c * ff;
            sum += del;
            sum1 += c * (p - di * ff);
            if (std::abs(del) < std::abs(sum) * eps) break;
        }
        if (i == max_iter) throw NumericError("log_bessel_k: series failed to converge");
        const double k_mu = sum;
        const double k_mu1 = sum1 * 2.0 / x;
        return {std::log(k_mu), std::log(k_mu1 / k_mu)};
    }
    double b = 2.0 * (1.0 + x);
    double d = 1.0 / b;
    double h = d, delh = d;
    double q1 = 0.0, q2 = 1.0;
    const double a1 = 0.25 - mu * mu;
    double q = a1, c = a1;
    double a = -a1;
    double s = 1.0 + q * delh;
    int i = 2;
    for (; i < max_iter; ++i) {
        a -= 2.0 * (i - 1);
        c = -a * c / i;
        const double qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        const double dels = q * delh;
        s += dels;
        if (std::abs(dels / s) < eps) break;
    }
    if (i == max_iter) throw NumericError("log_bessel_k: continued fraction failed to converge");
    h *= a1;
    const double log_k = 0.5 * std::log(pi / (2.0 * x)) - x - std::log(s);
    const double ratio = (mu + x + 0.5 - h) / x;
    return {log_k, std::log(ratio)};
}

// log K_a and log K_{a+1} for a >= 0.
inline std::pair<double, double> log_k_upward(double a, double x) {
    const double n = std::floor(a + 0.5);
    const double mu = a - n;
    double log_k, log_r;
    if (std::abs(std::abs(mu) - 0.5) < 1e-15) {
        // half-integer start: K_{1/2} = sqrt(pi/(2x)) e^{-x}, K_{3/2}/K_{1/2} = 1 + 1/x
        log_k = 0.5 * std::log(std::numbers::pi / (2.0 * x)) - x;
        log_r = mu < 0 ? 0.0 : std::log1p(1.0 / x);  // K_{-1/2} = K_{1/2}
    } else {
        const LogKPair base = log_k_base(mu, x);
        log_k = base.log_k;
        log_r = base.log_ratio;
    }
    double r = std::exp(log_r);
    for (double k = mu + 1.0; k <= a + 1e-12; k += 1.0) {
        log_k += std::log(r);
        r = 1.0 / r + 2.0 * k / x;
    }
    return {log_k, log_k + std::log(r)};
}

inline void check_bessel_args(double nu, double x) {
    if (!std::isfinite(nu)) throw DomainError("log_bessel_k: order must be finite");
    if (!(x > 0.0) || !std::isfinite(x))
        throw DomainError("log_bessel_k: argument must be positive and finite, got " + std::to_string(x));
}

}  // namespace detail

/// log K_nu(x) for real nu and x > 0.
inline double log_bessel_k(double nu, double x) {
    detail::check_bessel_args(nu, x);
    return detail::log_k_upward(std::abs(nu), x).first;
}

/// K_{nu+1}(x) / K_nu(x), computed without forming either factor.
inline double bessel_k_ratio(double nu, double x) {
    detail::check_bessel_args(nu, x);
    if (nu >= 0.0) {
        auto [lk, lk1] = detail::log_k_upward(nu, x);
        return std::exp(lk1 - lk);
    }
    if (nu <= -1.0) {
        // K_{nu+1} = K_{|nu|-1}, K_nu = K_{|nu|}
        auto [lk_lo, lk_hi] = detail::log_k_upward(-nu - 1.0, x);
        return std::exp(lk_lo - lk_hi);
    }
    return std::exp(detail::log_k_upward(nu + 1.0, x).first - detail::log_k_upward(-nu, x).first);
}

}  // namespace malrisk

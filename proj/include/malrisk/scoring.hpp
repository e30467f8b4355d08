#pragma once

// Scoring rules for joint (VaR, ES) forecasts and the backtest battery.

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "malrisk/bessel.hpp"
#include "malrisk/caviar.hpp"
#include "malrisk/error.hpp"
#include "malrisk/linalg.hpp"
#include "malrisk/mal.hpp"

namespace malrisk {

struct ForecastRecord {
    long t = 0;
    Eigen::VectorXd y;
    Eigen::VectorXd var;
    Eigen::VectorXd es;
    QuantileLevels tau;

    void validate() const {
        const auto p = static_cast<Eigen::Index>(tau.size());
        if (p == 0 || y.size() != p || var.size() != p || es.size() != p)
            throw DomainError("ForecastRecord: dimension mismatch");
        for (Eigen::Index j = 0; j < p; ++j) {
            if (!(es[j] < 0.0)) throw DomainError("ForecastRecord: ES must be negative");
            if (!(es[j] <= var[j])) throw DomainError("ForecastRecord: ES must not exceed VaR");
            if (!std::isfinite(y[j]) || !std::isfinite(var[j])) throw DomainError("ForecastRecord: non-finite entry");
        }
    }
};

enum class Tail { Upper, TwoSided, Lower };

struct TestReport {
    std::string name;
    double statistic = 0.0;
    double critical_value = 0.0;
    std::optional<double> p_value;
    bool reject = false;
    int df = 0;
    Tail tail = Tail::Upper;
    bool degenerate = false;
    bool low_power = false;
};

/// Rejection rule shared by every test.
inline bool decide(double statistic, double critical_value, Tail tail) {
    switch (tail) {
        case Tail::Upper: return statistic > critical_value;
        case Tail::TwoSided: return std::abs(statistic) > critical_value;
        case Tail::Lower: return statistic < critical_value;
    }
    return false;
}

namespace detail {

inline void check_es(double es, const char* who) {
    if (!(es < 0.0)) throw DomainError(std::string(who) + ": ES must be negative, got " + std::to_string(es));
}

inline double xlogy(double x, double y) { return x == 0.0 ? 0.0 : x * std::log(y); }

inline double chi2_sf(double x, int df) {
    if (!(x > 0.0)) return 1.0;
    return boost::math::cdf(boost::math::complement(boost::math::chi_squared(df), x));
}

inline double norm_cdf(double x) { return boost::math::cdf(boost::math::normal(), x); }

inline TestReport make_report(std::string name, double stat, double cv, int df, Tail tail, std::optional<double> p) {
    TestReport r;
    r.name = std::move(name);
    r.statistic = stat;
    r.critical_value = cv;
    r.df = df;
    r.tail = tail;
    r.p_value = p;
    r.reject = decide(stat, cv, tail);
    return r;
}

}  // namespace detail

// ---- scoring rules ----

/// Negative MAL log score with D_t = diag(tau_j ES_tj), constants dropped.
inline double s_mal(const ForecastRecord& r, const Eigen::MatrixXd& sigma) {
    r.validate();
    const Eigen::Index p = r.y.size();
    if (sigma.rows() != p || sigma.cols() != p) throw DomainError("s_mal: Sigma~ dimension mismatch");
    const auto llt = cholesky_with_jitter(sigma, "Sigma~");
    Eigen::VectorXd xi(p), d(p);
    double log_abs_det_d = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
        const double tj = r.tau[static_cast<std::size_t>(j)];
        xi[j] = fixed_skew(tj);
        d[j] = tj * r.es[j];
        log_abs_det_d += std::log(std::abs(d[j]));
    }
    const Eigen::VectorXd s = (r.y - r.var).cwiseQuotient(d);
    const Eigen::VectorXd pxi = llt.solve(xi);
    const double m = llt.matrixL().solve(s).squaredNorm();
    const double dt = xi.dot(pxi);
    const double two_d = 2.0 + dt;
    const double nu = (2.0 - static_cast<double>(p)) / 2.0;
    const double base = 0.5 * log_det_from_llt(llt) + log_abs_det_d + s.dot(pxi);
    if (!(m > 0.0)) {
        // m -> 0 limit exists only when nu > 0 (p == 1)
        if (!(nu > 0.0)) throw DegeneratePointError("s_mal: realization equals the VaR forecast");
        return base + nu * std::log(two_d) - std::lgamma(nu) + (1.0 - nu) * std::numbers::ln2;
    }
    return base - 0.5 * nu * std::log(m / two_d) - log_bessel_k(nu, std::sqrt(two_d * m));
}

inline double s_fzn(double q, double es, double y, double tau) {
    detail::check_es(es, "s_fzn");
    check_probability(tau, "s_fzn");
    const double hit = y < q ? 1.0 : 0.0;
    const double r = std::sqrt(-es);
    return (hit - tau) * q / (2.0 * tau * r) - (hit * y / tau - es) / (2.0 * r) + r;
}

inline double s_fz0(double q, double es, double y, double tau) {
    detail::check_es(es, "s_fz0");
    check_probability(tau, "s_fz0");
    const double hit = y < q ? 1.0 : 0.0;
    return hit * (y - q) / (tau * es) + q / es + std::log(-es) - 1.0;
}

inline double s_al(double q, double es, double y, double tau) {
    detail::check_es(es, "s_al");
    check_probability(tau, "s_al");
    const double hit = y < q ? 1.0 : 0.0;
    return -std::log((tau - 1.0) / es) - (y - q) * (tau - hit) / (tau * es);
}

/// Multi-asset AL score: plain sum of the per-asset scores.
inline double s_al_sum(const ForecastRecord& r) {
    r.validate();
    double acc = 0.0;
    for (Eigen::Index j = 0; j < r.y.size(); ++j) acc += s_al(r.var[j], r.es[j], r.y[j], r.tau[static_cast<std::size_t>(j)]);
    return acc;
}

inline double s_al_sum(std::span<const ForecastRecord> records) {
    double acc = 0.0;
    for (const auto& r : records) acc += s_al_sum(r);
    return acc;
}

// ---- VaR backtests ----

inline std::vector<int> hit_sequence(std::span<const double> y, std::span<const double> var) {
    if (y.size() != var.size()) throw DomainError("hit_sequence: length mismatch");
    std::vector<int> h(y.size());
    for (std::size_t t = 0; t < y.size(); ++t) h[t] = y[t] < var[t] ? 1 : 0;
    return h;
}

namespace detail {
inline void check_hits(std::span<const int> hits, std::size_t min_len, const char* who) {
    if (hits.size() < min_len)
        throw DomainError(std::string(who) + ": need at least " + std::to_string(min_len) + " observations");
    for (int h : hits)
        if (h != 0 && h != 1) throw DomainError(std::string(who) + ": hits must be 0/1");
}
}  // namespace detail

/// Kupiec unconditional coverage.
inline TestReport lr_uc(std::span<const int> hits, double tau) {
    detail::check_hits(hits, 1, "lr_uc");
    check_probability(tau, "lr_uc");
    double n1 = 0.0;
    for (int h : hits) n1 += h;
    const double n = static_cast<double>(hits.size()), n0 = n - n1;
    const double pi = n1 / n;
    const double l0 = n1 * std::log(tau) + n0 * std::log1p(-tau);
    const double l1 = detail::xlogy(n1, pi) + detail::xlogy(n0, 1.0 - pi);
    const double stat = std::max(0.0, -2.0 * (l0 - l1));
    return detail::make_report("LR_uc", stat, 3.84, 1, Tail::Upper, detail::chi2_sf(stat, 1));
}

/// Christoffersen conditional coverage: LR_uc plus the first-order Markov
/// independence statistic.
inline TestReport lr_cc(std::span<const int> hits, double tau) {
    detail::check_hits(hits, 2, "lr_cc");
    const TestReport uc = lr_uc(hits, tau);
    double n00 = 0, n01 = 0, n10 = 0, n11 = 0;
    for (std::size_t t = 1; t < hits.size(); ++t) {
        const int a = hits[t - 1], b = hits[t];
        (a == 0 ? (b == 0 ? n00 : n01) : (b == 0 ? n10 : n11)) += 1.0;
    }
    const double p01 = n00 + n01 > 0 ? n01 / (n00 + n01) : 0.0;
    const double p11 = n10 + n11 > 0 ? n11 / (n10 + n11) : 0.0;
    const double p = (n01 + n11) / (n00 + n01 + n10 + n11);
    using detail::xlogy;
    const double l_markov = xlogy(n00, 1.0 - p01) + xlogy(n01, p01) + xlogy(n10, 1.0 - p11) + xlogy(n11, p11);
    const double l_iid = xlogy(n00 + n10, 1.0 - p) + xlogy(n01 + n11, p);
    const double ind = std::max(0.0, -2.0 * (l_iid - l_markov));
    const double stat = uc.statistic + ind;
    return detail::make_report("LR_cc", stat, 5.99, 2, Tail::Upper, detail::chi2_sf(stat, 2));
}

/// Dynamic quantile test: (hit_t - tau) on a constant and 4 lagged demeaned
/// hits, Wald statistic on the lag coefficients with null variance tau (1 - tau).
/// `var` is accepted for interface symmetry; the regressor set does not use it.
inline TestReport dq_test(std::span<const int> hits, std::span<const double> var, double tau) {
    constexpr int kLags = 4;
    detail::check_hits(hits, 2 * kLags + 1, "dq_test");
    check_probability(tau, "dq_test");
    if (!var.empty() && var.size() != hits.size()) throw DomainError("dq_test: VaR length mismatch");
    const auto n = static_cast<Eigen::Index>(hits.size()) - kLags;
    Eigen::MatrixXd x(n, kLags + 1);
    Eigen::VectorXd h(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const std::size_t t = static_cast<std::size_t>(i + kLags);
        h[i] = hits[t] - tau;
        x(i, 0) = 1.0;
        for (int k = 1; k <= kLags; ++k) x(i, k) = hits[t - static_cast<std::size_t>(k)] - tau;
    }
    const Eigen::MatrixXd xtx = x.transpose() * x;
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(xtx);
    if (lu.rank() < xtx.rows()) {
        TestReport r = detail::make_report("DQ", std::numeric_limits<double>::infinity(), 9.49, kLags, Tail::Upper,
                                           std::nullopt);
        r.degenerate = true;
        r.reject = true;
        return r;
    }
    const Eigen::MatrixXd inv = lu.inverse();
    const Eigen::VectorXd beta = inv * (x.transpose() * h);
    const Eigen::VectorXd bl = beta.tail(kLags);
    const Eigen::MatrixXd vl = tau * (1.0 - tau) * inv.bottomRightCorner(kLags, kLags);
    const double stat = bl.dot(vl.ldlt().solve(bl));
    return detail::make_report("DQ", stat, 9.49, kLags, Tail::Upper, detail::chi2_sf(stat, kLags));
}

// ---- ES backtests ----

struct EsTests {
    TestReport u_es;
    TestReport c_es;
};

/// Unconditional and conditional ES backtests on cumulative violations
/// H_t = (tau - u_t)/tau 1(u_t <= tau), u_t the AL PIT with location VaR and
/// scale delta.
inline EsTests es_tests(std::span<const double> y, std::span<const double> var, std::span<const double> delta,
                        double tau) {
    constexpr int kLags = 4;
    check_probability(tau, "es_tests");
    if (y.size() != var.size() || y.size() != delta.size()) throw DomainError("es_tests: length mismatch");
    if (y.size() <= static_cast<std::size_t>(kLags)) throw DomainError("es_tests: series too short");
    const std::size_t T = y.size();
    const double Td = static_cast<double>(T);
    std::vector<double> hc(T);  // H_t - tau/2
    double hbar = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        const double u = al_cdf(y[t], var[t], tau, delta[t]);
        const double h = u <= tau ? (tau - u) / tau : 0.0;
        hbar += h;
        hc[t] = h - 0.5 * tau;
    }
    hbar /= Td;
    const double sd0 = std::sqrt(tau * (1.0 / 3.0 - tau / 4.0));
    const double u_stat = std::sqrt(Td) * (hbar - 0.5 * tau) / sd0;
    EsTests out;
    out.u_es = detail::make_report("U_ES", u_stat, 1.96, 0, Tail::TwoSided,
                                   2.0 * (1.0 - detail::norm_cdf(std::abs(u_stat))));
    double g0 = 0.0;
    for (double v : hc) g0 += v * v;
    g0 /= Td;
    double c_stat = 0.0;
    for (int k = 1; k <= kLags; ++k) {
        double gk = 0.0;
        for (std::size_t t = static_cast<std::size_t>(k); t < T; ++t) gk += hc[t] * hc[t - static_cast<std::size_t>(k)];
        gk /= Td - k;
        const double rho = gk / g0;
        c_stat += rho * rho;
    }
    c_stat *= Td;
    out.c_es = detail::make_report("C_ES", c_stat, 9.49, kLags, Tail::Upper, detail::chi2_sf(c_stat, kLags));
    const bool low = tau * Td < 5.0;
    out.u_es.low_power = out.c_es.low_power = low;
    return out;
}

/// Same, with the AL scale implied by ES under a zero-mean return.
inline EsTests es_tests_from_es(std::span<const double> y, std::span<const double> var, std::span<const double> es,
                                double tau) {
    for (double e : es) detail::check_es(e, "es_tests_from_es");
    const std::vector<double> d = delta_from_es(es, tau);
    return es_tests(y, var, d, tau);
}

// ---- forecast comparison ----

/// Diebold-Mariano on d = a - b with a Bartlett long-run variance; rejects in
/// favour of E[d] < 0.
inline TestReport dm_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DomainError("dm_test: length mismatch");
    if (a.size() < 10) throw DomainError("dm_test: need at least 10 observations");
    const std::size_t T = a.size();
    const double Td = static_cast<double>(T);
    std::vector<double> d(T);
    double mean = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        d[t] = a[t] - b[t];
        mean += d[t];
    }
    mean /= Td;
    const auto lag = static_cast<std::size_t>(std::floor(std::cbrt(Td)));
    auto gamma = [&](std::size_t k) {
        double g = 0.0;
        for (std::size_t t = k; t < T; ++t) g += (d[t] - mean) * (d[t - k] - mean);
        return g / Td;
    };
    double lrv = gamma(0);
    for (std::size_t k = 1; k <= lag; ++k)
        lrv += 2.0 * (1.0 - static_cast<double>(k) / static_cast<double>(lag + 1)) * gamma(k);
    if (!(lrv > 0.0)) {
        TestReport r = detail::make_report("DM", 0.0, -1.645, 0, Tail::Lower, std::nullopt);
        r.degenerate = true;
        return r;
    }
    const double stat = mean / std::sqrt(lrv / Td);
    return detail::make_report("DM", stat, -1.645, 0, Tail::Lower, detail::norm_cdf(stat));
}

}  // namespace malrisk

#pragma once

// CAViaR quantile recursions (SAV, AS, IG), the two ES links, and the implied
// AL scale path.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "malrisk/error.hpp"

namespace malrisk {

enum class QuantileKind { SAV, AS, IG };
enum class EsKind { Multiplicative, Autoregressive };

inline const char* to_string(QuantileKind k) {
    switch (k) {
        case QuantileKind::SAV: return "sav";
        case QuantileKind::AS: return "as";
        case QuantileKind::IG: return "ig";
    }
    return "?";
}
inline const char* to_string(EsKind k) { return k == EsKind::Multiplicative ? "mult" : "ar"; }

inline QuantileKind parse_quantile_kind(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "sav") return QuantileKind::SAV;
    if (s == "as") return QuantileKind::AS;
    if (s == "ig") return QuantileKind::IG;
    throw ValidationError("unknown quantile specification '" + s + "' (expected sav, as or ig)");
}
inline EsKind parse_es_kind(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "mult" || s == "multiplicative") return EsKind::Multiplicative;
    if (s == "ar" || s == "autoregressive") return EsKind::Autoregressive;
    throw ValidationError("unknown ES link '" + s + "' (expected mult or ar)");
}

inline std::size_t beta_count(QuantileKind k) { return k == QuantileKind::AS ? 2 : 1; }

struct CaviarSpec {
    QuantileKind kind = QuantileKind::SAV;
    double omega = 0.0;
    double eta = 0.0;
    std::vector<double> beta{0.0};  // AS: {beta1 on y+, beta2 on y-}; IG: {beta on y^2}

    void validate() const {
        if (beta.size() != beta_count(kind))
            throw DomainError(std::string("CaviarSpec: wrong number of beta coefficients for ") + to_string(kind));
        if (!std::isfinite(omega) || !std::isfinite(eta)) throw DomainError("CaviarSpec: non-finite coefficient");
        for (double b : beta)
            if (!std::isfinite(b)) throw DomainError("CaviarSpec: non-finite coefficient");
    }
};

struct EsLink {
    EsKind kind = EsKind::Multiplicative;
    double gamma0 = 0.0;
    std::array<double, 3> gamma{0.0, 0.0, 0.0};
    double x0 = 0.0;

    void validate() const {
        if (kind == EsKind::Autoregressive) {
            for (double g : gamma)
                if (!(g >= 0.0) || !std::isfinite(g)) throw DomainError("EsLink: AR gamma must be non-negative");
            if (!(x0 >= 0.0)) throw DomainError("EsLink: x0 must be non-negative");
        } else if (!std::isfinite(gamma0)) {
            throw DomainError("EsLink: gamma0 must be finite");
        }
    }
};

struct RiskPath {
    std::vector<double> quantile;
    std::vector<double> es;
    std::vector<double> delta;
    std::vector<double> x;  // AR state, empty for the multiplicative link
};

namespace detail {

enum class PathFault { None, Radicand, NonFinite, QuantileNonNegative, NonPositiveScale };

inline const char* describe(PathFault f) {
    switch (f) {
        case PathFault::Radicand: return "IG radicand is not positive";
        case PathFault::NonFinite: return "quantile recursion produced a non-finite value";
        case PathFault::QuantileNonNegative: return "quantile is non-negative under the multiplicative ES link";
        case PathFault::NonPositiveScale: return "implied AL scale delta is not positive (ES >= mean)";
        case PathFault::None: break;
    }
    return "ok";
}

inline double step_unchecked(const CaviarSpec& s, double q_prev, double y_prev) {
    switch (s.kind) {
        case QuantileKind::SAV: return s.omega + s.eta * q_prev + s.beta[0] * std::abs(y_prev);
        case QuantileKind::AS:
            return s.omega + s.eta * q_prev + s.beta[0] * std::max(y_prev, 0.0) + s.beta[1] * std::max(-y_prev, 0.0);
        case QuantileKind::IG: {
            const double r = s.omega + s.eta * q_prev * q_prev + s.beta[0] * y_prev * y_prev;
            return r > 0.0 ? -std::sqrt(r) : std::numeric_limits<double>::quiet_NaN();
        }
    }
    return 0.0;
}

struct PathStatus {
    PathFault fault = PathFault::None;
    std::size_t t = 0;
    bool ok() const { return fault == PathFault::None; }
};

/// Fills q, es, delta (and x for AR). Buffers are resized. Never throws.
inline PathStatus fill_path(const CaviarSpec& spec, const EsLink& link, std::span<const double> y, double tau,
                            double q0, std::vector<double>& q, std::vector<double>& es, std::vector<double>& delta,
                            std::vector<double>* x) {
    const std::size_t n = y.size();
    q.resize(n);
    es.resize(n);
    delta.resize(n);
    if (n == 0) return {};
    q[0] = q0;
    for (std::size_t t = 1; t < n; ++t) {
        const double v = step_unchecked(spec, q[t - 1], y[t - 1]);
        if (!std::isfinite(v))
            return {spec.kind == QuantileKind::IG && std::isnan(v) ? PathFault::Radicand : PathFault::NonFinite, t};
        q[t] = v;
    }
    if (link.kind == EsKind::Multiplicative) {
        const double f = 1.0 + std::exp(link.gamma0);
        for (std::size_t t = 0; t < n; ++t) {
            if (!(q[t] < 0.0)) return {PathFault::QuantileNonNegative, t};
            es[t] = f * q[t];
            delta[t] = -tau * es[t];
        }
        if (x) x->clear();
        return {};
    }
    std::vector<double> local;
    std::vector<double>& xs = x ? *x : local;
    xs.resize(n);
    const auto& g = link.gamma;
    xs[0] = link.x0;
    for (std::size_t t = 1; t < n; ++t) {
        if (y[t] <= q[t])
            xs[t] = std::max(0.0, g[0] + g[1] * (q[t - 1] - y[t - 1]) + g[2] * xs[t - 1]);
        else
            xs[t] = xs[t - 1];
    }
    for (std::size_t t = 0; t < n; ++t) {
        es[t] = q[t] - xs[t];
        delta[t] = -tau * es[t];
        if (!(delta[t] > 0.0) || !std::isfinite(delta[t])) return {PathFault::NonPositiveScale, t};
    }
    return {};
}

}  // namespace detail

inline double quantile_step(const CaviarSpec& spec, double q_prev, double y_prev) {
    spec.validate();
    if (spec.kind == QuantileKind::IG) {
        const double r = spec.omega + spec.eta * q_prev * q_prev + spec.beta[0] * y_prev * y_prev;
        if (!(r > 0.0)) throw NumericError("quantile_step: IG radicand is not positive");
    }
    return detail::step_unchecked(spec, q_prev, y_prev);
}

inline std::vector<double> quantile_path(const CaviarSpec& spec, std::span<const double> returns, double q0) {
    spec.validate();
    std::vector<double> q(returns.size());
    if (q.empty()) return q;
    q[0] = q0;
    for (std::size_t t = 1; t < q.size(); ++t) {
        const double v = detail::step_unchecked(spec, q[t - 1], returns[t - 1]);
        if (!std::isfinite(v))
            throw NumericError("quantile_path: non-finite quantile (IG radicand <= 0?) at t=" + std::to_string(t));
        q[t] = v;
    }
    return q;
}

inline std::vector<double> es_path_multiplicative(std::span<const double> qpath, double gamma0) {
    const double f = 1.0 + std::exp(gamma0);
    std::vector<double> es(qpath.size());
    for (std::size_t t = 0; t < qpath.size(); ++t) {
        if (!(qpath[t] < 0.0))
            throw NumericError("es_path_multiplicative: quantile must be negative, q[" + std::to_string(t) +
                               "] = " + std::to_string(qpath[t]));
        es[t] = f * qpath[t];
    }
    return es;
}

struct ArEsPath {
    std::vector<double> es;
    std::vector<double> x;
};

inline ArEsPath es_path_ar(std::span<const double> qpath, std::span<const double> returns,
                           const std::array<double, 3>& gamma, double x0) {
    if (qpath.size() != returns.size()) throw DomainError("es_path_ar: length mismatch");
    for (double g : gamma)
        if (!(g >= 0.0)) throw DomainError("es_path_ar: gamma must be non-negative");
    if (!(x0 >= 0.0)) throw DomainError("es_path_ar: x0 must be non-negative");
    const std::size_t n = qpath.size();
    ArEsPath out{std::vector<double>(n), std::vector<double>(n)};
    if (n == 0) return out;
    out.x[0] = x0;
    for (std::size_t t = 1; t < n; ++t) {
        if (returns[t] <= qpath[t])
            out.x[t] = std::max(0.0, gamma[0] + gamma[1] * (qpath[t - 1] - returns[t - 1]) + gamma[2] * out.x[t - 1]);
        else
            out.x[t] = out.x[t - 1];
    }
    for (std::size_t t = 0; t < n; ++t) out.es[t] = qpath[t] - out.x[t];
    return out;
}

inline std::vector<double> delta_from_es(std::span<const double> es, double tau, double mean_y = 0.0) {
    if (!(tau > 0.0 && tau < 1.0)) throw DomainError("delta_from_es: tau must lie in (0, 1)");
    std::vector<double> d(es.size());
    for (std::size_t t = 0; t < es.size(); ++t) {
        d[t] = tau * (mean_y - es[t]);
        if (!(d[t] > 0.0))
            throw NumericError("delta_from_es: non-positive scale at t=" + std::to_string(t) + " (ES >= mean)");
    }
    return d;
}

/// Full path; throws NumericError naming the offending t.
inline RiskPath risk_path(const CaviarSpec& spec, const EsLink& link, std::span<const double> returns, double tau,
                          double q0) {
    spec.validate();
    link.validate();
    RiskPath out;
    const auto st = detail::fill_path(spec, link, returns, tau, q0, out.quantile, out.es, out.delta,
                                      link.kind == EsKind::Autoregressive ? &out.x : nullptr);
    if (!st.ok()) throw NumericError(std::string("risk_path: ") + detail::describe(st.fault) + " at t=" + std::to_string(st.t));
    return out;
}

/// Empirical quantile, linear interpolation between order statistics.
inline double empirical_quantile(std::vector<double> v, double tau) {
    if (v.empty()) throw DomainError("empirical_quantile: empty sample");
    std::sort(v.begin(), v.end());
    const double h = tau * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct PathAnchor {
    double q0 = 0.0;
    double x0 = 0.0;
};

/// q0 = empirical tau-quantile of the first max(50, T/10) observations;
/// x0 = mean shortfall beyond q0 in that segment, floored at 0.
inline PathAnchor initial_state(std::span<const double> returns, double tau) {
    if (returns.empty()) throw DomainError("initial_state: empty series");
    const std::size_t n0 = std::min(returns.size(), std::max<std::size_t>(50, returns.size() / 10));
    std::vector<double> seg(returns.begin(), returns.begin() + static_cast<std::ptrdiff_t>(n0));
    PathAnchor a;
    a.q0 = empirical_quantile(seg, tau);
    double sum = 0.0;
    std::size_t k = 0;
    for (double y : seg)
        if (y <= a.q0) {
            sum += a.q0 - y;
            ++k;
        }
    a.x0 = k > 0 ? std::max(0.0, sum / static_cast<double>(k)) : 0.0;
    return a;
}

struct OneStep {
    double var = 0.0;
    double es = 0.0;
};

/// One-step-ahead (VaR, ES) beyond the end of an in-sample path. The AR link
/// carries the last state x[T-1] since the next violation is unknown.
inline OneStep forecast_next(const CaviarSpec& spec, const EsLink& link, double q_last, double y_last, double x_last) {
    OneStep f;
    f.var = quantile_step(spec, q_last, y_last);
    if (link.kind == EsKind::Multiplicative) {
        if (!(f.var < 0.0)) throw NumericError("forecast_next: non-negative quantile under multiplicative link");
        f.es = (1.0 + std::exp(link.gamma0)) * f.var;
    } else {
        f.es = f.var - x_last;
    }
    return f;
}

}  // namespace malrisk

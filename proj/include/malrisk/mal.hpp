#pragma once

// Multivariate asymmetric Laplace (MAL) law with quantile-identifying
// constraints, and its univariate asymmetric Laplace (AL) marginals.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "malrisk/bessel.hpp"
#include "malrisk/error.hpp"
#include "malrisk/linalg.hpp"

namespace malrisk {

inline void check_probability(double tau, const char* who) {
    if (!(tau > 0.0 && tau < 1.0))
        throw DomainError(std::string(who) + ": tau must lie in (0, 1), got " + std::to_string(tau));
}

/// Skew constant (1 - 2 tau) / (tau (1 - tau)).
inline double fixed_skew(double tau) {
    check_probability(tau, "fixed_skew");
    return (1.0 - 2.0 * tau) / (tau * (1.0 - tau));
}

/// Scale constant sqrt(2 / (tau (1 - tau))).
inline double fixed_scale(double tau) {
    check_probability(tau, "fixed_scale");
    return std::sqrt(2.0 / (tau * (1.0 - tau)));
}

/// Vector of per-asset quantile levels, each strictly inside (0, 1).
class QuantileLevels {
public:
    QuantileLevels() = default;
    explicit QuantileLevels(std::vector<double> tau) : tau_(std::move(tau)) {
        if (tau_.empty()) throw DomainError("QuantileLevels: at least one level required");
        for (double t : tau_) check_probability(t, "QuantileLevels");
    }
    static QuantileLevels constant(std::size_t p, double tau) { return QuantileLevels(std::vector<double>(p, tau)); }

    std::size_t size() const { return tau_.size(); }
    double operator[](std::size_t j) const { return tau_[j]; }
    const std::vector<double>& values() const { return tau_; }
    Eigen::VectorXd vector() const { return Eigen::Map<const Eigen::VectorXd>(tau_.data(), tau_.size()); }

private:
    std::vector<double> tau_;
};

struct MALConstraints {
    Eigen::VectorXd xi_tilde;
    Eigen::VectorXd sigma_tilde;
    double nu = 0.5;

    static MALConstraints from(const QuantileLevels& tau) {
        MALConstraints c;
        const auto p = static_cast<Eigen::Index>(tau.size());
        c.xi_tilde.resize(p);
        c.sigma_tilde.resize(p);
        for (Eigen::Index j = 0; j < p; ++j) {
            c.xi_tilde[j] = fixed_skew(tau[j]);
            c.sigma_tilde[j] = fixed_scale(tau[j]);
        }
        c.nu = (2.0 - static_cast<double>(p)) / 2.0;
        return c;
    }
    Eigen::Index dim() const { return xi_tilde.size(); }
};

/// Sigma~ = Lambda~ Psi Lambda~.
inline Eigen::MatrixXd assemble_sigma(const Eigen::MatrixXd& psi, const MALConstraints& c) {
    check_correlation(psi);
    if (psi.rows() != c.dim()) throw DomainError("assemble_sigma: dimension mismatch");
    return c.sigma_tilde.asDiagonal() * psi * c.sigma_tilde.asDiagonal();
}

/// Precomputed factorization of Sigma~ for repeated density evaluation.
class ScaleStructure {
public:
    ScaleStructure() = default;
    ScaleStructure(const Eigen::MatrixXd& psi, const MALConstraints& c) : constraints_(c) {
        sigma_ = assemble_sigma(psi, c);
        llt_ = cholesky_with_jitter(sigma_, "Sigma~");
        sigma_inv_xi_ = llt_.solve(c.xi_tilde);
        d_tilde_ = c.xi_tilde.dot(sigma_inv_xi_);
        log_det_sigma_ = log_det_from_llt(llt_);
    }

    Eigen::Index dim() const { return sigma_.rows(); }
    double nu() const { return constraints_.nu; }
    double d_tilde() const { return d_tilde_; }
    double log_det_sigma() const { return log_det_sigma_; }
    const Eigen::MatrixXd& sigma() const { return sigma_; }
    const Eigen::VectorXd& sigma_inv_xi() const { return sigma_inv_xi_; }
    const Eigen::LLT<Eigen::MatrixXd>& llt() const { return llt_; }
    const MALConstraints& constraints() const { return constraints_; }

    /// s' Sigma~^{-1} s for a standardized residual s = D^{-1}(y - mu).
    double quad(const Eigen::VectorXd& s) const {
        const Eigen::VectorXd v = llt_.matrixL().solve(s);
        return v.squaredNorm();
    }

    /// Log density at standardized residual s, with sum_j log delta_j supplied.
    double log_density_standardized(const Eigen::VectorXd& s, double sum_log_delta) const {
        const double p = static_cast<double>(dim());
        const double m = quad(s);
        if (!(m > 0.0)) throw DegeneratePointError("MAL density is singular at y == mu");
        const double two_d = 2.0 + d_tilde_;
        const double nu = constraints_.nu;
        return std::numbers::ln2 + s.dot(sigma_inv_xi_) - 0.5 * p * std::log(2.0 * std::numbers::pi) -
               0.5 * log_det_sigma_ - sum_log_delta + 0.5 * nu * std::log(m / two_d) +
               log_bessel_k(nu, std::sqrt(two_d * m));
    }

private:
    MALConstraints constraints_;
    Eigen::MatrixXd sigma_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    Eigen::VectorXd sigma_inv_xi_;
    double d_tilde_ = 0.0;
    double log_det_sigma_ = 0.0;
};

struct MALParams {
    Eigen::VectorXd mu;
    Eigen::VectorXd delta;
    Eigen::MatrixXd psi;
    MALConstraints constraints;

    static MALParams make(Eigen::VectorXd mu, Eigen::VectorXd delta, Eigen::MatrixXd psi, const QuantileLevels& tau) {
        MALParams out{std::move(mu), std::move(delta), std::move(psi), MALConstraints::from(tau)};
        out.validate();
        return out;
    }

    void validate() const {
        const Eigen::Index p = constraints.dim();
        if (mu.size() != p || delta.size() != p || psi.rows() != p)
            throw DomainError("MALParams: dimension mismatch");
        for (Eigen::Index j = 0; j < p; ++j)
            if (!(delta[j] > 0.0) || !std::isfinite(delta[j])) throw DomainError("MALParams: delta must be positive");
        check_correlation(psi);
    }
    Eigen::Index dim() const { return constraints.dim(); }
};

inline double mal_log_density(const Eigen::VectorXd& y, const MALParams& params) {
    params.validate();
    if (y.size() != params.dim()) throw DomainError("mal_log_density: dimension mismatch");
    const ScaleStructure sc(params.psi, params.constraints);
    const Eigen::VectorXd s = (y - params.mu).cwiseQuotient(params.delta);
    return sc.log_density_standardized(s, params.delta.array().log().sum());
}

/// Draws via Y = mu + D xi~ W + sqrt(W) D L Z with W ~ Exp(1), L L' = Sigma~.
template <class Urbg>
Eigen::MatrixXd mal_sample(const MALParams& params, Eigen::Index n, Urbg& rng) {
    params.validate();
    if (n < 0) throw DomainError("mal_sample: negative sample size");
    const ScaleStructure sc(params.psi, params.constraints);
    const Eigen::MatrixXd l = sc.llt().matrixL();
    const Eigen::Index p = params.dim();
    std::exponential_distribution<double> expo(1.0);
    std::normal_distribution<double> norm(0.0, 1.0);
    Eigen::MatrixXd out(n, p);
    Eigen::VectorXd z(p);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double w = expo(rng);
        for (Eigen::Index j = 0; j < p; ++j) z[j] = norm(rng);
        const Eigen::VectorXd e = params.constraints.xi_tilde * w + std::sqrt(w) * (l * z);
        out.row(i) = (params.mu + params.delta.cwiseProduct(e)).transpose();
    }
    return out;
}

inline Eigen::MatrixXd mal_sample(const MALParams& params, Eigen::Index n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return mal_sample(params, n, rng);
}

// ---- univariate AL ----

/// rho_tau(u) = u (tau - 1(u < 0)).
inline double check_loss(double u, double tau) { return u * (tau - (u < 0.0 ? 1.0 : 0.0)); }

inline void check_al_args(double tau, double delta, const char* who) {
    check_probability(tau, who);
    if (!(delta > 0.0) || !std::isfinite(delta))
        throw DomainError(std::string(who) + ": delta must be positive, got " + std::to_string(delta));
}

inline double al_log_density(double y, double mu, double tau, double delta) {
    check_al_args(tau, delta, "al_log_density");
    return std::log(tau * (1.0 - tau) / delta) - check_loss((y - mu) / delta, tau);
}

inline double al_cdf(double y, double mu, double tau, double delta) {
    check_al_args(tau, delta, "al_cdf");
    if (y <= mu) return tau * std::exp((1.0 - tau) / delta * (y - mu));
    return 1.0 - (1.0 - tau) * std::exp(-tau / delta * (y - mu));
}

namespace detail {
inline double al_quantile(double u, double mu, double tau, double delta) {
    check_al_args(tau, delta, "al_quantile");
    check_probability(u, "al_quantile");
    if (u <= tau) return mu + delta / (1.0 - tau) * std::log(u / tau);
    return mu - delta / tau * std::log((1.0 - u) / (1.0 - tau));
}
}  // namespace detail

struct ALParams {
    double mu_star = 0.0;
    double tau_star = 0.5;
    double delta_star = 1.0;
};

/// AL law of b'Y for Y ~ MAL.
inline ALParams linear_combine(const Eigen::VectorXd& b, const MALParams& params) {
    params.validate();
    if (b.size() != params.dim()) throw DomainError("linear_combine: dimension mismatch");
    if (b.isZero(0.0)) throw DomainError("linear_combine: weight vector must be non-zero");
    const Eigen::VectorXd bd = b.cwiseProduct(params.delta);
    const Eigen::MatrixXd sigma = assemble_sigma(params.psi, params.constraints);
    const double v = bd.dot(sigma * bd);
    const double g = bd.dot(params.constraints.xi_tilde);
    const double root = std::sqrt(2.0 * v + g * g);
    ALParams out;
    out.mu_star = b.dot(params.mu);
    out.tau_star = 0.5 * (1.0 - g / root);
    out.delta_star = v / (2.0 * root);
    return out;
}

}  // namespace malrisk

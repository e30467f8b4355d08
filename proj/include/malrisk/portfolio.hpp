#pragma once

// Skewness-mean-variance allocation under a MAL state: minimize b'DSigma~Db
// subject to b'1 = 1 and the portfolio AL skew level tau* = tau~.

#include <Eigen/Dense>
#include <cmath>
#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "malrisk/error.hpp"
#include "malrisk/linalg.hpp"
#include "malrisk/mal.hpp"
#include "malrisk/optim.hpp"

namespace malrisk {

struct AllocationResult {
    Eigen::VectorXd weights;
    double tau_star_achieved = 0.0;
    double objective = 0.0;  // b' D Sigma~ D b
    ALParams al;
    double var = 0.0;
    double es = 0.0;
    bool feasible = true;
    double residual = 0.0;  // |tau* - tau~| at the returned weights
    std::string message;
};

struct SmvOptions {
    int perturbations = 10;
    double perturbation_sd = 0.5;
    std::uint64_t seed = 20240601;
    double tau_tol = 1e-6;
    optim::AugLagOptions solver{};
};

/// VaR and ES of a portfolio whose return is AL(mu*, tau*, delta*).
struct PortfolioRisk {
    double var = 0.0;
    double es = 0.0;
};

inline PortfolioRisk portfolio_risk(const ALParams& al, double tau_tilde) {
    check_probability(tau_tilde, "portfolio_risk");
    if (std::abs(al.tau_star - tau_tilde) > 1e-6)
        throw DomainError("portfolio_risk: tau* = " + std::to_string(al.tau_star) + " does not match tau~ = " +
                          std::to_string(tau_tilde));
    if (!(al.delta_star > 0.0)) throw DomainError("portfolio_risk: delta* must be positive");
    const double mean = al.mu_star + al.delta_star * fixed_skew(al.tau_star);
    return {al.mu_star, mean - al.delta_star / tau_tilde};
}

/// VaR and ES at an arbitrary lower level for an AL portfolio return; used
/// when carried-forward weights no longer satisfy tau* = level.
inline PortfolioRisk al_tail_risk(const ALParams& al, double level) {
    check_probability(level, "al_tail_risk");
    check_probability(al.tau_star, "al_tail_risk");
    if (!(al.delta_star > 0.0)) throw DomainError("al_tail_risk: delta* must be positive");
    const double mu = al.mu_star, ts = al.tau_star, d = al.delta_star;
    PortfolioRisk r;
    r.var = detail::al_quantile(level, mu, ts, d);
    if (level <= ts) {
        r.es = mu + d / (1.0 - ts) * (std::log(level / ts) - 1.0);
    } else {
        // integral of the quantile function split at tau*
        auto prim = [](double u) { return -(1.0 - u) * std::log1p(-u) - u; };  // int log(1 - u) du
        const double lower = ts * mu - d * ts / (1.0 - ts);
        const double upper = (level - ts) * mu - d / ts * (prim(level) - prim(ts) - (level - ts) * std::log1p(-ts));
        r.es = (lower + upper) / level;
    }
    return r;
}

namespace detail {

// Core problem in terms of M = D Sigma~ D and a = D xi~.
struct SmvProblem {
    Eigen::MatrixXd m;
    Eigen::VectorXd a;
    Eigen::VectorXd mu;
    double target = 0.0;  // 1 - 2 tau~
    double scale = 1.0;   // objective normalization

    double ratio(const Eigen::VectorXd& b) const {
        const double g = a.dot(b);
        return g / std::sqrt(2.0 * b.dot(m * b) + g * g);
    }
};

inline double tau_star_of(const SmvProblem& pr, const Eigen::VectorXd& b) { return 0.5 * (1.0 - pr.ratio(b)); }

inline AllocationResult finish(const SmvProblem& pr, Eigen::VectorXd b, double tau_tilde) {
    b /= b.sum();
    AllocationResult r;
    r.weights = b;
    const double v = b.dot(pr.m * b);
    const double g = pr.a.dot(b);
    const double root = std::sqrt(2.0 * v + g * g);
    r.al.mu_star = b.dot(pr.mu);
    r.al.tau_star = 0.5 * (1.0 - g / root);
    r.al.delta_star = v / (2.0 * root);
    r.tau_star_achieved = r.al.tau_star;
    r.objective = v;
    r.residual = std::abs(r.tau_star_achieved - tau_tilde);
    return r;
}

inline AllocationResult solve_smv(const SmvProblem& pr, double tau_tilde, const std::optional<Eigen::VectorXd>& b_init,
                                  const SmvOptions& opt) {
    const Eigen::Index p = pr.a.size();
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(p);
    // Largest attainable skew ratio is sqrt(d/(2+d)), d = a' M^-1 a.
    const auto llt = cholesky_with_jitter(pr.m, "portfolio scale matrix");
    const Eigen::VectorXd minv_a = llt.solve(pr.a);
    const double d = pr.a.dot(minv_a);
    const double max_ratio = std::sqrt(d / (2.0 + d));
    if (pr.target >= max_ratio && pr.target > 0.0) {
        AllocationResult r = finish(pr, ones / static_cast<double>(p), tau_tilde);
        r.feasible = false;
        r.message = "target tau~ is below the smallest attainable portfolio level " + std::to_string(0.5 * (1.0 - max_ratio));
        return r;
    }
    auto f = [&](const Eigen::VectorXd& b, Eigen::VectorXd* grad) {
        const Eigen::VectorXd mb = pr.m * b;
        if (grad) *grad = 2.0 * mb / pr.scale;
        return b.dot(mb) / pr.scale;
    };
    auto c = [&](const Eigen::VectorXd& b, Eigen::MatrixXd* jac) {
        const Eigen::VectorXd mb = pr.m * b;
        const double g = pr.a.dot(b);
        const double r2 = 2.0 * b.dot(mb) + g * g;
        const double r = std::sqrt(r2);
        Eigen::VectorXd out(2);
        out[0] = g / r - pr.target;
        out[1] = b.sum() - 1.0;
        if (jac) {
            jac->resize(2, p);
            jac->row(0) = (pr.a / r - g * (2.0 * mb + g * pr.a) / (r2 * r)).transpose();
            jac->row(1) = ones.transpose();
        }
        return out;
    };
    std::vector<Eigen::VectorXd> starts;
    starts.push_back(b_init && b_init->size() == p && std::abs(b_init->sum()) > 1e-12 ? Eigen::VectorXd(*b_init / b_init->sum())
                                                                                   : Eigen::VectorXd(ones / static_cast<double>(p)));
    {
        std::mt19937_64 rng(opt.seed);
        std::normal_distribution<double> n01(0.0, 1.0);
        const Eigen::VectorXd eq = ones / static_cast<double>(p);
        for (int k = 0; k < opt.perturbations; ++k) {
            Eigen::VectorXd b = eq;
            for (Eigen::Index j = 0; j < p; ++j) b[j] += opt.perturbation_sd * n01(rng) / static_cast<double>(p);
            starts.push_back(b / b.sum());
        }
    }
    std::optional<AllocationResult> best;
    AllocationResult closest;
    closest.residual = optim::kInf;
    for (const auto& x0 : starts) {
        const optim::AugLagResult res = optim::augmented_lagrangian(f, c, x0, 2, opt.solver);
        const Eigen::VectorXd& b = res.inner.x;
        if (!b.allFinite() || std::abs(b.sum()) < 1e-12) continue;
        AllocationResult r = finish(pr, b, tau_tilde);
        if (!std::isfinite(r.objective)) continue;
        if (r.residual <= opt.tau_tol) {
            if (!best || r.objective < best->objective) best = r;
        } else if (r.residual < closest.residual) {
            closest = r;
        }
    }
    if (best) return *best;
    if (closest.weights.size() == 0) closest = finish(pr, ones / static_cast<double>(p), tau_tilde);
    closest.feasible = false;
    closest.message = "constraint not met; best residual " + std::to_string(closest.residual);
    return closest;
}

inline AllocationResult attach_risk(AllocationResult r, double tau_tilde) {
    if (r.feasible && r.al.delta_star > 0.0) {
        const PortfolioRisk pr = portfolio_risk(r.al, tau_tilde);
        r.var = pr.var;
        r.es = pr.es;
    } else {
        r.var = r.al.mu_star;
        r.es = r.al.mu_star + r.al.delta_star * fixed_skew(std::clamp(r.al.tau_star, 1e-12, 1.0 - 1e-12)) -
               r.al.delta_star / tau_tilde;
    }
    return r;
}

}  // namespace detail

/// SMV weights for one period's MAL state.
inline AllocationResult smv_weights(const MALParams& params, double tau_tilde,
                                    const std::optional<Eigen::VectorXd>& b_init = std::nullopt,
                                    const SmvOptions& opt = {}) {
    params.validate();
    if (!(tau_tilde > 0.0 && tau_tilde <= 0.5)) throw DomainError("smv_weights: tau~ must lie in (0, 0.5]");
    const Eigen::Index p = params.dim();
    if (p == 1) {
        const double t1 = 0.5 * (1.0 - params.constraints.xi_tilde[0] /
                                           std::sqrt(2.0 * params.constraints.sigma_tilde[0] * params.constraints.sigma_tilde[0] +
                                                     params.constraints.xi_tilde[0] * params.constraints.xi_tilde[0]));
        if (std::abs(t1 - tau_tilde) > 1e-9)
            throw DomainError("smv_weights: with one asset tau~ must equal the asset's level " + std::to_string(t1));
    }
    detail::SmvProblem pr;
    const Eigen::MatrixXd sigma = assemble_sigma(params.psi, params.constraints);
    pr.m = params.delta.asDiagonal() * sigma * params.delta.asDiagonal();
    pr.a = params.delta.cwiseProduct(params.constraints.xi_tilde);
    pr.mu = params.mu;
    pr.target = 1.0 - 2.0 * tau_tilde;
    pr.scale = std::max(pr.m.diagonal().mean(), 1e-300);
    if (p == 1) {
        AllocationResult r = detail::finish(pr, Eigen::VectorXd::Ones(1), tau_tilde);
        return detail::attach_risk(r, tau_tilde);
    }
    return detail::attach_risk(detail::solve_smv(pr, tau_tilde, b_init, opt), tau_tilde);
}

/// Moment-based SMV: the MAL covariance identity S = D(xi~ xi~' + Sigma~)D is
/// inverted with the asset levels tau to get D, D Sigma~ D and the location.
inline AllocationResult moment_smv_from_moments(const Eigen::MatrixXd& s, const Eigen::VectorXd& mean,
                                                const QuantileLevels& tau, double tau_tilde, const SmvOptions& opt = {}) {
    const Eigen::Index p = s.rows();
    if (s.cols() != p || mean.size() != p || static_cast<Eigen::Index>(tau.size()) != p)
        throw DomainError("moment_smv: dimension mismatch");
    if (!(tau_tilde > 0.0 && tau_tilde <= 0.5)) throw DomainError("moment_smv: tau~ must lie in (0, 0.5]");
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (s + s.transpose()));
    if (!(eig.eigenvalues().minCoeff() > 1e-12 * std::max(1.0, eig.eigenvalues().maxCoeff())))
        throw NumericError("moment_smv: sample covariance is singular");
    const MALConstraints con = MALConstraints::from(tau);
    Eigen::VectorXd delta(p);
    for (Eigen::Index j = 0; j < p; ++j)
        delta[j] = std::sqrt(s(j, j) / (con.xi_tilde[j] * con.xi_tilde[j] + con.sigma_tilde[j] * con.sigma_tilde[j]));
    const Eigen::VectorXd a = delta.cwiseProduct(con.xi_tilde);
    Eigen::MatrixXd v = s - a * a.transpose();
    // back to a correlation so D Sigma~ D stays PD
    const Eigen::VectorXd sd = (delta.cwiseProduct(con.sigma_tilde));
    const Eigen::MatrixXd psi = nearest_correlation(sd.cwiseInverse().asDiagonal() * v * sd.cwiseInverse().asDiagonal());
    const MALParams params{mean - a, delta, psi, con};
    return smv_weights(params, tau_tilde, std::nullopt, opt);
}

/// Moment-SMV on a window of returns (rows = periods).
inline AllocationResult moment_smv_weights(const Eigen::MatrixXd& window, const QuantileLevels& tau, double tau_tilde,
                                           const SmvOptions& opt = {}) {
    if (window.rows() <= window.cols()) throw ValidationError("moment_smv_weights: window must be longer than p");
    const Eigen::VectorXd mean = window.colwise().mean().transpose();
    const Eigen::MatrixXd c = window.rowwise() - mean.transpose();
    const Eigen::MatrixXd s = c.transpose() * c / static_cast<double>(window.rows() - 1);
    return moment_smv_from_moments(s, mean, tau, tau_tilde, opt);
}

struct PerformanceStats {
    double sharpe = 0.0;
    double hhi = 0.0;
};

/// Sharpe ratio (zero risk-free rate, no annualization) and time-averaged
/// HHI on |b|-normalized weights. `weights` has one row per period.
inline PerformanceStats performance_stats(std::span<const double> returns, const Eigen::MatrixXd& weights) {
    if (returns.empty()) throw DomainError("performance_stats: empty return series");
    const double n = static_cast<double>(returns.size());
    double mean = 0.0;
    for (double r : returns) mean += r;
    mean /= n;
    double ss = 0.0;
    for (double r : returns) ss += (r - mean) * (r - mean);
    const double sd = returns.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    if (!(sd > 0.0)) throw NumericError("performance_stats: returns have zero variance");
    PerformanceStats out;
    out.sharpe = mean / sd;
    if (weights.rows() > 0) {
        double acc = 0.0;
        for (Eigen::Index t = 0; t < weights.rows(); ++t) {
            const Eigen::VectorXd w = weights.row(t).transpose().cwiseAbs();
            const double tot = w.sum();
            if (!(tot > 0.0)) throw DomainError("performance_stats: zero weight vector");
            acc += (w / tot).squaredNorm();
        }
        out.hhi = acc / static_cast<double>(weights.rows());
    }
    return out;
}

/// Wealth path from period returns; `percent` when returns are in percent units.
inline std::vector<double> compound_path(std::span<const double> returns, bool percent = true) {
    std::vector<double> w(returns.size());
    double level = 1.0;
    for (std::size_t t = 0; t < returns.size(); ++t) {
        level *= 1.0 + (percent ? returns[t] / 100.0 : returns[t]);
        w[t] = level;
    }
    return w;
}

}  // namespace malrisk

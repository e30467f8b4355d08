#pragma once

// EM estimation of the joint CAViaR/ES model under MAL errors.
//
// E-step: latent mixing weights u_t = E[W_t | y_t], z_t = E[1/W_t | y_t].
// M-step: generalized ECM. Each asset's dynamic parameters are updated in
// turn with the others held fixed (simplex search refined by BFGS), then Psi
// is updated from the closed-form Sigma~ expression, projected to a
// correlation matrix and backtracked toward the previous Psi until the
// expected complete log-likelihood does not decrease.

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "malrisk/caviar.hpp"
#include "malrisk/error.hpp"
#include "malrisk/linalg.hpp"
#include "malrisk/mal.hpp"
#include "malrisk/optim.hpp"

namespace malrisk {

struct ModelKind {
    QuantileKind quantile = QuantileKind::SAV;
    EsKind es = EsKind::Multiplicative;
};

struct AssetModel {
    CaviarSpec caviar;
    EsLink es;
    double q0 = 0.0;  // quantile path anchor (x0 lives in es)
};

struct ParameterSet {
    std::vector<AssetModel> assets;
    Eigen::MatrixXd psi;
    std::size_t dim() const { return assets.size(); }
};

inline std::size_t dynamic_parameter_count(ModelKind k) {
    return 2 + beta_count(k.quantile) + (k.es == EsKind::Multiplicative ? 1 : 3);
}

inline std::size_t free_parameter_count(ModelKind k, std::size_t p) {
    return p * dynamic_parameter_count(k) + p * (p - 1) / 2;
}

/// Names of the dynamic parameters in packing order.
inline std::vector<std::string> parameter_names(ModelKind k) {
    std::vector<std::string> n{"omega", "eta"};
    if (k.quantile == QuantileKind::AS) {
        n.emplace_back("beta1");
        n.emplace_back("beta2");
    } else {
        n.emplace_back("beta");
    }
    if (k.es == EsKind::Multiplicative) {
        n.emplace_back("gamma0");
    } else {
        n.emplace_back("gamma1");
        n.emplace_back("gamma2");
        n.emplace_back("gamma3");
    }
    return n;
}

/// Dynamic parameters in natural units, packing order of parameter_names.
inline std::vector<double> natural_parameters(const AssetModel& a) {
    std::vector<double> v{a.caviar.omega, a.caviar.eta};
    v.insert(v.end(), a.caviar.beta.begin(), a.caviar.beta.end());
    if (a.es.kind == EsKind::Multiplicative)
        v.push_back(a.es.gamma0);
    else
        v.insert(v.end(), a.es.gamma.begin(), a.es.gamma.end());
    return v;
}

inline AssetModel from_natural(const std::vector<double>& v, const AssetModel& tmpl) {
    AssetModel a = tmpl;
    std::size_t i = 0;
    a.caviar.omega = v.at(i++);
    a.caviar.eta = v.at(i++);
    for (double& b : a.caviar.beta) b = v.at(i++);
    if (a.es.kind == EsKind::Multiplicative)
        a.es.gamma0 = v.at(i++);
    else
        for (double& g : a.es.gamma) g = v.at(i++);
    return a;
}

namespace detail {

inline constexpr double kGammaFloor = 1e-10;
inline constexpr double kGamma0Bound = 20.0;  // |gamma0|; the likelihood is flat as ES -> VaR

// Optimizer coordinates: AR gammas enter as log gamma.
inline Eigen::VectorXd pack(const AssetModel& a) {
    std::vector<double> v = natural_parameters(a);
    if (a.es.kind == EsKind::Autoregressive)
        for (std::size_t i = v.size() - 3; i < v.size(); ++i) v[i] = std::log(std::max(v[i], kGammaFloor));
    return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline AssetModel unpack(const Eigen::VectorXd& x, const AssetModel& tmpl) {
    std::vector<double> v(x.data(), x.data() + x.size());
    if (tmpl.es.kind == EsKind::Autoregressive)
        for (std::size_t i = v.size() - 3; i < v.size(); ++i) v[i] = std::exp(v[i]);
    return from_natural(v, tmpl);
}

inline bool admissible(const AssetModel& a) {
    if (!(std::abs(a.caviar.eta) < 1.0)) return false;
    if (a.caviar.kind == QuantileKind::IG && !(a.caviar.omega > 0.0)) return false;
    if (a.es.kind == EsKind::Multiplicative && !(std::abs(a.es.gamma0) <= kGamma0Bound)) return false;
    return true;
}

inline std::span<const double> column(const Eigen::MatrixXd& y, Eigen::Index j) {
    return {y.data() + j * y.rows(), static_cast<std::size_t>(y.rows())};
}

}  // namespace detail

/// Risk paths and standardized residuals implied by a parameter set.
struct Evaluation {
    std::vector<RiskPath> paths;
    Eigen::MatrixXd s;              // T x p, (y - q) / delta
    Eigen::VectorXd sum_log_delta;  // per t
    bool ok = true;
    std::string fault;
};

inline Evaluation evaluate(const ParameterSet& phi, const Eigen::MatrixXd& y, const QuantileLevels& tau) {
    const Eigen::Index T = y.rows(), p = y.cols();
    if (static_cast<Eigen::Index>(phi.dim()) != p || static_cast<Eigen::Index>(tau.size()) != p)
        throw DomainError("evaluate: dimension mismatch between data, tau and parameters");
    Evaluation ev;
    ev.paths.resize(static_cast<std::size_t>(p));
    ev.s.resize(T, p);
    ev.sum_log_delta = Eigen::VectorXd::Zero(T);
    for (Eigen::Index j = 0; j < p; ++j) {
        const AssetModel& a = phi.assets[static_cast<std::size_t>(j)];
        RiskPath& rp = ev.paths[static_cast<std::size_t>(j)];
        if (!detail::admissible(a)) {
            ev.ok = false;
            ev.fault = "asset " + std::to_string(j) + ": parameters outside admissible region";
            return ev;
        }
        const auto st = detail::fill_path(a.caviar, a.es, detail::column(y, j), tau[static_cast<std::size_t>(j)], a.q0,
                                          rp.quantile, rp.es, rp.delta,
                                          a.es.kind == EsKind::Autoregressive ? &rp.x : nullptr);
        if (!st.ok()) {
            ev.ok = false;
            ev.fault = "asset " + std::to_string(j) + ": " + detail::describe(st.fault) + " at t=" + std::to_string(st.t);
            return ev;
        }
        for (Eigen::Index t = 0; t < T; ++t) {
            const double d = rp.delta[static_cast<std::size_t>(t)];
            ev.s(t, j) = (y(t, j) - rp.quantile[static_cast<std::size_t>(t)]) / d;
            ev.sum_log_delta[t] += std::log(d);
        }
    }
    return ev;
}

struct MahalanobisTerms {
    double m_tilde = 0.0;
    double d_tilde = 0.0;
};

inline MahalanobisTerms mahalanobis_terms(const Eigen::VectorXd& y_t, const Eigen::VectorXd& q_t,
                                          const Eigen::VectorXd& delta_t, const Eigen::MatrixXd& sigma,
                                          const Eigen::VectorXd& xi) {
    const auto llt = cholesky_with_jitter(sigma, "Sigma~");
    const Eigen::VectorXd s = (y_t - q_t).cwiseQuotient(delta_t);
    MahalanobisTerms out;
    out.m_tilde = llt.matrixL().solve(s).squaredNorm();
    out.d_tilde = xi.dot(llt.solve(xi));
    return out;
}

struct LatentWeights {
    double u = 0.0;  // E[W | y]
    double z = 0.0;  // E[1/W | y]
};

inline LatentWeights latent_weights(double m_tilde, double d_tilde, double nu) {
    if (!(m_tilde > 0.0)) throw DegeneratePointError("latent weights undefined at y == q");
    const double two_d = 2.0 + d_tilde;
    const double x = std::sqrt(two_d * m_tilde);
    const double r = bessel_k_ratio(nu, x);
    LatentWeights w;
    w.u = std::sqrt(m_tilde / two_d) * r;
    w.z = std::sqrt(two_d / m_tilde) * r - 2.0 * nu / m_tilde;
    return w;
}

inline LatentWeights e_step(const Eigen::VectorXd& y_t, const Eigen::VectorXd& q_t, const Eigen::VectorXd& delta_t,
                            const Eigen::MatrixXd& sigma, const Eigen::VectorXd& xi) {
    const auto mt = mahalanobis_terms(y_t, q_t, delta_t, sigma, xi);
    const double nu = (2.0 - static_cast<double>(y_t.size())) / 2.0;
    return latent_weights(mt.m_tilde, mt.d_tilde, nu);
}

namespace detail {

inline Eigen::VectorXd quad_forms(const ScaleStructure& sc, const Eigen::MatrixXd& s) {
    const Eigen::MatrixXd v = sc.llt().matrixL().solve(s.transpose());
    return v.colwise().squaredNorm().transpose();
}

inline double loglik_from(const Evaluation& ev, const ScaleStructure& sc) {
    const Eigen::Index T = ev.s.rows();
    const double p = static_cast<double>(ev.s.cols());
    const Eigen::VectorXd m = quad_forms(sc, ev.s);
    const double two_d = 2.0 + sc.d_tilde();
    const double nu = sc.nu();
    const double c0 = std::numbers::ln2 - 0.5 * p * std::log(2.0 * std::numbers::pi) - 0.5 * sc.log_det_sigma();
    const Eigen::VectorXd lin = ev.s * sc.sigma_inv_xi();
    double total = 0.0;
    for (Eigen::Index t = 0; t < T; ++t) {
        if (!(m[t] > 0.0)) return -std::numeric_limits<double>::infinity();
        total += c0 + lin[t] - ev.sum_log_delta[t] + 0.5 * nu * std::log(m[t] / two_d) +
                 log_bessel_k(nu, std::sqrt(two_d * m[t]));
    }
    return total;
}

struct Weights {
    Eigen::VectorXd u, z;
};

inline Weights weights_from(const Evaluation& ev, const ScaleStructure& sc) {
    const Eigen::VectorXd m = quad_forms(sc, ev.s);
    Weights w{Eigen::VectorXd(m.size()), Eigen::VectorXd(m.size())};
    for (Eigen::Index t = 0; t < m.size(); ++t) {
        const LatentWeights lw = latent_weights(m[t], sc.d_tilde(), sc.nu());
        w.u[t] = lw.u;
        w.z[t] = lw.z;
    }
    return w;
}

// Psi-dependent part of the expected complete log-likelihood, from the
// sufficient statistics A = sum z s s', b = sum s, U = sum u.
inline double q_psi(const ScaleStructure& sc, const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double u_sum,
                    double T) {
    const Eigen::MatrixXd pa = sc.llt().solve(a);
    return -0.5 * T * sc.log_det_sigma() + b.dot(sc.sigma_inv_xi()) - 0.5 * pa.trace() - 0.5 * u_sum * sc.d_tilde();
}

}  // namespace detail

inline double observed_loglik(const ParameterSet& phi, const Eigen::MatrixXd& y, const QuantileLevels& tau) {
    const Evaluation ev = evaluate(phi, y, tau);
    if (!ev.ok) throw NumericError("observed_loglik: " + ev.fault);
    const ScaleStructure sc(phi.psi, MALConstraints::from(tau));
    const double l = detail::loglik_from(ev, sc);
    if (!std::isfinite(l)) throw DegeneratePointError("observed_loglik: an observation coincides with its quantile");
    return l;
}

/// Expected complete log-likelihood, up to additive constants.
inline double q_function(const ParameterSet& phi, const Eigen::MatrixXd& y, const QuantileLevels& tau,
                         const Eigen::VectorXd& u, const Eigen::VectorXd& z) {
    const Evaluation ev = evaluate(phi, y, tau);
    if (!ev.ok) throw NumericError("q_function: " + ev.fault);
    const ScaleStructure sc(phi.psi, MALConstraints::from(tau));
    const double T = static_cast<double>(y.rows());
    const Eigen::VectorXd m = detail::quad_forms(sc, ev.s);
    return -ev.sum_log_delta.sum() - 0.5 * T * sc.log_det_sigma() + (ev.s * sc.sigma_inv_xi()).sum() -
           0.5 * z.dot(m) - 0.5 * sc.d_tilde() * u.sum();
}

/// Closed-form Sigma~ update mapped to a correlation matrix.
inline Eigen::MatrixXd sigma_m_step(const Eigen::MatrixXd& s, const Eigen::VectorXd& u, const Eigen::VectorXd& z,
                                    const MALConstraints& c) {
    const double T = static_cast<double>(s.rows());
    const Eigen::MatrixXd a = s.transpose() * z.asDiagonal() * s;
    const Eigen::VectorXd b = s.colwise().sum().transpose();
    const Eigen::VectorXd& xi = c.xi_tilde;
    Eigen::MatrixXd sig = (a + u.sum() * xi * xi.transpose() - b * xi.transpose() - xi * b.transpose()) / T;
    sig = 0.5 * (sig + sig.transpose());
    const Eigen::VectorXd inv = c.sigma_tilde.cwiseInverse();
    return nearest_correlation(inv.asDiagonal() * sig * inv.asDiagonal());
}

/// Overload in terms of paths, matching the per-period formulation.
inline Eigen::MatrixXd sigma_m_step(const Eigen::MatrixXd& y, const Eigen::MatrixXd& q, const Eigen::MatrixXd& delta,
                                    const Eigen::VectorXd& u, const Eigen::VectorXd& z, const MALConstraints& c) {
    return sigma_m_step(Eigen::MatrixXd((y - q).cwiseQuotient(delta)), u, z, c);
}

using ProgressCallback = std::function<void(int start, int iteration, double loglik)>;

struct EMConfig {
    double tol = 1e-5;
    int max_iterations = 500;
    int n_starts = 100;
    optim::NelderMeadOptions simplex{300, 1e-12, 1e-9, 0.05, 0.0025};
    optim::BfgsOptions quasi_newton{30, 1e-7, 1e-13};
    int block_sweeps = 2;
    double degeneracy_ratio = 1e-3;  // p >= 2: reject steps with some m_t < ratio * mean(m)
    double perturbation_sd = 0.1;
    int n_candidates = 300;  // random-search candidates for univariate initialization
    int candidate_chains = 3;
    std::uint64_t seed = 1;
    ProgressCallback progress;
};

/// Maximizes the expected complete log-likelihood over the dynamic
/// parameters, Psi held fixed. Returns parameters with Q no lower than at phi_prev.
inline ParameterSet dynamic_m_step(const ParameterSet& phi_prev, const Eigen::MatrixXd& y, const QuantileLevels& tau,
                                   const Eigen::VectorXd& z, const EMConfig& cfg = {});

namespace detail {

// Guard against the density singularity at y_t == q_t for p >= 2: a candidate
// is rejected when some m_t falls below ratio * mean(m).
inline bool separated(const Eigen::VectorXd& m, double ratio) {
    if (ratio <= 0.0 || m.size() == 0) return true;
    return m.minCoeff() >= ratio * m.mean();
}

// -Q restricted to asset j, other assets' residuals entering through c_tj;
// rest_t is the part of m_t not involving asset j.
class AssetBlock {
public:
    AssetBlock(std::span<const double> y, double tau, double a_j, double p_jj, const Eigen::VectorXd& z,
               const Eigen::VectorXd& c, const Eigen::VectorXd* rest, double ratio, const AssetModel& tmpl)
        : y_(y), tau_(tau), a_(a_j), pjj_(p_jj), z_(z), c_(c), rest_(rest), ratio_(ratio), tmpl_(tmpl) {}

    double operator()(const Eigen::VectorXd& theta) const { return value(unpack(theta, tmpl_), true); }

    double value(const AssetModel& m, bool guarded) const {
        constexpr double inf = std::numeric_limits<double>::infinity();
        if (!admissible(m)) return inf;
        const auto st = fill_path(m.caviar, m.es, y_, tau_, m.q0, q_, es_, delta_,
                                  m.es.kind == EsKind::Autoregressive ? &x_ : nullptr);
        if (!st.ok()) return inf;
        const bool check = guarded && rest_ != nullptr && ratio_ > 0.0;
        double acc = 0.0, m_min = inf, m_sum = 0.0;
        for (std::size_t t = 0; t < y_.size(); ++t) {
            const double s = (y_[t] - q_[t]) / delta_[t];
            const auto ti = static_cast<Eigen::Index>(t);
            acc += -std::log(delta_[t]) + a_ * s - z_[ti] * s * (0.5 * pjj_ * s + c_[ti]);
            if (check) {
                const double mt = pjj_ * s * s + 2.0 * s * c_[ti] + (*rest_)[ti];
                m_min = std::min(m_min, mt);
                m_sum += mt;
            }
        }
        if (check && m_min < ratio_ * m_sum / static_cast<double>(y_.size())) return inf;
        return std::isfinite(acc) ? -acc : inf;
    }

private:
    std::span<const double> y_;
    double tau_, a_, pjj_;
    const Eigen::VectorXd& z_;
    const Eigen::VectorXd& c_;
    const Eigen::VectorXd* rest_;
    double ratio_;
    AssetModel tmpl_;
    mutable std::vector<double> q_, es_, delta_, x_;
};

inline AssetModel optimize_block(const AssetBlock& block, const AssetModel& current, const EMConfig& cfg,
                                 bool first_sweep) {
    const Eigen::VectorXd x0 = pack(current);
    const double f0 = block.value(current, false);
    optim::NelderMeadOptions nm_opt = cfg.simplex;
    if (!first_sweep) nm_opt.max_evaluations = std::max(20, nm_opt.max_evaluations / 3);
    const optim::Result nm = optim::nelder_mead(block, x0, nm_opt);
    Eigen::VectorXd best = x0;
    double fbest = f0;
    if (nm.f < fbest) {
        best = nm.x;
        fbest = nm.f;
    }
    const optim::Result qn = optim::bfgs_numeric(block, best, cfg.quasi_newton);
    if (qn.f < fbest) {
        best = qn.x;
        fbest = qn.f;
    }
    if (!(fbest < f0)) return current;
    return unpack(best, current);
}

// One generalized M-step. Returns the new parameter set.
inline ParameterSet m_step(const ParameterSet& phi, const Evaluation& ev, const Weights& w, const ScaleStructure& sc,
                           const Eigen::MatrixXd& y, const QuantileLevels& tau, const EMConfig& cfg,
                           bool update_psi = true) {
    const Eigen::Index T = y.rows(), p = y.cols();
    ParameterSet next = phi;
    Eigen::MatrixXd s = ev.s;
    const Eigen::MatrixXd prec = sc.llt().solve(Eigen::MatrixXd::Identity(p, p));
    const Eigen::VectorXd& a = sc.sigma_inv_xi();
    Eigen::VectorXd c(T), rest(T);
    std::vector<double> qb, eb, db;
    for (int sweep = 0; sweep < std::max(1, cfg.block_sweeps); ++sweep) {
        for (Eigen::Index j = 0; j < p; ++j) {
            c = s * prec.col(j) - prec(j, j) * s.col(j);
            const auto ju = static_cast<std::size_t>(j);
            const Eigen::VectorXd* rest_ptr = nullptr;
            if (p > 1) {
                rest = (s * prec).cwiseProduct(s).rowwise().sum() - 2.0 * s.col(j).cwiseProduct(c) -
                       prec(j, j) * s.col(j).cwiseAbs2();
                rest_ptr = &rest;
            }
            const AssetBlock block(column(y, j), tau[ju], a[j], prec(j, j), w.z, c, rest_ptr, cfg.degeneracy_ratio,
                                   next.assets[ju]);
            next.assets[ju] = optimize_block(block, next.assets[ju], cfg, sweep == 0);
            const AssetModel& am = next.assets[ju];
            fill_path(am.caviar, am.es, column(y, j), tau[ju], am.q0, qb, eb, db, nullptr);
            for (Eigen::Index t = 0; t < T; ++t)
                s(t, j) = (y(t, j) - qb[static_cast<std::size_t>(t)]) / db[static_cast<std::size_t>(t)];
        }
    }
    if (p > 1 && update_psi) {
        const MALConstraints& con = sc.constraints();
        const double Td = static_cast<double>(T);
        const Eigen::MatrixXd amat = s.transpose() * w.z.asDiagonal() * s;
        const Eigen::VectorXd b = s.colwise().sum().transpose();
        const double u_sum = w.u.sum();
        const double q_old = q_psi(sc, amat, b, u_sum, Td);
        const Eigen::MatrixXd target = sigma_m_step(s, w.u, w.z, con);
        double alpha = 1.0;
        for (int k = 0; k < 30; ++k, alpha *= 0.5) {
            Eigen::MatrixXd cand = (1.0 - alpha) * phi.psi + alpha * target;
            cand.diagonal().setOnes();
            Eigen::LLT<Eigen::MatrixXd> chk(cand);
            if (chk.info() != Eigen::Success) continue;
            const ScaleStructure sc_new(cand, con);
            if (q_psi(sc_new, amat, b, u_sum, Td) >= q_old && separated(quad_forms(sc_new, s), cfg.degeneracy_ratio)) {
                next.psi = cand;
                break;
            }
        }
    }
    return next;
}

struct ChainResult {
    ParameterSet phi;
    double loglik = -std::numeric_limits<double>::infinity();
    std::vector<double> trace;
    int iterations = 0;
    bool converged = false;
    int ascent_violations = 0;
    double worst_decrease = 0.0;
};

inline ChainResult run_chain(ParameterSet phi, const Eigen::MatrixXd& y, const QuantileLevels& tau,
                             const EMConfig& cfg, int start_index) {
    const MALConstraints con = MALConstraints::from(tau);
    ChainResult out;
    Evaluation ev = evaluate(phi, y, tau);
    if (!ev.ok) throw NumericError("start " + std::to_string(start_index) + ": " + ev.fault);
    ScaleStructure sc(phi.psi, con);
    double l = loglik_from(ev, sc);
    if (!std::isfinite(l)) throw NumericError("start " + std::to_string(start_index) + ": non-finite log-likelihood");
    out.trace.push_back(l);
    if (cfg.progress) cfg.progress(start_index, 0, l);
    for (int it = 1; it <= cfg.max_iterations; ++it) {
        const Weights w = weights_from(ev, sc);
        ParameterSet cand = m_step(phi, ev, w, sc, y, tau, cfg);
        Evaluation ev_new = evaluate(cand, y, tau);
        if (!ev_new.ok) break;
        ScaleStructure sc_new(cand.psi, con);
        const double l_new = loglik_from(ev_new, sc_new);
        out.iterations = it;
        if (!std::isfinite(l_new)) break;
        if (l_new < l) {
            // The generalized M-step never lowers Q, so this is round-off or
            // inner-optimizer slack; record it and stop at the previous iterate.
            if (l - l_new > 1e-6) ++out.ascent_violations;
            out.worst_decrease = std::max(out.worst_decrease, l - l_new);
            out.converged = l - l_new < cfg.tol;
            break;
        }
        phi = std::move(cand);
        ev = std::move(ev_new);
        sc = std::move(sc_new);
        const double gain = l_new - l;
        l = l_new;
        out.trace.push_back(l);
        if (cfg.progress) cfg.progress(start_index, it, l);
        if (gain < cfg.tol) {
            out.converged = true;
            break;
        }
    }
    out.phi = std::move(phi);
    out.loglik = l;
    return out;
}

struct SeriesMoments {
    double q_emp, es_emp, mean_abs, mean_pos, mean_neg, mean_sq;
};

inline SeriesMoments series_moments(std::span<const double> y, double tau) {
    SeriesMoments m{};
    m.q_emp = empirical_quantile(std::vector<double>(y.begin(), y.end()), tau);
    double tail = 0.0;
    int k = 0;
    for (double v : y) {
        m.mean_abs += std::abs(v);
        m.mean_pos += std::max(v, 0.0);
        m.mean_neg += std::max(-v, 0.0);
        m.mean_sq += v * v;
        if (v <= m.q_emp) {
            tail += v;
            ++k;
        }
    }
    const double n = static_cast<double>(y.size());
    m.mean_abs /= n;
    m.mean_pos /= n;
    m.mean_neg /= n;
    m.mean_sq /= n;
    m.es_emp = k > 0 ? tail / k : m.q_emp;
    return m;
}

// Random candidate around the stationary empirical quantile level.
template <class Rng>
AssetModel random_candidate(ModelKind kind, const SeriesMoments& mo, const PathAnchor& anchor, Rng& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    auto u = [&](double lo, double hi) { return lo + (hi - lo) * unif(rng); };
    AssetModel a;
    a.q0 = anchor.q0;
    a.caviar.kind = kind.quantile;
    a.caviar.eta = u(0.3, 0.97);
    const double q = mo.q_emp < 0.0 ? mo.q_emp : -std::max(1e-3, mo.mean_abs);
    switch (kind.quantile) {
        case QuantileKind::SAV:
            a.caviar.beta = {u(-0.5, 0.1)};
            a.caviar.omega = q * (1.0 - a.caviar.eta) - a.caviar.beta[0] * mo.mean_abs;
            break;
        case QuantileKind::AS:
            a.caviar.beta = {u(-0.4, 0.4), u(-0.4, 0.4)};
            a.caviar.omega = q * (1.0 - a.caviar.eta) - a.caviar.beta[0] * mo.mean_pos - a.caviar.beta[1] * mo.mean_neg;
            break;
        case QuantileKind::IG:
            a.caviar.beta = {u(0.01, 0.4)};
            a.caviar.omega = std::max(q * q * (1.0 - a.caviar.eta) - a.caviar.beta[0] * mo.mean_sq, 0.05 * q * q);
            break;
    }
    a.es.kind = kind.es;
    a.es.x0 = anchor.x0;
    if (kind.es == EsKind::Multiplicative) {
        const double ratio = mo.es_emp / q;
        a.es.gamma0 = (ratio > 1.02 ? std::log(ratio - 1.0) : -1.0) + u(-0.5, 0.5);
    } else {
        a.es.gamma = {u(0.0, 0.3) * std::abs(q), u(0.0, 0.3), u(0.3, 0.95)};
    }
    return a;
}

template <class Rng>
AssetModel perturb(const AssetModel& a, double sd, Rng& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<double> v = natural_parameters(a);
    for (double& x : v) x *= 1.0 + sd * n01(rng);
    AssetModel out = from_natural(v, a);
    out.caviar.eta = std::clamp(out.caviar.eta, -0.999, 0.999);
    if (out.es.kind == EsKind::Autoregressive)
        for (double& g : out.es.gamma) g = std::max(g, kGammaFloor);
    return out;
}

inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
    return std::mt19937_64(seq);
}

inline Eigen::MatrixXd empirical_correlation(const Eigen::MatrixXd& y) {
    const Eigen::MatrixXd c = y.rowwise() - y.colwise().mean();
    const Eigen::MatrixXd cov = c.transpose() * c / static_cast<double>(y.rows() - 1);
    return nearest_correlation(cov);
}

}  // namespace detail

inline ParameterSet dynamic_m_step(const ParameterSet& phi_prev, const Eigen::MatrixXd& y, const QuantileLevels& tau,
                                   const Eigen::VectorXd& z, const EMConfig& cfg) {
    const Evaluation ev = evaluate(phi_prev, y, tau);
    if (!ev.ok) throw NumericError("dynamic_m_step: " + ev.fault);
    const ScaleStructure sc(phi_prev.psi, MALConstraints::from(tau));
    const detail::Weights w{Eigen::VectorXd::Zero(z.size()), z};
    return detail::m_step(phi_prev, ev, w, sc, y, tau, cfg, false);
}

struct FitResult {
    ParameterSet phi_hat;
    double loglik = -std::numeric_limits<double>::infinity();
    std::vector<double> loglik_trace;
    std::vector<RiskPath> paths;
    int iterations = 0;
    bool converged = false;
    int start_index = 0;
    int failed_starts = 0;
    int ascent_violations = 0;      // summed over chains
    double worst_decrease = 0.0;    // largest rejected loglik drop over chains
    std::vector<double> start_logliks;  // final loglik per start, NaN when failed
};

namespace detail {

inline void check_fit_inputs(const Eigen::MatrixXd& y, const QuantileLevels& tau, ModelKind kind) {
    const auto p = static_cast<std::size_t>(y.cols());
    if (p == 0 || tau.size() != p) throw ValidationError("fit: tau length must equal the number of assets");
    if (!y.allFinite()) throw ValidationError("fit: data contain non-finite values");
    for (std::size_t j = 0; j < p; ++j)
        if (!(tau[j] < 0.5)) throw ValidationError("fit: tau must be a lower-tail level (< 0.5)");
    const std::size_t k = free_parameter_count(kind, p);
    if (static_cast<std::size_t>(y.rows()) <= 10 * k)
        throw ValidationError("fit: need T > 10 x free parameters (" + std::to_string(10 * k) + "), got T=" +
                              std::to_string(y.rows()));
}

inline void reanchor(ParameterSet& phi, const Eigen::MatrixXd& y, const QuantileLevels& tau) {
    for (std::size_t j = 0; j < phi.dim(); ++j) {
        const PathAnchor a = initial_state(column(y, static_cast<Eigen::Index>(j)), tau[j]);
        phi.assets[j].q0 = a.q0;
        phi.assets[j].es.x0 = a.x0;
    }
}

inline ParameterSet base_start(const Eigen::MatrixXd& y, const QuantileLevels& tau, ModelKind kind, const EMConfig& cfg);

}  // namespace detail

/// Multi-start EM. Start 0 is the base initialization (or `init` when given);
/// further starts perturb it multiplicatively.
inline FitResult fit(const Eigen::MatrixXd& y, const QuantileLevels& tau, ModelKind kind, const EMConfig& cfg,
                     const std::optional<ParameterSet>& init = std::nullopt) {
    detail::check_fit_inputs(y, tau, kind);
    if (cfg.n_starts < 1) throw ValidationError("fit: n_starts must be at least 1");
    ParameterSet base;
    if (init) {
        base = *init;
        if (base.dim() != tau.size()) throw ValidationError("fit: initial parameters have the wrong dimension");
        detail::reanchor(base, y, tau);
    } else {
        base = detail::base_start(y, tau, kind, cfg);
    }
    FitResult best;
    std::vector<std::string> failures;
    for (int s = 0; s < cfg.n_starts; ++s) {
        ParameterSet start = base;
        if (s > 0) {
            auto rng = detail::stream(cfg.seed, 17, static_cast<std::uint64_t>(s));
            bool ok = false;
            for (int attempt = 0; attempt < 20 && !ok; ++attempt) {
                for (std::size_t j = 0; j < start.dim(); ++j)
                    start.assets[j] = detail::perturb(base.assets[j], cfg.perturbation_sd, rng);
                ok = evaluate(start, y, tau).ok;
            }
            if (!ok) {
                ++best.failed_starts;
                best.start_logliks.push_back(std::numeric_limits<double>::quiet_NaN());
                failures.push_back("start " + std::to_string(s) + ": no admissible perturbation");
                continue;
            }
        }
        try {
            detail::ChainResult ch = detail::run_chain(std::move(start), y, tau, cfg, s);
            best.start_logliks.push_back(ch.loglik);
            best.ascent_violations += ch.ascent_violations;
            best.worst_decrease = std::max(best.worst_decrease, ch.worst_decrease);
            if (ch.loglik > best.loglik) {
                best.phi_hat = std::move(ch.phi);
                best.loglik = ch.loglik;
                best.loglik_trace = std::move(ch.trace);
                best.iterations = ch.iterations;
                best.converged = ch.converged;
                best.start_index = s;
            }
        } catch (const Error& e) {
            ++best.failed_starts;
            best.start_logliks.push_back(std::numeric_limits<double>::quiet_NaN());
            failures.emplace_back(e.what());
        }
    }
    if (!std::isfinite(best.loglik)) {
        std::ostringstream os;
        os << "fit: all " << cfg.n_starts << " starts failed";
        for (const auto& f : failures) os << "\n  " << f;
        throw NumericError(os.str());
    }
    best.paths = evaluate(best.phi_hat, y, tau).paths;
    return best;
}

namespace detail {

inline ParameterSet base_start(const Eigen::MatrixXd& y, const QuantileLevels& tau, ModelKind kind,
                               const EMConfig& cfg) {
    const Eigen::Index p = y.cols();
    if (p > 1) {
        ParameterSet phi;
        EMConfig uni = cfg;
        uni.n_starts = 1;
        uni.progress = nullptr;
        for (Eigen::Index j = 0; j < p; ++j) {
            uni.seed = cfg.seed + 7919ULL * static_cast<std::uint64_t>(j + 1);
            const FitResult r = fit(y.col(j), QuantileLevels({tau[static_cast<std::size_t>(j)]}), kind, uni);
            phi.assets.push_back(r.phi_hat.assets[0]);
        }
        phi.psi = empirical_correlation(y);
        return phi;
    }
    // p == 1: random search on the AL likelihood, then short EM chains from
    // the best few candidates.
    const auto col = column(y, 0);
    const SeriesMoments mo = series_moments(col, tau[0]);
    const PathAnchor anchor = initial_state(col, tau[0]);
    auto rng = stream(cfg.seed, 3, 0);
    std::vector<std::pair<double, AssetModel>> cands;
    const MALConstraints con = MALConstraints::from(tau);
    const ScaleStructure sc(Eigen::MatrixXd::Identity(1, 1), con);
    for (int i = 0; i < cfg.n_candidates; ++i) {
        ParameterSet phi{{random_candidate(kind, mo, anchor, rng)}, Eigen::MatrixXd::Identity(1, 1)};
        const Evaluation ev = evaluate(phi, y, tau);
        if (!ev.ok) continue;
        const double l = loglik_from(ev, sc);
        if (std::isfinite(l)) cands.emplace_back(l, phi.assets[0]);
    }
    if (cands.empty()) throw NumericError("fit: no admissible initial candidate found");
    std::sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    ParameterSet best;
    double lbest = -std::numeric_limits<double>::infinity();
    EMConfig short_cfg = cfg;
    short_cfg.progress = nullptr;
    short_cfg.max_iterations = std::min(cfg.max_iterations, 50);
    const int n = std::min<int>(cfg.candidate_chains, static_cast<int>(cands.size()));
    for (int i = 0; i < n; ++i) {
        try {
            ChainResult ch = run_chain(ParameterSet{{cands[static_cast<std::size_t>(i)].second},
                                                    Eigen::MatrixXd::Identity(1, 1)},
                                       y, tau, short_cfg, -1 - i);
            if (ch.loglik > lbest) {
                lbest = ch.loglik;
                best = std::move(ch.phi);
            }
        } catch (const Error&) {
        }
    }
    if (!std::isfinite(lbest)) throw NumericError("fit: univariate initialization failed");
    return best;
}

}  // namespace detail

}  // namespace malrisk

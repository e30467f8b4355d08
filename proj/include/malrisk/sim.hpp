#pragma once

// Simulation harness: CAViaR/ES data-generating processes with multivariate
// Normal or Student-t errors, and a Monte Carlo driver reporting Bias% and RMSE.

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "malrisk/caviar.hpp"
#include "malrisk/em.hpp"
#include "malrisk/error.hpp"
#include "malrisk/linalg.hpp"
#include "malrisk/mal.hpp"

namespace malrisk {

enum class ErrorFamily { Normal, StudentT };

inline ErrorFamily parse_error_family(const std::string& s) {
    if (s == "normal" || s == "N") return ErrorFamily::Normal;
    if (s == "t" || s == "student" || s == "T") return ErrorFamily::StudentT;
    throw ValidationError("unknown error family '" + s + "' (expected normal or t)");
}

/// True parameter values of the three-asset design; assets beyond the third
/// cycle through these values.
inline ParameterSet reference_truth(ModelKind kind, std::size_t p) {
    static constexpr double omega[] = {-0.20, -0.12, -0.24};
    static constexpr double eta[] = {0.85, 0.70, 0.60};
    static constexpr double beta1[] = {-0.10, -0.05, -0.20};
    static constexpr double beta2[] = {0.05, 0.10, 0.20};
    static constexpr double gamma0[] = {-1.1, -1.5, -1.3};
    static constexpr double gamma1[] = {0.05, 0.10, 0.02};
    static constexpr double gamma2[] = {0.12, 0.05, 0.20};
    static constexpr double gamma3[] = {0.80, 0.70, 0.60};
    if (p == 0) throw DomainError("reference_truth: p must be positive");
    ParameterSet phi;
    for (std::size_t j = 0; j < p; ++j) {
        const std::size_t k = j % 3;
        AssetModel a;
        a.caviar.kind = kind.quantile;
        a.caviar.eta = eta[k];
        switch (kind.quantile) {
            case QuantileKind::SAV:
                a.caviar.omega = omega[k];
                a.caviar.beta = {beta1[k]};
                break;
            case QuantileKind::AS:
                a.caviar.omega = omega[k];
                a.caviar.beta = {beta1[k], beta2[k]};
                break;
            case QuantileKind::IG:
                a.caviar.omega = std::abs(omega[k]);
                a.caviar.beta = {beta2[k]};
                break;
        }
        a.es.kind = kind.es;
        a.es.gamma0 = gamma0[k];
        a.es.gamma = {gamma1[k], gamma2[k], gamma3[k]};
        phi.assets.push_back(a);
    }
    if (p <= 3) {
        Eigen::Matrix3d psi3;
        psi3 << 1.0, 0.3, 0.7, 0.3, 1.0, 0.5, 0.7, 0.5, 1.0;
        phi.psi = psi3.topLeftCorner(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    } else {
        phi.psi = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p), 0.5);
        phi.psi.diagonal().setOnes();
    }
    return phi;
}

struct SimScenario {
    ErrorFamily family = ErrorFamily::Normal;
    double df = 5.0;
    std::size_t T = 1500;
    ModelKind kind;
    ParameterSet truth;
    QuantileLevels tau;
    int B = 25;
    std::uint64_t seed = 20240601;
    std::size_t burn_in = 200;
    // Shift each standardized error so its tau_j-quantile is zero, making
    // the recursion path the true conditional quantile.
    bool center_errors = true;
    bool zero_noise = false;

    void validate() const {
        if (T < 100) throw ValidationError("SimScenario: T must be at least 100");
        if (B < 1) throw ValidationError("SimScenario: B must be at least 1");
        if (family == ErrorFamily::StudentT && !(df > 2.0)) throw ValidationError("SimScenario: df must exceed 2");
        if (truth.dim() != tau.size()) throw ValidationError("SimScenario: truth and tau dimensions differ");
        check_correlation(truth.psi);
        for (const auto& a : truth.assets) {
            a.caviar.validate();
            a.es.validate();
        }
    }
};

struct Simulated {
    Eigen::MatrixXd y;
    Eigen::MatrixXd quantile;
    Eigen::MatrixXd es;
};

namespace detail {
inline double stationary_start(const CaviarSpec& s) {
    const double eta = std::min(std::abs(s.eta), 0.99);
    if (s.kind == QuantileKind::IG) return -std::sqrt(std::max(s.omega, 1e-8) / (1.0 - eta));
    const double q = s.omega / (1.0 - eta);
    return q < 0.0 ? q : -1e-3;
}
}  // namespace detail

/// Simulate one replication; throws NumericError on recursion blow-up.
inline Simulated generate_full(const SimScenario& sc, int replication) {
    sc.validate();
    const auto p = static_cast<Eigen::Index>(sc.truth.dim());
    const MALConstraints con = MALConstraints::from(sc.tau);
    const ScaleStructure ss(sc.truth.psi, con);
    const Eigen::MatrixXd l = ss.llt().matrixL();
    Eigen::VectorXd shift = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd loc = Eigen::VectorXd::Zero(p);
    if (sc.family == ErrorFamily::StudentT) loc = con.xi_tilde;
    if (sc.center_errors) {
        for (Eigen::Index j = 0; j < p; ++j) {
            const double tj = sc.tau[static_cast<std::size_t>(j)];
            const double zq = sc.family == ErrorFamily::Normal
                                  ? boost::math::quantile(boost::math::normal_distribution<>(), tj)
                                  : boost::math::quantile(boost::math::students_t_distribution<>(sc.df), tj);
            shift[j] = loc[j] + con.sigma_tilde[j] * zq;
        }
    }
    auto rng = detail::stream(sc.seed, 101, static_cast<std::uint64_t>(replication));
    std::normal_distribution<double> n01(0.0, 1.0);
    std::gamma_distribution<double> gam(sc.df / 2.0, 2.0 / sc.df);  // V = 1/G ~ InvGamma(df/2, df/2)

    const std::size_t total = sc.T + sc.burn_in;
    Simulated out{Eigen::MatrixXd(sc.T, p), Eigen::MatrixXd(sc.T, p), Eigen::MatrixXd(sc.T, p)};
    Eigen::VectorXd q(p), x = Eigen::VectorXd::Zero(p), y_prev(p), q_prev(p), z(p);
    for (Eigen::Index j = 0; j < p; ++j) q[j] = detail::stationary_start(sc.truth.assets[static_cast<std::size_t>(j)].caviar);
    for (std::size_t t = 0; t < total; ++t) {
        if (t > 0) {
            for (Eigen::Index j = 0; j < p; ++j) {
                const double v = detail::step_unchecked(sc.truth.assets[static_cast<std::size_t>(j)].caviar, q_prev[j], y_prev[j]);
                if (!std::isfinite(v) || std::abs(v) > 1e6)
                    throw NumericError("generate: quantile recursion blew up at t=" + std::to_string(t));
                q[j] = v;
            }
        }
        for (Eigen::Index j = 0; j < p; ++j) z[j] = n01(rng);
        double scale = 1.0;
        if (sc.family == ErrorFamily::StudentT) scale = std::sqrt(1.0 / gam(rng));
        Eigen::VectorXd e = loc + scale * (l * z) - shift;
        if (sc.zero_noise) e.setZero();
        Eigen::VectorXd yt(p), est(p);
        for (Eigen::Index j = 0; j < p; ++j) {
            const AssetModel& a = sc.truth.assets[static_cast<std::size_t>(j)];
            const double tj = sc.tau[static_cast<std::size_t>(j)];
            double es;
            if (a.es.kind == EsKind::Multiplicative) {
                es = (1.0 + std::exp(a.es.gamma0)) * q[j];
            } else {
                if (t > 0 && e[j] <= 0.0)
                    x[j] = std::max(0.0, a.es.gamma[0] + a.es.gamma[1] * (q_prev[j] - y_prev[j]) + a.es.gamma[2] * x[j]);
                es = q[j] - x[j];
            }
            const double delta = -tj * es;
            if (!(delta > 0.0))
                throw NumericError("generate: non-positive scale at t=" + std::to_string(t) + ", asset " + std::to_string(j));
            yt[j] = q[j] + delta * e[j];
            est[j] = es;
        }
        if (t >= sc.burn_in) {
            const auto r = static_cast<Eigen::Index>(t - sc.burn_in);
            out.y.row(r) = yt.transpose();
            out.quantile.row(r) = q.transpose();
            out.es.row(r) = est.transpose();
        }
        q_prev = q;
        y_prev = yt;
    }
    return out;
}

inline Eigen::MatrixXd generate(const SimScenario& sc, int replication) { return generate_full(sc, replication).y; }

struct ParameterSummary {
    std::string name;  // e.g. "omega[1]"
    double truth = 0.0;
    double bias_pct = 0.0;
    double rmse = 0.0;
    double mean_estimate = 0.0;
};

struct StudyResult {
    std::vector<ParameterSummary> parameters;  // omega, eta, beta for each asset
    ParameterSummary l1_aggregate;             // ||theta||_1 over the same parameters
    int replications = 0;
    int failed = 0;
    double median_iterations = 0.0;
    double median_seconds = 0.0;
    std::vector<std::string> failures;
};

namespace detail {

// omega, eta and beta entries in asset order.
inline std::vector<std::pair<std::string, double>> quantile_parameters(const ParameterSet& phi) {
    std::vector<std::pair<std::string, double>> out;
    for (std::size_t j = 0; j < phi.dim(); ++j) {
        const auto& c = phi.assets[j].caviar;
        const std::string idx = "[" + std::to_string(j + 1) + "]";
        out.emplace_back("omega" + idx, c.omega);
        out.emplace_back("eta" + idx, c.eta);
        if (c.beta.size() == 2) {
            out.emplace_back("beta1" + idx, c.beta[0]);
            out.emplace_back("beta2" + idx, c.beta[1]);
        } else {
            out.emplace_back("beta" + idx, c.beta[0]);
        }
    }
    return out;
}

inline double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Runs fn(i) for i in [0, n) on `threads` workers; results are written by index.
template <class Fn>
void parallel_for(int n, int threads, Fn&& fn) {
    threads = std::max(1, std::min(threads, n));
    if (threads == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int k = 0; k < threads; ++k)
        pool.emplace_back([&] {
            for (int i = next++; i < n; i = next++) fn(i);
        });
    for (auto& th : pool) th.join();
}

inline int default_threads() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

}  // namespace detail

struct ReplicationOutcome {
    bool ok = false;
    std::string error;
    ParameterSet estimate;
    int iterations = 0;
    double seconds = 0.0;
};

inline ReplicationOutcome run_replication(const SimScenario& sc, const EMConfig& cfg, int r) {
    ReplicationOutcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        const Eigen::MatrixXd y = generate(sc, r);
        EMConfig c = cfg;
        c.seed = cfg.seed + 1000003ULL * static_cast<std::uint64_t>(r);
        const FitResult fr = fit(y, sc.tau, sc.kind, c);
        o.estimate = fr.phi_hat;
        o.iterations = fr.iterations;
        o.ok = true;
    } catch (const Error& e) {
        o.error = "replication " + std::to_string(r) + ": " + e.what();
    }
    o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return o;
}

inline StudyResult summarize_study(const SimScenario& sc, const std::vector<ReplicationOutcome>& outcomes) {
    StudyResult res;
    const auto truth = detail::quantile_parameters(sc.truth);
    const std::size_t k = truth.size();
    std::vector<double> bias(k, 0.0), sq(k, 0.0), mean(k, 0.0);
    double truth_l1 = 0.0;
    for (const auto& [n, v] : truth) truth_l1 += std::abs(v);
    double l1_bias = 0.0, l1_sq = 0.0, l1_mean = 0.0;
    std::vector<double> iters, secs;
    for (const auto& o : outcomes) {
        if (!o.ok) {
            ++res.failed;
            res.failures.push_back(o.error);
            continue;
        }
        ++res.replications;
        const auto est = detail::quantile_parameters(o.estimate);
        double l1 = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            const double th = truth[i].second, e = est[i].second;
            bias[i] += (e - th) / th * 100.0;
            sq[i] += (e - th) * (e - th);
            mean[i] += e;
            l1 += std::abs(e);
        }
        l1_bias += (l1 - truth_l1) / truth_l1 * 100.0;
        l1_sq += (l1 - truth_l1) * (l1 - truth_l1);
        l1_mean += l1;
        iters.push_back(o.iterations);
        secs.push_back(o.seconds);
    }
    const double n = std::max(1, res.replications);
    for (std::size_t i = 0; i < k; ++i)
        res.parameters.push_back({truth[i].first, truth[i].second, bias[i] / n, std::sqrt(sq[i] / n), mean[i] / n});
    res.l1_aggregate = {"l1_norm", truth_l1, l1_bias / n, std::sqrt(l1_sq / n), l1_mean / n};
    res.median_iterations = detail::median(iters);
    res.median_seconds = detail::median(secs);
    return res;
}

/// Replications run on a thread pool; aggregation is in replication order.
inline StudyResult run_study(const SimScenario& sc, const EMConfig& cfg, int threads = detail::default_threads()) {
    sc.validate();
    std::vector<ReplicationOutcome> outcomes(static_cast<std::size_t>(sc.B));
    EMConfig quiet = cfg;
    quiet.progress = nullptr;
    detail::parallel_for(sc.B, threads, [&](int r) { outcomes[static_cast<std::size_t>(r)] = run_replication(sc, quiet, r); });
    return summarize_study(sc, outcomes);
}

}  // namespace malrisk

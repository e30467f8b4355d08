#include <cmath>
#include <random>

#include "malrisk/em.hpp"
#include "malrisk/sim.hpp"
#include "test_util.hpp"

using namespace malrisk;
using testutil::near_rel;

namespace {

ParameterSet sav_truth(std::size_t p) { return reference_truth(ModelKind{QuantileKind::SAV, EsKind::Multiplicative}, p); }

SimScenario scenario(ModelKind kind, std::size_t p, double tau, std::size_t T, std::uint64_t seed) {
    SimScenario sc;
    sc.kind = kind;
    sc.truth = reference_truth(kind, p);
    sc.tau = QuantileLevels::constant(p, tau);
    sc.T = T;
    sc.seed = seed;
    return sc;
}

}  // namespace

TEST(Mahalanobis, ScalarReduction) {
    const double tau = 0.1, s2 = std::pow(fixed_scale(tau), 2);
    const auto mt = mahalanobis_terms(Eigen::VectorXd::Constant(1, -0.4), Eigen::VectorXd::Constant(1, -1.0),
                                      Eigen::VectorXd::Constant(1, 0.2), Eigen::MatrixXd::Constant(1, 1, s2),
                                      Eigen::VectorXd::Constant(1, fixed_skew(tau)));
    EXPECT_NEAR(mt.m_tilde, 0.36 / (0.04 * s2), 1e-12);
    EXPECT_NEAR(mt.d_tilde, fixed_skew(tau) * fixed_skew(tau) / s2, 1e-12);
}

TEST(Mahalanobis, RandomAgainstSolve) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n;
    for (int rep = 0; rep < 20; ++rep) {
        Eigen::MatrixXd a(3, 3);
        for (int i = 0; i < 9; ++i) a.data()[i] = n(rng);
        const Eigen::MatrixXd sigma = a * a.transpose() + Eigen::MatrixXd::Identity(3, 3);
        Eigen::Vector3d y, q, d, xi;
        for (int i = 0; i < 3; ++i) {
            y[i] = n(rng);
            q[i] = n(rng);
            d[i] = 0.1 + std::abs(n(rng));
            xi[i] = n(rng);
        }
        const Eigen::Vector3d s = (y - q).cwiseQuotient(d);
        const auto mt = mahalanobis_terms(y, q, d, sigma, xi);
        EXPECT_TRUE(near_rel(mt.m_tilde, s.dot(sigma.fullPivLu().solve(s)), 1e-10));
        EXPECT_TRUE(near_rel(mt.d_tilde, xi.dot(sigma.fullPivLu().solve(xi)), 1e-10));
    }
    // tends to zero as y -> q
    const Eigen::Vector2d q(-1.0, -2.0), d(0.5, 0.5), xi(1.0, 1.0);
    const auto small = mahalanobis_terms(q + 1e-7 * Eigen::Vector2d::UnitX(), q, d, Eigen::Matrix2d::Identity(), xi);
    EXPECT_LT(small.m_tilde, 1e-12);
}

TEST(EStep, MatchesQuadratureOverMixingVariable) {
    const auto j = testutil::load("special.json");
    for (const auto& c : j["mal"]) {
        const QuantileLevels tau(testutil::stdvec(c["tau"]));
        const MALConstraints con = MALConstraints::from(tau);
        const Eigen::MatrixXd sigma = assemble_sigma(testutil::mat(c["psi"]), con);
        const LatentWeights w = e_step(testutil::vec(c["y"]), testutil::vec(c["mu"]), testutil::vec(c["delta"]), sigma,
                                       con.xi_tilde);
        EXPECT_TRUE(near_rel(w.u, c["e_w"].get<double>(), 1e-8)) << "p=" << c["p"];
        EXPECT_TRUE(near_rel(w.z, c["e_inv_w"].get<double>(), 1e-8)) << "p=" << c["p"];
    }
}

TEST(EStep, UnivariateClosedForm) {
    for (double m : {1e-4, 0.3, 2.0, 50.0}) {
        const double d = 3.7, x = std::sqrt((2.0 + d) * m);
        const LatentWeights w = latent_weights(m, d, 0.5);
        EXPECT_TRUE(near_rel(w.u, std::sqrt(m / (2.0 + d)) * (1.0 + 1.0 / x), 1e-12));
        EXPECT_TRUE(near_rel(w.z, std::sqrt((2.0 + d) / m), 1e-12));
    }
    EXPECT_THROW(latent_weights(0.0, 1.0, 0.5), DegeneratePointError);
}

TEST(QFunction, UnivariateHandFormula) {
    const QuantileLevels tau({0.1});
    ParameterSet phi = sav_truth(1);
    phi.assets[0].q0 = -1.0;
    phi.psi = Eigen::MatrixXd::Ones(1, 1);
    Eigen::MatrixXd y(6, 1);
    y << -0.3, -1.8, 0.4, -2.5, 0.1, -0.9;
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(6);
    const double got = q_function(phi, y, tau, ones, ones);

    const double xi = fixed_skew(0.1), s2 = std::pow(fixed_scale(0.1), 2);
    const RiskPath rp = risk_path(phi.assets[0].caviar, phi.assets[0].es, detail::column(y, 0), 0.1, -1.0);
    double ref = 0.0;
    for (int t = 0; t < 6; ++t) {
        const double d = rp.delta[static_cast<std::size_t>(t)];
        const double s = (y(t, 0) - rp.quantile[static_cast<std::size_t>(t)]) / d;
        ref += -std::log(d) - 0.5 * std::log(s2) + s * xi / s2 - 0.5 * s * s / s2 - 0.5 * xi * xi / s2;
    }
    EXPECT_NEAR(got, ref, 1e-10);
}

TEST(QFunction, ZeroResidualsLeaveOnlyScaleTerms) {
    const QuantileLevels tau({0.05});
    ParameterSet phi = sav_truth(1);
    phi.psi = Eigen::MatrixXd::Ones(1, 1);
    phi.assets[0].q0 = -1.2;
    Eigen::MatrixXd y(30, 1);
    y(0, 0) = -1.2;
    for (int t = 1; t < 30; ++t) y(t, 0) = quantile_step(phi.assets[0].caviar, y(t - 1, 0), y(t - 1, 0));
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u01(0.1, 3.0);
    Eigen::VectorXd u(30), z(30);
    for (int t = 0; t < 30; ++t) {
        u[t] = u01(rng);
        z[t] = u01(rng);
    }
    const ScaleStructure sc(phi.psi, MALConstraints::from(tau));
    const RiskPath rp = risk_path(phi.assets[0].caviar, phi.assets[0].es, detail::column(y, 0), 0.05, -1.2);
    double ref = -0.5 * 30 * sc.log_det_sigma() - 0.5 * sc.d_tilde() * u.sum();
    for (double d : rp.delta) ref -= std::log(d);
    EXPECT_NEAR(q_function(phi, y, tau, u, z), ref, 1e-10);
}

TEST(SigmaMStep, UnivariateIsOne) {
    const auto con = MALConstraints::from(QuantileLevels({0.1}));
    Eigen::MatrixXd s(5, 1);
    s << 0.3, -1.0, 2.0, 0.1, -0.4;
    const Eigen::VectorXd w = Eigen::VectorXd::Constant(5, 0.7);
    EXPECT_NEAR(sigma_m_step(s, w, w, con)(0, 0), 1.0, 1e-15);
}

TEST(SigmaMStep, ApproximateFixedPointWithOracleWeights) {
    Eigen::MatrixXd psi(3, 3);
    psi << 1.0, 0.3, 0.7, 0.3, 1.0, 0.5, 0.7, 0.5, 1.0;
    const QuantileLevels tau({0.1, 0.1, 0.1});
    const MALParams par = MALParams::make(Eigen::Vector3d::Zero(), Eigen::Vector3d::Ones(), psi, tau);
    const ScaleStructure sc(psi, par.constraints);
    auto err_at = [&](Eigen::Index T, std::uint64_t seed) {
        const Eigen::MatrixXd s = mal_sample(par, T, seed);
        Eigen::VectorXd u(T), z(T);
        for (Eigen::Index t = 0; t < T; ++t) {
            const LatentWeights w = latent_weights(sc.quad(s.row(t).transpose()), sc.d_tilde(), sc.nu());
            u[t] = w.u;
            z[t] = w.z;
        }
        return (sigma_m_step(s, u, z, par.constraints) - psi).cwiseAbs().maxCoeff();
    };
    double e500 = 0.0, e5000 = 0.0;
    for (std::uint64_t k = 0; k < 5; ++k) {
        e500 += err_at(500, 100 + k) / 5.0;
        e5000 += err_at(5000, 200 + k) / 5.0;
    }
    EXPECT_LT(e5000, e500);
    EXPECT_LT(e5000, 0.03);
}

TEST(DynamicMStep, NeverLowersQ) {
    const SimScenario sc = scenario({QuantileKind::SAV, EsKind::Multiplicative}, 2, 0.1, 400, 31);
    const Eigen::MatrixXd y = generate(sc, 0);
    ParameterSet phi = sc.truth;
    detail::reanchor(phi, y, sc.tau);
    EMConfig cfg;
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u01(0.05, 4.0);
    for (int rep = 0; rep < 10; ++rep) {
        Eigen::VectorXd z(y.rows()), u(y.rows());
        for (Eigen::Index t = 0; t < y.rows(); ++t) {
            z[t] = u01(rng);
            u[t] = u01(rng);
        }
        const ParameterSet next = dynamic_m_step(phi, y, sc.tau, z, cfg);
        EXPECT_GE(q_function(next, y, sc.tau, u, z), q_function(phi, y, sc.tau, u, z) - 1e-9);
    }
}

TEST(ObservedLoglik, SumOfMalLogDensities) {
    const SimScenario sc = scenario({QuantileKind::AS, EsKind::Autoregressive}, 3, 0.05, 150, 12);
    const Eigen::MatrixXd y = generate(sc, 0);
    ParameterSet phi = sc.truth;
    detail::reanchor(phi, y, sc.tau);
    const Evaluation ev = evaluate(phi, y, sc.tau);
    ASSERT_TRUE(ev.ok) << ev.fault;
    double ref = 0.0;
    for (Eigen::Index t = 0; t < y.rows(); ++t) {
        Eigen::VectorXd mu(3), d(3);
        for (std::size_t j = 0; j < 3; ++j) {
            mu[static_cast<Eigen::Index>(j)] = ev.paths[j].quantile[static_cast<std::size_t>(t)];
            d[static_cast<Eigen::Index>(j)] = ev.paths[j].delta[static_cast<std::size_t>(t)];
        }
        ref += mal_log_density(y.row(t).transpose(), MALParams::make(mu, d, phi.psi, sc.tau));
    }
    EXPECT_TRUE(near_rel(observed_loglik(phi, y, sc.tau), ref, 1e-10));

    // single observation
    const Eigen::MatrixXd y1 = y.topRows(1);
    Eigen::VectorXd mu(3), d(3);
    for (std::size_t j = 0; j < 3; ++j) {
        mu[static_cast<Eigen::Index>(j)] = phi.assets[j].q0;
        d[static_cast<Eigen::Index>(j)] = ev.paths[j].delta[0];
    }
    EXPECT_NEAR(observed_loglik(phi, y1, sc.tau), mal_log_density(y1.row(0).transpose(), MALParams::make(mu, d, phi.psi, sc.tau)),
                1e-12);
}

TEST(Fit, RejectsBadInputs) {
    EMConfig cfg;
    cfg.n_starts = 1;
    const Eigen::MatrixXd small = Eigen::MatrixXd::Random(30, 1);
    EXPECT_THROW(fit(small, QuantileLevels({0.1}), {QuantileKind::SAV, EsKind::Multiplicative}, cfg), ValidationError);
    const Eigen::MatrixXd y = Eigen::MatrixXd::Random(400, 2);
    EXPECT_THROW(fit(y, QuantileLevels({0.1}), {QuantileKind::SAV, EsKind::Multiplicative}, cfg), ValidationError);
    EXPECT_THROW(fit(y, QuantileLevels({0.1, 0.6}), {QuantileKind::SAV, EsKind::Multiplicative}, cfg), ValidationError);
    cfg.n_starts = 0;
    EXPECT_THROW(fit(y, QuantileLevels({0.1, 0.1}), {QuantileKind::SAV, EsKind::Multiplicative}, cfg), ValidationError);
}

TEST(Fit, DeterministicWithFixedSeed) {
    const SimScenario sc = scenario({QuantileKind::SAV, EsKind::Multiplicative}, 1, 0.1, 400, 5);
    const Eigen::MatrixXd y = generate(sc, 0);
    EMConfig cfg;
    cfg.n_starts = 1;
    cfg.seed = 77;
    const FitResult a = fit(y, sc.tau, sc.kind, cfg), b = fit(y, sc.tau, sc.kind, cfg);
    EXPECT_EQ(a.loglik, b.loglik);
    EXPECT_EQ(a.loglik_trace, b.loglik_trace);
    EXPECT_EQ(natural_parameters(a.phi_hat.assets[0]), natural_parameters(b.phi_hat.assets[0]));
}

TEST(Fit, UnivariateRecoveryAndAscent) {
    const SimScenario sc = scenario({QuantileKind::SAV, EsKind::Multiplicative}, 1, 0.1, 1500, 20240601);
    const Eigen::MatrixXd y = generate(sc, 0);
    EMConfig cfg;
    cfg.n_starts = 3;
    const FitResult r = fit(y, sc.tau, sc.kind, cfg);
    ParameterSet from_truth = sc.truth;
    detail::reanchor(from_truth, y, sc.tau);
    EXPECT_GE(r.loglik, fit(y, sc.tau, sc.kind, cfg, from_truth).loglik - 1e-3);
    EXPECT_TRUE(r.converged);
    EXPECT_EQ(r.ascent_violations, 0);
    for (std::size_t i = 1; i < r.loglik_trace.size(); ++i) EXPECT_GE(r.loglik_trace[i], r.loglik_trace[i - 1] - 1e-6);
    const auto est = natural_parameters(r.phi_hat.assets[0]);
    const auto tru = natural_parameters(sc.truth.assets[0]);
    EXPECT_NEAR(est[0], tru[0], 0.15);  // omega
    EXPECT_NEAR(est[1], tru[1], 0.10);  // eta
    EXPECT_NEAR(est[2], tru[2], 0.10);  // beta
    EXPECT_GE(r.loglik, observed_loglik([&] {
                  ParameterSet t = sc.truth;
                  detail::reanchor(t, y, sc.tau);
                  return t;
              }(),
                                        y, sc.tau) - 1e-6);
}

TEST(Fit, WarmStartFromInit) {
    const SimScenario sc = scenario({QuantileKind::AS, EsKind::Autoregressive}, 2, 0.05, 500, 9);
    const Eigen::MatrixXd y = generate(sc, 0);
    EMConfig cfg;
    cfg.n_starts = 1;
    const FitResult r = fit(y, sc.tau, sc.kind, cfg, sc.truth);
    EXPECT_EQ(r.ascent_violations, 0);
    EXPECT_EQ(r.phi_hat.dim(), 2u);
    EXPECT_NO_THROW(check_correlation(r.phi_hat.psi));
}

#include <cmath>
#include <random>

#include "malrisk/portfolio.hpp"
#include "test_util.hpp"

using namespace malrisk;

namespace {
Eigen::MatrixXd reference_psi() {
    Eigen::MatrixXd psi(3, 3);
    psi << 1.0, 0.3, 0.7, 0.3, 1.0, 0.5, 0.7, 0.5, 1.0;
    return psi;
}

double hit_rate(const AllocationResult& r, const MALParams& params, std::uint64_t seed) {
    const Eigen::MatrixXd y = mal_sample(params, 200000, seed);
    const Eigen::VectorXd by = y * r.weights;
    return static_cast<double>((by.array() < r.al.mu_star).count()) / static_cast<double>(by.size());
}
}  // namespace

TEST(PortfolioRisk, SymmetricLevel) {
    const PortfolioRisk r = portfolio_risk(ALParams{0.0, 0.5, 0.7}, 0.5);
    EXPECT_EQ(r.var, 0.0);
    EXPECT_NEAR(r.es, -1.4, 1e-15);
    EXPECT_THROW(portfolio_risk(ALParams{0.0, 0.3, 0.7}, 0.05), DomainError);
}

TEST(PortfolioRisk, EsBelowVarSweep) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 500; ++k) {
        const double t = 0.001 + 0.498 * u(rng);
        const PortfolioRisk r = portfolio_risk(ALParams{-2.0 + 4.0 * u(rng), t, 0.01 + 3.0 * u(rng)}, t);
        EXPECT_LT(r.es, r.var);
    }
}

TEST(AlTailRisk, MatchesReference) {
    const auto j = testutil::load("stats_portfolio.json");
    for (const auto& c : j["tail_risk"]) {
        const PortfolioRisk r = al_tail_risk(ALParams{c["mu"], c["tau_star"], c["delta"]}, c["level"]);
        EXPECT_NEAR(r.var, c["var"].get<double>(), 1e-10);
        EXPECT_NEAR(r.es, c["es"].get<double>(), 1e-10);
    }
    // at level == tau* it coincides with portfolio_risk
    const ALParams al{0.1, 0.05, 0.4};
    const PortfolioRisk a = al_tail_risk(al, 0.05), b = portfolio_risk(al, 0.05);
    EXPECT_NEAR(a.var, b.var, 1e-12);
    EXPECT_NEAR(a.es, b.es, 1e-12);
}

TEST(SmvWeights, SingleAsset) {
    const MALParams p1 = MALParams::make(Eigen::VectorXd::Constant(1, -1.2), Eigen::VectorXd::Constant(1, 0.3),
                                         Eigen::MatrixXd::Identity(1, 1), QuantileLevels({0.05}));
    const AllocationResult r = smv_weights(p1, 0.05);
    EXPECT_EQ(r.weights.size(), 1);
    EXPECT_NEAR(r.weights[0], 1.0, 1e-15);
    EXPECT_NEAR(r.var, -1.2, 1e-12);
    EXPECT_NEAR(r.tau_star_achieved, 0.05, 1e-12);
    EXPECT_THROW(smv_weights(p1, 0.1), DomainError);
}

TEST(SmvWeights, SymmetricCaseIsMinimumVariance) {
    const QuantileLevels tau = QuantileLevels::constant(3, 0.5);
    const MALParams params = MALParams::make(Eigen::Vector3d(0.1, -0.2, 0.05), Eigen::Vector3d(0.8, 1.3, 0.5), reference_psi(), tau);
    const AllocationResult r = smv_weights(params, 0.5);
    ASSERT_TRUE(r.feasible) << r.message;
    const Eigen::MatrixXd m = params.delta.asDiagonal() * assemble_sigma(params.psi, params.constraints) * params.delta.asDiagonal();
    const Eigen::VectorXd minv1 = m.ldlt().solve(Eigen::VectorXd::Ones(3));
    const Eigen::VectorXd ref = minv1 / minv1.sum();
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(r.weights[j], ref[j], 1e-6);
    EXPECT_NEAR(r.weights.sum(), 1.0, 1e-10);
    EXPECT_NEAR(r.tau_star_achieved, 0.5, 1e-6);
}

TEST(SmvWeights, MatchesGridSearch) {
    const auto j = testutil::load("stats_portfolio.json");
    for (const auto& c : j["smv"]) {
        const MALParams params = MALParams::make(testutil::vec(c["mu"]), testutil::vec(c["delta"]), testutil::mat(c["psi"]),
                                                 QuantileLevels(testutil::stdvec(c["tau"])));
        const double tt = c["tau_tilde"];
        const AllocationResult r = smv_weights(params, tt);
        ASSERT_TRUE(r.feasible) << r.message;
        EXPECT_NEAR(r.objective, c["objective"].get<double>(), 1e-3);
        EXPECT_LE(r.objective, c["grid_objective"].get<double>() + 1e-9);
        EXPECT_NEAR(r.weights.sum(), 1.0, 1e-10);
        EXPECT_NEAR(r.tau_star_achieved, tt, 1e-6);
        EXPECT_LE(r.es, r.var);
    }
}

TEST(SmvWeights, HitRateAndTailMeanBySimulation) {
    const QuantileLevels tau({0.05, 0.1, 0.05});
    const MALParams params = MALParams::make(Eigen::Vector3d(-2.0, -1.5, -2.5), Eigen::Vector3d(0.1, 0.08, 0.12), reference_psi(), tau);
    const AllocationResult r = smv_weights(params, 0.05);
    ASSERT_TRUE(r.feasible) << r.message;
    const Eigen::MatrixXd y = mal_sample(params, 200000, 31);
    const Eigen::VectorXd by = y * r.weights;
    double n = 0.0, acc = 0.0;
    for (Eigen::Index i = 0; i < by.size(); ++i)
        if (by[i] < r.var) {
            n += 1.0;
            acc += by[i];
        }
    EXPECT_NEAR(n / static_cast<double>(by.size()), 0.05, 0.005);
    EXPECT_NEAR(acc / n, r.es, 0.03 * std::abs(r.es));
}

TEST(SmvWeights, RandomStatesMeetConstraints) {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 10; ++k) {
        const QuantileLevels tau({0.02 + 0.1 * u(rng), 0.02 + 0.1 * u(rng), 0.02 + 0.1 * u(rng)});
        const MALParams params = MALParams::make(Eigen::Vector3d(-u(rng), -u(rng), -u(rng)),
                                                 Eigen::Vector3d(0.1 + u(rng), 0.1 + u(rng), 0.1 + u(rng)), reference_psi(), tau);
        const AllocationResult r = smv_weights(params, 0.05);
        if (!r.feasible) continue;
        EXPECT_NEAR(r.weights.sum(), 1.0, 1e-10);
        EXPECT_NEAR(r.tau_star_achieved, 0.05, 1e-6);
        EXPECT_NEAR(hit_rate(r, params, 100 + static_cast<std::uint64_t>(k)), 0.05, 0.005);
    }
}

TEST(SmvWeights, InfeasibleTargetReported) {
    // all assets at 0.4 with perfect-ish correlation cannot reach a 1% portfolio level
    const QuantileLevels tau = QuantileLevels::constant(2, 0.4);
    Eigen::Matrix2d psi;
    psi << 1.0, 0.9, 0.9, 1.0;
    const MALParams params = MALParams::make(Eigen::Vector2d(0.0, 0.0), Eigen::Vector2d(1.0, 1.0), psi, tau);
    const AllocationResult r = smv_weights(params, 0.01);
    EXPECT_FALSE(r.feasible);
    EXPECT_FALSE(r.message.empty());
}

TEST(MomentSmv, DuplicatedColumnIsSingular) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n;
    Eigen::MatrixXd w(100, 2);
    for (Eigen::Index i = 0; i < 100; ++i) w(i, 0) = w(i, 1) = n(rng);
    EXPECT_THROW(moment_smv_weights(w, QuantileLevels::constant(2, 0.05), 0.05), NumericError);
    EXPECT_THROW(moment_smv_weights(w.topRows(2), QuantileLevels::constant(2, 0.05), 0.05), ValidationError);
}

TEST(MomentSmv, NearIdenticalColumnsGiveNearEqualWeights) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n;
    Eigen::MatrixXd w(5000, 3);
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        const double common = n(rng);
        for (Eigen::Index j = 0; j < 3; ++j) w(i, j) = common + n(rng);
    }
    // symmetric levels: the skew constraint is inactive and the answer is the
    // minimum-variance portfolio of an almost exchangeable covariance
    const AllocationResult r = moment_smv_weights(w, QuantileLevels::constant(3, 0.5), 0.5);
    ASSERT_TRUE(r.feasible) << r.message;
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(r.weights[j], 1.0 / 3.0, 0.05);
    const Eigen::MatrixXd c = w.rowwise() - w.colwise().mean();
    const Eigen::VectorXd s1 = (c.transpose() * c).ldlt().solve(Eigen::VectorXd::Ones(3));
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(r.weights[j], s1[j] / s1.sum(), 1e-6);
}

TEST(MomentSmv, CoincidesWithModelWhenMomentsMatch) {
    const QuantileLevels tau({0.05, 0.1, 0.05});
    const MALParams params = MALParams::make(Eigen::Vector3d(-2.0, -1.5, -2.5), Eigen::Vector3d(0.1, 0.08, 0.12), reference_psi(), tau);
    const Eigen::VectorXd a = params.delta.cwiseProduct(params.constraints.xi_tilde);
    const Eigen::MatrixXd s = params.delta.asDiagonal() * assemble_sigma(params.psi, params.constraints) * params.delta.asDiagonal() +
                              a * a.transpose();
    const AllocationResult m = moment_smv_from_moments(s, params.mu + a, tau, 0.05);
    const AllocationResult d = smv_weights(params, 0.05);
    ASSERT_TRUE(m.feasible && d.feasible);
    EXPECT_NEAR(m.objective, d.objective, 1e-8);
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(m.weights[j], d.weights[j], 1e-5);
}

TEST(PerformanceStats, Definitions) {
    const std::vector<double> r{-1.0, 3.0, -1.0, 3.0};  // mean 1, sample sd 2.309
    const double sd = std::sqrt(16.0 / 3.0);
    Eigen::MatrixXd eq = Eigen::MatrixXd::Constant(4, 3, 1.0 / 3.0);
    PerformanceStats s = performance_stats(r, eq);
    EXPECT_NEAR(s.sharpe, 1.0 / sd, 1e-14);
    EXPECT_NEAR(s.hhi, 1.0 / 3.0, 1e-14);
    Eigen::MatrixXd one = Eigen::MatrixXd::Zero(4, 3);
    one.col(1).setOnes();
    EXPECT_NEAR(performance_stats(r, one).hhi, 1.0, 1e-15);
    // mean 1, sd 2
    EXPECT_NEAR(performance_stats(std::vector<double>{-1.0, 1.0, 3.0}, eq).sharpe, 0.5, 1e-14);
    EXPECT_THROW(performance_stats(std::vector<double>{1.0, 1.0}, eq), NumericError);
    EXPECT_THROW(performance_stats(std::vector<double>{}, eq), DomainError);
}

TEST(CompoundPath, Basics) {
    const auto flat = compound_path(std::vector<double>(5, 0.0));
    for (double v : flat) EXPECT_EQ(v, 1.0);
    const auto w = compound_path(std::vector<double>{10.0, -50.0});
    EXPECT_NEAR(w[0], 1.1, 1e-15);
    EXPECT_NEAR(w[1], 0.55, 1e-15);
    EXPECT_NEAR(compound_path(std::vector<double>{0.1}, false)[0], 1.1, 1e-15);
}

#pragma once

// Descriptive statistics of a return panel.

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "malrisk/error.hpp"

namespace malrisk::pipeline {

struct AssetSummary {
    std::string name;
    std::size_t n = 0;
    double mean = 0.0, median = 0.0, sd = 0.0, min = 0.0, max = 0.0;
    double skewness = 0.0, kurtosis = 0.0;
    double jarque_bera = 0.0, jb_p_value = 1.0;
    double ljung_box = 0.0, lb_p_value = 1.0;  // squared returns
};

struct SummaryStats {
    std::vector<AssetSummary> assets;
    Eigen::MatrixXd correlation;
};

inline constexpr int kLjungBoxLags = 4;

/// Ljung-Box Q on a series, `lags` autocorrelations.
inline double ljung_box(const Eigen::VectorXd& x, int lags) {
    const auto n = static_cast<double>(x.size());
    const Eigen::VectorXd c = x.array() - x.mean();
    const double g0 = c.squaredNorm();
    if (!(g0 > 0.0)) throw ValidationError("ljung_box: series has zero variance");
    double q = 0.0;
    for (int k = 1; k <= lags; ++k) {
        const double gk = c.head(x.size() - k).dot(c.tail(x.size() - k));
        const double rho = gk / g0;
        q += rho * rho / (n - k);
    }
    return n * (n + 2.0) * q;
}

inline SummaryStats summary_stats(const Eigen::MatrixXd& y, const std::vector<std::string>& names = {}) {
    const Eigen::Index T = y.rows(), p = y.cols();
    if (T <= kLjungBoxLags) throw ValidationError("summary_stats: need at least 5 observations");
    if (!names.empty() && static_cast<Eigen::Index>(names.size()) != p)
        throw ValidationError("summary_stats: name count does not match columns");
    const double n = static_cast<double>(T);
    boost::math::chi_squared chi2_2(2), chi2_l(kLjungBoxLags);
    SummaryStats out;
    for (Eigen::Index j = 0; j < p; ++j) {
        AssetSummary a;
        a.name = names.empty() ? "asset" + std::to_string(j + 1) : names[static_cast<std::size_t>(j)];
        const Eigen::VectorXd x = y.col(j);
        a.n = static_cast<std::size_t>(T);
        a.mean = x.mean();
        const Eigen::VectorXd c = x.array() - a.mean;
        const double var = c.squaredNorm() / (n - 1.0);
        if (!(var > 0.0)) throw ValidationError("summary_stats: column '" + a.name + "' has zero variance");
        a.sd = std::sqrt(var);
        std::vector<double> v(x.data(), x.data() + T);
        std::sort(v.begin(), v.end());
        a.median = T % 2 ? v[static_cast<std::size_t>(T / 2)] : 0.5 * (v[static_cast<std::size_t>(T / 2 - 1)] + v[static_cast<std::size_t>(T / 2)]);
        a.min = v.front();
        a.max = v.back();
        // moment (biased) estimators, as used by the JB statistic
        const double m2 = c.squaredNorm() / n;
        const double m3 = c.array().cube().sum() / n;
        const double m4 = c.array().square().square().sum() / n;
        a.skewness = m3 / std::pow(m2, 1.5);
        a.kurtosis = m4 / (m2 * m2);
        a.jarque_bera = n / 6.0 * (a.skewness * a.skewness + 0.25 * (a.kurtosis - 3.0) * (a.kurtosis - 3.0));
        a.jb_p_value = boost::math::cdf(boost::math::complement(chi2_2, a.jarque_bera));
        const Eigen::VectorXd sq = x.array().square();
        if ((sq.array() - sq.mean()).abs().maxCoeff() > 0.0) {
            a.ljung_box = ljung_box(sq, kLjungBoxLags);
            a.lb_p_value = boost::math::cdf(boost::math::complement(chi2_l, a.ljung_box));
        } else {  // |y| constant: squared series carries no information
            a.ljung_box = a.lb_p_value = std::numeric_limits<double>::quiet_NaN();
        }
        out.assets.push_back(a);
    }
    const Eigen::MatrixXd c = y.rowwise() - y.colwise().mean();
    const Eigen::MatrixXd cov = c.transpose() * c / (n - 1.0);
    const Eigen::VectorXd inv_sd = cov.diagonal().cwiseSqrt().cwiseInverse();
    out.correlation = inv_sd.asDiagonal() * cov * inv_sd.asDiagonal();
    return out;
}

}  // namespace malrisk::pipeline

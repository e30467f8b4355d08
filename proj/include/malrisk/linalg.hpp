#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "malrisk/error.hpp"

namespace malrisk {

/// Cholesky factor of a symmetric matrix. On failure the factorization is
/// retried once with 1e-10 added to the diagonal, then a NumericError is thrown.
inline Eigen::LLT<Eigen::MatrixXd> cholesky_with_jitter(const Eigen::MatrixXd& a,
                                                      const std::string& context = "matrix") {
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() == Eigen::Success) return llt;
    Eigen::MatrixXd jittered = a;
    jittered.diagonal().array() += 1e-10;
    llt.compute(jittered);
    if (llt.info() != Eigen::Success)
        throw NumericError(context + " is not positive definite (Cholesky failed after jitter)");
    return llt;
}

inline double log_det_from_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

/// Symmetrize, rescale to unit diagonal, clip eigenvalues at `floor`, rescale again.
inline Eigen::MatrixXd nearest_correlation(const Eigen::MatrixXd& a, double floor = 1e-8) {
    const Eigen::Index p = a.rows();
    if (a.cols() != p) throw DomainError("nearest_correlation: matrix must be square");
    Eigen::MatrixXd s = 0.5 * (a + a.transpose());
    for (Eigen::Index i = 0; i < p; ++i)
        if (!(s(i, i) > 0.0)) throw NumericError("nearest_correlation: non-positive diagonal");
    Eigen::VectorXd inv_sd = s.diagonal().array().sqrt().inverse();
    s = inv_sd.asDiagonal() * s * inv_sd.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
    if (es.eigenvalues().minCoeff() < floor) {
        Eigen::VectorXd lam = es.eigenvalues().cwiseMax(floor);
        s = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
        inv_sd = s.diagonal().array().sqrt().inverse();
        s = inv_sd.asDiagonal() * s * inv_sd.asDiagonal();
    }
    s = 0.5 * (s + s.transpose());
    s.diagonal().setOnes();
    return s;
}

/// Validate a correlation matrix: square, symmetric, unit diagonal, PD.
inline void check_correlation(const Eigen::MatrixXd& psi, double tol = 1e-10) {
    const Eigen::Index p = psi.rows();
    if (psi.cols() != p || p == 0) throw DomainError("correlation matrix must be square and non-empty");
    for (Eigen::Index i = 0; i < p; ++i) {
        if (std::abs(psi(i, i) - 1.0) > tol) throw DomainError("correlation matrix must have unit diagonal");
        for (Eigen::Index j = 0; j < i; ++j)
            if (std::abs(psi(i, j) - psi(j, i)) > tol) throw DomainError("correlation matrix must be symmetric");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(psi);
    if (llt.info() != Eigen::Success) throw DomainError("correlation matrix must be positive definite");
}

}  // namespace malrisk

#pragma once

// Small dense optimizers: Nelder-Mead, BFGS with Armijo backtracking, and an
// augmented-Lagrangian wrapper for equality constraints. All minimize; an
// objective may return +inf to mark an infeasible point.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace malrisk::optim {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Result {
    Eigen::VectorXd x;
    double f = kInf;
    int evaluations = 0;
    int iterations = 0;
    bool converged = false;
};

struct NelderMeadOptions {
    int max_evaluations = 400;
    double f_tol = 1e-10;        // stop when simplex f-spread falls below this
    double x_tol = 1e-9;         // and simplex diameter below this
    double relative_step = 0.05;
    double absolute_step = 0.0025;
};

template <class F>
Result nelder_mead(F&& f, const Eigen::VectorXd& x0, const NelderMeadOptions& opt = {}) {
    const Eigen::Index n = x0.size();
    Result r;
    std::vector<Eigen::VectorXd> pts(n + 1, x0);
    std::vector<double> fv(n + 1);
    auto eval = [&](const Eigen::VectorXd& x) {
        ++r.evaluations;
        const double v = f(x);
        return std::isnan(v) ? kInf : v;
    };
    fv[0] = eval(x0);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double h = std::max(opt.relative_step * std::abs(x0[i]), opt.absolute_step);
        pts[i + 1][i] += h;
        fv[i + 1] = eval(pts[i + 1]);
        if (!std::isfinite(fv[i + 1])) {  // try the other side
            pts[i + 1][i] = x0[i] - h;
            fv[i + 1] = eval(pts[i + 1]);
        }
    }
    std::vector<int> idx(n + 1);
    while (r.evaluations < opt.max_evaluations) {
        ++r.iterations;
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](int a, int b) { return fv[a] < fv[b]; });
        const int best = idx[0], worst = idx[n], second = idx[n - 1];
        double diam = 0.0;
        for (Eigen::Index i = 1; i <= n; ++i) diam = std::max(diam, (pts[idx[i]] - pts[best]).cwiseAbs().maxCoeff());
        if (std::isfinite(fv[worst]) && fv[worst] - fv[best] <= opt.f_tol * (1.0 + std::abs(fv[best])) &&
            diam <= opt.x_tol * (1.0 + pts[best].cwiseAbs().maxCoeff())) {
            r.converged = true;
            break;
        }
        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
        for (Eigen::Index i = 0; i < n; ++i) centroid += pts[idx[i]];
        centroid /= static_cast<double>(n);
        const Eigen::VectorXd xr = centroid + (centroid - pts[worst]);
        const double fr = eval(xr);
        if (fr < fv[best]) {
            const Eigen::VectorXd xe = centroid + 2.0 * (centroid - pts[worst]);
            const double fe = eval(xe);
            if (fe < fr) {
                pts[worst] = xe;
                fv[worst] = fe;
            } else {
                pts[worst] = xr;
                fv[worst] = fr;
            }
            continue;
        }
        if (fr < fv[second]) {
            pts[worst] = xr;
            fv[worst] = fr;
            continue;
        }
        const bool outside = fr < fv[worst];
        const Eigen::VectorXd xc = outside ? Eigen::VectorXd(centroid + 0.5 * (xr - centroid))
                                           : Eigen::VectorXd(centroid + 0.5 * (pts[worst] - centroid));
        const double fc = eval(xc);
        if (fc < std::min(fr, fv[worst])) {
            pts[worst] = xc;
            fv[worst] = fc;
            continue;
        }
        for (Eigen::Index i = 1; i <= n; ++i) {  // shrink toward best
            const int k = idx[i];
            pts[k] = pts[best] + 0.5 * (pts[k] - pts[best]);
            fv[k] = eval(pts[k]);
        }
    }
    const auto it = std::min_element(fv.begin(), fv.end());
    r.x = pts[static_cast<std::size_t>(it - fv.begin())];
    r.f = *it;
    return r;
}

/// Central differences with step 1e-6 (1 + |x_i|); falls back to one-sided
/// differences next to an infeasible region.
template <class F>
Eigen::VectorXd numeric_gradient(F&& f, const Eigen::VectorXd& x, double fx, int* evals = nullptr) {
    const Eigen::Index n = x.size();
    Eigen::VectorXd g(n);
    Eigen::VectorXd xp = x;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double h = 1e-6 * (1.0 + std::abs(x[i]));
        xp[i] = x[i] + h;
        const double fp = f(xp);
        xp[i] = x[i] - h;
        const double fm = f(xp);
        xp[i] = x[i];
        if (evals) *evals += 2;
        if (std::isfinite(fp) && std::isfinite(fm))
            g[i] = (fp - fm) / (2.0 * h);
        else if (std::isfinite(fp))
            g[i] = (fp - fx) / h;
        else if (std::isfinite(fm))
            g[i] = (fx - fm) / h;
        else
            g[i] = 0.0;
    }
    return g;
}

struct BfgsOptions {
    int max_iterations = 100;
    double g_tol = 1e-7;   // infinity norm of the gradient
    double f_tol = 1e-13;  // relative decrease per iteration
};

/// BFGS on the inverse Hessian. `grad(x, fx)` returns the gradient.
template <class F, class G>
Result bfgs(F&& f, G&& grad, const Eigen::VectorXd& x0, const BfgsOptions& opt = {}) {
    const Eigen::Index n = x0.size();
    Result r;
    r.x = x0;
    r.f = f(x0);
    ++r.evaluations;
    if (!std::isfinite(r.f)) return r;
    Eigen::VectorXd g = grad(r.x, r.f);
    Eigen::MatrixXd h = Eigen::MatrixXd::Identity(n, n);
    bool scaled = false;
    for (int it = 0; it < opt.max_iterations; ++it) {
        r.iterations = it + 1;
        if (g.cwiseAbs().maxCoeff() <= opt.g_tol) {
            r.converged = true;
            break;
        }
        Eigen::VectorXd d = -h * g;
        double slope = g.dot(d);
        if (!(slope < 0.0)) {  // lost descent: reset
            h.setIdentity();
            d = -g;
            slope = -g.squaredNorm();
        }
        double step = 1.0;
        Eigen::VectorXd xn;
        double fn = kInf;
        bool found = false;
        for (int ls = 0; ls < 50; ++ls) {
            xn = r.x + step * d;
            fn = f(xn);
            ++r.evaluations;
            if (std::isfinite(fn) && fn <= r.f + 1e-4 * step * slope) {
                found = true;
                break;
            }
            step *= 0.5;
        }
        if (!found) break;
        const Eigen::VectorXd gn = grad(xn, fn);
        const Eigen::VectorXd s = xn - r.x;
        const Eigen::VectorXd y = gn - g;
        const double fprev = r.f;
        r.x = xn;
        r.f = fn;
        g = gn;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            if (!scaled) {
                h *= sy / y.squaredNorm();
                scaled = true;
            }
            const double rho = 1.0 / sy;
            const Eigen::VectorXd hy = h * y;
            h += (rho * rho * y.dot(hy) + rho) * (s * s.transpose()) - rho * (hy * s.transpose() + s * hy.transpose());
        }
        if (fprev - fn <= opt.f_tol * (1.0 + std::abs(fn))) {
            r.converged = true;
            break;
        }
    }
    return r;
}

template <class F>
Result bfgs_numeric(F&& f, const Eigen::VectorXd& x0, const BfgsOptions& opt = {}) {
    int extra = 0;
    auto grad = [&](const Eigen::VectorXd& x, double fx) { return numeric_gradient(f, x, fx, &extra); };
    Result r = bfgs(f, grad, x0, opt);
    r.evaluations += extra;
    return r;
}

struct AugLagOptions {
    int max_outer = 20;
    double penalty0 = 10.0;
    double penalty_growth = 10.0;
    double constraint_tol = 1e-10;
    BfgsOptions inner{200, 1e-10, 1e-15};
};

struct AugLagResult {
    Result inner;
    Eigen::VectorXd multipliers;
    double max_violation = kInf;
    int outer_iterations = 0;
};

/// Minimize f subject to c(x) = 0. `f(x, grad*)` fills the gradient when the
/// pointer is non-null; `c(x, jac*)` likewise returns constraint values and
/// fills the m x n Jacobian.
template <class F, class C>
AugLagResult augmented_lagrangian(F&& f, C&& c, const Eigen::VectorXd& x0, Eigen::Index m,
                                  const AugLagOptions& opt = {}) {
    AugLagResult out;
    Eigen::VectorXd lambda = Eigen::VectorXd::Zero(m);
    double rho = opt.penalty0;
    Eigen::VectorXd x = x0;
    double prev_violation = kInf;
    for (int k = 0; k < opt.max_outer; ++k) {
        out.outer_iterations = k + 1;
        auto lag = [&](const Eigen::VectorXd& z) {
            const Eigen::VectorXd cv = c(z, nullptr);
            return f(z, nullptr) + lambda.dot(cv) + 0.5 * rho * cv.squaredNorm();
        };
        auto lag_grad = [&](const Eigen::VectorXd& z, double) {
            Eigen::VectorXd g(z.size());
            Eigen::MatrixXd jac(m, z.size());
            f(z, &g);
            const Eigen::VectorXd cv = c(z, &jac);
            return Eigen::VectorXd(g + jac.transpose() * (lambda + rho * cv));
        };
        out.inner = bfgs(lag, lag_grad, x, opt.inner);
        x = out.inner.x;
        const Eigen::VectorXd cv = c(x, nullptr);
        const double viol = cv.cwiseAbs().maxCoeff();
        out.max_violation = viol;
        if (viol <= opt.constraint_tol) break;
        lambda += rho * cv;
        if (viol > 0.25 * prev_violation) rho *= opt.penalty_growth;
        prev_violation = viol;
    }
    out.multipliers = lambda;
    out.inner.x = x;
    out.inner.f = f(x, nullptr);
    return out;
}

}  // namespace malrisk::optim

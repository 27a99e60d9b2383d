#pragma once

// Derivative-free minimization (Nelder-Mead) with restarts, plus the
// linearized-covariance helper used by the fitters.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

namespace eitcool::optimize {

using Objective = std::function<double(const Eigen::VectorXd&)>;

struct SimplexOptions {
    int max_evaluations = 20000;
    double f_tolerance = 1e-15;  // spread of simplex values, relative
    double x_tolerance = 1e-12;  // simplex diameter, relative
    int restarts = 4;            // restarts from the incumbent after convergence
};

struct SimplexResult {
    Eigen::VectorXd x;
    double value = std::numeric_limits<double>::infinity();
    bool converged = false;
    int evaluations = 0;
};

namespace detail {

inline SimplexResult nelder_mead_once(const Objective& f, const Eigen::VectorXd& x0,
                                      const Eigen::VectorXd& step, const SimplexOptions& opt,
                                      int budget) {
    const auto n = x0.size();
    std::vector<Eigen::VectorXd> pts(n + 1, x0);
    std::vector<double> vals(n + 1);
    for (Eigen::Index i = 0; i < n; ++i) pts[i + 1][i] += step[i];
    int evals = 0;
    auto eval = [&](const Eigen::VectorXd& x) {
        ++evals;
        const double v = f(x);
        return std::isfinite(v) ? v : std::numeric_limits<double>::max();
    };
    for (Eigen::Index i = 0; i <= n; ++i) vals[i] = eval(pts[i]);

    std::vector<size_t> order(n + 1);
    bool converged = false;
    while (evals < budget) {
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return vals[a] < vals[b]; });
        const size_t best = order.front(), worst = order.back(), second = order[n - 1];

        double diameter = 0.0;
        for (Eigen::Index i = 0; i <= n; ++i)
            diameter = std::max(diameter, (pts[i] - pts[best]).cwiseAbs().maxCoeff());
        const double scale = std::max(1.0, pts[best].cwiseAbs().maxCoeff());
        const double spread = std::abs(vals[worst] - vals[best]);
        if (diameter <= opt.x_tolerance * scale &&
            spread <= opt.f_tolerance * std::max(std::abs(vals[best]), 1e-300)) {
            converged = true;
            break;
        }
        if (diameter <= 1e-3 * opt.x_tolerance * scale) {  // collapsed simplex
            converged = true;
            break;
        }

        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
        for (Eigen::Index i = 0; i <= n; ++i)
            if (static_cast<size_t>(i) != worst) centroid += pts[i];
        centroid /= static_cast<double>(n);

        const Eigen::VectorXd xr = centroid + (centroid - pts[worst]);
        const double fr = eval(xr);
        if (fr < vals[best]) {
            const Eigen::VectorXd xe = centroid + 2.0 * (centroid - pts[worst]);
            const double fe = eval(xe);
            if (fe < fr) {
                pts[worst] = xe;
                vals[worst] = fe;
            } else {
                pts[worst] = xr;
                vals[worst] = fr;
            }
        } else if (fr < vals[second]) {
            pts[worst] = xr;
            vals[worst] = fr;
        } else {
            const bool outside = fr < vals[worst];
            const Eigen::VectorXd xc = outside ? Eigen::VectorXd(centroid + 0.5 * (xr - centroid))
                                               : Eigen::VectorXd(centroid + 0.5 * (pts[worst] - centroid));
            const double fc = eval(xc);
            if (fc < (outside ? fr : vals[worst])) {
                pts[worst] = xc;
                vals[worst] = fc;
            } else {
                for (Eigen::Index i = 0; i <= n; ++i) {
                    if (static_cast<size_t>(i) == best) continue;
                    pts[i] = pts[best] + 0.5 * (pts[i] - pts[best]);
                    vals[i] = eval(pts[i]);
                }
            }
        }
    }
    const auto it = std::min_element(vals.begin(), vals.end());
    SimplexResult r;
    r.x = pts[it - vals.begin()];
    r.value = *it;
    r.converged = converged;
    r.evaluations = evals;
    return r;
}

}  // namespace detail

/// Nelder-Mead from `x0`, restarted from the incumbent with a fresh simplex
/// until a restart no longer improves the value.
inline SimplexResult nelder_mead(const Objective& f, const Eigen::VectorXd& x0,
                                 const Eigen::VectorXd& step, const SimplexOptions& opt = {}) {
    SimplexResult best = detail::nelder_mead_once(f, x0, step, opt, opt.max_evaluations);
    int used = best.evaluations;
    Eigen::VectorXd s = step;
    for (int r = 0; r < opt.restarts && used < opt.max_evaluations; ++r) {
        s *= 0.1;
        auto next = detail::nelder_mead_once(f, best.x, s, opt, opt.max_evaluations - used);
        used += next.evaluations;
        const bool improved = next.value < best.value;
        if (improved) best = next;
        best.converged = next.converged;
        if (!improved) break;
    }
    best.evaluations = used;
    return best;
}

/// Runs `nelder_mead` from every start and keeps the best result.
inline SimplexResult multi_start(const Objective& f, const std::vector<Eigen::VectorXd>& starts,
                                 const Eigen::VectorXd& step, const SimplexOptions& opt = {}) {
    SimplexResult best;
    int total = 0;
    for (const auto& x0 : starts) {
        auto r = nelder_mead(f, x0, step, opt);
        total += r.evaluations;
        if (r.value < best.value) best = r;
    }
    best.evaluations = total;
    return best;
}

/// Central-difference Jacobian of a residual vector function.
inline Eigen::MatrixXd numerical_jacobian(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& residuals,
    const Eigen::VectorXd& x) {
    const Eigen::VectorXd r0 = residuals(x);
    Eigen::MatrixXd j(r0.size(), x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        const double h = 1e-6 * std::max(1e-3, std::abs(x[k]));
        Eigen::VectorXd xp = x, xm = x;
        xp[k] += h;
        xm[k] -= h;
        j.col(k) = (residuals(xp) - residuals(xm)) / (2.0 * h);
    }
    return j;
}

/// Levenberg-Marquardt refinement of a least-squares minimum located by the
/// simplex. Returns the polished point, or `x0` if no step improves it.
inline Eigen::VectorXd levenberg_marquardt(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& residuals, Eigen::VectorXd x,
    int iterations = 50) {
    Eigen::VectorXd r = residuals(x);
    double cost = r.squaredNorm();
    double lambda = 1e-3;
    for (int it = 0; it < iterations && cost > 0.0; ++it) {
        const Eigen::MatrixXd j = numerical_jacobian(residuals, x);
        const Eigen::MatrixXd jtj = j.transpose() * j;
        const Eigen::VectorXd g = j.transpose() * r;
        bool stepped = false;
        for (int tries = 0; tries < 12; ++tries) {
            Eigen::MatrixXd a = jtj;
            a.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-300);
            const Eigen::VectorXd dx = a.ldlt().solve(-g);
            if (!dx.allFinite()) break;
            const Eigen::VectorXd xn = x + dx;
            const Eigen::VectorXd rn = residuals(xn);
            const double cn = rn.squaredNorm();
            if (std::isfinite(cn) && cn < cost) {
                const bool tiny = dx.norm() <= 1e-14 * (1.0 + x.norm());
                x = xn;
                r = rn;
                const double gain = cost - cn;
                cost = cn;
                lambda = std::max(lambda * 0.3, 1e-12);
                stepped = true;
                if (tiny || gain <= 1e-15 * cost) return x;
                break;
            }
            lambda *= 10.0;
        }
        if (!stepped) break;
    }
    return x;
}

/// 1-sigma parameter uncertainties from the linearized least-squares
/// covariance s^2 (J^T J)^-1, s^2 = RSS / (m - p).
inline Eigen::VectorXd linearized_sigma(const Eigen::MatrixXd& jac, double rss) {
    const auto m = jac.rows(), p = jac.cols();
    Eigen::VectorXd sigma = Eigen::VectorXd::Zero(p);
    if (m <= p) return sigma;
    const double s2 = rss / static_cast<double>(m - p);
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(jtj);
    const Eigen::MatrixXd cov = cod.pseudoInverse() * s2;
    for (Eigen::Index k = 0; k < p; ++k) sigma[k] = std::sqrt(std::max(0.0, cov(k, k)));
    return sigma;
}

}  // namespace eitcool::optimize

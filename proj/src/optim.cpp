#include "cccfid/optim.hpp"

#include <cmath>
#include <limits>

namespace cccfid {

using Eigen::MatrixXd;
using Eigen::VectorXd;

VectorXd finite_difference_gradient(const ObjectiveFn& f, const VectorXd& x,
                                    double rel_step) {
    // eps^(1/3) balances truncation and roundoff for central differences
    const double base =
        rel_step > 0.0 ? rel_step
                       : std::cbrt(std::numeric_limits<double>::epsilon());
    VectorXd g(x.size());
    VectorXd xp = x;
    for (int i = 0; i < x.size(); ++i) {
        const double h = base * (1.0 + std::fabs(x[i]));
        const double xi = x[i];
        xp[i] = xi + h;
        const double fp = f(xp);
        xp[i] = xi - h;
        const double fm = f(xp);
        xp[i] = xi;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

namespace {

// Armijo backtracking; returns accepted step (0 if none found).
double backtrack(const ObjectiveFn& f, const VectorXd& x, double fx,
                 const VectorXd& g, const VectorXd& dir, double min_step,
                 double& f_new, VectorXd& x_new) {
    const double slope = g.dot(dir);
    const double c1 = 1e-4;
    double step = 1.0;
    while (step > min_step) {
        x_new = x + step * dir;
        f_new = f(x_new);
        if (std::isfinite(f_new) && f_new <= fx + c1 * step * slope) return step;
        step *= 0.5;
    }
    return 0.0;
}

} // namespace

OptimResult bfgs_minimize(const ObjectiveFn& f, const GradientFn& grad,
                          const VectorXd& x0, const BfgsOptions& opts) {
    const auto gradient = [&](const VectorXd& x) {
        return grad ? grad(x) : finite_difference_gradient(f, x);
    };

    OptimResult res;
    res.x = x0;
    res.value = f(res.x);
    VectorXd g = gradient(res.x);
    const int n = static_cast<int>(x0.size());
    MatrixXd h_inv = MatrixXd::Identity(n, n);

    for (int iter = 0; iter < opts.max_iterations; ++iter) {
        res.grad_norm = g.lpNorm<Eigen::Infinity>();
        res.iterations = iter;
        if (res.grad_norm < opts.grad_tol) {
            res.converged = true;
            return res;
        }

        VectorXd dir = -(h_inv * g);
        if (dir.dot(g) >= 0.0) {
            h_inv.setIdentity();
            dir = -g;
        }

        double f_new = 0.0;
        VectorXd x_new;
        const double step = backtrack(f, res.x, res.value, g, dir,
                                      opts.min_step, f_new, x_new);
        if (step == 0.0) {
            // no usable descent along the quasi-Newton direction; retry on -g
            dir = -g;
            const double step2 = backtrack(f, res.x, res.value, g, dir,
                                           opts.min_step, f_new, x_new);
            if (step2 == 0.0) {
                res.converged = res.grad_norm < 1e-4;
                return res;
            }
        }

        VectorXd g_new = gradient(x_new);
        const VectorXd s = x_new - res.x;
        const VectorXd y = g_new - g;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            const double rho = 1.0 / sy;
            const MatrixXd ident = MatrixXd::Identity(n, n);
            const MatrixXd v = ident - rho * s * y.transpose();
            h_inv = v * h_inv * v.transpose() + rho * s * s.transpose();
        }
        res.x = x_new;
        res.value = f_new;
        g = std::move(g_new);
    }
    res.grad_norm = g.lpNorm<Eigen::Infinity>();
    res.iterations = opts.max_iterations;
    res.converged = res.grad_norm < opts.grad_tol;
    return res;
}

OptimResult newton_cg_minimize(const ObjectiveFn& f, const GradientFn& grad,
                               const VectorXd& x0, const NewtonCgOptions& opts) {
    const auto gradient = [&](const VectorXd& x) {
        return grad ? grad(x) : finite_difference_gradient(f, x);
    };

    OptimResult res;
    res.x = x0;
    res.value = f(res.x);
    VectorXd g = gradient(res.x);
    const int n = static_cast<int>(x0.size());

    const auto hess_vec = [&](const VectorXd& x, const VectorXd& v) {
        const double vn = v.norm();
        if (vn == 0.0) return VectorXd(VectorXd::Zero(n));
        const double h =
            std::sqrt(std::numeric_limits<double>::epsilon()) * (1.0 + x.norm()) / vn;
        return VectorXd(((gradient(x + h * v) - gradient(x - h * v)) / (2.0 * h)));
    };

    for (int iter = 0; iter < opts.max_iterations; ++iter) {
        res.grad_norm = g.lpNorm<Eigen::Infinity>();
        res.iterations = iter;
        if (res.grad_norm < opts.grad_tol) {
            res.converged = true;
            return res;
        }

        // CG on H p = -g with the superlinear forcing term
        const double gnorm = g.norm();
        const double forcing = std::min(0.5, std::sqrt(gnorm)) * gnorm;
        VectorXd p = VectorXd::Zero(n);
        VectorXd r = -g;
        VectorXd d = r;
        double r2 = r.squaredNorm();
        for (int k = 0; k < opts.cg_max_iterations; ++k) {
            if (std::sqrt(r2) <= forcing) break;
            const VectorXd hd = hess_vec(res.x, d);
            const double curv = d.dot(hd);
            if (curv <= 1e-14 * d.squaredNorm()) {
                if (k == 0) p = r; // fall back to steepest descent
                break;
            }
            const double alpha = r2 / curv;
            p += alpha * d;
            r -= alpha * hd;
            const double r2_new = r.squaredNorm();
            d = r + (r2_new / r2) * d;
            r2 = r2_new;
        }
        if (p.squaredNorm() == 0.0 || p.dot(g) >= 0.0) p = -g;

        double f_new = 0.0;
        VectorXd x_new;
        double step = backtrack(f, res.x, res.value, g, p, opts.min_step, f_new, x_new);
        if (step == 0.0 && p != -g) {
            p = -g;
            step = backtrack(f, res.x, res.value, g, p, opts.min_step, f_new, x_new);
        }
        if (step == 0.0) {
            res.converged = res.grad_norm < 1e-4;
            return res;
        }
        res.x = x_new;
        res.value = f_new;
        g = gradient(res.x);
    }
    res.grad_norm = g.lpNorm<Eigen::Infinity>();
    res.iterations = opts.max_iterations;
    res.converged = res.grad_norm < opts.grad_tol;
    return res;
}

} // namespace cccfid

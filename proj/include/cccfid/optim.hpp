#pragma once

#include <Eigen/Dense>

#include <functional>

namespace cccfid {

using ObjectiveFn = std::function<double(const Eigen::VectorXd&)>;
using GradientFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct OptimResult {
    Eigen::VectorXd x;
    double value = 0.0;
    double grad_norm = 0.0;
    int iterations = 0;
    bool converged = false;
};

struct BfgsOptions {
    double grad_tol = 1e-6;    // infinity norm
    int max_iterations = 500;
    double min_step = 1e-14;
};

// Quasi-Newton minimization with Armijo backtracking. `grad` may be empty, in
// which case a central finite-difference gradient of `f` is used.
OptimResult bfgs_minimize(const ObjectiveFn& f, const GradientFn& grad,
                          const Eigen::VectorXd& x0, const BfgsOptions& opts = {});

struct NewtonCgOptions {
    double grad_tol = 1e-7;    // infinity norm
    int max_iterations = 200;
    int cg_max_iterations = 50;
    double min_step = 1e-14;
};

// Inexact Newton minimization: the Newton system is solved approximately by
// conjugate gradients using Hessian-vector products formed by central finite
// differences on the gradient, followed by a backtracking line search.
// Accepted steps never increase the objective.
OptimResult newton_cg_minimize(const ObjectiveFn& f, const GradientFn& grad,
                               const Eigen::VectorXd& x0,
                               const NewtonCgOptions& opts = {});

// Central-difference gradient of f; independent of any analytic path.
Eigen::VectorXd finite_difference_gradient(const ObjectiveFn& f,
                                           const Eigen::VectorXd& x,
                                           double rel_step = 0.0);

} // namespace cccfid

#pragma once

#include "cccfid/model_core.hpp"
#include "cccfid/types.hpp"

namespace cccfid {

struct LinearizationTrace {
    int outer_iterations = 0;
    int reml_iterations = 0;
    double convergence_gap = 0.0;
    double reml_grad_norm = 0.0;
    bool converged = false;
};

struct FitOptions {
    double reml_grad_tol = 1e-6;
    int reml_max_iterations = 500;
    double pirls_tol = 1e-6;
    int pirls_max_iterations = 100;
    int max_step_halvings = 30;
};

// Output of the (linearized) GLMM fit. `estimates.dispersion` is the REML
// error variance (Gaussian), 1 (Poisson) or the Pearson shape tau (Gamma).
// `dispersion_pivot_estimate` is the residual-SS estimator the chi-square
// dispersion pivot is built on.
struct FitResult {
    ModelSpec spec;
    ParameterSet estimates;
    VectorXd beta_stacked;     // dL, rater blocks
    MatrixXd pseudo_obs;       // N x KTL
    MatrixXd fitted_means;     // N x KTL, conditional means mu_hat
    VectorXd unit_error_diag;  // KTL, unit-dispersion error diagonal
    double dispersion_pivot_estimate = 0.0;
    double dispersion_pivot_se = 0.0; // Gamma only: SE of tau_hat
    int residual_df = 0;
    LinearizationTrace trace;

    // plug-in error diagonal: dispersion x unit base
    VectorXd error_diag() const;
};

// error-diagonal scale implied by a dispersion value:
// sigma^2 (Gaussian), 1 (Poisson), 1/tau (Gamma)
double dispersion_to_error_scale(Family family, double dispersion);

// Conditional-mean predictors of the random effects given Y* (BLUP form),
// stacked per subject as (mu_alpha_0, ..., mu_alpha_S [, mu_gamma]).
struct PredictorSet {
    std::vector<MatrixXd> mu_alpha; // S+1 matrices, each N x L
    MatrixXd mu_gamma;              // N x L (empty when gamma excluded)
    MatrixXd stacked;               // N x Q
};

// y* = eta_hat + G'(mu_hat) (y - mu_hat), per family:
// identity -> y; log -> log mu + (y-mu)/mu; inverse -> 1/mu - (y-mu)/mu^2
MatrixXd pseudo_observations(const RatingDataset& data, const ModelSpec& spec,
                             const MatrixXd& fitted_means,
                             const MatrixXd& fitted_eta);

// REML fit of the Gaussian linear mixed model (y = y*).
FitResult fit_gaussian_lmm(const RatingDataset& data, const ModelSpec& spec,
                           const FitOptions& opts = {});

// Iterative linearization for Poisson / Gamma: alternate pseudo-observations,
// a weighted REML fit, and conditional-mode updates until the linear
// predictor stabilizes.
FitResult fit_glmm_linearized(const RatingDataset& data, const ModelSpec& spec,
                              const FitOptions& opts = {});

// family dispatch
FitResult fit_model(const RatingDataset& data, const ModelSpec& spec,
                    const FitOptions& opts = {});

PredictorSet predict_conditional_means(const FitResult& fit);

// residual-SS dispersion estimate (Gaussian), 1 (Poisson), Pearson tau (Gamma);
// throws InsufficientDF when the residual degrees of freedom are <= 0
double estimate_dispersion(const FitResult& fit, const ModelSpec& spec);

// NTKL - dL - (S+1)NL - [NTL when gamma included]
int residual_df(const ModelSpec& spec, int n_subjects);

// ---------------- internal REML core (exposed for tests) ----------------

struct RemlOptions {
    double grad_tol = 1e-6;
    int max_iterations = 500;
};

struct RemlResult {
    VectorXd components;  // log-Cholesky coordinates
    double dispersion = 1.0;
    VectorXd beta;        // dL GLS estimate
    double objective = 0.0;
    int iterations = 0;
    double grad_norm = 0.0;
    bool converged = false;
};

// Restricted-likelihood fit of the balanced LMM for stacked subject vectors
// y (N x KTL) with error covariance c * diag(d_base); c is profiled freely
// for the Gaussian family and held at `fixed_dispersion` otherwise.
RemlResult reml_fit(const ModelSpec& spec, const MatrixXd& y, const VectorXd& d_base,
                    bool free_dispersion, double fixed_dispersion,
                    const VectorXd& start_components, double start_dispersion,
                    const RemlOptions& opts = {});

// -2 restricted log-likelihood (constants dropped) and its analytic gradient
// at theta = [components, log c when free]; used by reml_fit and the
// finite-difference gradient checks.
double reml_objective(const ModelSpec& spec, const MatrixXd& y, const VectorXd& d_base,
                      bool free_dispersion, double fixed_dispersion,
                      const VectorXd& theta, VectorXd* grad = nullptr);

} // namespace cccfid

#pragma once

#include "cccfid/estimation.hpp"
#include "cccfid/model_core.hpp"
#include "cccfid/optim.hpp"
#include "cccfid/types.hpp"

#include <random>

namespace cccfid {

// ---------------- Wishart fiducial quantity ----------------

struct WishartObservation {
    MatrixXd scatter;     // p x p, positive definite
    int df = 0;           // n >= p
    MatrixXd chol_factor; // lower triangular t_s with positive diagonal
};

// throws DegenerateScatter when the scatter fails Cholesky or df < p
WishartObservation make_wishart_observation(const MatrixXd& scatter, int df);

// lower-triangular pivot matrix V: V_ii^2 ~ chi^2_{n-i+1}, V_ij ~ N(0,1), i > j
MatrixXd sample_wishart_pivot(int p, int df, std::mt19937_64& rng);

// Sigma_tilde = t_s (V'V)^{-1} t_s'
MatrixXd wishart_fiducial_from_pivot(const WishartObservation& obs, const MatrixXd& v);

// the pivot value at which the fiducial quantity reproduces sigma_plug exactly
MatrixXd observed_wishart_pivot(const WishartObservation& obs,
                                const MatrixXd& sigma_plug);

MatrixXd sample_wishart_fiducial(const WishartObservation& obs, std::mt19937_64& rng);

// ---------------- predictor-covariance pivots ----------------

enum class DrawMode { joint, proxy };

struct PredictorCovTarget {
    MatrixXd delta_tilde; // Q x Q; block-diagonal draw in proxy mode
};

// Scatter statistics of the stacked predictors (known zero mean, df = N):
// the full Q x Q scatter plus the per-block marginals used by the proxy.
struct PredictorScatter {
    WishartObservation joint;
    std::vector<WishartObservation> blocks; // one per alpha order [, gamma]
    int n_subjects = 0;
};

// throws RankDeficientScatter when N <= Q or the scatter is singular
PredictorScatter build_predictor_scatter(const PredictorSet& predictors,
                                         const ModelSpec& spec);

PredictorCovTarget draw_predictor_cov(const PredictorScatter& scatter, DrawMode mode,
                                      std::mt19937_64& rng);
// substitution variant: pivots at their observed values reproduce delta_plug
PredictorCovTarget observed_predictor_cov(const PredictorScatter& scatter,
                                          const MatrixXd& delta_plug, DrawMode mode);

// one-call form of the spec operation
PredictorCovTarget sample_predictor_cov_fiducial(const PredictorSet& predictors,
                                                 const ModelSpec& spec,
                                                 std::mt19937_64& rng,
                                                 DrawMode mode = DrawMode::joint);

// ---------------- variance-component recovery ----------------

struct SolverDiagnostics {
    double objective = 0.0;
    int iterations = 0;
    bool converged = false;
};

struct RecoveredComponents {
    std::vector<MatrixXd> sigma_alpha;
    MatrixXd sigma_gamma;
    VectorXd coords; // log-Cholesky coordinates of the solution
    SolverDiagnostics diag;
};

// Least-squares objective || mask o (delta_tilde - M(v)) ||_F^2 over the
// log-Cholesky coordinates; mask keeps all blocks (joint) or only the
// per-effect marginal blocks (proxy).
double recovery_objective(const PredictorCovKernel& kernel, const MatrixXd& target,
                          const MatrixXd& mask, const VectorXd& v, double error_scale);

MatrixXd recovery_mask(const ModelSpec& spec, DrawMode mode);

// Newton-CG minimization of the recovery objective; finite-difference
// gradient, Hessian-vector products by central differences on the gradient.
RecoveredComponents recover_variance_components(
    const PredictorCovTarget& target, const ModelSpec& spec, double dispersion_tilde,
    const FitResult& fit, DrawMode mode = DrawMode::joint,
    const NewtonCgOptions& opts = {});

// hot-loop variant with a shared kernel and explicit warm start
RecoveredComponents recover_variance_components(
    const PredictorCovTarget& target, const ModelSpec& spec, double dispersion_tilde,
    const PredictorCovKernel& kernel, const VectorXd& warm_start, DrawMode mode,
    const NewtonCgOptions& opts = {});

// ---------------- fixed-effect and dispersion pivots ----------------

// beta_tilde = beta_hat_o - (X' Sigma_C^{-1} X)^{-1/2} Z with Sigma_C built
// from the supplied pivot parameter values
VectorXd beta_fiducial_from_pivot(const FitResult& fit, const ParameterSet& pivots,
                                  const VectorXd& z);
VectorXd sample_beta_fiducial(const FitResult& fit, const ParameterSet& pivots,
                              std::mt19937_64& rng);

// Gaussian: m sigma2_o / U with U ~ chi^2_m; Poisson: 1; Gamma: normal pivot
// around tau_hat truncated at zero. The *_from_pivot forms take the raw
// random (U, or the standard normal for Gamma) for substitution checks.
double dispersion_fiducial_from_pivot(const FitResult& fit, double pivot_random);
double sample_dispersion_fiducial(const FitResult& fit, std::mt19937_64& rng);

// ---------------- joint draws ----------------

struct FiducialDraw {
    VectorXd beta_tilde;               // dL stacked
    std::vector<MatrixXd> sigma_alpha_tilde;
    MatrixXd sigma_gamma_tilde;
    double dispersion_tilde = 1.0;
    SolverDiagnostics solver;
    bool failed = false;
    int retries = 0;

    ParameterSet as_parameter_set(const ModelSpec& spec) const;
};

// Per-fit state for generating draws: predictor scatter, recovery kernel and
// warm start are computed once; draws are then cheap and independent given
// their rng substreams.
class FiducialSampler {
  public:
    FiducialSampler(const FitResult& fit, const PredictorSet& predictors,
                    DrawMode mode = DrawMode::joint, int max_retries = 3);

    FiducialDraw draw(std::mt19937_64& rng) const;
    // all pivot randoms at their observed values: reproduces the plug-in fit
    FiducialDraw draw_at_observed() const;

    const FitResult& fit() const { return fit_; }
    DrawMode mode() const { return mode_; }

  private:
    FitResult fit_;
    DrawMode mode_;
    int max_retries_;
    PredictorScatter scatter_;
    PredictorCovKernel kernel_;
    MatrixXd mask_;
    VectorXd warm_start_;
    NewtonCgOptions solver_opts_;

    FiducialDraw one_draw(std::mt19937_64& rng) const;
    FiducialDraw assemble(double dispersion, const PredictorCovTarget& target,
                          const VectorXd& z_beta) const;
};

// spec-level convenience: fit -> predictors -> one draw
FiducialDraw sample_joint_draw(const FitResult& fit, std::mt19937_64& rng,
                               DrawMode mode = DrawMode::joint);

} // namespace cccfid

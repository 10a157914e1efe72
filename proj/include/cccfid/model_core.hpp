#pragma once

#include "cccfid/types.hpp"

#include <random>

namespace cccfid {

// ---------------- basis ----------------

// Monomial time basis evaluated at [(1..T)' (x) 1_K]: z_s[(j-1)K+k] = j^s,
// so z_0 is the all-ones vector. Time-major, replicate-minor.
std::vector<VectorXd> build_basis(int n_times, int n_replicates, int spline_order);

// ---------------- marginal covariance of the pseudo-observations ----------------

struct MarginalCovariance {
    MatrixXd sigma_ystar;        // KTL x KTL
    VectorXd plug_in_error_diag; // KTL
    Eigen::LLT<MatrixXd> chol;   // factor of sigma_ystar
};

// Sigma_{Y*}: block (l,l') = sum_s sigma^s_{a,ll'} z_s z_s' + sigma_{g,ll'} I_T (x) J_K,
// plus the error diagonal on l = l'. Throws NotPositiveDefinite if the
// assembled matrix fails Cholesky.
MarginalCovariance build_marginal_covariance(const ModelSpec& spec,
                                             const ParameterSet& params,
                                             const VectorXd& error_diag);

// cov(alpha_{il}^s, Y_i^*): rater-l' segment equals sigma^s_{a,ll'} * z_s
VectorXd build_cross_cov_alpha(const ModelSpec& spec, const ParameterSet& params,
                               int order, int rater);

// cov(sum_j gamma_{ij,l}, Y_i^*): rater-l' segment equals sigma_{g,ll'} * 1_{KT}
VectorXd build_cross_cov_gamma(const ModelSpec& spec, const ParameterSet& params,
                               int rater);

// rows = raters; row l is build_cross_cov_alpha(spec, params, order, l)
MatrixXd cross_cov_matrix_alpha(const ModelSpec& spec, const ParameterSet& params,
                                int order);
MatrixXd cross_cov_matrix_gamma(const ModelSpec& spec, const ParameterSet& params);

// Model-implied covariance of the stacked predictors
// (mu_alpha_0, ..., mu_alpha_S [, mu_gamma]): blocks
// sigma^s_a Sigma_{Y*}^{-1} sigma^{s'}_a', etc. Dense reference path.
MatrixXd predictor_cov_model(const ModelSpec& spec, const ParameterSet& params,
                             const VectorXd& error_diag);

// ---------------- log-Cholesky packing of the variance components ----------------

int n_component_params(const ModelSpec& spec);

// covariance part of params -> unconstrained coordinates (per component:
// lower-triangular Cholesky columns with log diagonal)
VectorXd pack_log_cholesky(const ModelSpec& spec, const ParameterSet& params);

// inverse map; fills sigma_alpha / sigma_gamma of params
void unpack_log_cholesky(const ModelSpec& spec, const VectorXd& v,
                         ParameterSet& params);

// lower Cholesky factors per component in pack order (S+1 alpha [, gamma])
std::vector<MatrixXd> unpack_cholesky_factors(const ModelSpec& spec,
                                              const VectorXd& v);

// ---------------- fast evaluator for the predictor-covariance map ----------------

// Same map as predictor_cov_model but parametrized by log-Cholesky
// coordinates and a dispersion scale, with the error-direction projections
// precomputed once. Sigma_{Y*} is never formed: with loadings La and factor
// U(v), Sigma = La U U' La' + c D0, and Wᵗ Sigma^{-1} W reduces to small
// (q x q) solves via the Woodbury identity. This is the per-draw hot path of
// the variance-component recovery.
class PredictorCovKernel {
  public:
    PredictorCovKernel(const ModelSpec& spec, const VectorXd& unit_error_diag);

    // M(v) with error diagonal = dispersion * unit_error_diag
    MatrixXd evaluate(const VectorXd& v, double dispersion) const;

    int n_params() const { return n_params_; }
    int predictor_dim() const { return q_pred_; }

  private:
    ModelSpec spec_;
    int n_params_ = 0;
    int q_load_ = 0; // random-effect vector length (S+1)L + [T L]
    int q_pred_ = 0; // predictor dimension (S+1)L + [L]
    MatrixXd a0_;    // La' D0^{-1} La
    MatrixXd g0_;    // La' D0^{-1} W
    MatrixXd h0_;    // W'  D0^{-1} W
    void expand_factor(const std::vector<MatrixXd>& factors, MatrixXd& u) const;
    void block_sigma(const std::vector<MatrixXd>& factors, MatrixXd& s) const;
};

// ---------------- data generation from the model ----------------

// Linear predictors eta for n subjects, one row per subject (length KTL).
// With require_positive_eta, subjects with any eta <= 0 are redrawn (up to
// 100 times each) before DomainError; used by the Gamma inverse link.
MatrixXd simulate_linear_predictors(const ModelSpec& spec, const ParameterSet& params,
                                    int n_subjects, std::mt19937_64& rng,
                                    bool require_positive_eta = false,
                                    int* n_rejected = nullptr);

// Family-exact data: Gaussian adds N(0, sigma^2) errors, Poisson draws counts
// with mean exp(eta), Gamma draws shape tau with mean 1/eta.
RatingDataset simulate_from_model(const ModelSpec& spec, const ParameterSet& params,
                                  int n_subjects, std::mt19937_64& rng,
                                  int* n_rejected = nullptr);

// y grid (n x KTL, subject rows) -> RatingDataset with the spec's dims
RatingDataset dataset_from_matrix(const ModelSpec& spec, const MatrixXd& values);

// symmetric PSD square root via spectral decomposition (negative eigenvalues
// clipped at zero)
MatrixXd psd_sqrt(const MatrixXd& m);

// unit-dispersion error diagonal for the family: ones (Gaussian),
// 1/mu (Poisson), 1/mu^2 (Gamma), averaged over subjects cell-wise
VectorXd unit_error_diag_from_means(const ModelSpec& spec, const MatrixXd& fitted_means);

} // namespace cccfid

#include "cccfid/fiducial.hpp"

#include <cmath>

namespace cccfid {

// ==================== Wishart fiducial quantity ====================

WishartObservation make_wishart_observation(const MatrixXd& scatter, int df) {
    WishartObservation obs;
    obs.scatter = scatter;
    obs.df = df;
    if (df < scatter.rows())
        throw DegenerateScatter("Wishart degrees of freedom below dimension");
    Eigen::LLT<MatrixXd> llt(scatter);
    if (llt.info() != Eigen::Success)
        throw DegenerateScatter("scatter matrix failed Cholesky");
    obs.chol_factor = llt.matrixL();
    return obs;
}

MatrixXd sample_wishart_pivot(int p, int df, std::mt19937_64& rng) {
    MatrixXd v = MatrixXd::Zero(p, p);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int i = 0; i < p; ++i) {
        std::chi_squared_distribution<double> chi(df - i);
        v(i, i) = std::sqrt(chi(rng));
        for (int j = 0; j < i; ++j) v(i, j) = nd(rng);
    }
    return v;
}

MatrixXd wishart_fiducial_from_pivot(const WishartObservation& obs, const MatrixXd& v) {
    // t_s (V'V)^{-1} t_s' = W W' with W = t_s V^{-1}
    const MatrixXd w = v.transpose()
                           .triangularView<Eigen::Upper>()
                           .solve(obs.chol_factor.transpose())
                           .transpose();
    return w * w.transpose();
}

MatrixXd observed_wishart_pivot(const WishartObservation& obs,
                                const MatrixXd& sigma_plug) {
    Eigen::LLT<MatrixXd> llt(sigma_plug);
    if (llt.info() != Eigen::Success)
        throw NotPositiveDefinite("plug-in covariance failed Cholesky");
    const MatrixXd theta = llt.matrixL();
    return theta.triangularView<Eigen::Lower>().solve(obs.chol_factor);
}

MatrixXd sample_wishart_fiducial(const WishartObservation& obs, std::mt19937_64& rng) {
    return wishart_fiducial_from_pivot(
        obs, sample_wishart_pivot(static_cast<int>(obs.scatter.rows()), obs.df, rng));
}

// ==================== predictor-covariance pivots ====================

PredictorScatter build_predictor_scatter(const PredictorSet& predictors,
                                         const ModelSpec& spec) {
    const MatrixXd& m = predictors.stacked;
    const int n = static_cast<int>(m.rows());
    const int q = static_cast<int>(m.cols());
    if (n <= q)
        throw RankDeficientScatter("need more subjects than stacked predictor dims");
    PredictorScatter sc;
    sc.n_subjects = n;
    // known zero mean: scatter = sum_i m_i m_i', df = N
    const MatrixXd joint = m.transpose() * m;
    try {
        sc.joint = make_wishart_observation(joint, n);
    } catch (const DegenerateScatter&) {
        throw RankDeficientScatter("predictor scatter matrix is singular");
    }
    const int l = spec.dims.n_raters;
    const int n_blocks = q / l;
    for (int b = 0; b < n_blocks; ++b) {
        const MatrixXd mb = m.middleCols(b * l, l);
        sc.blocks.push_back(make_wishart_observation(mb.transpose() * mb, n));
    }
    return sc;
}

PredictorCovTarget draw_predictor_cov(const PredictorScatter& scatter, DrawMode mode,
                                      std::mt19937_64& rng) {
    PredictorCovTarget t;
    if (mode == DrawMode::joint) {
        t.delta_tilde = sample_wishart_fiducial(scatter.joint, rng);
        return t;
    }
    const int q = static_cast<int>(scatter.joint.scatter.rows());
    t.delta_tilde = MatrixXd::Zero(q, q);
    int pos = 0;
    for (const auto& b : scatter.blocks) {
        const int l = static_cast<int>(b.scatter.rows());
        t.delta_tilde.block(pos, pos, l, l) = sample_wishart_fiducial(b, rng);
        pos += l;
    }
    return t;
}

PredictorCovTarget observed_predictor_cov(const PredictorScatter& scatter,
                                          const MatrixXd& delta_plug, DrawMode mode) {
    PredictorCovTarget t;
    if (mode == DrawMode::joint) {
        const MatrixXd v = observed_wishart_pivot(scatter.joint, delta_plug);
        t.delta_tilde = wishart_fiducial_from_pivot(scatter.joint, v);
        return t;
    }
    const int q = static_cast<int>(scatter.joint.scatter.rows());
    t.delta_tilde = MatrixXd::Zero(q, q);
    int pos = 0;
    for (const auto& b : scatter.blocks) {
        const int l = static_cast<int>(b.scatter.rows());
        const MatrixXd plug = delta_plug.block(pos, pos, l, l);
        const MatrixXd v = observed_wishart_pivot(b, plug);
        t.delta_tilde.block(pos, pos, l, l) = wishart_fiducial_from_pivot(b, v);
        pos += l;
    }
    return t;
}

PredictorCovTarget sample_predictor_cov_fiducial(const PredictorSet& predictors,
                                                 const ModelSpec& spec,
                                                 std::mt19937_64& rng, DrawMode mode) {
    return draw_predictor_cov(build_predictor_scatter(predictors, spec), mode, rng);
}

// ==================== variance-component recovery ====================

MatrixXd recovery_mask(const ModelSpec& spec, DrawMode mode) {
    const int q = spec.predictor_dim();
    if (mode == DrawMode::joint) return MatrixXd::Ones(q, q);
    MatrixXd mask = MatrixXd::Zero(q, q);
    const int l = spec.dims.n_raters;
    for (int b = 0; b < q / l; ++b)
        mask.block(b * l, b * l, l, l).setOnes();
    return mask;
}

double recovery_objective(const PredictorCovKernel& kernel, const MatrixXd& target,
                          const MatrixXd& mask, const VectorXd& v,
                          double error_scale) {
    const MatrixXd m = kernel.evaluate(v, error_scale);
    return (mask.array() * (target - m).array()).square().sum();
}

RecoveredComponents recover_variance_components(
    const PredictorCovTarget& target, const ModelSpec& spec, double dispersion_tilde,
    const PredictorCovKernel& kernel, const VectorXd& warm_start, DrawMode mode,
    const NewtonCgOptions& opts) {
    const MatrixXd mask = recovery_mask(spec, mode);
    const double scale = dispersion_to_error_scale(spec.family, dispersion_tilde);
    const auto obj = [&](const VectorXd& v) {
        return recovery_objective(kernel, target.delta_tilde, mask, v, scale);
    };
    const OptimResult opt = newton_cg_minimize(obj, nullptr, warm_start, opts);

    RecoveredComponents out;
    out.coords = opt.x;
    ParameterSet p;
    unpack_log_cholesky(spec, opt.x, p);
    out.sigma_alpha = std::move(p.sigma_alpha);
    out.sigma_gamma = std::move(p.sigma_gamma);
    out.diag.objective = opt.value;
    out.diag.iterations = opt.iterations;
    out.diag.converged = opt.converged;
    return out;
}

RecoveredComponents recover_variance_components(
    const PredictorCovTarget& target, const ModelSpec& spec, double dispersion_tilde,
    const FitResult& fit, DrawMode mode, const NewtonCgOptions& opts) {
    const PredictorCovKernel kernel(spec, fit.unit_error_diag);
    const VectorXd warm = pack_log_cholesky(spec, fit.estimates);
    return recover_variance_components(target, spec, dispersion_tilde, kernel, warm,
                                       mode, opts);
}

// ==================== fixed-effect and dispersion pivots ====================

namespace {

MatrixXd stacked_design_local(const ModelSpec& spec) {
    const int kt = spec.dims.per_rater();
    const int l = spec.dims.n_raters;
    const int d = spec.n_fixed();
    MatrixXd x = MatrixXd::Zero(kt * l, d * l);
    for (int a = 0; a < l; ++a) x.block(a * kt, a * d, kt, d) = spec.fixed_design;
    return x;
}

} // namespace

VectorXd beta_fiducial_from_pivot(const FitResult& fit, const ParameterSet& pivots,
                                  const VectorXd& z) {
    const ModelSpec& spec = fit.spec;
    const double scale = dispersion_to_error_scale(spec.family, pivots.dispersion);
    const auto cov =
        build_marginal_covariance(spec, pivots, scale * fit.unit_error_diag);
    const MatrixXd xcal = stacked_design_local(spec);
    const MatrixXd si_x = cov.chol.solve(xcal);
    const int n = static_cast<int>(fit.pseudo_obs.rows());
    const MatrixXd info = n * (xcal.transpose() * si_x); // X' Sigma_C^{-1} X
    // symmetric inverse square root by spectral decomposition
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(info);
    if (es.eigenvalues().minCoeff() <= 0.0)
        throw NotPositiveDefinite("X' Sigma_C^{-1} X is not positive definite");
    const MatrixXd inv_sqrt = es.eigenvectors() *
                              es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
                              es.eigenvectors().transpose();
    return fit.beta_stacked - inv_sqrt * z;
}

VectorXd sample_beta_fiducial(const FitResult& fit, const ParameterSet& pivots,
                              std::mt19937_64& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    VectorXd z(fit.beta_stacked.size());
    for (int i = 0; i < z.size(); ++i) z[i] = nd(rng);
    return beta_fiducial_from_pivot(fit, pivots, z);
}

double dispersion_fiducial_from_pivot(const FitResult& fit, double pivot_random) {
    switch (fit.spec.family) {
        case Family::poisson_log:
            return 1.0;
        case Family::gaussian_identity: {
            if (fit.residual_df <= 0)
                throw InsufficientDF("dispersion pivot needs positive residual df");
            return fit.residual_df * fit.dispersion_pivot_estimate / pivot_random;
        }
        case Family::gamma_inverse: {
            const double tau =
                fit.dispersion_pivot_estimate + fit.dispersion_pivot_se * pivot_random;
            if (tau <= 0.0) throw DomainError("Gamma shape pivot not positive");
            return tau;
        }
    }
    throw DomainError("unknown family");
}

double sample_dispersion_fiducial(const FitResult& fit, std::mt19937_64& rng) {
    switch (fit.spec.family) {
        case Family::poisson_log:
            return 1.0;
        case Family::gaussian_identity: {
            if (fit.residual_df <= 0)
                throw InsufficientDF("dispersion pivot needs positive residual df");
            std::chi_squared_distribution<double> chi(fit.residual_df);
            return dispersion_fiducial_from_pivot(fit, chi(rng));
        }
        case Family::gamma_inverse: {
            // normal pivot truncated at zero by redrawing
            std::normal_distribution<double> nd(0.0, 1.0);
            for (int tries = 0; tries < 1000; ++tries) {
                const double tau = fit.dispersion_pivot_estimate +
                                   fit.dispersion_pivot_se * nd(rng);
                if (tau > 0.0) return tau;
            }
            throw DomainError("Gamma shape pivot stayed nonpositive");
        }
    }
    throw DomainError("unknown family");
}

// ==================== joint draws ====================

ParameterSet FiducialDraw::as_parameter_set(const ModelSpec& spec) const {
    ParameterSet p;
    const int d = spec.n_fixed();
    p.beta.resize(spec.dims.n_raters);
    for (int a = 0; a < spec.dims.n_raters; ++a)
        p.beta[a] = beta_tilde.segment(a * d, d);
    p.sigma_alpha = sigma_alpha_tilde;
    p.sigma_gamma = sigma_gamma_tilde;
    p.dispersion = dispersion_tilde;
    return p;
}

FiducialSampler::FiducialSampler(const FitResult& fit, const PredictorSet& predictors,
                                 DrawMode mode, int max_retries)
    : fit_(fit),
      mode_(mode),
      max_retries_(max_retries),
      scatter_(build_predictor_scatter(predictors, fit.spec)),
      kernel_(fit.spec, fit.unit_error_diag),
      mask_(recovery_mask(fit.spec, mode)),
      warm_start_(pack_log_cholesky(fit.spec, fit.estimates)) {}

FiducialDraw FiducialSampler::assemble(double dispersion,
                                       const PredictorCovTarget& target,
                                       const VectorXd& z_beta) const {
    FiducialDraw draw;
    draw.dispersion_tilde = dispersion;
    const auto rec = recover_variance_components(target, fit_.spec, dispersion,
                                                 kernel_, warm_start_, mode_,
                                                 solver_opts_);
    draw.sigma_alpha_tilde = rec.sigma_alpha;
    draw.sigma_gamma_tilde = rec.sigma_gamma;
    draw.solver = rec.diag;
    draw.failed = !rec.diag.converged;
    if (draw.failed) {
        draw.beta_tilde = fit_.beta_stacked;
        return draw;
    }
    ParameterSet pivots;
    pivots.beta = fit_.estimates.beta;
    pivots.sigma_alpha = draw.sigma_alpha_tilde;
    pivots.sigma_gamma = draw.sigma_gamma_tilde;
    pivots.dispersion = dispersion;
    draw.beta_tilde = beta_fiducial_from_pivot(fit_, pivots, z_beta);
    return draw;
}

FiducialDraw FiducialSampler::one_draw(std::mt19937_64& rng) const {
    const double dispersion = sample_dispersion_fiducial(fit_, rng);
    const PredictorCovTarget target = draw_predictor_cov(scatter_, mode_, rng);
    std::normal_distribution<double> nd(0.0, 1.0);
    VectorXd z(fit_.beta_stacked.size());
    for (int i = 0; i < z.size(); ++i) z[i] = nd(rng);
    return assemble(dispersion, target, z);
}

FiducialDraw FiducialSampler::draw(std::mt19937_64& rng) const {
    FiducialDraw d = one_draw(rng);
    int retries = 0;
    while (d.failed && retries < max_retries_) {
        ++retries;
        d = one_draw(rng);
    }
    d.retries = retries;
    return d;
}

FiducialDraw FiducialSampler::draw_at_observed() const {
    const double obs_random = fit_.spec.family == Family::gaussian_identity
                                  ? static_cast<double>(fit_.residual_df)
                                  : 0.0;
    const double dispersion = dispersion_fiducial_from_pivot(fit_, obs_random);
    // plug-in predictor covariance at the fitted components and pivot dispersion
    const double scale = dispersion_to_error_scale(fit_.spec.family, dispersion);
    const MatrixXd delta_plug = kernel_.evaluate(warm_start_, scale);
    const PredictorCovTarget target =
        observed_predictor_cov(scatter_, delta_plug, mode_);
    const VectorXd z = VectorXd::Zero(fit_.beta_stacked.size());
    return assemble(dispersion, target, z);
}

FiducialDraw sample_joint_draw(const FitResult& fit, std::mt19937_64& rng,
                               DrawMode mode) {
    const PredictorSet predictors = predict_conditional_means(fit);
    const FiducialSampler sampler(fit, predictors, mode);
    return sampler.draw(rng);
}

} // namespace cccfid

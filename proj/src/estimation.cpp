#include "cccfid/estimation.hpp"

#include "cccfid/optim.hpp"

#include <cmath>
#include <sstream>

namespace cccfid {

namespace {

// I_L (x) X
MatrixXd stacked_design(const ModelSpec& spec) {
    const int kt = spec.dims.per_rater();
    const int l = spec.dims.n_raters;
    const int d = spec.n_fixed();
    MatrixXd x = MatrixXd::Zero(kt * l, d * l);
    for (int a = 0; a < l; ++a)
        x.block(a * kt, a * d, kt, d) = spec.fixed_design;
    return x;
}

MatrixXd subject_matrix(const RatingDataset& data) {
    const int n = data.dims().n_subjects;
    const int m = data.dims().per_subject();
    MatrixXd y(n, m);
    for (int i = 0; i < n; ++i) y.row(i) = data.subject_vector(i + 1).transpose();
    return y;
}

ParameterSet params_from(const ModelSpec& spec, const VectorXd& components,
                         const VectorXd& beta_stacked, double dispersion) {
    ParameterSet p;
    unpack_log_cholesky(spec, components, p);
    const int d = spec.n_fixed();
    p.beta.resize(spec.dims.n_raters);
    for (int a = 0; a < spec.dims.n_raters; ++a)
        p.beta[a] = beta_stacked.segment(a * d, d);
    p.dispersion = dispersion;
    return p;
}

struct RemlWork {
    MatrixXd xcal;  // KTL x dL
    VectorXd ybar;  // KTL
    MatrixXd s_w;   // within-subject scatter
    int n = 0;
};

RemlWork reml_precompute(const ModelSpec& spec, const MatrixXd& y) {
    RemlWork w;
    w.n = static_cast<int>(y.rows());
    w.xcal = stacked_design(spec);
    w.ybar = y.colwise().mean().transpose();
    const int m = static_cast<int>(y.cols());
    w.s_w = MatrixXd::Zero(m, m);
    for (int i = 0; i < w.n; ++i) {
        const VectorXd c = y.row(i).transpose() - w.ybar;
        w.s_w.selfadjointView<Eigen::Lower>().rankUpdate(c);
    }
    w.s_w.triangularView<Eigen::StrictlyUpper>() =
        w.s_w.transpose().triangularView<Eigen::StrictlyUpper>();
    return w;
}

double reml_objective_impl(const ModelSpec& spec, const RemlWork& w,
                           const VectorXd& d_base, bool free_dispersion,
                           double fixed_dispersion, const VectorXd& theta,
                           VectorXd* grad) {
    const int n_comp = n_component_params(spec);
    const double c = free_dispersion ? std::exp(theta[n_comp]) : fixed_dispersion;
    ParameterSet p;
    unpack_log_cholesky(spec, theta.head(n_comp), p);

    MarginalCovariance cov;
    try {
        cov = build_marginal_covariance(spec, p, c * d_base);
    } catch (const NotPositiveDefinite&) {
        if (grad) grad->setConstant(theta.size(), 0.0);
        return std::numeric_limits<double>::infinity();
    }
    const auto& llt = cov.chol;
    const int m = static_cast<int>(cov.sigma_ystar.rows());

    const MatrixXd si_x = llt.solve(w.xcal); // Sigma^{-1} Xcal
    const MatrixXd xtsx = w.xcal.transpose() * si_x;
    Eigen::LLT<MatrixXd> xtsx_llt(xtsx);
    if (xtsx_llt.info() != Eigen::Success)
        throw SingularDesign("X' Sigma^{-1} X is singular");
    const VectorXd beta = xtsx_llt.solve(si_x.transpose() * w.ybar);
    const VectorXd rbar = w.ybar - w.xcal * beta;
    const VectorXd si_r = llt.solve(rbar);

    double logdet_sigma = 0.0;
    for (int i = 0; i < m; ++i)
        logdet_sigma += 2.0 * std::log(llt.matrixLLT()(i, i));
    double logdet_x = 0.0;
    for (int i = 0; i < xtsx.rows(); ++i)
        logdet_x += 2.0 * std::log(xtsx_llt.matrixLLT()(i, i));

    const MatrixXd si_sw = llt.solve(w.s_w);
    const double quad = si_sw.trace() + w.n * rbar.dot(si_r);
    const double value = w.n * logdet_sigma + logdet_x + quad;

    if (grad) {
        // d(-2lR) = tr(G dSigma), G = N Sigma^{-1} - Q - Sigma^{-1} S_F Sigma^{-1}
        const MatrixXd sigma_inv = llt.solve(MatrixXd::Identity(m, m));
        const MatrixXd q = si_x * xtsx_llt.solve(si_x.transpose());
        const MatrixXd s_f_si = si_sw * sigma_inv; // Sigma^{-1} S_w Sigma^{-1}
        MatrixXd g = w.n * sigma_inv - q - s_f_si;
        g.noalias() -= w.n * si_r * si_r.transpose();

        grad->resize(theta.size());
        const auto factors = unpack_cholesky_factors(spec, theta.head(n_comp));
        const int l = spec.dims.n_raters;
        const int kt = spec.dims.per_rater();
        int pos = 0;
        auto emit = [&](const MatrixXd& d_full, const MatrixXd& u) {
            const MatrixXd du = 2.0 * (d_full * u);
            for (int b = 0; b < l; ++b) {
                (*grad)[pos++] = du(b, b) * u(b, b);
                for (int a = b + 1; a < l; ++a) (*grad)[pos++] = du(a, b);
            }
        };
        for (int s = 0; s <= spec.spline_order; ++s) {
            MatrixXd d_full(l, l);
            for (int a = 0; a < l; ++a)
                for (int b = 0; b < l; ++b)
                    d_full(a, b) = spec.basis[s].dot(
                        g.block(a * kt, b * kt, kt, kt) * spec.basis[s]);
            emit(d_full, factors[s]);
        }
        if (spec.gamma_included) {
            const int t = spec.dims.n_times, k = spec.dims.n_replicates;
            MatrixXd d_full = MatrixXd::Zero(l, l);
            for (int a = 0; a < l; ++a)
                for (int b = 0; b < l; ++b)
                    for (int j = 0; j < t; ++j)
                        d_full(a, b) +=
                            g.block(a * kt + j * k, b * kt + j * k, k, k).sum();
            emit(d_full, factors.back());
        }
        if (free_dispersion)
            (*grad)[n_comp] = g.diagonal().dot(d_base) * c;
    }
    return value;
}

// Moment-based starting values: per-rater OLS for beta, then per-subject
// intercept/slope regressions of the residuals feed the covariance starts.
void starting_values(const ModelSpec& spec, const MatrixXd& y, VectorXd& components,
                     double& dispersion) {
    const int n = static_cast<int>(y.rows());
    const int l = spec.dims.n_raters;
    const int kt = spec.dims.per_rater();
    const int t = spec.dims.n_times;
    const int k = spec.dims.n_replicates;
    const MatrixXd& x = spec.fixed_design;
    const MatrixXd xtx_inv =
        (x.transpose() * x).ldlt().solve(MatrixXd::Identity(x.cols(), x.cols()));

    // residuals per rater against the pooled OLS fit
    MatrixXd resid(n, kt * l);
    for (int a = 0; a < l; ++a) {
        VectorXd ybar_l = VectorXd::Zero(kt);
        for (int i = 0; i < n; ++i) ybar_l += y.row(i).segment(a * kt, kt).transpose();
        ybar_l /= n;
        const VectorXd beta_l = xtx_inv * (x.transpose() * ybar_l);
        for (int i = 0; i < n; ++i)
            resid.row(i).segment(a * kt, kt) =
                y.row(i).segment(a * kt, kt) - (x * beta_l).transpose();
    }

    // per (subject, rater) intercept/slope of the residual trajectory
    MatrixXd icept(n, l), slope(n, l);
    double rss = 0.0;
    int rss_n = 0;
    MatrixXd tj(kt, 2);
    for (int j = 0; j < t; ++j)
        for (int kk = 0; kk < k; ++kk) {
            tj(j * k + kk, 0) = 1.0;
            tj(j * k + kk, 1) = j + 1;
        }
    const bool with_slope = spec.spline_order >= 1 && t >= 2;
    const MatrixXd tj_use = with_slope ? tj : MatrixXd(tj.col(0));
    const MatrixXd tj_inv = (tj_use.transpose() * tj_use)
                                .ldlt()
                                .solve(MatrixXd::Identity(tj_use.cols(), tj_use.cols()));
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < l; ++a) {
            const VectorXd e = resid.row(i).segment(a * kt, kt).transpose();
            const VectorXd coef = tj_inv * (tj_use.transpose() * e);
            icept(i, a) = coef[0];
            slope(i, a) = with_slope ? coef[1] : 0.0;
            const VectorXd r = e - tj_use * coef;
            rss += r.squaredNorm();
            rss_n += kt - static_cast<int>(tj_use.cols());
        }
    const double s2 = std::max(rss_n > 0 ? rss / rss_n : 0.1, 1e-3);

    auto col_cov = [&](const MatrixXd& a) {
        const Eigen::RowVectorXd mu = a.colwise().mean();
        MatrixXd c = (a.rowwise() - mu).transpose() * (a.rowwise() - mu) / (n - 1);
        c.diagonal().array() += 1e-4;
        return c;
    };

    ParameterSet start;
    start.sigma_alpha.resize(spec.n_alpha_orders());
    start.sigma_alpha[0] = col_cov(icept);
    for (int s = 1; s <= spec.spline_order; ++s)
        start.sigma_alpha[s] =
            (s == 1 && with_slope) ? col_cov(slope) : MatrixXd(0.01 * MatrixXd::Identity(l, l));
    start.sigma_gamma = spec.gamma_included
                            ? MatrixXd(std::max(0.1 * s2, 1e-3) * MatrixXd::Identity(l, l))
                            : MatrixXd::Zero(l, l);
    components = pack_log_cholesky(spec, start);
    dispersion = s2;
}

} // namespace

double reml_objective(const ModelSpec& spec, const MatrixXd& y, const VectorXd& d_base,
                      bool free_dispersion, double fixed_dispersion,
                      const VectorXd& theta, VectorXd* grad) {
    const RemlWork w = reml_precompute(spec, y);
    return reml_objective_impl(spec, w, d_base, free_dispersion, fixed_dispersion,
                               theta, grad);
}

RemlResult reml_fit(const ModelSpec& spec, const MatrixXd& y, const VectorXd& d_base,
                    bool free_dispersion, double fixed_dispersion,
                    const VectorXd& start_components, double start_dispersion,
                    const RemlOptions& opts) {
    const RemlWork w = reml_precompute(spec, y);
    const int n_comp = n_component_params(spec);
    VectorXd theta(n_comp + (free_dispersion ? 1 : 0));
    theta.head(n_comp) = start_components;
    if (free_dispersion) theta[n_comp] = std::log(std::max(start_dispersion, 1e-8));

    const auto obj = [&](const VectorXd& th) {
        return reml_objective_impl(spec, w, d_base, free_dispersion, fixed_dispersion,
                                   th, nullptr);
    };
    const auto grad = [&](const VectorXd& th) {
        VectorXd g;
        reml_objective_impl(spec, w, d_base, free_dispersion, fixed_dispersion, th, &g);
        return g;
    };

    BfgsOptions bopts;
    bopts.grad_tol = opts.grad_tol;
    bopts.max_iterations = opts.max_iterations;
    const OptimResult opt = bfgs_minimize(obj, grad, theta, bopts);

    RemlResult res;
    res.components = opt.x.head(n_comp);
    res.dispersion = free_dispersion ? std::exp(opt.x[n_comp]) : fixed_dispersion;
    res.objective = opt.value;
    res.iterations = opt.iterations;
    res.grad_norm = opt.grad_norm;
    res.converged = opt.converged;

    // GLS beta at the fitted covariance
    ParameterSet p;
    unpack_log_cholesky(spec, res.components, p);
    const auto cov = build_marginal_covariance(spec, p, res.dispersion * d_base);
    const MatrixXd si_x = cov.chol.solve(w.xcal);
    const MatrixXd xtsx = w.xcal.transpose() * si_x;
    res.beta = xtsx.llt().solve(si_x.transpose() * w.ybar);
    return res;
}

MatrixXd pseudo_observations(const RatingDataset& data, const ModelSpec& spec,
                             const MatrixXd& fitted_means, const MatrixXd& fitted_eta) {
    const MatrixXd y = subject_matrix(data);
    switch (spec.family) {
        case Family::gaussian_identity:
            return y;
        case Family::poisson_log: {
            if ((fitted_means.array() <= 0.0).any())
                throw DomainError("Poisson fitted means must be positive");
            MatrixXd ystar =
                fitted_eta.array() + (y.array() - fitted_means.array()) / fitted_means.array();
            if (!ystar.allFinite())
                throw DomainError("pseudo-observations are not finite");
            return ystar;
        }
        case Family::gamma_inverse: {
            if ((fitted_means.array() <= 0.0).any())
                throw DomainError("Gamma fitted means must be positive");
            MatrixXd ystar = fitted_eta.array() -
                             (y.array() - fitted_means.array()) /
                                 fitted_means.array().square();
            if (!ystar.allFinite())
                throw DomainError("pseudo-observations are not finite");
            return ystar;
        }
    }
    throw DomainError("unknown family");
}

double dispersion_to_error_scale(Family family, double dispersion) {
    switch (family) {
        case Family::gaussian_identity: return dispersion;
        case Family::poisson_log: return 1.0;
        case Family::gamma_inverse: return 1.0 / dispersion;
    }
    throw DomainError("unknown family");
}

VectorXd FitResult::error_diag() const {
    return dispersion_to_error_scale(spec.family, estimates.dispersion) *
           unit_error_diag;
}

int residual_df(const ModelSpec& spec, int n_subjects) {
    const auto& d = spec.dims;
    const long total = static_cast<long>(n_subjects) * d.n_times * d.n_replicates *
                       d.n_raters;
    long df = total - static_cast<long>(spec.n_fixed()) * d.n_raters -
              static_cast<long>(spec.n_alpha_orders()) * n_subjects * d.n_raters;
    if (spec.gamma_included)
        df -= static_cast<long>(n_subjects) * d.n_times * d.n_raters;
    return static_cast<int>(df);
}

namespace {

// conditional modes of the random effects given Y* at the supplied estimates;
// alpha: N x (S+1)L (order-major blocks), gamma: N x TL (time-major blocks)
void conditional_modes(const ModelSpec& spec, const ParameterSet& params,
                       const VectorXd& error_diag, const MatrixXd& y,
                       const VectorXd& beta_stacked, MatrixXd& alpha, MatrixXd& gamma) {
    const int n = static_cast<int>(y.rows());
    const int l = spec.dims.n_raters;
    const int t = spec.dims.n_times;
    const int k = spec.dims.n_replicates;
    const int kt = t * k;
    const auto cov = build_marginal_covariance(spec, params, error_diag);
    const MatrixXd xcal = stacked_design(spec);
    const VectorXd mean = xcal * beta_stacked;

    std::vector<MatrixXd> cross;
    for (int s = 0; s <= spec.spline_order; ++s)
        cross.push_back(cross_cov_matrix_alpha(spec, params, s));

    alpha.resize(n, spec.n_alpha_orders() * l);
    gamma.resize(n, spec.gamma_included ? t * l : 0);
    for (int i = 0; i < n; ++i) {
        const VectorXd solved = cov.chol.solve(y.row(i).transpose() - mean);
        for (int s = 0; s <= spec.spline_order; ++s)
            alpha.row(i).segment(s * l, l) = (cross[s] * solved).transpose();
        if (spec.gamma_included) {
            // per-time block sums of the whitened residual, then Sigma_gamma mix
            MatrixXd block_sums(l, t);
            for (int a = 0; a < l; ++a)
                for (int j = 0; j < t; ++j)
                    block_sums(a, j) = solved.segment(a * kt + j * k, k).sum();
            const MatrixXd gmodes = params.sigma_gamma * block_sums; // L x T
            for (int j = 0; j < t; ++j)
                gamma.row(i).segment(j * l, l) = gmodes.col(j).transpose();
        }
    }
}

MatrixXd eta_from_modes(const ModelSpec& spec, const VectorXd& beta_stacked,
                        const MatrixXd& alpha, const MatrixXd& gamma) {
    const int n = static_cast<int>(alpha.rows());
    const int l = spec.dims.n_raters;
    const int t = spec.dims.n_times;
    const int k = spec.dims.n_replicates;
    const int kt = t * k;
    const int d = spec.n_fixed();
    MatrixXd eta(n, kt * l);
    for (int i = 0; i < n; ++i) {
        for (int a = 0; a < l; ++a) {
            VectorXd e = spec.fixed_design * beta_stacked.segment(a * d, d);
            for (int s = 0; s <= spec.spline_order; ++s)
                e += alpha(i, s * l + a) * spec.basis[s];
            if (spec.gamma_included)
                for (int j = 0; j < t; ++j)
                    e.segment(j * k, k).array() += gamma(i, j * l + a);
            eta.row(i).segment(a * kt, kt) = e.transpose();
        }
    }
    return eta;
}

MatrixXd inverse_link(Family family, const MatrixXd& eta) {
    switch (family) {
        case Family::gaussian_identity: return eta;
        case Family::poisson_log:
            if ((eta.array() > 700.0).any())
                throw OverflowGuard("linear predictor exponent exceeds 700");
            return eta.array().exp();
        case Family::gamma_inverse:
            if ((eta.array() <= 0.0).any())
                throw DomainError("Gamma inverse link requires positive eta");
            return eta.cwiseInverse();
    }
    throw DomainError("unknown family");
}

double pearson_tau(const MatrixXd& y, const MatrixXd& mu, int df, double* se) {
    // tau = 1/phi with phi the Pearson dispersion of the Gamma GLMM
    const MatrixXd r2 = ((y - mu).array() / mu.array()).square();
    const double x2 = r2.sum();
    if (df <= 0) throw InsufficientDF("Pearson dispersion needs positive df");
    const double phi = x2 / df;
    const double tau = 1.0 / phi;
    if (se) {
        const double n = static_cast<double>(r2.size());
        const double mean_r2 = r2.mean();
        const double var_r2 = (r2.array() - mean_r2).square().sum() / (n - 1.0);
        const double se_phi = std::sqrt(n * var_r2) / df;
        *se = se_phi / (phi * phi);
    }
    return tau;
}

// beta from a per-rater OLS of a transformed response: log(y + 0.5) for the
// log link, 1 / max(y, eps) for the inverse link
VectorXd beta_init_transformed(const ModelSpec& spec, const MatrixXd& y) {
    const int l = spec.dims.n_raters;
    const int kt = spec.dims.per_rater();
    const int d = spec.n_fixed();
    const MatrixXd& x = spec.fixed_design;
    const MatrixXd xtx_inv =
        (x.transpose() * x).ldlt().solve(MatrixXd::Identity(d, d));
    VectorXd beta(d * l);
    for (int a = 0; a < l; ++a) {
        VectorXd z = VectorXd::Zero(kt);
        for (int i = 0; i < y.rows(); ++i) {
            for (int c = 0; c < kt; ++c) {
                const double v = y(i, a * kt + c);
                z[c] += spec.family == Family::poisson_log
                            ? std::log(v + 0.5)
                            : 1.0 / std::max(v, 1e-8);
            }
        }
        z /= static_cast<double>(y.rows());
        beta.segment(a * d, d) = xtx_inv * (x.transpose() * z);
    }
    return beta;
}

FitResult finalize_gaussian(const ModelSpec& spec, const RatingDataset& data,
                            const MatrixXd& y, const RemlResult& reml) {
    FitResult fit;
    fit.spec = spec;
    fit.estimates = params_from(spec, reml.components, reml.beta, reml.dispersion);
    fit.beta_stacked = reml.beta;
    fit.pseudo_obs = y;
    fit.unit_error_diag = VectorXd::Ones(spec.dims.per_subject());
    fit.trace.reml_iterations = reml.iterations;
    fit.trace.reml_grad_norm = reml.grad_norm;
    fit.trace.converged = reml.converged;

    MatrixXd alpha, gamma;
    conditional_modes(spec, fit.estimates, fit.error_diag(), y, reml.beta, alpha,
                      gamma);
    fit.fitted_means = eta_from_modes(spec, reml.beta, alpha, gamma);

    fit.residual_df = residual_df(spec, data.dims().n_subjects);
    if (fit.residual_df > 0)
        fit.dispersion_pivot_estimate =
            (y - fit.fitted_means).squaredNorm() / fit.residual_df;
    else
        fit.dispersion_pivot_estimate = std::numeric_limits<double>::quiet_NaN();
    return fit;
}

} // namespace

FitResult fit_gaussian_lmm(const RatingDataset& data, const ModelSpec& spec,
                           const FitOptions& opts) {
    if (spec.family != Family::gaussian_identity)
        throw DomainError("fit_gaussian_lmm requires the Gaussian family");
    data.validate(spec.family);
    spec.validate();
    const MatrixXd y = subject_matrix(data);

    VectorXd comp0;
    double disp0 = 0.0;
    starting_values(spec, y, comp0, disp0);

    RemlOptions ropts;
    ropts.grad_tol = opts.reml_grad_tol;
    ropts.max_iterations = opts.reml_max_iterations;
    const RemlResult reml = reml_fit(spec, y, VectorXd::Ones(y.cols()), true, 0.0,
                                     comp0, disp0, ropts);
    if (!reml.converged) {
        std::ostringstream msg;
        msg << "REML did not converge: " << reml.iterations
            << " iterations, grad norm " << reml.grad_norm;
        throw NonConvergence(msg.str());
    }
    return finalize_gaussian(spec, data, y, reml);
}

FitResult fit_glmm_linearized(const RatingDataset& data, const ModelSpec& spec,
                              const FitOptions& opts) {
    if (spec.family == Family::gaussian_identity)
        throw DomainError("fit_glmm_linearized is for Poisson / Gamma families");
    data.validate(spec.family);
    spec.validate();
    const MatrixXd y = subject_matrix(data);
    const int n = data.dims().n_subjects;
    const int df = residual_df(spec, n);

    VectorXd beta = beta_init_transformed(spec, y);
    MatrixXd alpha = MatrixXd::Zero(n, spec.n_alpha_orders() * spec.dims.n_raters);
    MatrixXd gamma = MatrixXd::Zero(
        n, spec.gamma_included ? spec.dims.n_times * spec.dims.n_raters : 0);
    MatrixXd eta = eta_from_modes(spec, beta, alpha, gamma);
    if (spec.family == Family::gamma_inverse && (eta.array() <= 0.0).any())
        throw DomainError("initial Gamma linear predictor not positive");

    VectorXd components;
    double tau = 1.0;
    bool have_components = false;

    RemlOptions ropts;
    ropts.grad_tol = opts.reml_grad_tol;
    ropts.max_iterations = opts.reml_max_iterations;

    FitResult fit;
    fit.spec = spec;
    double gap = std::numeric_limits<double>::infinity();
    RemlResult reml;
    MatrixXd mu, ystar;
    VectorXd d_unit;

    for (int outer = 0; outer < opts.pirls_max_iterations; ++outer) {
        mu = inverse_link(spec.family, eta);
        if (spec.family == Family::gamma_inverse)
            tau = pearson_tau(y, mu, df > 0 ? df : static_cast<int>(y.size()) - 1,
                              nullptr);
        ystar = pseudo_observations(data, spec, mu, eta);
        d_unit = unit_error_diag_from_means(spec, mu);
        const double scale = dispersion_to_error_scale(spec.family, tau);

        if (!have_components) {
            double ignored = 0.0;
            starting_values(spec, ystar, components, ignored);
            have_components = true;
        }
        reml = reml_fit(spec, ystar, d_unit, false, scale, components, 0.0, ropts);
        components = reml.components;

        ParameterSet p = params_from(spec, components, reml.beta, scale);
        MatrixXd alpha_new, gamma_new;
        conditional_modes(spec, p, scale * d_unit, ystar, reml.beta, alpha_new,
                          gamma_new);

        // step-halving keeps the Gamma linear predictor inside its domain
        double step = 1.0;
        MatrixXd eta_new;
        int halvings = 0;
        while (true) {
            const VectorXd beta_try = beta + step * (reml.beta - beta);
            const MatrixXd alpha_try = alpha + step * (alpha_new - alpha);
            const MatrixXd gamma_try =
                gamma.size() > 0 ? MatrixXd(gamma + step * (gamma_new - gamma)) : gamma;
            eta_new = eta_from_modes(spec, beta_try, alpha_try, gamma_try);
            const bool ok = spec.family != Family::gamma_inverse ||
                            eta_new.minCoeff() > 0.0;
            if (ok) {
                beta = beta_try;
                alpha = alpha_try;
                gamma = gamma_try;
                break;
            }
            step *= 0.5;
            if (++halvings > opts.max_step_halvings)
                throw DomainError(
                    "Gamma linear predictor left the positive domain despite step halving");
        }
        gap = (eta_new - eta).lpNorm<Eigen::Infinity>();
        eta = eta_new;
        fit.trace.outer_iterations = outer + 1;
        if (gap < opts.pirls_tol) break;
    }
    if (gap >= opts.pirls_tol) {
        std::ostringstream msg;
        msg << "linearized fit did not converge: gap " << gap << " after "
            << fit.trace.outer_iterations << " outer iterations";
        throw NonConvergence(msg.str());
    }

    mu = inverse_link(spec.family, eta);
    ystar = pseudo_observations(data, spec, mu, eta);
    d_unit = unit_error_diag_from_means(spec, mu);

    double tau_se = 0.0;
    if (spec.family == Family::gamma_inverse)
        tau = pearson_tau(y, mu, df > 0 ? df : static_cast<int>(y.size()) - 1, &tau_se);

    fit.estimates = params_from(spec, components, beta,
                                spec.family == Family::poisson_log ? 1.0 : tau);
    fit.beta_stacked = beta;
    fit.pseudo_obs = ystar;
    fit.fitted_means = mu;
    fit.unit_error_diag = d_unit;
    fit.residual_df = df;
    fit.dispersion_pivot_estimate = spec.family == Family::poisson_log ? 1.0 : tau;
    fit.dispersion_pivot_se = tau_se;
    fit.trace.reml_iterations = reml.iterations;
    fit.trace.reml_grad_norm = reml.grad_norm;
    fit.trace.convergence_gap = gap;
    fit.trace.converged = true;
    return fit;
}

FitResult fit_model(const RatingDataset& data, const ModelSpec& spec,
                    const FitOptions& opts) {
    return spec.family == Family::gaussian_identity
               ? fit_gaussian_lmm(data, spec, opts)
               : fit_glmm_linearized(data, spec, opts);
}

PredictorSet predict_conditional_means(const FitResult& fit) {
    const ModelSpec& spec = fit.spec;
    const int l = spec.dims.n_raters;
    MatrixXd alpha, gamma;
    conditional_modes(spec, fit.estimates, fit.error_diag(), fit.pseudo_obs,
                      fit.beta_stacked, alpha, gamma);

    PredictorSet out;
    out.mu_alpha.resize(spec.n_alpha_orders());
    const int n = static_cast<int>(alpha.rows());
    for (int s = 0; s <= spec.spline_order; ++s)
        out.mu_alpha[s] = alpha.middleCols(s * l, l);
    out.stacked.resize(n, spec.predictor_dim());
    out.stacked.leftCols(spec.n_alpha_orders() * l) = alpha;
    if (spec.gamma_included) {
        out.mu_gamma = MatrixXd::Zero(n, l);
        for (int j = 0; j < spec.dims.n_times; ++j)
            out.mu_gamma += gamma.middleCols(j * l, l);
        out.stacked.rightCols(l) = out.mu_gamma;
    }
    return out;
}

double estimate_dispersion(const FitResult& fit, const ModelSpec& spec) {
    if (spec.family == Family::poisson_log) return 1.0;
    if (fit.residual_df <= 0)
        throw InsufficientDF("residual degrees of freedom are not positive");
    return fit.dispersion_pivot_estimate;
}

} // namespace cccfid

#include "cccfid/ccc.hpp"

#include <cmath>

namespace cccfid {

std::string normalization_name(CccNormalization n) {
    switch (n) {
        case CccNormalization::factor2_subject_avg: return "factor2_subject_avg";
        case CccNormalization::factor1_subject_avg: return "factor1_subject_avg";
        case CccNormalization::factor2_time_avg: return "factor2_time_avg";
        case CccNormalization::factor2_total_sum: return "factor2_total_sum";
    }
    return "unknown";
}

CccNormalization normalization_from_name(const std::string& name) {
    if (name == "factor2_subject_avg") return CccNormalization::factor2_subject_avg;
    if (name == "factor1_subject_avg") return CccNormalization::factor1_subject_avg;
    if (name == "factor2_time_avg") return CccNormalization::factor2_time_avg;
    if (name == "factor2_total_sum") return CccNormalization::factor2_total_sum;
    throw ParseError("unknown ccc normalization: " + name);
}

namespace {

double numerator_factor(CccNormalization n) {
    return n == CccNormalization::factor1_subject_avg ? 1.0 : 2.0;
}

double fixed_term_scale(CccNormalization n, const ModelSpec& spec) {
    switch (n) {
        case CccNormalization::factor2_time_avg:
            return 1.0 / spec.dims.n_times;
        case CccNormalization::factor2_total_sum:
            return static_cast<double>(std::max(spec.dims.n_subjects, 1));
        default:
            return 1.0;
    }
}

double assemble_ratio(double num_raw, double den_var, double fixed_raw,
                      CccNormalization norm, const ModelSpec& spec) {
    const double den = den_var + fixed_term_scale(norm, spec) * fixed_raw;
    if (den <= 0.0)
        throw ZeroDenominator("CCC denominator is zero");
    return numerator_factor(norm) * num_raw / den;
}

// variance of the random part of eta at design row r for rater l (and the
// cross-rater covariance at the same row)
double eta_variance(const ModelSpec& spec, const ParameterSet& params, int row,
                    int l, int lp) {
    double v = 0.0;
    for (int s = 0; s <= spec.spline_order; ++s)
        v += params.sigma_alpha[s](l, lp) * spec.basis[s][row] * spec.basis[s][row];
    if (spec.gamma_included) v += params.sigma_gamma(l, lp);
    return v;
}

} // namespace

CccValue ccc_lmm(const ModelSpec& spec, const ParameterSet& params,
                 CccNormalization norm) {
    if (spec.family != Family::gaussian_identity)
        throw DomainError("ccc_lmm requires the Gaussian family");
    const int l = spec.dims.n_raters;
    const int kt = spec.dims.per_rater();

    std::vector<double> ztz(spec.basis.size());
    for (std::size_t s = 0; s < spec.basis.size(); ++s)
        ztz[s] = spec.basis[s].squaredNorm();

    double num = 0.0, den_var = 0.0, fixed = 0.0;
    for (int a = 0; a < l; ++a) {
        for (int b = a + 1; b < l; ++b) {
            for (int s = 0; s <= spec.spline_order; ++s)
                num += params.sigma_alpha[s](a, b) * ztz[s];
            if (spec.gamma_included) num += kt * params.sigma_gamma(a, b);
            const VectorXd diff = spec.fixed_design * (params.beta[a] - params.beta[b]);
            fixed += diff.squaredNorm();
        }
        double v = 0.0;
        for (int s = 0; s <= spec.spline_order; ++s)
            v += params.sigma_alpha[s](a, a) * ztz[s];
        if (spec.gamma_included) v += kt * params.sigma_gamma(a, a);
        den_var += v + kt * params.dispersion;
    }
    den_var *= (l - 1);

    CccValue out;
    out.method = l == 2 ? CccMethod::closed_gaussian : CccMethod::closed_lmm;
    out.value = assemble_ratio(num, den_var, fixed, norm, spec);
    return out;
}

CccValue ccc_poisson_closed(const ModelSpec& spec, const ParameterSet& params,
                            CccNormalization norm) {
    if (spec.family != Family::poisson_log)
        throw DomainError("ccc_poisson_closed requires the Poisson family");
    const int l = spec.dims.n_raters;
    const int kt = spec.dims.per_rater();

    // lambda_{l,row} = E mu = exp(x'beta + v/2); var mu = lambda^2 (e^v - 1)
    MatrixXd lambda(l, kt), vdiag(l, kt);
    for (int a = 0; a < l; ++a) {
        const VectorXd xb = spec.fixed_design * params.beta[a];
        for (int r = 0; r < kt; ++r) {
            const double v = eta_variance(spec, params, r, a, a);
            const double expo = xb[r] + 0.5 * v;
            if (expo > 700.0 || v > 700.0)
                throw OverflowGuard("Poisson closed form exponent exceeds 700");
            lambda(a, r) = std::exp(expo);
            vdiag(a, r) = v;
        }
    }
    double num = 0.0, den_var = 0.0, fixed = 0.0;
    for (int a = 0; a < l; ++a) {
        for (int b = a + 1; b < l; ++b)
            for (int r = 0; r < kt; ++r) {
                const double c = eta_variance(spec, params, r, a, b);
                num += lambda(a, r) * lambda(b, r) * std::expm1(c);
                const double d = lambda(a, r) - lambda(b, r);
                fixed += d * d;
            }
        for (int r = 0; r < kt; ++r)
            den_var += lambda(a, r) * lambda(a, r) * std::expm1(vdiag(a, r)) +
                       lambda(a, r);
    }
    den_var *= (l - 1);

    CccValue out;
    out.method = CccMethod::closed_poisson;
    out.value = assemble_ratio(num, den_var, fixed, norm, spec);
    return out;
}

namespace {

// zeta(mu) scaled by phi: sigma^2 (Gaussian), mu (Poisson), mu^2/tau (Gamma)
double error_moment(Family family, double mu, double dispersion) {
    switch (family) {
        case Family::gaussian_identity: return dispersion;
        case Family::poisson_log: return mu;
        case Family::gamma_inverse: return mu * mu / dispersion;
    }
    return 0.0;
}

struct McMoments {
    // per design row and rater: E mu, E mu^2, E phi*zeta(mu); per pair E mu_l mu_l'
    MatrixXd sum_mu, sum_mu2, sum_zeta;
    std::vector<MatrixXd> sum_cross; // per (a<b) pair flattened
    long n = 0;

    double num_raw(const ModelSpec& spec) const;
    double den_var(const ModelSpec& spec) const;
    double fixed_raw(const ModelSpec& spec) const;
    double zeta_total() const { return sum_zeta.sum() / n; }
    double var_total(const ModelSpec& spec) const;
};

double McMoments::num_raw(const ModelSpec& spec) const {
    const int l = spec.dims.n_raters;
    double num = 0.0;
    int pair = 0;
    for (int a = 0; a < l; ++a)
        for (int b = a + 1; b < l; ++b, ++pair)
            for (int r = 0; r < sum_mu.cols(); ++r)
                num += sum_cross[pair](0, r) / n -
                       (sum_mu(a, r) / n) * (sum_mu(b, r) / n);
    return num;
}

double McMoments::var_total(const ModelSpec& spec) const {
    const int l = spec.dims.n_raters;
    double v = 0.0;
    for (int a = 0; a < l; ++a)
        for (int r = 0; r < sum_mu.cols(); ++r) {
            const double m = sum_mu(a, r) / n;
            v += sum_mu2(a, r) / n - m * m;
        }
    return v;
}

double McMoments::den_var(const ModelSpec& spec) const {
    return (spec.dims.n_raters - 1) * (var_total(spec) + zeta_total());
}

double McMoments::fixed_raw(const ModelSpec& spec) const {
    const int l = spec.dims.n_raters;
    double f = 0.0;
    for (int a = 0; a < l; ++a)
        for (int b = a + 1; b < l; ++b)
            for (int r = 0; r < sum_mu.cols(); ++r) {
                const double d = (sum_mu(a, r) - sum_mu(b, r)) / n;
                f += d * d;
            }
    return f;
}

McMoments accumulate_moments(const ModelSpec& spec, const ParameterSet& params,
                             long n_mc, std::mt19937_64& rng) {
    const int l = spec.dims.n_raters;
    const int kt = spec.dims.per_rater();
    const int t = spec.dims.n_times;
    const int k = spec.dims.n_replicates;

    std::vector<MatrixXd> roots;
    for (const auto& s : params.sigma_alpha) roots.push_back(psd_sqrt(s));
    MatrixXd gamma_root;
    if (spec.gamma_included) gamma_root = psd_sqrt(params.sigma_gamma);

    std::vector<MatrixXd> xb(l);
    for (int a = 0; a < l; ++a) xb[a] = spec.fixed_design * params.beta[a];

    McMoments mm;
    mm.sum_mu = MatrixXd::Zero(l, kt);
    mm.sum_mu2 = MatrixXd::Zero(l, kt);
    mm.sum_zeta = MatrixXd::Zero(l, kt);
    mm.sum_cross.assign(static_cast<std::size_t>(l * (l - 1) / 2),
                        MatrixXd::Zero(1, kt));
    mm.n = n_mc;

    std::normal_distribution<double> nd(0.0, 1.0);
    MatrixXd mu(l, kt);
    VectorXd zl(l);
    const bool need_positive = spec.family == Family::gamma_inverse;
    for (long it = 0; it < n_mc; ++it) {
        int attempts = 0;
        while (true) {
            // one joint realization of the random effects
            MatrixXd eta(l, kt);
            for (int a = 0; a < l; ++a) eta.row(a) = xb[a].transpose();
            for (int s = 0; s <= spec.spline_order; ++s) {
                for (int a = 0; a < l; ++a) zl[a] = nd(rng);
                const VectorXd alpha = roots[s] * zl;
                for (int a = 0; a < l; ++a)
                    eta.row(a) += alpha[a] * spec.basis[s].transpose();
            }
            if (spec.gamma_included)
                for (int j = 0; j < t; ++j) {
                    for (int a = 0; a < l; ++a) zl[a] = nd(rng);
                    const VectorXd g = gamma_root * zl;
                    for (int a = 0; a < l; ++a)
                        eta.row(a).segment(j * k, k).array() += g[a];
                }
            if (need_positive && eta.minCoeff() <= 0.0) {
                if (++attempts > 100)
                    throw DomainError("Gamma eta stayed nonpositive in MC evaluation");
                continue;
            }
            switch (spec.family) {
                case Family::gaussian_identity: mu = eta; break;
                case Family::poisson_log:
                    if (eta.maxCoeff() > 700.0)
                        throw OverflowGuard("Poisson MC exponent exceeds 700");
                    mu = eta.array().exp();
                    break;
                case Family::gamma_inverse: mu = eta.cwiseInverse(); break;
            }
            break;
        }
        mm.sum_mu += mu;
        mm.sum_mu2 += mu.cwiseProduct(mu);
        for (int a = 0; a < l; ++a)
            for (int r = 0; r < kt; ++r)
                mm.sum_zeta(a, r) +=
                    error_moment(spec.family, mu(a, r), params.dispersion);
        int pair = 0;
        for (int a = 0; a < l; ++a)
            for (int b = a + 1; b < l; ++b, ++pair)
                mm.sum_cross[pair] += (mu.row(a).array() * mu.row(b).array()).matrix();
    }
    return mm;
}

double ratio_from_moments(const McMoments& mm, const ModelSpec& spec,
                          CccNormalization norm) {
    return assemble_ratio(mm.num_raw(spec), mm.den_var(spec), mm.fixed_raw(spec),
                          norm, spec);
}

} // namespace

CccValue ccc_monte_carlo(const ModelSpec& spec, const ParameterSet& params,
                         long n_mc, std::mt19937_64& rng, CccNormalization norm) {
    if (n_mc < 100) throw DomainError("ccc_monte_carlo needs n_mc >= 100");
    // batches feed the jackknife standard error
    const int n_batches = n_mc >= 5000 ? 50 : 10;
    const long per_batch = n_mc / n_batches;
    std::vector<McMoments> batches;
    batches.reserve(n_batches);
    for (int b = 0; b < n_batches; ++b)
        batches.push_back(accumulate_moments(spec, params, per_batch, rng));

    McMoments total = batches[0];
    for (int b = 1; b < n_batches; ++b) {
        total.sum_mu += batches[b].sum_mu;
        total.sum_mu2 += batches[b].sum_mu2;
        total.sum_zeta += batches[b].sum_zeta;
        for (std::size_t p = 0; p < total.sum_cross.size(); ++p)
            total.sum_cross[p] += batches[b].sum_cross[p];
        total.n += batches[b].n;
    }

    CccValue out;
    out.method = CccMethod::monte_carlo;
    out.value = ratio_from_moments(total, spec, norm);

    std::vector<double> loo(n_batches);
    for (int b = 0; b < n_batches; ++b) {
        McMoments rest = total;
        rest.sum_mu -= batches[b].sum_mu;
        rest.sum_mu2 -= batches[b].sum_mu2;
        rest.sum_zeta -= batches[b].sum_zeta;
        for (std::size_t p = 0; p < rest.sum_cross.size(); ++p)
            rest.sum_cross[p] -= batches[b].sum_cross[p];
        rest.n -= batches[b].n;
        loo[b] = ratio_from_moments(rest, spec, norm);
    }
    double m = 0.0;
    for (double x : loo) m += x;
    m /= n_batches;
    double ss = 0.0;
    for (double x : loo) ss += (x - m) * (x - m);
    out.mc_std_error = std::sqrt((n_batches - 1.0) / n_batches * ss);
    return out;
}

CccBounds ccc_bounds(const ModelSpec& spec, const ParameterSet& params, long n_mc,
                     std::mt19937_64& rng) {
    double zeta_total = 0.0, var_total = 0.0;
    const int l = spec.dims.n_raters;
    const int kt = spec.dims.per_rater();
    switch (spec.family) {
        case Family::gaussian_identity: {
            for (int a = 0; a < l; ++a)
                for (int r = 0; r < kt; ++r) {
                    var_total += eta_variance(spec, params, r, a, a);
                    zeta_total += params.dispersion;
                }
            break;
        }
        case Family::poisson_log: {
            for (int a = 0; a < l; ++a) {
                const VectorXd xb = spec.fixed_design * params.beta[a];
                for (int r = 0; r < kt; ++r) {
                    const double v = eta_variance(spec, params, r, a, a);
                    const double lam = std::exp(xb[r] + 0.5 * v);
                    var_total += lam * lam * std::expm1(v);
                    zeta_total += lam;
                }
            }
            break;
        }
        case Family::gamma_inverse: {
            const McMoments mm = accumulate_moments(spec, params, n_mc, rng);
            var_total = mm.var_total(spec);
            zeta_total = mm.zeta_total();
            break;
        }
    }
    if (var_total <= 0.0)
        throw ZeroDenominator("Theorem-1 bound: total variance of mu is zero");
    CccBounds b;
    b.upper = 1.0 / (1.0 + zeta_total / var_total);
    b.lower = -b.upper;
    return b;
}

CccValue ccc_at_parameters(const ModelSpec& spec, const ParameterSet& params,
                           CccEvalMode eval, long n_mc, std::mt19937_64& rng,
                           CccNormalization norm) {
    if (eval == CccEvalMode::closed_when_available) {
        if (spec.family == Family::gaussian_identity) return ccc_lmm(spec, params, norm);
        if (spec.family == Family::poisson_log)
            return ccc_poisson_closed(spec, params, norm);
    }
    return ccc_monte_carlo(spec, params, n_mc, rng, norm);
}

double ccc_fiducial(const FiducialDraw& draw, const ModelSpec& spec, CccEvalMode eval,
                    long n_mc, std::mt19937_64& rng, CccNormalization norm) {
    if (draw.failed)
        throw NonConvergence("cannot evaluate CCC on a failed fiducial draw");
    const ParameterSet params = draw.as_parameter_set(spec);
    return ccc_at_parameters(spec, params, eval, n_mc, rng, norm).value;
}

CccValue ccc_point_estimate(const FitResult& fit, CccEvalMode eval, long n_mc,
                            std::mt19937_64& rng, CccNormalization norm) {
    return ccc_at_parameters(fit.spec, fit.estimates, eval, n_mc, rng, norm);
}

} // namespace cccfid

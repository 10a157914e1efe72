#include "cccfid/intervals.hpp"

#include "cccfid/parallel.hpp"
#include "cccfid/rng.hpp"
#include "cccfid/stats.hpp"

#include <algorithm>
#include <cmath>

namespace cccfid {

std::string interval_method_name(IntervalMethod m) {
    switch (m) {
        case IntervalMethod::fiducial_hdr: return "fiducial";
        case IntervalMethod::fisher_z: return "fisher_z";
        case IntervalMethod::bootstrap_bc: return "bootstrap";
    }
    return "unknown";
}

IntervalMethod interval_method_from_name(const std::string& name) {
    if (name == "fiducial" || name == "fiducial_hdr") return IntervalMethod::fiducial_hdr;
    if (name == "fisher_z" || name == "fisher-z") return IntervalMethod::fisher_z;
    if (name == "bootstrap" || name == "bootstrap_bc") return IntervalMethod::bootstrap_bc;
    throw ParseError("unknown interval method: " + name);
}

std::pair<double, double> hdr_interval(std::vector<double> samples, double alpha) {
    const std::size_t m = samples.size();
    if (m < 20) throw TooFewSamples("HDR needs at least 20 samples");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw DomainError("alpha must lie in (0,1)");
    std::sort(samples.begin(), samples.end());
    const std::size_t w = static_cast<std::size_t>(
        std::ceil((1.0 - alpha) * static_cast<double>(m)));
    std::size_t best = 0;
    double best_width = samples[w - 1] - samples[0];
    for (std::size_t i = 1; i + w <= m; ++i) {
        const double width = samples[i + w - 1] - samples[i];
        if (width < best_width) {
            best_width = width;
            best = i;
        }
    }
    return {samples[best], samples[best + w - 1]};
}

// ==================== fiducial interval ====================

IntervalResult fiducial_ccc_interval(const FitResult& fit,
                                     const FiducialIntervalOptions& opts,
                                     std::uint64_t seed) {
    const PredictorSet predictors = predict_conditional_means(fit);
    const FiducialSampler sampler(fit, predictors, opts.mode);

    std::vector<double> values(opts.n_draws,
                               std::numeric_limits<double>::quiet_NaN());
    std::vector<char> failed(opts.n_draws, 0);
    std::vector<char> retried(opts.n_draws, 0);
    parallel_for(
        static_cast<std::size_t>(opts.n_draws),
        [&](std::size_t i) {
            auto rng = substream(seed, RngStream::fiducial_draw, i);
            const FiducialDraw d = sampler.draw(rng);
            retried[i] = d.retries > 0 ? 1 : 0;
            if (d.failed) {
                failed[i] = 1;
                return;
            }
            values[i] = ccc_fiducial(d, fit.spec, opts.ccc_eval, opts.n_mc, rng,
                                     opts.normalization);
        },
        opts.n_threads);

    std::vector<double> good;
    good.reserve(values.size());
    long n_failed = 0, n_retried = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (failed[i]) {
            ++n_failed;
            continue;
        }
        good.push_back(values[i]);
        if (retried[i]) ++n_retried;
    }
    if (n_failed > opts.max_failure_rate * opts.n_draws)
        throw ExcessiveDrawFailures("more than " +
                                    std::to_string(100 * opts.max_failure_rate) +
                                    "% of fiducial draws failed");

    IntervalResult res;
    res.method = IntervalMethod::fiducial_hdr;
    res.alpha = opts.alpha;
    res.n_draws = static_cast<long>(good.size());
    auto rng_point = substream(seed, RngStream::monte_carlo, 0);
    res.point = ccc_point_estimate(fit, opts.ccc_eval, opts.n_mc, rng_point,
                                   opts.normalization)
                    .value;
    std::tie(res.lower, res.upper) = hdr_interval(good, opts.alpha);
    std::sort(good.begin(), good.end());
    res.diagnostics.n_failed_draws = n_failed;
    res.diagnostics.n_retried_draws = n_retried;
    res.diagnostics.draw_q025 = quantile_sorted(good, 0.025);
    res.diagnostics.draw_q50 = quantile_sorted(good, 0.5);
    res.diagnostics.draw_q975 = quantile_sorted(good, 0.975);
    return res;
}

IntervalResult fiducial_ccc_interval(const RatingDataset& data, const ModelSpec& spec,
                                     const FiducialIntervalOptions& opts,
                                     std::uint64_t seed) {
    FitResult fit;
    try {
        fit = fit_model(data, spec);
    } catch (const Error& e) {
        throw FitFailure(std::string("model fit failed: ") + e.what());
    }
    return fiducial_ccc_interval(fit, opts, seed);
}

// ==================== Fisher-Z interval ====================

namespace {

struct PairMoments {
    double cov = 0.0;
    double var_mean = 0.0; // (s_x^2 + s_y^2)/2
    double sd_prod = 0.0;  // s_x s_y
    double mean_diff2 = 0.0;
};

PairMoments pair_moments(const MatrixXd& subject_means, int a, int b) {
    const int n = static_cast<int>(subject_means.rows());
    const VectorXd x = subject_means.col(a);
    const VectorXd y = subject_means.col(b);
    const double mx = x.mean();
    const double my = y.mean();
    PairMoments pm;
    const VectorXd cx = x.array() - mx;
    const VectorXd cy = y.array() - my;
    const double sxx = cx.squaredNorm() / (n - 1);
    const double syy = cy.squaredNorm() / (n - 1);
    pm.cov = cx.dot(cy) / (n - 1);
    pm.var_mean = 0.5 * (sxx + syy);
    pm.sd_prod = std::sqrt(sxx * syy);
    pm.mean_diff2 = (mx - my) * (mx - my);
    return pm;
}

} // namespace

IntervalResult fisher_z_interval(const RatingDataset& data, const FitResult& fit,
                                 const FisherZOptions& opts, std::uint64_t seed) {
    const ModelSpec& spec = fit.spec;
    const Dims& d = data.dims();
    // per-subject aggregated pairs: rater means over all (time, replicate)
    MatrixXd subject_means = MatrixXd::Zero(d.n_subjects, d.n_raters);
    const int kt = d.per_rater();
    for (int i = 0; i < d.n_subjects; ++i) {
        const VectorXd v = data.subject_vector(i + 1);
        for (int a = 0; a < d.n_raters; ++a)
            subject_means(i, a) = v.segment(a * kt, kt).mean();
    }
    // pooled pairwise moments (reduces to the single pair for L = 2)
    PairMoments pooled;
    int n_pairs = 0;
    for (int a = 0; a < d.n_raters; ++a)
        for (int b = a + 1; b < d.n_raters; ++b, ++n_pairs) {
            const PairMoments pm = pair_moments(subject_means, a, b);
            pooled.cov += pm.cov;
            pooled.var_mean += pm.var_mean;
            pooled.sd_prod += pm.sd_prod;
            pooled.mean_diff2 += pm.mean_diff2;
        }
    pooled.cov /= n_pairs;
    pooled.var_mean /= n_pairs;
    pooled.sd_prod /= n_pairs;
    pooled.mean_diff2 /= n_pairs;

    auto rng_point = substream(seed, RngStream::monte_carlo, 0);
    const double rc = ccc_point_estimate(fit, opts.ccc_eval, opts.n_mc, rng_point,
                                         opts.normalization)
                          .value;
    if (rc * rc >= 1.0 - 1e-12)
        throw DegenerateVariance("Fisher-Z undefined at |CCC| = 1");
    const double rho = pooled.cov / pooled.sd_prod;
    if (std::fabs(rho) < 1e-8)
        throw DegenerateVariance("pairwise Pearson correlation is zero");
    const double u2 = pooled.mean_diff2 / pooled.sd_prod;

    // Lin (1989, with the published correction) variance of atanh(CCC)
    const int n = d.n_subjects;
    if (n < 3) throw DomainError("Fisher-Z needs at least 3 subjects");
    const double one_m_rc2 = 1.0 - rc * rc;
    double var_z = (1.0 - rho * rho) * rc * rc / (one_m_rc2 * rho * rho) +
                   2.0 * rc * rc * rc * (1.0 - rc) * u2 / (rho * one_m_rc2 * one_m_rc2) -
                   rc * rc * rc * rc * u2 * u2 /
                       (2.0 * rho * rho * one_m_rc2 * one_m_rc2);
    var_z = std::max(var_z, 1e-12) / (n - 2);

    const double z = std::atanh(rc);
    const double zq = normal_quantile(1.0 - opts.alpha / 2.0);
    IntervalResult res;
    res.method = IntervalMethod::fisher_z;
    res.alpha = opts.alpha;
    res.point = rc;
    res.lower = std::tanh(z - zq * std::sqrt(var_z));
    res.upper = std::tanh(z + zq * std::sqrt(var_z));
    res.n_draws = 0;
    return res;
}

IntervalResult fisher_z_interval(const RatingDataset& data, const ModelSpec& spec,
                                 const FisherZOptions& opts, std::uint64_t seed) {
    FitResult fit;
    try {
        fit = fit_model(data, spec);
    } catch (const Error& e) {
        throw FitFailure(std::string("model fit failed: ") + e.what());
    }
    return fisher_z_interval(data, fit, opts, seed);
}

// ==================== bias-corrected parametric bootstrap ====================

IntervalResult bootstrap_interval(const FitResult& fit, const BootstrapOptions& opts,
                                  std::uint64_t seed) {
    const ModelSpec& spec = fit.spec;
    const int n = static_cast<int>(fit.pseudo_obs.rows());

    auto rng_point = substream(seed, RngStream::monte_carlo, 0);
    const double point = ccc_point_estimate(fit, opts.ccc_eval, opts.n_mc, rng_point,
                                            opts.normalization)
                             .value;

    std::vector<double> values(opts.n_boot,
                               std::numeric_limits<double>::quiet_NaN());
    std::vector<char> ok(opts.n_boot, 0);
    parallel_for(
        static_cast<std::size_t>(opts.n_boot),
        [&](std::size_t b) {
            auto rng = substream(seed, RngStream::bootstrap, b);
            try {
                const RatingDataset resample =
                    simulate_from_model(spec, fit.estimates, n, rng);
                const FitResult refit = fit_model(resample, spec);
                values[b] = ccc_point_estimate(refit, opts.ccc_eval, opts.n_mc, rng,
                                               opts.normalization)
                                .value;
                ok[b] = 1;
            } catch (const Error&) {
                ok[b] = 0;
            }
        },
        opts.n_threads);

    std::vector<double> good;
    good.reserve(values.size());
    for (std::size_t b = 0; b < values.size(); ++b)
        if (ok[b]) good.push_back(values[b]);
    const long n_failed = opts.n_boot - static_cast<long>(good.size());
    if (n_failed > opts.max_fit_failure_rate * opts.n_boot)
        throw FitFailure("bootstrap refits failed on more than " +
                         std::to_string(100 * opts.max_fit_failure_rate) +
                         "% of resamples");

    // bias correction: z0 from the midrank fraction of resamples below the point
    std::sort(good.begin(), good.end());
    const double b_total = static_cast<double>(good.size());
    double n_less = 0.0, n_equal = 0.0;
    for (double v : good) {
        if (v < point) n_less += 1.0;
        else if (v == point) n_equal += 1.0;
    }
    double frac = (n_less + 0.5 * n_equal) / b_total;
    frac = std::min(std::max(frac, 1.0 / (b_total + 1.0)), b_total / (b_total + 1.0));
    const double z0 = normal_quantile(frac);
    const double zq = normal_quantile(1.0 - opts.alpha / 2.0);

    IntervalResult res;
    res.method = IntervalMethod::bootstrap_bc;
    res.alpha = opts.alpha;
    res.point = point;
    res.n_draws = static_cast<long>(good.size());
    res.lower = quantile_sorted(good, normal_cdf(2.0 * z0 - zq));
    res.upper = quantile_sorted(good, normal_cdf(2.0 * z0 + zq));
    res.diagnostics.n_failed_fits = n_failed;
    res.diagnostics.draw_q025 = quantile_sorted(good, 0.025);
    res.diagnostics.draw_q50 = quantile_sorted(good, 0.5);
    res.diagnostics.draw_q975 = quantile_sorted(good, 0.975);
    return res;
}

IntervalResult bootstrap_interval(const RatingDataset& data, const ModelSpec& spec,
                                  const BootstrapOptions& opts, std::uint64_t seed) {
    FitResult fit;
    try {
        fit = fit_model(data, spec);
    } catch (const Error& e) {
        throw FitFailure(std::string("model fit failed: ") + e.what());
    }
    return bootstrap_interval(fit, opts, seed);
}

} // namespace cccfid

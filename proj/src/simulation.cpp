#include "cccfid/simulation.hpp"

#include "cccfid/parallel.hpp"
#include "cccfid/rng.hpp"

#include <algorithm>
#include <cmath>

namespace cccfid {

// ==================== error models ====================

double Contaminant::variance() const {
    switch (kind) {
        case ContaminantKind::gamma: return p1 * p2 * p2;
        case ContaminantKind::lognormal: {
            const double s2 = p2 * p2;
            return (std::exp(s2) - 1.0) * std::exp(2.0 * p1 + s2);
        }
    }
    return 0.0;
}

double Contaminant::mean() const {
    switch (kind) {
        case ContaminantKind::gamma: return p1 * p2;
        case ContaminantKind::lognormal: return std::exp(p1 + 0.5 * p2 * p2);
    }
    return 0.0;
}

double ErrorModel::total_variance() const {
    if (!is_mixture) return gaussian_variance;
    return (1.0 - weight) * gaussian_variance + weight * contaminant.variance();
}

VectorXd draw_mixture_errors(const ErrorModel& model, int n, std::mt19937_64& rng) {
    VectorXd e(n);
    std::normal_distribution<double> nd(0.0, std::sqrt(model.gaussian_variance));
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    const double shift = model.contaminant.mean();
    for (int i = 0; i < n; ++i) {
        if (!model.is_mixture || ud(rng) >= model.weight) {
            e[i] = nd(rng);
        } else if (model.contaminant.kind == ContaminantKind::gamma) {
            std::gamma_distribution<double> gd(model.contaminant.p1,
                                               model.contaminant.p2);
            e[i] = gd(rng) - shift;
        } else {
            std::lognormal_distribution<double> ld(model.contaminant.p1,
                                                   model.contaminant.p2);
            e[i] = ld(rng) - shift;
        }
    }
    return e;
}

// ==================== scenarios ====================

ParameterSet Scenario::effective_truth() const {
    ParameterSet p = truth;
    if (error_model.is_mixture) p.dispersion = error_model.total_variance();
    return p;
}

double Scenario::true_ccc(std::uint64_t seed, CccNormalization norm) const {
    auto rng = substream(seed, RngStream::monte_carlo, 9001);
    return ccc_at_parameters(spec, effective_truth(),
                             CccEvalMode::closed_when_available, n_mc_ccc, rng, norm)
        .value;
}

namespace {

MatrixXd sym2(double a11, double a12, double a22) {
    MatrixXd m(2, 2);
    m << a11, a12, a12, a22;
    return m;
}

ParameterSet two_rater_params(double b01, double b02, double b11, double b12,
                              MatrixXd s0, MatrixXd s1_or_empty, MatrixXd sg,
                              double dispersion) {
    ParameterSet p;
    p.beta.resize(2);
    p.beta[0] = (VectorXd(2) << b01, b11).finished();
    p.beta[1] = (VectorXd(2) << b02, b12).finished();
    p.sigma_alpha.push_back(std::move(s0));
    if (s1_or_empty.size() > 0) p.sigma_alpha.push_back(std::move(s1_or_empty));
    p.sigma_gamma = std::move(sg);
    p.dispersion = dispersion;
    return p;
}

} // namespace

std::vector<Scenario> scenario_catalog() {
    std::vector<Scenario> cat;
    const MatrixXd zero2 = MatrixXd::Zero(2, 2);

    {
        Scenario s;
        s.name = "table1_gaussian";
        s.description = "two raters, T=10, K=1, random intercept+slope, Gaussian";
        s.spec = make_model_spec(Family::gaussian_identity, {30, 10, 1, 2}, 1, false);
        s.truth = two_rater_params(0.75, 0.50, -0.10, -0.06,
                                   sym2(0.45, 0.40, 0.49), sym2(0.10, 0.067, 0.06),
                                   zero2, 0.11);
        s.error_model.gaussian_variance = 0.11;
        s.n_subjects = {15, 30, 50};
        cat.push_back(std::move(s));
    }
    {
        Scenario s;
        s.name = "table2_poisson";
        s.description =
            "two raters, T=10, K=5, random intercept + subject-time interaction, Poisson";
        s.spec = make_model_spec(Family::poisson_log, {30, 10, 5, 2}, 0, true);
        s.truth = two_rater_params(4.50, 4.30, -0.03, 0.03,
                                   sym2(0.63, 0.60, 0.66), MatrixXd(),
                                   sym2(0.08, 0.05, 0.07), 1.0);
        s.n_subjects = {15, 30, 50, 100};
        s.n_replications = 100;
        cat.push_back(std::move(s));
    }
    {
        Scenario s;
        s.name = "tableS1_mixture_gamma";
        s.description = "table1 layout, errors 0.90 Normal(0,0.11) + 0.10 centered Gamma(0.5,2)";
        s.spec = make_model_spec(Family::gaussian_identity, {30, 10, 1, 2}, 1, false);
        s.truth = two_rater_params(0.75, 0.50, -0.10, -0.06,
                                   sym2(0.45, 0.40, 0.49), sym2(0.30, 0.20, 0.18),
                                   zero2, 0.11);
        s.error_model.is_mixture = true;
        s.error_model.weight = 0.10;
        s.error_model.gaussian_variance = 0.11;
        s.error_model.contaminant = {ContaminantKind::gamma, 0.5, 2.0};
        s.n_subjects = {30, 50, 100};
        cat.push_back(std::move(s));
    }
    {
        Scenario s;
        s.name = "tableS1_mixture_lognormal";
        s.description =
            "table1 layout, errors 0.90 Normal(0,0.11) + 0.10 centered LogNormal(0.5,0.7)";
        s.spec = make_model_spec(Family::gaussian_identity, {30, 10, 1, 2}, 1, false);
        s.truth = two_rater_params(0.75, 0.50, -0.10, -0.06,
                                   sym2(0.45, 0.40, 0.49), sym2(0.30, 0.20, 0.18),
                                   zero2, 0.11);
        s.error_model.is_mixture = true;
        s.error_model.weight = 0.10;
        s.error_model.gaussian_variance = 0.11;
        s.error_model.contaminant = {ContaminantKind::lognormal, 0.5, 0.7};
        s.n_subjects = {30, 50, 100};
        cat.push_back(std::move(s));
    }
    {
        Scenario s;
        s.name = "tableS2_three_rater";
        s.description = "three raters, T=10, K=1, random intercept+slope, Gaussian";
        s.spec = make_model_spec(Family::gaussian_identity, {30, 10, 1, 3}, 1, false);
        ParameterSet p;
        p.beta = {(VectorXd(2) << 0.75, -0.10).finished(),
                  (VectorXd(2) << 0.50, -0.06).finished(),
                  (VectorXd(2) << 0.60, -0.08).finished()};
        MatrixXd s0(3, 3), s1(3, 3);
        s0 << 0.45, 0.40, 0.42, 0.40, 0.49, 0.40, 0.42, 0.40, 0.45;
        s1 << 0.10, 0.067, 0.05, 0.067, 0.06, 0.06, 0.05, 0.06, 0.08;
        p.sigma_alpha = {s0, s1};
        p.sigma_gamma = MatrixXd::Zero(3, 3);
        p.dispersion = 0.11;
        s.truth = std::move(p);
        s.error_model.gaussian_variance = 0.11;
        s.n_subjects = {30, 50, 100};
        cat.push_back(std::move(s));
    }
    {
        Scenario s;
        s.name = "tableS3_three_level";
        s.description =
            "two raters, T=10, K=5, random intercept + subject-time interaction, Gaussian";
        s.spec = make_model_spec(Family::gaussian_identity, {30, 10, 5, 2}, 0, true);
        s.truth = two_rater_params(0.65, 0.40, -0.10, -0.06,
                                   sym2(0.45, 0.44, 0.49), MatrixXd(),
                                   sym2(0.10, 0.067, 0.06), 0.10);
        s.error_model.gaussian_variance = 0.10;
        s.n_subjects = {15, 30, 50};
        cat.push_back(std::move(s));
    }
    {
        Scenario s;
        s.name = "tableS4_gamma";
        s.description =
            "two raters, T=10, K=5, random intercept + subject-time interaction, Gamma(tau=25)";
        s.spec = make_model_spec(Family::gamma_inverse, {30, 10, 5, 2}, 0, true);
        s.truth = two_rater_params(2.0, 1.90, 0.08, 0.06,
                                   sym2(0.25, 0.22, 0.20), MatrixXd(),
                                   sym2(0.05, 0.04, 0.04), 25.0);
        s.n_subjects = {15, 30, 50, 100};
        s.n_replications = 100;
        s.n_mc_ccc = 1000000;
        cat.push_back(std::move(s));
    }
    {
        Scenario s;
        s.name = "s3_proxy";
        s.description =
            "two raters, T=10, K=1, random intercept+slope with larger slope variance";
        s.spec = make_model_spec(Family::gaussian_identity, {30, 10, 1, 2}, 1, false);
        s.truth = two_rater_params(0.75, 0.50, -0.10, -0.06,
                                   sym2(0.45, 0.40, 0.49), sym2(0.30, 0.21, 0.18),
                                   zero2, 0.11);
        s.error_model.gaussian_variance = 0.11;
        s.n_subjects = {30};
        cat.push_back(std::move(s));
    }
    return cat;
}

Scenario find_scenario(const std::string& name) {
    for (auto& s : scenario_catalog())
        if (s.name == name) return s;
    std::string known;
    for (const auto& s : scenario_catalog()) known += " " + s.name;
    throw UnknownScenario("unknown scenario '" + name + "'; catalog:" + known);
}

// ==================== dataset generation ====================

RatingDataset generate_dataset(const Scenario& scenario, int n_subjects,
                               std::mt19937_64& rng) {
    if (!scenario.error_model.is_mixture)
        return simulate_from_model(scenario.spec, scenario.truth, n_subjects, rng);
    if (scenario.spec.family != Family::gaussian_identity)
        throw DomainError("mixture errors are defined for Gaussian scenarios only");
    const MatrixXd eta =
        simulate_linear_predictors(scenario.spec, scenario.truth, n_subjects, rng);
    const int m = scenario.spec.dims.per_subject();
    MatrixXd y(n_subjects, m);
    for (int i = 0; i < n_subjects; ++i)
        y.row(i) = eta.row(i) +
                   draw_mixture_errors(scenario.error_model, m, rng).transpose();
    return dataset_from_matrix(scenario.spec, y);
}

// ==================== coverage study ====================

namespace {

struct ReplicationOutcome {
    bool ok = false;
    std::vector<double> lower, upper; // per method
};

} // namespace

CoverageReport coverage_study(const Scenario& scenario,
                              const std::vector<IntervalMethod>& methods,
                              std::uint64_t seed, const CoverageOptions& opts) {
    const std::vector<int> ns =
        opts.n_subjects.empty() ? scenario.n_subjects : opts.n_subjects;
    const int n_rep =
        opts.n_replications > 0 ? opts.n_replications : scenario.n_replications;
    const long n_draws =
        opts.n_draws > 0 ? opts.n_draws : scenario.n_draws_per_interval;
    const long n_boot = opts.n_boot > 0 ? opts.n_boot : scenario.n_boot_per_interval;

    CoverageReport report;
    report.scenario = scenario.name;
    report.n_replications = n_rep;
    report.n_draws = n_draws;
    report.seed = seed;
    report.alpha = opts.alpha;
    report.true_ccc = scenario.true_ccc(seed);

    for (int n : ns) {
        ModelSpec spec_n = scenario.spec;
        spec_n.dims.n_subjects = n;
        Scenario sc_n = scenario;
        sc_n.spec = spec_n;

        std::vector<ReplicationOutcome> outcomes(n_rep);
        parallel_for(
            static_cast<std::size_t>(n_rep),
            [&](std::size_t r) {
                // substreams keyed by (N, replication) so every run of the
                // same seed reproduces the same replication datasets
                const std::uint64_t rep_key =
                    (static_cast<std::uint64_t>(n) << 32) | r;
                auto rng = substream(seed, RngStream::replication, rep_key);
                const std::uint64_t interval_seed = rng();
                ReplicationOutcome& out = outcomes[r];
                try {
                    const RatingDataset data = generate_dataset(sc_n, n, rng);
                    const FitResult fit = fit_model(data, spec_n);
                    for (IntervalMethod m : methods) {
                        IntervalResult res;
                        switch (m) {
                            case IntervalMethod::fiducial_hdr: {
                                FiducialIntervalOptions fo;
                                fo.n_draws = n_draws;
                                fo.alpha = opts.alpha;
                                fo.ccc_eval = opts.ccc_eval;
                                fo.n_mc = opts.n_mc;
                                fo.n_threads = 1;
                                res = fiducial_ccc_interval(fit, fo, interval_seed);
                                break;
                            }
                            case IntervalMethod::fisher_z: {
                                FisherZOptions zo;
                                zo.alpha = opts.alpha;
                                zo.ccc_eval = opts.ccc_eval;
                                zo.n_mc = opts.n_mc;
                                res = fisher_z_interval(data, fit, zo, interval_seed);
                                break;
                            }
                            case IntervalMethod::bootstrap_bc: {
                                BootstrapOptions bo;
                                bo.n_boot = n_boot;
                                bo.alpha = opts.alpha;
                                bo.ccc_eval = opts.ccc_eval;
                                bo.n_mc = opts.n_mc;
                                bo.n_threads = 1;
                                res = bootstrap_interval(fit, bo, interval_seed);
                                break;
                            }
                        }
                        out.lower.push_back(res.lower);
                        out.upper.push_back(res.upper);
                    }
                    out.ok = true;
                } catch (const Error&) {
                    out.ok = false;
                }
            },
            opts.n_threads);

        int n_ok = 0;
        for (const auto& o : outcomes) n_ok += o.ok ? 1 : 0;
        if (n_ok < (1.0 - opts.max_failure_rate) * n_rep)
            throw FitFailure("coverage study: more than " +
                             std::to_string(100 * opts.max_failure_rate) +
                             "% replications failed");

        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            CoverageRow row;
            row.n_subjects = n;
            row.method = methods[mi];
            int covered = 0;
            for (const auto& o : outcomes) {
                if (!o.ok) continue;
                row.avg_lower += o.lower[mi];
                row.avg_upper += o.upper[mi];
                row.avg_width += o.upper[mi] - o.lower[mi];
                if (o.lower[mi] <= report.true_ccc && report.true_ccc <= o.upper[mi])
                    ++covered;
            }
            row.n_ok = n_ok;
            row.n_failed = n_rep - n_ok;
            row.avg_lower /= n_ok;
            row.avg_upper /= n_ok;
            row.avg_width /= n_ok;
            row.coverage = static_cast<double>(covered) / n_ok;
            row.coverage_se =
                std::sqrt(std::max(row.coverage * (1.0 - row.coverage), 1e-12) / n_ok);
            report.rows.push_back(row);
        }
    }
    return report;
}

// ==================== sampling oracle ====================

double ccc_sample_oracle(const Scenario& scenario, long n_subjects,
                         std::mt19937_64& rng, double* std_error) {
    const ModelSpec& spec = scenario.spec;
    const int l = spec.dims.n_raters;
    const int kt = spec.dims.per_rater();
    const int n_pairs = l * (l - 1) / 2;

    const int n_batches = 50;
    const long per_batch = std::max<long>(n_subjects / n_batches, 2);

    struct Moments {
        MatrixXd sum_y, sum_y2;
        std::vector<MatrixXd> sum_cross;
        long n = 0;
    };
    std::vector<Moments> batches(n_batches);

    for (int b = 0; b < n_batches; ++b) {
        Moments& mo = batches[b];
        mo.sum_y = MatrixXd::Zero(l, kt);
        mo.sum_y2 = MatrixXd::Zero(l, kt);
        mo.sum_cross.assign(n_pairs, MatrixXd::Zero(1, kt));
        mo.n = per_batch;
        const RatingDataset data =
            generate_dataset(scenario, static_cast<int>(per_batch), rng);
        for (long i = 1; i <= per_batch; ++i) {
            const VectorXd v = data.subject_vector(static_cast<int>(i));
            for (int a = 0; a < l; ++a) {
                mo.sum_y.row(a) += v.segment(a * kt, kt).transpose();
                mo.sum_y2.row(a) +=
                    v.segment(a * kt, kt).array().square().matrix().transpose();
            }
            int pair = 0;
            for (int a = 0; a < l; ++a)
                for (int bb = a + 1; bb < l; ++bb, ++pair)
                    mo.sum_cross[pair] += (v.segment(a * kt, kt).array() *
                                           v.segment(bb * kt, kt).array())
                                              .matrix()
                                              .transpose();
        }
    }

    // the defining ratio from raw cell moments (subject-averaged throughout)
    const auto ccc_from = [&](const Moments& mo) {
        double num = 0.0, den_var = 0.0, fixed = 0.0;
        int pair = 0;
        for (int a = 0; a < l; ++a)
            for (int bb = a + 1; bb < l; ++bb, ++pair)
                for (int r = 0; r < kt; ++r) {
                    const double ma = mo.sum_y(a, r) / mo.n;
                    const double mb = mo.sum_y(bb, r) / mo.n;
                    num += mo.sum_cross[pair](0, r) / mo.n - ma * mb;
                    fixed += (ma - mb) * (ma - mb);
                }
        for (int a = 0; a < l; ++a)
            for (int r = 0; r < kt; ++r) {
                const double ma = mo.sum_y(a, r) / mo.n;
                den_var += mo.sum_y2(a, r) / mo.n - ma * ma;
            }
        return 2.0 * num / ((l - 1) * den_var + fixed);
    };

    Moments total = batches[0];
    for (int b = 1; b < n_batches; ++b) {
        total.sum_y += batches[b].sum_y;
        total.sum_y2 += batches[b].sum_y2;
        for (int p = 0; p < n_pairs; ++p) total.sum_cross[p] += batches[b].sum_cross[p];
        total.n += batches[b].n;
    }
    const double value = ccc_from(total);

    if (std_error) {
        std::vector<double> loo(n_batches);
        for (int b = 0; b < n_batches; ++b) {
            Moments rest = total;
            rest.sum_y -= batches[b].sum_y;
            rest.sum_y2 -= batches[b].sum_y2;
            for (int p = 0; p < n_pairs; ++p) rest.sum_cross[p] -= batches[b].sum_cross[p];
            rest.n -= batches[b].n;
            loo[b] = ccc_from(rest);
        }
        double m = 0.0;
        for (double x : loo) m += x;
        m /= n_batches;
        double ss = 0.0;
        for (double x : loo) ss += (x - m) * (x - m);
        *std_error = std::sqrt((n_batches - 1.0) / n_batches * ss);
    }
    return value;
}

} // namespace cccfid

#include "cccfid/cli_io.hpp"

#include "cccfid/rng.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>

namespace cccfid {

// ==================== dataset files ====================

RatingDataset parse_dataset_csv(const std::string& path, std::optional<Family> family) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open dataset file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file");
    // tolerate trailing carriage returns from foreign line endings
    auto strip = [](std::string s) {
        while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
        return s;
    };
    if (strip(line) != "subject,time,replicate,rater,value")
        throw ParseError(path + ":1: header must be subject,time,replicate,rater,value");

    std::vector<RatingRecord> records;
    Dims dims{0, 0, 0, 0};
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip(line);
        if (line.empty()) continue;
        std::istringstream row(line);
        RatingRecord r;
        char c1, c2, c3, c4;
        if (!(row >> r.subject >> c1 >> r.time >> c2 >> r.replicate >> c3 >> r.rater >>
              c4 >> r.value) ||
            c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',') {
            throw ParseError(path + ":" + std::to_string(line_no) +
                             ": expected subject,time,replicate,rater,value");
        }
        std::string rest;
        if (row >> rest)
            throw ParseError(path + ":" + std::to_string(line_no) + ": trailing fields");
        if (r.subject < 1 || r.time < 1 || r.replicate < 1 || r.rater < 1)
            throw ParseError(path + ":" + std::to_string(line_no) +
                             ": indices must be positive");
        dims.n_subjects = std::max(dims.n_subjects, r.subject);
        dims.n_times = std::max(dims.n_times, r.time);
        dims.n_replicates = std::max(dims.n_replicates, r.replicate);
        dims.n_raters = std::max(dims.n_raters, r.rater);
        records.push_back(r);
    }
    if (records.empty()) throw ParseError(path + ": no data rows");

    // name missing / duplicate cells before handing off
    std::map<std::tuple<int, int, int, int>, int> counts;
    for (const auto& r : records)
        counts[{r.subject, r.time, r.replicate, r.rater}] += 1;
    for (int i = 1; i <= dims.n_subjects; ++i)
        for (int j = 1; j <= dims.n_times; ++j)
            for (int k = 1; k <= dims.n_replicates; ++k)
                for (int l = 1; l <= dims.n_raters; ++l) {
                    const auto it = counts.find({i, j, k, l});
                    if (it == counts.end()) {
                        std::ostringstream msg;
                        msg << path << ": missing cell (subject=" << i << ", time=" << j
                            << ", replicate=" << k << ", rater=" << l << ")";
                        throw UnbalancedDesign(msg.str());
                    }
                    if (it->second > 1) {
                        std::ostringstream msg;
                        msg << path << ": duplicate cell (subject=" << i
                            << ", time=" << j << ", replicate=" << k << ", rater=" << l
                            << ")";
                        throw UnbalancedDesign(msg.str());
                    }
                }

    RatingDataset data(std::move(records), dims);
    data.validate(family);
    return data;
}

void write_dataset_csv(const RatingDataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open output file: " + path);
    out << "subject,time,replicate,rater,value\n";
    out << std::setprecision(17);
    for (const auto& r : data.records())
        out << r.subject << ',' << r.time << ',' << r.replicate << ',' << r.rater << ','
            << r.value << '\n';
}

// ==================== configuration ====================

std::uint64_t RunConfig::resolve_seed() {
    if (!seed) {
        std::random_device rd;
        seed = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    }
    return *seed;
}

ModelSpec spec_from_config(const RunConfig& config, const Dims& dims) {
    std::optional<bool> gamma;
    if (config.gamma == "on") gamma = true;
    else if (config.gamma == "off") gamma = false;
    else if (config.gamma != "auto")
        throw ParseError("gamma must be auto, on or off");
    return make_model_spec(family_from_name(config.family), dims, config.spline_order,
                           gamma, config.alpha);
}

namespace {

CccEvalMode eval_from(const std::string& s) {
    if (s == "closed") return CccEvalMode::closed_when_available;
    if (s == "mc" || s == "monte_carlo") return CccEvalMode::monte_carlo;
    throw ParseError("ccc_eval must be closed or mc");
}

DrawMode mode_from(const std::string& s) {
    if (s == "joint") return DrawMode::joint;
    if (s == "proxy") return DrawMode::proxy;
    throw ParseError("mode must be joint or proxy");
}

Json matrix_to_json(const MatrixXd& m) {
    Json rows = Json::array();
    for (int i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(row);
    }
    return rows;
}

Json params_to_json(const ModelSpec& spec, const ParameterSet& p) {
    Json j;
    Json betas = Json::array();
    for (const auto& b : p.beta) {
        Json row = Json::array();
        for (int i = 0; i < b.size(); ++i) row.push_back(b[i]);
        betas.push_back(row);
    }
    j["beta"] = betas;
    Json alphas = Json::array();
    for (const auto& s : p.sigma_alpha) alphas.push_back(matrix_to_json(s));
    j["sigma_alpha"] = alphas;
    if (spec.gamma_included) j["sigma_gamma"] = matrix_to_json(p.sigma_gamma);
    j["dispersion"] = p.dispersion;
    return j;
}

std::vector<std::vector<int>> rater_subsets(int n_raters) {
    std::vector<std::vector<int>> subsets;
    if (n_raters == 2) {
        subsets.push_back({1, 2});
        return subsets;
    }
    for (int a = 1; a <= n_raters; ++a)
        for (int b = a + 1; b <= n_raters; ++b) subsets.push_back({a, b});
    std::vector<int> all(n_raters);
    for (int a = 0; a < n_raters; ++a) all[a] = a + 1;
    subsets.push_back(all);
    return subsets;
}

std::string subset_label(const std::vector<int>& subset, int n_raters) {
    if (static_cast<int>(subset.size()) == n_raters && n_raters > 2)
        return "all_raters";
    std::string s = "raters";
    for (int r : subset) s += "_" + std::to_string(r);
    return s;
}

} // namespace

Json interval_result_to_json(const IntervalResult& res, const std::vector<int>& subset,
                             const CccBounds& bounds, std::uint64_t seed) {
    Json j;
    j["method"] = interval_method_name(res.method);
    j["subset"] = subset;
    j["point"] = res.point;
    j["lower"] = res.lower;
    j["upper"] = res.upper;
    j["width"] = res.width();
    j["alpha"] = res.alpha;
    j["bounds"] = {{"lower", bounds.lower}, {"upper", bounds.upper}};
    j["seed"] = seed;
    j["diagnostics"] = {{"n_draws", res.n_draws},
                        {"n_failed_draws", res.diagnostics.n_failed_draws},
                        {"n_retried_draws", res.diagnostics.n_retried_draws},
                        {"n_failed_fits", res.diagnostics.n_failed_fits},
                        {"draw_q025", res.diagnostics.draw_q025},
                        {"draw_q50", res.diagnostics.draw_q50},
                        {"draw_q975", res.diagnostics.draw_q975}};
    return j;
}

// ==================== commands ====================

Json run_fit(RunConfig config) {
    const std::uint64_t seed = config.resolve_seed();
    const Family family = family_from_name(config.family);
    const RatingDataset data = parse_dataset_csv(config.dataset_path, family);
    const ModelSpec spec = spec_from_config(config, data.dims());
    const FitResult fit = fit_model(data, spec);

    Json j;
    j["command"] = "fit";
    j["family"] = config.family;
    j["dims"] = {{"n_subjects", data.dims().n_subjects},
                 {"n_times", data.dims().n_times},
                 {"n_replicates", data.dims().n_replicates},
                 {"n_raters", data.dims().n_raters}};
    j["gamma_included"] = spec.gamma_included;
    j["estimates"] = params_to_json(spec, fit.estimates);
    j["dispersion_pivot_estimate"] = fit.dispersion_pivot_estimate;
    j["residual_df"] = fit.residual_df;
    j["trace"] = {{"outer_iterations", fit.trace.outer_iterations},
                  {"reml_iterations", fit.trace.reml_iterations},
                  {"reml_grad_norm", fit.trace.reml_grad_norm},
                  {"converged", fit.trace.converged}};
    auto rng = substream(seed, RngStream::monte_carlo, 0);
    j["ccc_point"] = ccc_point_estimate(fit, eval_from(config.ccc_eval), config.n_mc,
                                        rng,
                                        normalization_from_name(config.ccc_normalization))
                         .value;
    j["seed"] = seed;
    return j;
}

Json run_interval(RunConfig config) {
    const std::uint64_t seed = config.resolve_seed();
    const Family family = family_from_name(config.family);
    const RatingDataset full = parse_dataset_csv(config.dataset_path, family);
    const CccNormalization norm = normalization_from_name(config.ccc_normalization);
    const CccEvalMode eval = eval_from(config.ccc_eval);

    Json j;
    j["command"] = "interval";
    j["family"] = config.family;
    j["alpha"] = config.alpha;
    j["mode"] = config.mode;
    j["normalization"] = config.ccc_normalization;
    j["seed"] = seed;
    Json results = Json::array();

    const auto subsets = rater_subsets(full.dims().n_raters);
    std::uint64_t subset_index = 0;
    for (const auto& subset : subsets) {
        const RatingDataset data = static_cast<int>(subset.size()) ==
                                           full.dims().n_raters
                                       ? full
                                       : full.subset_raters(subset);
        const ModelSpec spec = spec_from_config(config, data.dims());
        const FitResult fit = fit_model(data, spec);
        const std::uint64_t subset_seed =
            detail::splitmix64(seed ^ (0x5151u + subset_index++));

        auto rng_b = substream(subset_seed, RngStream::monte_carlo, 77);
        const CccBounds bounds = ccc_bounds(spec, fit.estimates, config.n_mc, rng_b);

        for (const auto& method_name : config.methods) {
            const IntervalMethod method = interval_method_from_name(method_name);
            IntervalResult res;
            switch (method) {
                case IntervalMethod::fiducial_hdr: {
                    FiducialIntervalOptions fo;
                    fo.n_draws = config.n_draws;
                    fo.alpha = config.alpha;
                    fo.mode = mode_from(config.mode);
                    fo.ccc_eval = eval;
                    fo.n_mc = config.n_mc;
                    fo.normalization = norm;
                    fo.n_threads = config.n_threads;
                    res = fiducial_ccc_interval(fit, fo, subset_seed);
                    break;
                }
                case IntervalMethod::fisher_z: {
                    FisherZOptions zo;
                    zo.alpha = config.alpha;
                    zo.ccc_eval = eval;
                    zo.n_mc = config.n_mc;
                    zo.normalization = norm;
                    res = fisher_z_interval(data, fit, zo, subset_seed);
                    break;
                }
                case IntervalMethod::bootstrap_bc: {
                    BootstrapOptions bo;
                    bo.n_boot = config.n_boot;
                    bo.alpha = config.alpha;
                    bo.ccc_eval = eval;
                    bo.n_mc = config.n_mc;
                    bo.normalization = norm;
                    bo.n_threads = config.n_threads;
                    res = bootstrap_interval(fit, bo, subset_seed);
                    break;
                }
            }
            Json rec = interval_result_to_json(res, subset, bounds, seed);
            rec["subset_label"] = subset_label(subset, full.dims().n_raters);
            results.push_back(rec);
        }
    }
    j["results"] = results;
    return j;
}

Json run_bounds(RunConfig config) {
    const std::uint64_t seed = config.resolve_seed();
    const Family family = family_from_name(config.family);
    const RatingDataset data = parse_dataset_csv(config.dataset_path, family);
    const ModelSpec spec = spec_from_config(config, data.dims());
    const FitResult fit = fit_model(data, spec);
    auto rng = substream(seed, RngStream::monte_carlo, 77);
    const CccBounds bounds = ccc_bounds(spec, fit.estimates, config.n_mc, rng);
    auto rng_p = substream(seed, RngStream::monte_carlo, 0);
    const double point = ccc_point_estimate(fit, eval_from(config.ccc_eval),
                                            config.n_mc, rng_p,
                                            normalization_from_name(
                                                config.ccc_normalization))
                             .value;
    Json j;
    j["command"] = "bounds";
    j["family"] = config.family;
    j["bounds"] = {{"lower", bounds.lower}, {"upper", bounds.upper}};
    j["ccc_point"] = point;
    j["seed"] = seed;
    return j;
}

Json coverage_report_to_json(const CoverageReport& report) {
    Json j;
    j["command"] = "simulate";
    j["scenario"] = report.scenario;
    j["true_ccc"] = report.true_ccc;
    j["n_replications"] = report.n_replications;
    j["n_draws"] = report.n_draws;
    j["alpha"] = report.alpha;
    j["seed"] = report.seed;
    Json rows = Json::array();
    for (const auto& r : report.rows) {
        Json row;
        row["n_subjects"] = r.n_subjects;
        row["method"] = interval_method_name(r.method);
        row["avg_lower"] = r.avg_lower;
        row["avg_upper"] = r.avg_upper;
        row["avg_width"] = r.avg_width;
        row["coverage"] = r.coverage;
        row["coverage_se"] = r.coverage_se;
        row["n_ok"] = r.n_ok;
        row["n_failed"] = r.n_failed;
        rows.push_back(row);
    }
    j["rows"] = rows;
    return j;
}

std::string coverage_table_text(const CoverageReport& report) {
    std::ostringstream out;
    out << "scenario: " << report.scenario << "   CCC (true): " << std::fixed
        << std::setprecision(3) << report.true_ccc
        << "   replications: " << report.n_replications << "\n";
    out << std::left << std::setw(6) << "N" << std::setw(12) << "method"
        << std::setw(18) << "avg limits" << std::setw(10) << "width" << std::setw(10)
        << "coverage"
        << "\n";
    for (const auto& r : report.rows) {
        std::ostringstream lim;
        lim << "(" << std::fixed << std::setprecision(3) << r.avg_lower << ", "
            << r.avg_upper << ")";
        out << std::left << std::setw(6) << r.n_subjects << std::setw(12)
            << interval_method_name(r.method) << std::setw(18) << lim.str()
            << std::setw(10) << std::setprecision(3) << r.avg_width << std::setw(10)
            << std::setprecision(3) << r.coverage << "\n";
    }
    return out.str();
}

Json run_simulate(RunConfig config) {
    const std::uint64_t seed = config.resolve_seed();
    const Scenario scenario = find_scenario(config.scenario);
    std::vector<IntervalMethod> methods;
    for (const auto& m : config.methods) methods.push_back(interval_method_from_name(m));

    CoverageOptions opts;
    opts.n_subjects = config.n_subjects;
    opts.n_replications = config.n_replications;
    opts.n_draws = config.n_draws != 10000 ? config.n_draws : 0; // 0: scenario default
    opts.n_boot = config.n_boot != 2000 ? config.n_boot : 0;
    opts.alpha = config.alpha;
    opts.ccc_eval = eval_from(config.ccc_eval);
    opts.n_threads = config.n_threads;

    const CoverageReport report = coverage_study(scenario, methods, seed, opts);
    Json j = coverage_report_to_json(report);
    j["table"] = coverage_table_text(report);
    return j;
}

} // namespace cccfid

#pragma once

#include "cccfid/ccc.hpp"
#include "cccfid/estimation.hpp"
#include "cccfid/fiducial.hpp"
#include "cccfid/types.hpp"

#include <cstdint>
#include <utility>

namespace cccfid {

enum class IntervalMethod { fiducial_hdr, fisher_z, bootstrap_bc };

std::string interval_method_name(IntervalMethod m);
IntervalMethod interval_method_from_name(const std::string& name);

struct IntervalDiagnostics {
    long n_failed_draws = 0;
    long n_retried_draws = 0;
    long n_failed_fits = 0; // bootstrap refits
    double draw_q025 = 0.0, draw_q50 = 0.0, draw_q975 = 0.0;
};

struct IntervalResult {
    IntervalMethod method = IntervalMethod::fiducial_hdr;
    double point = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    double alpha = 0.05;
    long n_draws = 0;
    IntervalDiagnostics diagnostics;
    double width() const { return upper - lower; }
};

// Shortest window of ceil((1-alpha) m) consecutive order statistics; ties
// resolve to the smallest lower endpoint. Throws TooFewSamples for m < 20.
std::pair<double, double> hdr_interval(std::vector<double> samples, double alpha);

struct FiducialIntervalOptions {
    long n_draws = 10000;
    double alpha = 0.05;
    DrawMode mode = DrawMode::joint;
    CccEvalMode ccc_eval = CccEvalMode::closed_when_available;
    long n_mc = 100000;              // per-draw MC size when no closed form
    CccNormalization normalization = CccNormalization::factor2_subject_avg;
    double max_failure_rate = 0.05;
    int n_threads = 0;               // 0: hardware concurrency
};

// End-to-end fiducial interval: fit, predictors, n_draws joint pivots, CCC
// per draw, highest-density region.
IntervalResult fiducial_ccc_interval(const RatingDataset& data, const ModelSpec& spec,
                                     const FiducialIntervalOptions& opts,
                                     std::uint64_t seed);
// shared-fit variant used by the coverage harness
IntervalResult fiducial_ccc_interval(const FitResult& fit,
                                     const FiducialIntervalOptions& opts,
                                     std::uint64_t seed);

struct FisherZOptions {
    double alpha = 0.05;
    CccEvalMode ccc_eval = CccEvalMode::closed_when_available;
    long n_mc = 100000;
    CccNormalization normalization = CccNormalization::factor2_subject_avg;
};

// Fisher-Z interval: atanh of the model CCC with Lin's (1989, corrected)
// variance evaluated on per-subject aggregated rater pairs (pooled pairwise
// moments when L > 2).
IntervalResult fisher_z_interval(const RatingDataset& data, const ModelSpec& spec,
                                 const FisherZOptions& opts, std::uint64_t seed);
IntervalResult fisher_z_interval(const RatingDataset& data, const FitResult& fit,
                                 const FisherZOptions& opts, std::uint64_t seed);

struct BootstrapOptions {
    long n_boot = 2000;
    double alpha = 0.05;
    CccEvalMode ccc_eval = CccEvalMode::closed_when_available;
    long n_mc = 100000;
    CccNormalization normalization = CccNormalization::factor2_subject_avg;
    double max_fit_failure_rate = 0.10;
    int n_threads = 0;
};

// Bias-corrected parametric bootstrap: refit on resamples from the fitted
// model, BC percentile interval of the plug-in CCCs.
IntervalResult bootstrap_interval(const RatingDataset& data, const ModelSpec& spec,
                                  const BootstrapOptions& opts, std::uint64_t seed);
IntervalResult bootstrap_interval(const FitResult& fit, const BootstrapOptions& opts,
                                  std::uint64_t seed);

} // namespace cccfid

#pragma once

#include "cccfid/ccc.hpp"
#include "cccfid/intervals.hpp"
#include "cccfid/types.hpp"

#include <cstdint>
#include <random>

namespace cccfid {

// ---------------- error models ----------------

enum class ContaminantKind { gamma, lognormal };

struct Contaminant {
    ContaminantKind kind = ContaminantKind::gamma;
    double p1 = 0.5; // shape (gamma) or location (lognormal)
    double p2 = 2.0; // scale
    double variance() const;
    double mean() const; // before centering
};

// Errors are either the family's own noise or, for Gaussian scenarios, a
// two-component mixture of a centered normal and a centered contaminant.
struct ErrorModel {
    bool is_mixture = false;
    double weight = 0.0;            // contaminant probability
    double gaussian_variance = 0.0; // normal component variance
    Contaminant contaminant;
    double total_variance() const;
};

// ---------------- scenarios ----------------

struct Scenario {
    std::string name;
    std::string description;
    ModelSpec spec;
    ParameterSet truth;
    ErrorModel error_model;
    std::vector<int> n_subjects{30};
    int n_replications = 200;
    long n_draws_per_interval = 2000;
    long n_boot_per_interval = 1000;
    long n_mc_ccc = 200000; // MC budget for the true CCC when no closed form

    // truth with the mixture's total variance substituted for the dispersion
    ParameterSet effective_truth() const;
    double true_ccc(std::uint64_t seed,
                    CccNormalization norm = CccNormalization::factor2_subject_avg) const;
};

// all shipped scenarios, parameters transcribed from the published tables
std::vector<Scenario> scenario_catalog();
Scenario find_scenario(const std::string& name);

// ---------------- dataset generation ----------------

RatingDataset generate_dataset(const Scenario& scenario, int n_subjects,
                               std::mt19937_64& rng);

// raw mixture error draws (exposed for the bookkeeping tests)
VectorXd draw_mixture_errors(const ErrorModel& model, int n, std::mt19937_64& rng);

// ---------------- coverage studies ----------------

struct CoverageRow {
    int n_subjects = 0;
    IntervalMethod method = IntervalMethod::fiducial_hdr;
    double avg_lower = 0.0;
    double avg_upper = 0.0;
    double avg_width = 0.0;
    double coverage = 0.0;
    double coverage_se = 0.0; // binomial
    int n_ok = 0;
    int n_failed = 0;
};

struct CoverageReport {
    std::string scenario;
    double true_ccc = 0.0;
    int n_replications = 0;
    long n_draws = 0;
    std::uint64_t seed = 0;
    double alpha = 0.05;
    std::vector<CoverageRow> rows;
};

struct CoverageOptions {
    std::vector<int> n_subjects;  // empty: scenario defaults
    int n_replications = 0;       // 0: scenario default
    long n_draws = 0;             // 0: scenario default
    long n_boot = 0;              // 0: scenario default
    double alpha = 0.05;
    long n_mc = 20000;            // per-draw MC size when no closed form
    CccEvalMode ccc_eval = CccEvalMode::closed_when_available;
    int n_threads = 0;
    double max_failure_rate = 0.10;
};

CoverageReport coverage_study(const Scenario& scenario,
                              const std::vector<IntervalMethod>& methods,
                              std::uint64_t seed, const CoverageOptions& opts = {});

// ---------------- sampling oracle ----------------

// CCC estimated directly from sample moments of simulated ratings per the
// defining ratio, bypassing every closed form; SE by delete-one-batch
// jackknife over subject batches.
double ccc_sample_oracle(const Scenario& scenario, long n_subjects,
                         std::mt19937_64& rng, double* std_error = nullptr);

} // namespace cccfid

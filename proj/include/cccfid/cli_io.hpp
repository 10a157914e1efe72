#pragma once

#include "cccfid/ccc.hpp"
#include "cccfid/intervals.hpp"
#include "cccfid/simulation.hpp"
#include "cccfid/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cccfid {

using Json = nlohmann::ordered_json;

// ---------------- dataset files ----------------

// long format with header subject,time,replicate,rater,value; the design
// must be balanced and cells unique
RatingDataset parse_dataset_csv(const std::string& path,
                                std::optional<Family> family = std::nullopt);
void write_dataset_csv(const RatingDataset& data, const std::string& path);

// ---------------- run configuration ----------------

struct RunConfig {
    std::string command; // fit | interval | bounds | simulate
    std::string dataset_path;
    std::string scenario;
    std::string family = "gaussian";
    int spline_order = 1;
    std::string gamma = "auto"; // auto | on | off
    double alpha = 0.05;
    long n_draws = 10000;
    long n_mc = 100000;
    long n_boot = 2000;
    std::optional<std::uint64_t> seed;
    std::string mode = "joint"; // joint | proxy
    std::string ccc_normalization = "factor2_subject_avg";
    std::string ccc_eval = "closed"; // closed | mc
    std::vector<std::string> methods{"fiducial"};
    std::vector<int> n_subjects; // simulate: empty = scenario defaults
    int n_replications = 0;      // simulate: 0 = scenario default
    int n_threads = 0;

    std::uint64_t resolve_seed(); // draws and stores a seed when absent
};

ModelSpec spec_from_config(const RunConfig& config, const Dims& dims);

// ---------------- commands (JSON in, JSON out) ----------------

Json run_fit(RunConfig config);
Json run_interval(RunConfig config);
Json run_bounds(RunConfig config);
Json run_simulate(RunConfig config);

// aligned text table matching the published layout
std::string coverage_table_text(const CoverageReport& report);

Json interval_result_to_json(const IntervalResult& res, const std::vector<int>& subset,
                             const CccBounds& bounds, std::uint64_t seed);
Json coverage_report_to_json(const CoverageReport& report);

} // namespace cccfid

#pragma once

#include "cccfid/estimation.hpp"
#include "cccfid/fiducial.hpp"
#include "cccfid/types.hpp"

#include <random>

namespace cccfid {

// Normalization of the closed-form CCC ratio. The paper's printed variants
// disagree on the numerator factor and on how the squared fixed-effect
// difference term is scaled; all candidates are kept selectable and the
// subject-averaged factor-2 form is the one validated against the sampling
// oracle (see the simulation module).
enum class CccNormalization {
    factor2_subject_avg, // default: 2x numerator, per-subject fixed term
    factor1_subject_avg, // no numerator doubling
    factor2_time_avg,    // fixed term additionally divided by T
    factor2_total_sum,   // fixed term summed over subjects (scales with N)
};

std::string normalization_name(CccNormalization n);
CccNormalization normalization_from_name(const std::string& name);

enum class CccMethod { closed_lmm, closed_gaussian, closed_poisson, monte_carlo };

enum class CccEvalMode { closed_when_available, monte_carlo };

struct CccValue {
    double value = 0.0;
    CccMethod method = CccMethod::closed_lmm;
    double mc_std_error = 0.0; // 0 for closed forms
};

struct CccBounds {
    double lower = 0.0;
    double upper = 0.0;
};

// closed form under the Gaussian linear mixed model
CccValue ccc_lmm(const ModelSpec& spec, const ParameterSet& params,
                 CccNormalization norm = CccNormalization::factor2_subject_avg);

// closed form under the Poisson log-link model (lognormal moment identities)
CccValue ccc_poisson_closed(const ModelSpec& spec, const ParameterSet& params,
                            CccNormalization norm = CccNormalization::factor2_subject_avg);

// Monte Carlo evaluation of the general ratio by simulating random effects;
// the standard error comes from a delete-one-batch jackknife.
CccValue ccc_monte_carlo(const ModelSpec& spec, const ParameterSet& params,
                         long n_mc, std::mt19937_64& rng,
                         CccNormalization norm = CccNormalization::factor2_subject_avg);

// attainable envelope +-(1 + sum phi E zeta / sum var mu)^{-1}; exact moments
// for Gaussian and Poisson, Monte Carlo for Gamma
CccBounds ccc_bounds(const ModelSpec& spec, const ParameterSet& params, long n_mc,
                     std::mt19937_64& rng);

// family-appropriate CCC at one set of parameter values
CccValue ccc_at_parameters(const ModelSpec& spec, const ParameterSet& params,
                           CccEvalMode eval, long n_mc, std::mt19937_64& rng,
                           CccNormalization norm = CccNormalization::factor2_subject_avg);

// the fiducial CCC: the family CCC evaluated at the pivot values of one draw
double ccc_fiducial(const FiducialDraw& draw, const ModelSpec& spec,
                    CccEvalMode eval, long n_mc, std::mt19937_64& rng,
                    CccNormalization norm = CccNormalization::factor2_subject_avg);

// plug-in CCC at the fitted estimates
CccValue ccc_point_estimate(const FitResult& fit, CccEvalMode eval, long n_mc,
                            std::mt19937_64& rng,
                            CccNormalization norm = CccNormalization::factor2_subject_avg);

} // namespace cccfid

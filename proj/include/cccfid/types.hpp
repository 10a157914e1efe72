#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cccfid {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------- errors ----------------

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DomainError : Error { using Error::Error; };
struct NotPositiveDefinite : Error { using Error::Error; };
struct SingularDesign : Error { using Error::Error; };
struct NonConvergence : Error { using Error::Error; };
struct InsufficientDF : Error { using Error::Error; };
struct DegenerateScatter : Error { using Error::Error; };
struct RankDeficientScatter : Error { using Error::Error; };
struct TooFewSamples : Error { using Error::Error; };
struct ZeroDenominator : Error { using Error::Error; };
struct OverflowGuard : Error { using Error::Error; };
struct DegenerateVariance : Error { using Error::Error; };
struct FitFailure : Error { using Error::Error; };
struct ExcessiveDrawFailures : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct UnbalancedDesign : Error { using Error::Error; };
struct UnknownScenario : Error { using Error::Error; };

// ---------------- model family ----------------

enum class Family { gaussian_identity, poisson_log, gamma_inverse };

std::string family_name(Family f);
Family family_from_name(const std::string& name);

// ---------------- rating data ----------------

// One long-format observation. Indices are 1-based to match the usual
// subject/time/replicate/rater bookkeeping of balanced agreement designs.
struct RatingRecord {
    int subject = 0;
    int time = 0;
    int replicate = 0;
    int rater = 0;
    double value = 0.0;
};

struct Dims {
    int n_subjects = 0;   // N
    int n_times = 0;      // T
    int n_replicates = 0; // K
    int n_raters = 0;     // L
    int per_rater() const { return n_times * n_replicates; }      // KT
    int per_subject() const { return per_rater() * n_raters; }    // KTL
};

// Balanced long-format ratings, y indexed by (subject, time, replicate, rater).
class RatingDataset {
  public:
    RatingDataset() = default;
    RatingDataset(std::vector<RatingRecord> records, Dims dims);

    const Dims& dims() const { return dims_; }
    const std::vector<RatingRecord>& records() const { return records_; }

    // value at 1-based (i, j, k, l)
    double value(int subject, int time, int replicate, int rater) const;

    // per-subject stacked vector, rater-major then time-major, replicate-minor:
    // offset = (l-1)*KT + (j-1)*K + (k-1)
    VectorXd subject_vector(int subject) const;

    // keeps only the listed raters (1-based), reindexed to 1..m in given order
    RatingDataset subset_raters(const std::vector<int>& raters) const;

    // throws UnbalancedDesign / DomainError on violations
    void validate(std::optional<Family> family = std::nullopt) const;

  private:
    std::vector<RatingRecord> records_;
    std::vector<double> grid_; // dense (i,l,j,k) storage
    Dims dims_;
    int offset(int i, int j, int k, int l) const;
};

// ---------------- model specification ----------------

// Family, design dimensions and bases for the transformed mixed model.
// The fixed design X (KT x d) is shared across subjects; basis holds
// z_0..z_S with z_0 the all-ones vector.
struct ModelSpec {
    Family family = Family::gaussian_identity;
    Dims dims;
    int spline_order = 1;      // S: highest random time-basis order
    bool gamma_included = false;
    MatrixXd fixed_design;     // KT x d
    std::vector<VectorXd> basis; // S+1 vectors of length KT
    double alpha_level = 0.05;

    int n_fixed() const { return static_cast<int>(fixed_design.cols()); }
    int n_alpha_orders() const { return spline_order + 1; }
    // dimension of the stacked predictor vector (S+1 alpha blocks [+ gamma])
    int predictor_dim() const {
        return (n_alpha_orders() + (gamma_included ? 1 : 0)) * dims.n_raters;
    }
    void validate() const;
};

// Intercept + time-slope fixed design with monomial random basis of order S.
// gamma: subject-time interaction effect; defaults to "included iff K > 1".
ModelSpec make_model_spec(Family family, Dims dims, int spline_order,
                          std::optional<bool> include_gamma = std::nullopt,
                          double alpha_level = 0.05);

// ---------------- parameters ----------------

// Fixed effects and variance components of the GLMM. sigma_gamma is an LxL
// zero matrix when the spec excludes the interaction effect. "dispersion"
// holds sigma^2 (Gaussian), 1 (Poisson) or the Gamma shape tau.
struct ParameterSet {
    std::vector<VectorXd> beta;        // L vectors of length d
    std::vector<MatrixXd> sigma_alpha; // S+1 matrices, each LxL
    MatrixXd sigma_gamma;              // LxL
    double dispersion = 1.0;

    void validate(const ModelSpec& spec) const;
};

// true iff m is symmetric positive semidefinite (pivoted-Cholesky test)
bool is_psd(const MatrixXd& m, double tol = 1e-10);

} // namespace cccfid

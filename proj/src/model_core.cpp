#include "cccfid/model_core.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace cccfid {

// ==================== types.hpp implementations ====================

std::string family_name(Family f) {
    switch (f) {
        case Family::gaussian_identity: return "gaussian";
        case Family::poisson_log: return "poisson";
        case Family::gamma_inverse: return "gamma";
    }
    return "unknown";
}

Family family_from_name(const std::string& name) {
    if (name == "gaussian" || name == "gaussian-identity") return Family::gaussian_identity;
    if (name == "poisson" || name == "poisson-log") return Family::poisson_log;
    if (name == "gamma" || name == "gamma-inverse") return Family::gamma_inverse;
    throw ParseError("unknown family: " + name);
}

bool is_psd(const MatrixXd& m, double tol) {
    if (m.rows() != m.cols()) return false;
    if ((m - m.transpose()).lpNorm<Eigen::Infinity>() > tol * (1.0 + m.norm()))
        return false;
    Eigen::LDLT<MatrixXd> ldlt(m);
    if (ldlt.info() != Eigen::Success) return false;
    return ldlt.vectorD().minCoeff() >= -tol * (1.0 + m.norm());
}

int RatingDataset::offset(int i, int j, int k, int l) const {
    const int kt = dims_.per_rater();
    return ((i - 1) * dims_.n_raters + (l - 1)) * kt + (j - 1) * dims_.n_replicates +
           (k - 1);
}

RatingDataset::RatingDataset(std::vector<RatingRecord> records, Dims dims)
    : records_(std::move(records)), dims_(dims) {
    const std::size_t total = static_cast<std::size_t>(dims_.n_subjects) *
                              static_cast<std::size_t>(dims_.per_subject());
    if (records_.size() != total) {
        std::ostringstream msg;
        msg << "dataset has " << records_.size() << " records, expected " << total
            << " for dims (" << dims_.n_subjects << "," << dims_.n_times << ","
            << dims_.n_replicates << "," << dims_.n_raters << ")";
        throw UnbalancedDesign(msg.str());
    }
    grid_.assign(total, std::numeric_limits<double>::quiet_NaN());
    std::vector<bool> seen(total, false);
    for (const auto& r : records_) {
        if (r.subject < 1 || r.subject > dims_.n_subjects || r.time < 1 ||
            r.time > dims_.n_times || r.replicate < 1 ||
            r.replicate > dims_.n_replicates || r.rater < 1 || r.rater > dims_.n_raters) {
            std::ostringstream msg;
            msg << "record (" << r.subject << "," << r.time << "," << r.replicate << ","
                << r.rater << ") outside declared dims";
            throw UnbalancedDesign(msg.str());
        }
        const int off = offset(r.subject, r.time, r.replicate, r.rater);
        if (seen[off]) {
            std::ostringstream msg;
            msg << "duplicate cell (subject=" << r.subject << ", time=" << r.time
                << ", replicate=" << r.replicate << ", rater=" << r.rater << ")";
            throw UnbalancedDesign(msg.str());
        }
        seen[off] = true;
        grid_[off] = r.value;
    }
}

double RatingDataset::value(int subject, int time, int replicate, int rater) const {
    return grid_[offset(subject, time, replicate, rater)];
}

VectorXd RatingDataset::subject_vector(int subject) const {
    const int m = dims_.per_subject();
    VectorXd v(m);
    const int base = (subject - 1) * m;
    for (int t = 0; t < m; ++t) v[t] = grid_[base + t];
    return v;
}

RatingDataset RatingDataset::subset_raters(const std::vector<int>& raters) const {
    Dims d = dims_;
    d.n_raters = static_cast<int>(raters.size());
    std::vector<RatingRecord> recs;
    recs.reserve(static_cast<std::size_t>(d.n_subjects) * d.per_subject());
    for (int i = 1; i <= dims_.n_subjects; ++i)
        for (int lidx = 0; lidx < d.n_raters; ++lidx)
            for (int j = 1; j <= dims_.n_times; ++j)
                for (int k = 1; k <= dims_.n_replicates; ++k)
                    recs.push_back({i, j, k, lidx + 1, value(i, j, k, raters[lidx])});
    return RatingDataset(std::move(recs), d);
}

void RatingDataset::validate(std::optional<Family> family) const {
    if (dims_.n_subjects < 2 || dims_.n_times < 1 || dims_.n_replicates < 1 ||
        dims_.n_raters < 2)
        throw DomainError("dims must satisfy N >= 2, T >= 1, K >= 1, L >= 2");
    for (double v : grid_) {
        if (!std::isfinite(v)) throw DomainError("dataset contains non-finite values");
        if (family == Family::poisson_log &&
            (v < 0.0 || std::fabs(v - std::round(v)) > 1e-9))
            throw DomainError("Poisson family requires nonnegative integer ratings");
        if (family == Family::gamma_inverse && v <= 0.0)
            throw DomainError("Gamma family requires strictly positive ratings");
    }
}

void ModelSpec::validate() const {
    const int kt = dims.per_rater();
    if (spline_order < 0) throw DomainError("spline_order must be >= 0");
    if (static_cast<int>(basis.size()) != spline_order + 1)
        throw DomainError("basis must hold S+1 vectors");
    for (const auto& z : basis)
        if (z.size() != kt) throw DomainError("basis vectors must have length KT");
    if ((basis[0].array() != 1.0).any())
        throw DomainError("z_0 must be the all-ones vector");
    if (fixed_design.rows() != kt) throw DomainError("fixed_design must have KT rows");
    // full column rank checks, basis then design
    MatrixXd b(kt, basis.size());
    for (std::size_t s = 0; s < basis.size(); ++s) b.col(s) = basis[s];
    if (Eigen::FullPivLU<MatrixXd>(b).rank() < b.cols())
        throw DomainError("basis columns must be linearly independent");
    if (Eigen::FullPivLU<MatrixXd>(fixed_design).rank() < fixed_design.cols())
        throw SingularDesign("fixed_design is rank deficient");
    if (fixed_design.cols() > kt)
        throw SingularDesign("fixed_design has more columns than KT");
    if (!(alpha_level > 0.0 && alpha_level < 1.0))
        throw DomainError("alpha_level must lie in (0,1)");
}

ModelSpec make_model_spec(Family family, Dims dims, int spline_order,
                          std::optional<bool> include_gamma, double alpha_level) {
    ModelSpec spec;
    spec.family = family;
    spec.dims = dims;
    spec.spline_order = spline_order;
    spec.gamma_included = include_gamma.value_or(dims.n_replicates > 1);
    spec.basis = build_basis(dims.n_times, dims.n_replicates, spline_order);
    const int kt = dims.per_rater();
    spec.fixed_design = MatrixXd(kt, 2);
    for (int j = 0; j < dims.n_times; ++j)
        for (int k = 0; k < dims.n_replicates; ++k) {
            spec.fixed_design(j * dims.n_replicates + k, 0) = 1.0;
            spec.fixed_design(j * dims.n_replicates + k, 1) = j + 1;
        }
    spec.alpha_level = alpha_level;
    spec.validate();
    return spec;
}

void ParameterSet::validate(const ModelSpec& spec) const {
    const int l = spec.dims.n_raters;
    if (static_cast<int>(beta.size()) != l)
        throw DomainError("beta must hold one vector per rater");
    for (const auto& b : beta)
        if (b.size() != spec.n_fixed())
            throw DomainError("beta blocks must match the fixed design");
    if (static_cast<int>(sigma_alpha.size()) != spec.n_alpha_orders())
        throw DomainError("sigma_alpha must hold S+1 matrices");
    for (const auto& m : sigma_alpha)
        if (m.rows() != l || m.cols() != l || !is_psd(m))
            throw NotPositiveDefinite("sigma_alpha components must be symmetric PSD LxL");
    if (spec.gamma_included) {
        if (sigma_gamma.rows() != l || sigma_gamma.cols() != l || !is_psd(sigma_gamma))
            throw NotPositiveDefinite("sigma_gamma must be symmetric PSD LxL");
    }
    if (spec.family != Family::poisson_log && !(dispersion > 0.0))
        throw DomainError("dispersion must be strictly positive");
}

// ==================== basis and covariance algebra ====================

std::vector<VectorXd> build_basis(int n_times, int n_replicates, int spline_order) {
    const int kt = n_times * n_replicates;
    std::vector<VectorXd> basis(static_cast<std::size_t>(spline_order) + 1,
                                VectorXd(kt));
    for (int s = 0; s <= spline_order; ++s)
        for (int j = 0; j < n_times; ++j) {
            const double v = std::pow(static_cast<double>(j + 1), s);
            for (int k = 0; k < n_replicates; ++k)
                basis[s][j * n_replicates + k] = v;
        }
    return basis;
}

namespace {

// random-effect block (l,l') contribution without the error diagonal
void add_block(const ModelSpec& spec, const ParameterSet& params, int l, int lp,
               Eigen::Ref<MatrixXd> block) {
    for (int s = 0; s <= spec.spline_order; ++s)
        block.noalias() += params.sigma_alpha[s](l, lp) * spec.basis[s] *
                           spec.basis[s].transpose();
    if (spec.gamma_included) {
        const double g = params.sigma_gamma(l, lp);
        const int t = spec.dims.n_times, k = spec.dims.n_replicates;
        for (int j = 0; j < t; ++j)
            block.block(j * k, j * k, k, k).array() += g;
    }
}

} // namespace

MarginalCovariance build_marginal_covariance(const ModelSpec& spec,
                                             const ParameterSet& params,
                                             const VectorXd& error_diag) {
    const int kt = spec.dims.per_rater();
    const int l = spec.dims.n_raters;
    const int m = kt * l;
    if (error_diag.size() != m)
        throw DomainError("error_diag must have length KTL");
    MarginalCovariance out;
    out.sigma_ystar = MatrixXd::Zero(m, m);
    for (int a = 0; a < l; ++a)
        for (int b = a; b < l; ++b) {
            MatrixXd block = MatrixXd::Zero(kt, kt);
            add_block(spec, params, a, b, block);
            out.sigma_ystar.block(a * kt, b * kt, kt, kt) = block;
            if (a != b)
                out.sigma_ystar.block(b * kt, a * kt, kt, kt) = block.transpose();
        }
    out.sigma_ystar.diagonal() += error_diag;
    out.plug_in_error_diag = error_diag;
    out.chol.compute(out.sigma_ystar);
    if (out.chol.info() != Eigen::Success)
        throw NotPositiveDefinite("Sigma_{Y*} failed Cholesky");
    return out;
}

VectorXd build_cross_cov_alpha(const ModelSpec& spec, const ParameterSet& params,
                               int order, int rater) {
    if (order < 0 || order > spec.spline_order)
        throw DomainError("cross-cov order out of range");
    if (rater < 1 || rater > spec.dims.n_raters)
        throw DomainError("cross-cov rater out of range");
    const int kt = spec.dims.per_rater();
    VectorXd v(kt * spec.dims.n_raters);
    for (int lp = 0; lp < spec.dims.n_raters; ++lp)
        v.segment(lp * kt, kt) =
            params.sigma_alpha[order](rater - 1, lp) * spec.basis[order];
    return v;
}

VectorXd build_cross_cov_gamma(const ModelSpec& spec, const ParameterSet& params,
                               int rater) {
    if (rater < 1 || rater > spec.dims.n_raters)
        throw DomainError("cross-cov rater out of range");
    const int kt = spec.dims.per_rater();
    VectorXd v(kt * spec.dims.n_raters);
    for (int lp = 0; lp < spec.dims.n_raters; ++lp)
        v.segment(lp * kt, kt) =
            VectorXd::Constant(kt, params.sigma_gamma(rater - 1, lp));
    return v;
}

MatrixXd cross_cov_matrix_alpha(const ModelSpec& spec, const ParameterSet& params,
                                int order) {
    const int l = spec.dims.n_raters;
    MatrixXd m(l, spec.dims.per_rater() * l);
    for (int r = 1; r <= l; ++r)
        m.row(r - 1) = build_cross_cov_alpha(spec, params, order, r).transpose();
    return m;
}

MatrixXd cross_cov_matrix_gamma(const ModelSpec& spec, const ParameterSet& params) {
    const int l = spec.dims.n_raters;
    MatrixXd m(l, spec.dims.per_rater() * l);
    for (int r = 1; r <= l; ++r)
        m.row(r - 1) = build_cross_cov_gamma(spec, params, r).transpose();
    return m;
}

MatrixXd predictor_cov_model(const ModelSpec& spec, const ParameterSet& params,
                             const VectorXd& error_diag) {
    const auto cov = build_marginal_covariance(spec, params, error_diag);
    const int l = spec.dims.n_raters;
    const int n_blocks = spec.n_alpha_orders() + (spec.gamma_included ? 1 : 0);
    const int q = n_blocks * l;
    MatrixXd f(q, spec.dims.per_rater() * l);
    for (int s = 0; s <= spec.spline_order; ++s)
        f.middleRows(s * l, l) = cross_cov_matrix_alpha(spec, params, s);
    if (spec.gamma_included)
        f.middleRows(spec.n_alpha_orders() * l, l) = cross_cov_matrix_gamma(spec, params);
    const MatrixXd solved = cov.chol.solve(f.transpose());
    return f * solved;
}

// ==================== log-Cholesky packing ====================

namespace {
constexpr double kLogDiagFloor = -15.0;

int tri_size(int l) { return l * (l + 1) / 2; }

// lower Cholesky factor with a PSD-safe fallback through the spectral sqrt
MatrixXd safe_cholesky_factor(const MatrixXd& m) {
    Eigen::LLT<MatrixXd> llt(m);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    const MatrixXd root = psd_sqrt(m);
    Eigen::HouseholderQR<MatrixXd> qr(root.transpose());
    MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    MatrixXd lower = r.transpose();
    for (int i = 0; i < lower.cols(); ++i)
        if (lower(i, i) < 0.0) lower.col(i) = -lower.col(i);
    return lower;
}

void pack_one(const MatrixXd& sigma, VectorXd& v, int& pos) {
    const int l = static_cast<int>(sigma.rows());
    MatrixXd c = safe_cholesky_factor(sigma + 1e-12 * MatrixXd::Identity(l, l));
    for (int b = 0; b < l; ++b) {
        v[pos++] = std::max(std::log(std::max(c(b, b), 0.0)), kLogDiagFloor);
        for (int a = b + 1; a < l; ++a) v[pos++] = c(a, b);
    }
}

MatrixXd unpack_one(const VectorXd& v, int& pos, int l) {
    MatrixXd c = MatrixXd::Zero(l, l);
    for (int b = 0; b < l; ++b) {
        c(b, b) = std::exp(v[pos++]);
        for (int a = b + 1; a < l; ++a) c(a, b) = v[pos++];
    }
    return c;
}
} // namespace

int n_component_params(const ModelSpec& spec) {
    const int t = tri_size(spec.dims.n_raters);
    return spec.n_alpha_orders() * t + (spec.gamma_included ? t : 0);
}

VectorXd pack_log_cholesky(const ModelSpec& spec, const ParameterSet& params) {
    VectorXd v(n_component_params(spec));
    int pos = 0;
    for (int s = 0; s <= spec.spline_order; ++s) pack_one(params.sigma_alpha[s], v, pos);
    if (spec.gamma_included) pack_one(params.sigma_gamma, v, pos);
    return v;
}

std::vector<MatrixXd> unpack_cholesky_factors(const ModelSpec& spec,
                                              const VectorXd& v) {
    const int l = spec.dims.n_raters;
    std::vector<MatrixXd> factors;
    int pos = 0;
    for (int s = 0; s <= spec.spline_order; ++s) factors.push_back(unpack_one(v, pos, l));
    if (spec.gamma_included) factors.push_back(unpack_one(v, pos, l));
    return factors;
}

void unpack_log_cholesky(const ModelSpec& spec, const VectorXd& v,
                         ParameterSet& params) {
    const auto factors = unpack_cholesky_factors(spec, v);
    params.sigma_alpha.resize(spec.n_alpha_orders());
    for (int s = 0; s <= spec.spline_order; ++s)
        params.sigma_alpha[s] = factors[s] * factors[s].transpose();
    if (spec.gamma_included) {
        const auto& g = factors.back();
        params.sigma_gamma = g * g.transpose();
    } else {
        params.sigma_gamma =
            MatrixXd::Zero(spec.dims.n_raters, spec.dims.n_raters);
    }
}

// ==================== fast predictor-covariance kernel ====================

PredictorCovKernel::PredictorCovKernel(const ModelSpec& spec,
                                       const VectorXd& unit_error_diag)
    : spec_(spec) {
    const int l = spec.dims.n_raters;
    const int t = spec.dims.n_times;
    const int k = spec.dims.n_replicates;
    const int kt = t * k;
    const int m = kt * l;
    const int n_orders = spec.n_alpha_orders();
    n_params_ = n_component_params(spec);
    q_load_ = n_orders * l + (spec.gamma_included ? t * l : 0);
    q_pred_ = (n_orders + (spec.gamma_included ? 1 : 0)) * l;

    // loadings: columns of La are the per-effect directions in Y* space;
    // W holds the cross-covariance directions (gamma summed over j)
    MatrixXd la = MatrixXd::Zero(m, q_load_);
    MatrixXd w = MatrixXd::Zero(m, q_pred_);
    for (int s = 0; s < n_orders; ++s)
        for (int a = 0; a < l; ++a) {
            la.col(s * l + a).segment(a * kt, kt) = spec.basis[s];
            w.col(s * l + a).segment(a * kt, kt) = spec.basis[s];
        }
    if (spec.gamma_included) {
        const int base = n_orders * l;
        for (int j = 0; j < t; ++j)
            for (int a = 0; a < l; ++a)
                la.col(base + j * l + a)
                    .segment(a * kt + j * k, k)
                    .setOnes();
        for (int a = 0; a < l; ++a)
            w.col(n_orders * l + a).segment(a * kt, kt).setOnes();
    }

    const VectorXd inv_d = unit_error_diag.cwiseInverse();
    const MatrixXd lad = inv_d.asDiagonal() * la;
    a0_ = la.transpose() * lad;
    g0_ = lad.transpose() * w;
    h0_ = w.transpose() * (inv_d.asDiagonal() * w);
}

void PredictorCovKernel::expand_factor(const std::vector<MatrixXd>& factors,
                                       MatrixXd& u) const {
    const int l = spec_.dims.n_raters;
    const int n_orders = spec_.n_alpha_orders();
    u.setZero(q_load_, q_load_);
    for (int s = 0; s < n_orders; ++s)
        u.block(s * l, s * l, l, l) = factors[s];
    if (spec_.gamma_included) {
        const auto& g = factors.back();
        const int base = n_orders * l;
        for (int j = 0; j < spec_.dims.n_times; ++j)
            u.block(base + j * l, base + j * l, l, l) = g;
    }
}

void PredictorCovKernel::block_sigma(const std::vector<MatrixXd>& factors,
                                     MatrixXd& s) const {
    const int l = spec_.dims.n_raters;
    const int n_orders = spec_.n_alpha_orders();
    s.setZero(q_pred_, q_pred_);
    for (int i = 0; i < n_orders; ++i)
        s.block(i * l, i * l, l, l) = factors[i] * factors[i].transpose();
    if (spec_.gamma_included) {
        const auto& g = factors.back();
        s.block(n_orders * l, n_orders * l, l, l) = g * g.transpose();
    }
}

MatrixXd PredictorCovKernel::evaluate(const VectorXd& v, double dispersion) const {
    const auto factors = unpack_cholesky_factors(spec_, v);
    MatrixXd u;
    expand_factor(factors, u);

    const double inv_c = 1.0 / dispersion;
    // T = I + U' (A0/c) U ; P = W' Sigma^{-1} W = H/c - (U'G/c)' T^{-1} (U'G/c)
    const MatrixXd ug = inv_c * (u.transpose() * g0_);
    MatrixXd t_mat = u.transpose() * (inv_c * a0_) * u;
    t_mat.diagonal().array() += 1.0;
    Eigen::LLT<MatrixXd> llt(t_mat);
    if (llt.info() != Eigen::Success)
        throw NotPositiveDefinite("predictor-covariance kernel: capacitance not PD");
    const MatrixXd p = inv_c * h0_ - ug.transpose() * llt.solve(ug);

    MatrixXd s_blk;
    block_sigma(factors, s_blk);
    return s_blk * p * s_blk;
}

// ==================== data generation ====================

MatrixXd psd_sqrt(const MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(m);
    VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

namespace {

VectorXd draw_normal(int n, std::mt19937_64& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    VectorXd z(n);
    for (int i = 0; i < n; ++i) z[i] = nd(rng);
    return z;
}

// eta for one subject; roots are the PSD square roots per component
VectorXd draw_eta(const ModelSpec& spec, const ParameterSet& params,
                  const std::vector<MatrixXd>& alpha_roots, const MatrixXd& gamma_root,
                  std::mt19937_64& rng) {
    const int l = spec.dims.n_raters;
    const int t = spec.dims.n_times;
    const int k = spec.dims.n_replicates;
    const int kt = t * k;
    VectorXd eta(kt * l);
    for (int a = 0; a < l; ++a)
        eta.segment(a * kt, kt) = spec.fixed_design * params.beta[a];
    for (int s = 0; s <= spec.spline_order; ++s) {
        const VectorXd alpha = alpha_roots[s] * draw_normal(l, rng);
        for (int a = 0; a < l; ++a)
            eta.segment(a * kt, kt) += alpha[a] * spec.basis[s];
    }
    if (spec.gamma_included) {
        for (int j = 0; j < t; ++j) {
            const VectorXd g = gamma_root * draw_normal(l, rng);
            for (int a = 0; a < l; ++a)
                eta.segment(a * kt + j * k, k).array() += g[a];
        }
    }
    return eta;
}

} // namespace

MatrixXd simulate_linear_predictors(const ModelSpec& spec, const ParameterSet& params,
                                    int n_subjects, std::mt19937_64& rng,
                                    bool require_positive_eta, int* n_rejected) {
    std::vector<MatrixXd> alpha_roots;
    for (const auto& s : params.sigma_alpha) alpha_roots.push_back(psd_sqrt(s));
    MatrixXd gamma_root;
    if (spec.gamma_included) gamma_root = psd_sqrt(params.sigma_gamma);

    const int m = spec.dims.per_subject();
    MatrixXd eta(n_subjects, m);
    int rejected = 0;
    for (int i = 0; i < n_subjects; ++i) {
        int attempts = 0;
        while (true) {
            const VectorXd e = draw_eta(spec, params, alpha_roots, gamma_root, rng);
            if (!require_positive_eta || e.minCoeff() > 0.0) {
                eta.row(i) = e.transpose();
                break;
            }
            ++rejected;
            if (++attempts > 100)
                throw DomainError(
                    "linear predictor not positive after 100 redraws (Gamma inverse link)");
        }
    }
    if (n_rejected) *n_rejected = rejected;
    return eta;
}

RatingDataset dataset_from_matrix(const ModelSpec& spec, const MatrixXd& values) {
    const Dims d{static_cast<int>(values.rows()), spec.dims.n_times,
                 spec.dims.n_replicates, spec.dims.n_raters};
    const int kt = d.per_rater();
    std::vector<RatingRecord> recs;
    recs.reserve(static_cast<std::size_t>(values.rows()) * d.per_subject());
    for (int i = 0; i < values.rows(); ++i)
        for (int l = 0; l < d.n_raters; ++l)
            for (int j = 0; j < d.n_times; ++j)
                for (int k = 0; k < d.n_replicates; ++k)
                    recs.push_back({i + 1, j + 1, k + 1, l + 1,
                                    values(i, l * kt + j * d.n_replicates + k)});
    return RatingDataset(std::move(recs), d);
}

RatingDataset simulate_from_model(const ModelSpec& spec, const ParameterSet& params,
                                  int n_subjects, std::mt19937_64& rng,
                                  int* n_rejected) {
    const bool need_positive = spec.family == Family::gamma_inverse;
    MatrixXd eta = simulate_linear_predictors(spec, params, n_subjects, rng,
                                              need_positive, n_rejected);
    const int m = spec.dims.per_subject();
    MatrixXd y(n_subjects, m);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int i = 0; i < n_subjects; ++i)
        for (int t = 0; t < m; ++t) {
            const double e = eta(i, t);
            switch (spec.family) {
                case Family::gaussian_identity:
                    y(i, t) = e + std::sqrt(params.dispersion) * nd(rng);
                    break;
                case Family::poisson_log: {
                    if (e > 700.0) throw OverflowGuard("Poisson mean exponent > 700");
                    std::poisson_distribution<long> pd(std::exp(e));
                    y(i, t) = static_cast<double>(pd(rng));
                    break;
                }
                case Family::gamma_inverse: {
                    const double mu = 1.0 / e;
                    std::gamma_distribution<double> gd(params.dispersion,
                                                       mu / params.dispersion);
                    y(i, t) = gd(rng);
                    break;
                }
            }
        }
    return dataset_from_matrix(spec, y);
}

VectorXd unit_error_diag_from_means(const ModelSpec& spec, const MatrixXd& fitted_means) {
    const int m = spec.dims.per_subject();
    if (fitted_means.cols() != m)
        throw DomainError("fitted_means must have KTL columns");
    VectorXd d(m);
    switch (spec.family) {
        case Family::gaussian_identity:
            d.setOnes();
            return d;
        case Family::poisson_log:
            for (int t = 0; t < m; ++t)
                d[t] = fitted_means.col(t).cwiseInverse().mean();
            return d;
        case Family::gamma_inverse:
            for (int t = 0; t < m; ++t)
                d[t] = fitted_means.col(t).array().square().inverse().mean();
            return d;
    }
    throw DomainError("unknown family");
}

} // namespace cccfid

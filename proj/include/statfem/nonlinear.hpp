#pragma once

#include "statfem/errors.hpp"
#include "statfem/fem.hpp"
#include "statfem/gaussian.hpp"
#include "statfem/linear_model.hpp"
#include "statfem/random.hpp"
#include "statfem/samplers.hpp"

#include <Eigen/Dense>

#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace statfem {

/// Solution-dependent diffusivity q(u) and its derivative.
struct DiffusivityLaw {
    std::function<double(double)> q;
    std::function<double(double)> dq;

    static DiffusivityLaw quadratic() {
        return {[](double u) { return 1.0 + u * u; }, [](double u) { return 2.0 * u; }};
    }
    static DiffusivityLaw constant() {
        return {[](double) { return 1.0; }, [](double) { return 0.0; }};
    }
};

/// Nonlinear statFEM system F(u) = b + e with F(u)_i = ∫q(u_h)∇u_h·∇φ_i on free
/// rows and u_i - u_D on Dirichlet rows. Forcing vectors carry zeros on Dirichlet rows.
class NonlinearSystem {
public:
    NonlinearSystem(FemSystem sys, DirichletSpec bc, DiffusivityLaw law, Eigen::MatrixXd G, Eigen::MatrixXd R,
                    GaussianDist forcing_prior)
        : sys_(std::make_shared<const FemSystem>(std::move(sys))), bc_(std::move(bc)), law_(std::move(law)) {
        const Index n = sys_->n_u;
        for (const auto& [node, value] : bc_.values)
            STATFEM_REQUIRE(sys_->mesh.is_boundary(node), "Dirichlet node is not on the boundary");
        STATFEM_REQUIRE(G.rows() == n && G.cols() == n, "G size mismatch");
        STATFEM_REQUIRE(R.rows() == sys_->H.rows() && R.cols() == sys_->H.rows(), "R size mismatch");
        STATFEM_REQUIRE(forcing_prior.dim() == n, "forcing prior size mismatch");
        STATFEM_REQUIRE(static_cast<bool>(law_.q) && static_cast<bool>(law_.dq), "diffusivity law incomplete");
        auto c = std::make_shared<Cache>();
        c->G = std::move(G);
        c->R = std::move(R);
        c->prior = std::move(forcing_prior);
        c->G_llt = detail::checked_llt(c->G, "G");
        c->R_llt = sys_->H.rows() > 0 ? detail::checked_llt(c->R, "R") : Eigen::LLT<Eigen::MatrixXd>();
        c->HtRH = detail::observation_precision(sys_->H, c->R_llt);
        cache_ = std::move(c);
        for (const auto& [node, value] : bc_.values) bc_nodes_.push_back(node);
    }

    NonlinearSystem with_law(DiffusivityLaw law) const {
        NonlinearSystem s(*this);
        s.law_ = std::move(law);
        return s;
    }

    const FemSystem& fem() const { return *sys_; }
    const Mesh& mesh() const { return sys_->mesh; }
    const DirichletSpec& bc() const { return bc_; }
    const std::vector<Index>& bc_nodes() const { return bc_nodes_; }
    const DiffusivityLaw& law() const { return law_; }
    const Eigen::MatrixXd& H() const { return sys_->H; }
    const Eigen::MatrixXd& G() const { return cache_->G; }
    const Eigen::MatrixXd& R() const { return cache_->R; }
    const GaussianDist& forcing_prior() const { return cache_->prior; }
    const Eigen::LLT<Eigen::MatrixXd>& G_llt() const { return cache_->G_llt; }
    const Eigen::LLT<Eigen::MatrixXd>& R_llt() const { return cache_->R_llt; }
    const Eigen::LLT<Eigen::MatrixXd>& Sigma_llt() const { return cache_->prior.llt(); }
    const Eigen::MatrixXd& HtRinvH() const { return cache_->HtRH; }
    Index n_u() const { return sys_->n_u; }
    Index n_y() const { return sys_->H.rows(); }

    Eigen::VectorXd HtRinv_y(const Eigen::VectorXd& y) const {
        STATFEM_REQUIRE(y.size() == n_y(), "observation vector size mismatch");
        return detail::observation_shift(sys_->H, cache_->R_llt, y);
    }

    /// u with Dirichlet entries replaced by their prescribed values.
    Eigen::VectorXd lifted(const Eigen::VectorXd& u) const {
        Eigen::VectorXd v = u;
        for (const auto& [node, value] : bc_.values) v(node) = value;
        return v;
    }

    /// K(ū) with Dirichlet rows/columns constrained, the lift vector, and
    /// optionally the constrained Jacobian K(ū) + D(ū).
    void assemble(const Eigen::VectorXd& u, Eigen::MatrixXd& K, Eigen::VectorXd& lift, Eigen::MatrixXd* J) const {
        STATFEM_REQUIRE(u.size() == n_u(), "state size mismatch");
        const Mesh& mesh = sys_->mesh;
        const Eigen::VectorXd ub = lifted(u);
        const Index n = n_u();
        K.setZero(n, n);
        Eigen::MatrixXd D;
        if (J) D.setZero(n, n);
        for (Index e = 0; e < mesh.num_elements(); ++e) {
            const ElementGeometry geo = element_geometry(mesh, e);
            const ElementQuadrature quad = element_quadrature(mesh.dim, geo.measure);
            const auto& el = mesh.elements[static_cast<std::size_t>(e)];
            double qsum = 0.0;
            std::array<double, 3> dq_phi{0.0, 0.0, 0.0};
            for (int g = 0; g < quad.n_points; ++g) {
                double ug = 0.0;
                for (int a = 0; a < geo.n; ++a) ug += quad.shape[g][a] * ub(el[a]);
                qsum += law_.q(ug);
                if (J) {
                    const double d = law_.dq(ug);
                    for (int a = 0; a < geo.n; ++a) dq_phi[a] += quad.weight * d * quad.shape[g][a];
                }
            }
            add_element_stiffness(mesh, e, geo, qsum / static_cast<double>(quad.n_points), K);
            if (J) {
                Eigen::Vector2d grad_u = Eigen::Vector2d::Zero();
                for (int a = 0; a < geo.n; ++a) grad_u += ub(el[a]) * geo.grad[a];
                for (int a = 0; a < geo.n; ++a)
                    for (int c = 0; c < geo.n; ++c) D(el[a], el[c]) += dq_phi[c] * grad_u.dot(geo.grad[a]);
            }
        }
        lift.setZero(n);
        for (const auto& [node, value] : bc_.values)
            for (Index i = 0; i < n; ++i)
                if (!mesh.is_boundary(i)) lift(i) += K(i, node) * value;
        for (const auto& [node, value] : bc_.values) lift(node) = -value;
        detail::constrain_matrix(K, bc_nodes_);
        if (J) {
            for (Index i : bc_nodes_) {
                D.row(i).setZero();
                D.col(i).setZero();
            }
            *J = K + D;
        }
    }

private:
    struct Cache {
        Eigen::MatrixXd G, R;
        GaussianDist prior;
        Eigen::LLT<Eigen::MatrixXd> G_llt, R_llt;
        Eigen::MatrixXd HtRH;
    };
    std::shared_ptr<const FemSystem> sys_;
    std::shared_ptr<const Cache> cache_;
    DirichletSpec bc_;
    std::vector<Index> bc_nodes_;
    DiffusivityLaw law_;
};

inline Eigen::VectorXd assemble_residual(const NonlinearSystem& sys, const Eigen::VectorXd& u) {
    Eigen::MatrixXd K;
    Eigen::VectorXd lift;
    sys.assemble(u, K, lift, nullptr);
    return detail::matvec(K, u) + lift;
}

inline Eigen::MatrixXd assemble_jacobian(const NonlinearSystem& sys, const Eigen::VectorXd& u) {
    Eigen::MatrixXd K, J;
    Eigen::VectorXd lift;
    sys.assemble(u, K, lift, &J);
    return J;
}

struct NewtonOptions {
    double tol = 1e-10;
    int max_iter = 50;
    int max_halvings = 30;
};

struct NewtonResult {
    Eigen::VectorXd u;
    int iterations = 0;
    double residual = 0.0;
};

/// Damped Newton for F(u) = b; the step is halved until the residual norm drops.
inline NewtonResult newton_solve(const NonlinearSystem& sys, const Eigen::VectorXd& b, const Eigen::VectorXd& u0,
                                 const NewtonOptions& opt = {}) {
    STATFEM_REQUIRE(opt.tol > 0.0 && opt.max_iter >= 1, "invalid Newton options");
    STATFEM_REQUIRE(b.size() == sys.n_u() && u0.size() == sys.n_u(), "Newton size mismatch");
    STATFEM_REQUIRE(b.allFinite() && u0.allFinite(), "Newton input must be finite");
    Eigen::MatrixXd K, J;
    Eigen::VectorXd lift;
    NewtonResult res;
    res.u = u0;
    sys.assemble(res.u, K, lift, &J);
    Eigen::VectorXd r = detail::matvec(K, res.u) + lift - b;
    res.residual = r.norm();
    while (res.residual > opt.tol) {
        if (res.iterations >= opt.max_iter)
            throw ConvergenceError("Newton did not converge, residual " + std::to_string(res.residual), res.residual,
                                   res.iterations);
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(J);
        const Eigen::VectorXd step = lu.solve(r);
        if (!step.allFinite()) throw ConvergenceError("singular Newton Jacobian", res.residual, res.iterations);
        double t = 1.0;
        Eigen::VectorXd trial, r_trial;
        int halvings = 0;
        for (;;) {
            trial = res.u - t * step;
            Eigen::VectorXd lift_t;
            Eigen::MatrixXd K_t;
            sys.assemble(trial, K_t, lift_t, nullptr);
            r_trial = detail::matvec(K_t, trial) + lift_t - b;
            if (r_trial.norm() < res.residual || halvings >= opt.max_halvings) break;
            t *= 0.5;
            ++halvings;
        }
        ++res.iterations;
        if (!(r_trial.norm() < res.residual) && r_trial.norm() > opt.tol)
            throw ConvergenceError("Newton line search stalled, residual " + std::to_string(res.residual),
                                   res.residual, res.iterations);
        res.u = trial;
        sys.assemble(res.u, K, lift, &J);
        r = detail::matvec(K, res.u) + lift - b;
        res.residual = r.norm();
    }
    return res;
}

enum class ApproxMethod { FOT, UT, MC };

inline const char* to_string(ApproxMethod m) {
    switch (m) {
    case ApproxMethod::FOT: return "FOT";
    case ApproxMethod::UT: return "UT";
    case ApproxMethod::MC: return "MC";
    }
    return "?";
}

inline ApproxMethod parse_approx_method(const std::string& s) {
    if (s == "FOT" || s == "fot") return ApproxMethod::FOT;
    if (s == "UT" || s == "ut") return ApproxMethod::UT;
    if (s == "MC" || s == "mc") return ApproxMethod::MC;
    throw std::invalid_argument("unknown approximation method '" + s + "'");
}

/// Gaussian N(m, C) standing in for p(u | b), with the factor of
/// C^{-1} + H^T R^{-1} H used as the latent preconditioner.
struct GaussApprox {
    ApproxMethod method = ApproxMethod::FOT;
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    Eigen::MatrixXd precision;
    Eigen::LLT<Eigen::MatrixXd> latent_llt;
    Eigen::MatrixXd J;       // FOT: Jacobian at the mean
    Eigen::VectorXd offset;  // FOT: J m - F(m)
    double min_cov_eigenvalue = 0.0; // before jitter
    int newton_iterations = 0;
    int solves = 0;
    int failures = 0;
};

struct UtParams {
    double alpha = 1e-3;
    double beta = 2.0;
    double kappa = 0.0;
};

struct UtWeights {
    double lambda = 0.0;
    double w0 = 0.0;
    double wj = 0.0;
    double w0_cov = 0.0;
};

inline UtWeights ut_weights(Index n, const UtParams& p) {
    UtWeights w;
    const double nd = static_cast<double>(n);
    w.lambda = p.alpha * p.alpha * (nd + p.kappa) - nd;
    w.w0 = w.lambda / (nd + w.lambda);
    w.wj = 1.0 / (2.0 * (nd + w.lambda));
    w.w0_cov = w.w0 + 1.0 - p.alpha * p.alpha + p.beta;
    return w;
}

namespace detail {

inline double min_eigenvalue(const Eigen::MatrixXd& C) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrized(C), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

/// Adds jitter 1e-10 tr(C)/n and fills precision and latent factor from cov.
inline void finish_from_cov(const NonlinearSystem& sys, GaussApprox& a) {
    a.cov = symmetrized(a.cov);
    a.min_cov_eigenvalue = min_eigenvalue(a.cov);
    const Index n = a.cov.rows();
    const double jitter = 1e-10 * a.cov.trace() / static_cast<double>(n);
    a.cov.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(a.cov);
    if (llt.info() != Eigen::Success)
        throw ApproximationError(std::string(to_string(a.method)) + " covariance is not positive definite");
    a.precision = symmetrized(llt.solve(Eigen::MatrixXd::Identity(n, n)));
    a.latent_llt.compute(a.precision + sys.HtRinvH());
    if (a.latent_llt.info() != Eigen::Success)
        throw ApproximationError(std::string(to_string(a.method)) + " latent precision is not positive definite");
}

} // namespace detail

/// m solves F(m) = b, C = J(m)^{-1} G J(m)^{-T}, C^{-1} = J^T G^{-1} J.
inline GaussApprox approx_fot(const NonlinearSystem& sys, const Eigen::VectorXd& b,
                              const std::optional<Eigen::VectorXd>& u0 = std::nullopt, const NewtonOptions& opt = {}) {
    GaussApprox a;
    a.method = ApproxMethod::FOT;
    const NewtonResult nr = newton_solve(sys, b, u0.value_or(Eigen::VectorXd::Zero(sys.n_u())), opt);
    a.mean = nr.u;
    a.newton_iterations = nr.iterations;
    a.solves = 1;
    Eigen::MatrixXd K;
    Eigen::VectorXd lift;
    sys.assemble(a.mean, K, lift, &a.J);
    const Eigen::VectorXd F = detail::matvec(K, a.mean) + lift;
    a.offset = detail::matvec(a.J, a.mean) - F;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(a.J);
    const Eigen::MatrixXd JiG = lu.solve(sys.G());
    a.cov = detail::symmetrized(lu.solve(JiG.transpose()));
    a.min_cov_eigenvalue = detail::min_eigenvalue(a.cov);
    a.precision = detail::normal_precision(a.J, sys.G_llt());
    a.latent_llt.compute(a.precision + sys.HtRinvH());
    if (a.latent_llt.info() != Eigen::Success) throw ApproximationError("FOT latent precision is not positive definite");
    return a;
}

/// Sigma points b ± sqrt(n+λ) σ_j v_j from the eigendecomposition of G.
inline GaussApprox approx_ut(const NonlinearSystem& sys, const Eigen::VectorXd& b, const UtParams& p = {},
                             const std::optional<Eigen::VectorXd>& u0 = std::nullopt, const NewtonOptions& opt = {}) {
    const Index n = sys.n_u();
    const UtWeights w = ut_weights(n, p);
    STATFEM_REQUIRE(static_cast<double>(n) + w.lambda > 0.0, "UT scaling n + lambda must be positive");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sys.G());
    if (es.info() != Eigen::Success) throw ApproximationError("eigendecomposition of G failed");
    const double scale = std::sqrt(static_cast<double>(n) + w.lambda);

    GaussApprox a;
    a.method = ApproxMethod::UT;
    NewtonResult centre;
    try {
        centre = newton_solve(sys, b, u0.value_or(Eigen::VectorXd::Zero(n)), opt);
    } catch (const ConvergenceError& ex) {
        throw ApproximationError(std::string("UT sigma point 0 failed: ") + ex.what());
    }
    a.newton_iterations = centre.iterations;
    a.solves = 1;
    Eigen::MatrixXd dev(n, 2 * n);
    for (Index j = 0; j < n; ++j) {
        const Eigen::VectorXd d = scale * std::sqrt(std::max(es.eigenvalues()(j), 0.0)) * es.eigenvectors().col(j);
        for (int sign : {1, -1}) {
            const Index col = 2 * j + (sign > 0 ? 0 : 1);
            try {
                const NewtonResult r = newton_solve(sys, b + sign * d, centre.u, opt);
                dev.col(col) = r.u - centre.u;
                a.newton_iterations += r.iterations;
                ++a.solves;
            } catch (const ConvergenceError& ex) {
                throw ApproximationError("UT sigma point " + std::string(sign > 0 ? "+" : "-") + std::to_string(j + 1) +
                                         " failed: " + ex.what());
            }
        }
    }
    // Σ w_j = 1, so m = u_0 + Σ_{j≠0} w_j (u_j - u_0) without cancellation.
    const Eigen::VectorXd shift = w.wj * dev.rowwise().sum();
    a.mean = centre.u + shift;
    Eigen::MatrixXd centred = dev.colwise() - shift;
    a.cov = w.wj * (centred * centred.transpose());
    a.cov += w.w0_cov * (shift * shift.transpose());
    detail::finish_from_cov(sys, a);
    return a;
}

/// M Newton solves at b + e_j, e_j ~ N(0, G); sample mean and (M-1) covariance.
inline GaussApprox approx_mc(const NonlinearSystem& sys, const Eigen::VectorXd& b, Index M, Rng& rng,
                             const std::optional<Eigen::VectorXd>& u0 = std::nullopt, const NewtonOptions& opt = {}) {
    STATFEM_REQUIRE(M >= 2, "Monte Carlo approximation needs at least 2 samples");
    const Index n = sys.n_u();
    const Eigen::MatrixXd L = sys.G_llt().matrixL();
    const Eigen::VectorXd start = u0.value_or(Eigen::VectorXd::Zero(n));
    GaussApprox a;
    a.method = ApproxMethod::MC;
    Eigen::MatrixXd samples(n, M);
    Index ok = 0;
    for (Index j = 0; j < M; ++j) {
        const Eigen::VectorXd bj = b + L * rng.normal_vector(n);
        try {
            const NewtonResult r = newton_solve(sys, bj, start, opt);
            samples.col(ok++) = r.u;
            a.newton_iterations += r.iterations;
        } catch (const ConvergenceError&) {
            ++a.failures;
        }
        ++a.solves;
    }
    if (a.failures > 0.05 * static_cast<double>(M))
        throw ApproximationError("MC approximation: " + std::to_string(a.failures) + " of " + std::to_string(M) +
                                 " Newton solves failed");
    if (ok < 2) throw ApproximationError("MC approximation: fewer than two successful solves");
    const Eigen::MatrixXd S = samples.leftCols(ok);
    a.mean = S.rowwise().mean();
    const Eigen::MatrixXd centred = S.colwise() - a.mean;
    a.cov = centred * centred.transpose() / static_cast<double>(ok - 1);
    detail::finish_from_cov(sys, a);
    return a;
}

struct NonlinearIplaOptions {
    Index refresh_stride = 0; // 0: 1 for FOT, 10 for UT and MC
    UtParams ut;
    Index mc_samples = 200;
    NewtonOptions newton;
};

struct RefreshStats {
    Index refreshes = 0;
    long newton_iterations = 0;
    long solves = 0;
    long failures = 0;
    double seconds = 0.0;
    double min_cov_eigenvalue = 0.0;
    double seconds_per_refresh() const { return refreshes ? seconds / static_cast<double>(refreshes) : 0.0; }
};

struct NonlinearRun {
    Trace trace;
    ApproxMethod method = ApproxMethod::FOT;
    Index refresh_stride = 1;
    RefreshStats stats;
};

namespace detail {

class NonlinearForcingModel {
public:
    NonlinearForcingModel(const NonlinearSystem& sys, ApproxMethod method, const NonlinearIplaOptions& opt,
                          std::uint64_t seed, Index stride)
        : sys_(sys), method_(method), opt_(opt), rng_(seed, 0xacc0ULL), stride_(stride) {
        stats_.min_cov_eigenvalue = std::numeric_limits<double>::infinity();
    }

    Index dim() const { return sys_.n_u(); }

    Eigen::VectorXd residual(const Eigen::VectorXd& u) const { return assemble_residual(sys_, u); }

    void refresh(const Eigen::VectorXd& b, Index k) {
        if (k % stride_ != 0 && approx_) return;
        const auto t0 = std::chrono::steady_clock::now();
        std::optional<Eigen::VectorXd> start;
        if (approx_) start = approx_->mean;
        GaussApprox a;
        switch (method_) {
        case ApproxMethod::FOT: a = approx_fot(sys_, b, start, opt_.newton); break;
        case ApproxMethod::UT: a = approx_ut(sys_, b, opt_.ut, start, opt_.newton); break;
        case ApproxMethod::MC: a = approx_mc(sys_, b, opt_.mc_samples, rng_, start, opt_.newton); break;
        }
        stats_.seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        ++stats_.refreshes;
        stats_.newton_iterations += a.newton_iterations;
        stats_.solves += a.solves;
        stats_.failures += a.failures;
        stats_.min_cov_eigenvalue = std::min(stats_.min_cov_eigenvalue, a.min_cov_eigenvalue);
        if (method_ != ApproxMethod::FOT) shift_ = a.precision * a.mean;
        approx_ = std::move(a);
    }

    const Eigen::LLT<Eigen::MatrixXd>& latent_factor() const { return approx_->latent_llt; }

    Eigen::VectorXd latent_shift(const Eigen::VectorXd& b) const {
        if (method_ == ApproxMethod::FOT) return matvec_t(approx_->J, sys_.G_llt().solve(b + approx_->offset));
        return shift_;
    }

    const RefreshStats& stats() const { return stats_; }

private:
    const NonlinearSystem& sys_;
    ApproxMethod method_;
    NonlinearIplaOptions opt_;
    Rng rng_;
    Index stride_;
    std::optional<GaussApprox> approx_;
    Eigen::VectorXd shift_;
    RefreshStats stats_;
};

} // namespace detail

/// Preconditioned interacting particle forcing estimation for the nonlinear
/// model, with p(u | b_k) replaced by a Gaussian approximation refreshed every
/// `refresh_stride` iterations. The b-update uses the exact residual average.
inline NonlinearRun nonlinear_ipla_run(const NonlinearSystem& sys, const Eigen::VectorXd& y, ApproxMethod method,
                                       const IplaConfig& cfg, const NonlinearIplaOptions& opt = {},
                                       std::optional<ParticleSystem> init = std::nullopt) {
    cfg.validate();
    STATFEM_REQUIRE(cfg.preconditioned, "the nonlinear runner is preconditioned only");
    STATFEM_REQUIRE(y.size() == sys.n_y(), "observation vector size mismatch");
    const Index n = sys.n_u();
    NonlinearRun run;
    run.method = method;
    run.refresh_stride = opt.refresh_stride > 0 ? opt.refresh_stride : (method == ApproxMethod::FOT ? 1 : 10);

    ParticleSystem state = init ? std::move(*init) : ParticleSystem::zeros(n, cfg.n_particles, sys.forcing_prior().mean());
    STATFEM_REQUIRE(state.particles.rows() == n && state.param.size() == n, "initial state size mismatch");

    Preconditioners P;
    detail::build_forcing_preconditioner(sys.G(), sys.forcing_prior(), P);
    ForcingEngineInputs in;
    in.G_llt = &sys.G_llt();
    in.Sigma_llt = &sys.Sigma_llt();
    in.mu = &sys.forcing_prior().mean();
    in.precond = &P;
    in.HtRy = sys.n_y() > 0 ? sys.HtRinv_y(y) : Eigen::VectorXd::Zero(n);

    detail::NonlinearForcingModel fm(sys, method, opt, cfg.rng_seed, run.refresh_stride);
    run.trace = detail::run_forcing_engine(fm, in, cfg, std::move(state));
    run.stats = fm.stats();
    return run;
}

struct NonlinearData {
    Eigen::VectorXd y;
    Eigen::VectorXd u_true;
    Eigen::VectorXd b_true;
};

/// u solves F(u) = b_true + e, e ~ N(0,G); y = Hu + r.
inline NonlinearData generate_nonlinear_data(const NonlinearSystem& sys, const Eigen::VectorXd& b_true,
                                             std::uint64_t seed, const NewtonOptions& opt = {}) {
    Rng rng(seed, 0xda7aULL);
    NonlinearData d;
    d.b_true = b_true;
    const Eigen::VectorXd e = sys.G_llt().matrixL() * rng.normal_vector(sys.n_u());
    d.u_true = newton_solve(sys, b_true + e, sys.lifted(Eigen::VectorXd::Zero(sys.n_u())), opt).u;
    d.y = sys.H() * d.u_true;
    if (sys.n_y() > 0) d.y += sys.R_llt().matrixL() * rng.normal_vector(sys.n_y());
    return d;
}

} // namespace statfem

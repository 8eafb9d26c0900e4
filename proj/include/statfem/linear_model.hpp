#pragma once

#include "statfem/errors.hpp"
#include "statfem/fem.hpp"
#include "statfem/gaussian.hpp"
#include "statfem/gp_field.hpp"
#include "statfem/random.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>

namespace statfem {

struct ThetaPrior {
    double mean = 0.0;
    double var = 1.0;
};

namespace detail {

inline Eigen::LLT<Eigen::MatrixXd> checked_llt(const Eigen::MatrixXd& K, const char* what) {
    Eigen::LLT<Eigen::MatrixXd> llt(K);
    if (llt.info() != Eigen::Success) throw NumericalError(std::string(what) + " is not positive definite");
    return llt;
}

inline Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& K) { return 0.5 * (K + K.transpose()); }

/// y = K x. Every model evaluates particle residuals through this single path.
inline Eigen::VectorXd matvec(const Eigen::MatrixXd& K, const Eigen::VectorXd& x) {
    Eigen::VectorXd y(K.rows());
    y.noalias() = K * x;
    return y;
}

/// y = K^T x.
inline Eigen::VectorXd matvec_t(const Eigen::MatrixXd& K, const Eigen::VectorXd& x) {
    Eigen::VectorXd y(K.cols());
    y.noalias() = K.transpose() * x;
    return y;
}

/// K^T G^{-1} K.
inline Eigen::MatrixXd normal_precision(const Eigen::MatrixXd& K, const Eigen::LLT<Eigen::MatrixXd>& G_llt) {
    const Eigen::MatrixXd GiK = G_llt.solve(K);
    return symmetrized(K.transpose() * GiK);
}

inline Eigen::MatrixXd observation_precision(const Eigen::MatrixXd& H, const Eigen::LLT<Eigen::MatrixXd>& R_llt) {
    if (H.rows() == 0) return Eigen::MatrixXd::Zero(H.cols(), H.cols());
    return symmetrized(H.transpose() * R_llt.solve(H));
}

inline Eigen::VectorXd observation_shift(const Eigen::MatrixXd& H, const Eigen::LLT<Eigen::MatrixXd>& R_llt,
                                         const Eigen::VectorXd& y) {
    if (H.rows() == 0) return Eigen::VectorXd::Zero(H.cols());
    return H.transpose() * R_llt.solve(y);
}

} // namespace detail

/// Linear statFEM model A_θ u = b + e, e ~ N(0,G), y = Hu + r, r ~ N(0,R),
/// b ~ N(μ,Σ), θ ~ N(μ_θ,σ_θ²), with A_θ = e^θ A. Immutable after construction.
class LinearModel {
public:
    LinearModel(FemSystem system, Eigen::MatrixXd G, Eigen::MatrixXd R, GaussianDist forcing_prior,
                ThetaPrior theta_prior = {}, double theta = 0.0)
        : sys_(std::make_shared<const FemSystem>(std::move(system))), theta_prior_(theta_prior), theta_(theta) {
        const Index n = sys_->n_u;
        STATFEM_REQUIRE(sys_->A.rows() == n && sys_->A.cols() == n, "stiffness size mismatch");
        STATFEM_REQUIRE(G.rows() == n && G.cols() == n, "G size mismatch");
        STATFEM_REQUIRE(sys_->H.cols() == n, "observation operator size mismatch");
        STATFEM_REQUIRE(R.rows() == sys_->H.rows() && R.cols() == sys_->H.rows(), "R size mismatch");
        STATFEM_REQUIRE(forcing_prior.dim() == n, "forcing prior size mismatch");
        STATFEM_REQUIRE(theta_prior.var > 0.0, "theta prior variance must be positive");
        auto c = std::make_shared<Cache>();
        c->G = std::move(G);
        c->R = std::move(R);
        c->prior = std::move(forcing_prior);
        c->G_llt = detail::checked_llt(c->G, "G");
        c->R_llt = sys_->H.rows() > 0 ? detail::checked_llt(c->R, "R") : Eigen::LLT<Eigen::MatrixXd>();
        c->HtRH = detail::observation_precision(sys_->H, c->R_llt);
        cache_ = std::move(c);
        A_theta_ = std::exp(theta_) * sys_->A;
    }

    LinearModel with_theta(double theta) const {
        LinearModel m(*this);
        m.theta_ = theta;
        m.A_theta_ = std::exp(theta) * sys_->A;
        return m;
    }

    const FemSystem& system() const { return *sys_; }
    const Eigen::MatrixXd& A() const { return sys_->A; }
    const Eigen::MatrixXd& A_theta() const { return A_theta_; }
    const Eigen::MatrixXd& H() const { return sys_->H; }
    const Eigen::MatrixXd& G() const { return cache_->G; }
    const Eigen::MatrixXd& R() const { return cache_->R; }
    const GaussianDist& forcing_prior() const { return cache_->prior; }
    const Eigen::LLT<Eigen::MatrixXd>& G_llt() const { return cache_->G_llt; }
    const Eigen::LLT<Eigen::MatrixXd>& R_llt() const { return cache_->R_llt; }
    const Eigen::LLT<Eigen::MatrixXd>& Sigma_llt() const { return cache_->prior.llt(); }
    const Eigen::MatrixXd& HtRinvH() const { return cache_->HtRH; }
    const ThetaPrior& theta_prior() const { return theta_prior_; }
    double theta() const { return theta_; }
    Index n_u() const { return sys_->n_u; }
    Index n_y() const { return sys_->H.rows(); }

    Eigen::VectorXd HtRinv_y(const Eigen::VectorXd& y) const {
        STATFEM_REQUIRE(y.size() == n_y(), "observation vector size mismatch");
        return detail::observation_shift(sys_->H, cache_->R_llt, y);
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
    ThetaPrior theta_prior_;
    double theta_ = 0.0;
    Eigen::MatrixXd A_theta_;
};

/// R = σ_y² I.
inline Eigen::MatrixXd observation_noise(Index n_y, double sigma_y) {
    STATFEM_REQUIRE(sigma_y > 0.0, "observation noise must be positive");
    return sigma_y * sigma_y * Eigen::MatrixXd::Identity(n_y, n_y);
}

/// N(A_θ^{-1}b, A_θ^{-1} G A_θ^{-T}).
inline GaussianDist statfem_prior(const LinearModel& model, const Eigen::VectorXd& b) {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(model.A_theta());
    if (!(lu.rcond() > 1e-14)) throw NumericalError("A_theta is singular");
    Eigen::VectorXd mean = lu.solve(b);
    const Eigen::MatrixXd AiG = lu.solve(model.G());
    Eigen::MatrixXd cov = lu.solve(AiG.transpose());
    return GaussianDist(std::move(mean), detail::symmetrized(cov));
}

/// Joint potential up to additive constants.
inline double potential(const LinearModel& model, const Eigen::VectorXd& u, const Eigen::VectorXd& b,
                        const Eigen::VectorXd& y) {
    const Eigen::VectorXd r = model.A_theta() * u - b;
    const Eigen::VectorXd d = model.H() * u - y;
    const Eigen::VectorXd db = b - model.forcing_prior().mean();
    const ThetaPrior& tp = model.theta_prior();
    const double th = model.theta() - tp.mean;
    double v = 0.5 * r.dot(model.G_llt().solve(r)) + 0.5 * db.dot(model.Sigma_llt().solve(db)) -
               static_cast<double>(model.n_u()) * model.theta() + 0.5 * th * th / tp.var;
    if (model.n_y() > 0) v += 0.5 * d.dot(model.R_llt().solve(d));
    return v;
}

/// A_θ^T G^{-1}(A_θu - b) + H^T R^{-1}(Hu - y).
inline Eigen::VectorXd grad_u_potential(const LinearModel& model, const Eigen::VectorXd& u, const Eigen::VectorXd& b,
                                        const Eigen::VectorXd& y) {
    const Eigen::VectorXd r = model.A_theta() * u - b;
    Eigen::VectorXd g = model.A_theta().transpose() * model.G_llt().solve(r);
    if (model.n_y() > 0) g += model.H().transpose() * model.R_llt().solve(model.H() * u - y);
    return g;
}

/// -G^{-1}(A_θu - b) + Σ^{-1}(b - μ).
inline Eigen::VectorXd grad_b_potential(const LinearModel& model, const Eigen::VectorXd& u, const Eigen::VectorXd& b) {
    const Eigen::VectorXd r = model.A_theta() * u - b;
    return -model.G_llt().solve(r) + model.Sigma_llt().solve(b - model.forcing_prior().mean());
}

/// d/dθ of the joint potential: -n_u + (θ-μ_θ)/σ_θ² + (A_θu - b)^T G^{-1} A_θu.
inline double grad_theta_potential(const LinearModel& model, const Eigen::VectorXd& u, const Eigen::VectorXd& b) {
    const Eigen::VectorXd Au = model.A_theta() * u;
    const Eigen::VectorXd r = Au - b;
    const ThetaPrior& tp = model.theta_prior();
    return -static_cast<double>(model.n_u()) + (model.theta() - tp.mean) / tp.var + Au.dot(model.G_llt().solve(r));
}

struct BlockHessian {
    Eigen::MatrixXd uu, ub, bb;

    Eigen::MatrixXd full() const {
        const Index n = uu.rows();
        Eigen::MatrixXd Hf(2 * n, 2 * n);
        Hf.topLeftCorner(n, n) = uu;
        Hf.topRightCorner(n, n) = ub;
        Hf.bottomLeftCorner(n, n) = ub.transpose();
        Hf.bottomRightCorner(n, n) = bb;
        return Hf;
    }
};

/// Hessian of the joint potential in (u, b); `with_forcing_prior=false` drops Σ^{-1}.
inline BlockHessian hessian(const LinearModel& model, bool with_forcing_prior = true) {
    const Index n = model.n_u();
    const Eigen::MatrixXd Gi = detail::symmetrized(model.G_llt().solve(Eigen::MatrixXd::Identity(n, n)));
    BlockHessian h;
    h.uu = detail::normal_precision(model.A_theta(), model.G_llt()) + model.HtRinvH();
    h.ub = -model.A_theta().transpose() * Gi;
    h.bb = Gi;
    if (with_forcing_prior)
        h.bb += detail::symmetrized(model.Sigma_llt().solve(Eigen::MatrixXd::Identity(n, n)));
    return h;
}

struct ConvexityConstants {
    double mu = 0.0;
    double L = 0.0;
    double kappa = 0.0;
};

inline ConvexityConstants convexity_constants(const Eigen::MatrixXd& hess_full) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(detail::symmetrized(hess_full), Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericalError("Hessian eigensolver did not converge");
    ConvexityConstants c;
    c.mu = es.eigenvalues().minCoeff();
    c.L = es.eigenvalues().maxCoeff();
    c.kappa = c.L / c.mu;
    return c;
}

inline ConvexityConstants convexity_constants(const BlockHessian& hess) { return convexity_constants(hess.full()); }

/// Extreme eigenvalues of P^{1/2} ∇²Ψ P^{1/2} with P = blockdiag(P_u, P_b).
inline ConvexityConstants convexity_constants(const BlockHessian& hess, const Eigen::MatrixXd& P_u,
                                              const Eigen::MatrixXd& P_b) {
    const Index n = hess.uu.rows();
    STATFEM_REQUIRE(P_u.rows() == n && P_b.rows() == n, "preconditioner size mismatch");
    Eigen::LLT<Eigen::MatrixXd> lu(detail::symmetrized(P_u)), lb(detail::symmetrized(P_b));
    if (lu.info() != Eigen::Success || lb.info() != Eigen::Success)
        throw std::invalid_argument("preconditioner is not positive definite");
    const Eigen::MatrixXd Lu = lu.matrixL(), Lb = lb.matrixL();
    BlockHessian t;
    t.uu = Lu.transpose() * hess.uu * Lu;
    t.ub = Lu.transpose() * hess.ub * Lb;
    t.bb = Lb.transpose() * hess.bb * Lb;
    return convexity_constants(t.full());
}

/// Inverse diagonal Hessian blocks with their Cholesky data:
/// P_b = (G^{-1}+Σ^{-1})^{-1}, P_u = (A_θ^T G^{-1} A_θ + H^T R^{-1} H)^{-1}.
struct Preconditioners {
    Eigen::MatrixXd P_b, P_u;
    Eigen::LLT<Eigen::MatrixXd> P_b_llt;       // P_b = L L^T
    Eigen::LLT<Eigen::MatrixXd> latent_llt;    // P_u^{-1} = L L^T
    Eigen::MatrixXd b_gain;                    // Σ(G+Σ)^{-1} = P_b G^{-1}
    Eigen::VectorXd b_offset;                  // G(G+Σ)^{-1} μ = P_b Σ^{-1} μ
};

namespace detail {

inline void build_forcing_preconditioner(const Eigen::MatrixXd& G, const GaussianDist& prior, Preconditioners& p) {
    const Eigen::MatrixXd S = symmetrized(G + prior.cov());
    const auto s_llt = checked_llt(S, "G + Sigma");
    const Eigen::MatrixXd SiG = s_llt.solve(G);
    p.P_b = symmetrized(prior.cov() * SiG);
    p.P_b_llt = checked_llt(p.P_b, "P_b");
    p.b_gain = s_llt.solve(prior.cov()).transpose();
    p.b_offset = G * s_llt.solve(prior.mean());
}

} // namespace detail

inline Preconditioners build_preconditioners(const LinearModel& model) {
    Preconditioners p;
    detail::build_forcing_preconditioner(model.G(), model.forcing_prior(), p);
    const Eigen::MatrixXd Q = detail::normal_precision(model.A_theta(), model.G_llt()) + model.HtRinvH();
    p.latent_llt = detail::checked_llt(Q, "latent precision");
    p.P_u = detail::symmetrized(p.latent_llt.solve(Eigen::MatrixXd::Identity(model.n_u(), model.n_u())));
    return p;
}

inline ConvexityConstants convexity_constants(const BlockHessian& hess, const Preconditioners& p) {
    return convexity_constants(hess, p.P_u, p.P_b);
}

/// Mode (= mean) of p(b|y): μ + ΣW(W^TΣW + W^TGW + R)^{-1}(y - W^Tμ), W = A_θ^{-T}H^T.
inline Eigen::VectorXd analytic_mmap(const LinearModel& model, const Eigen::VectorXd& y) {
    const Eigen::VectorXd& mu = model.forcing_prior().mean();
    if (model.n_y() == 0) return mu;
    STATFEM_REQUIRE(y.size() == model.n_y(), "observation vector size mismatch");
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(model.A_theta().transpose());
    if (!(lu.rcond() > 1e-14)) throw NumericalError("A_theta is singular");
    const Eigen::MatrixXd W = lu.solve(model.H().transpose());
    const Eigen::MatrixXd SW = model.forcing_prior().cov() * W;
    const Eigen::MatrixXd S =
        detail::symmetrized(W.transpose() * SW + W.transpose() * model.G() * W + model.R());
    const auto s_llt = detail::checked_llt(S, "marginal observation covariance");
    return mu + SW * s_llt.solve(y - W.transpose() * mu);
}

/// Exact p(u | y, θ, b).
inline GaussianDist analytic_posterior(const LinearModel& model, const Eigen::VectorXd& b, const Eigen::VectorXd& y) {
    const Eigen::MatrixXd Q = detail::normal_precision(model.A_theta(), model.G_llt()) + model.HtRinvH();
    const auto q_llt = detail::checked_llt(Q, "posterior precision");
    Eigen::VectorXd rhs = model.A_theta().transpose() * model.G_llt().solve(b);
    if (model.n_y() > 0) rhs += model.HtRinv_y(y);
    Eigen::VectorXd m = q_llt.solve(rhs);
    Eigen::MatrixXd C = detail::symmetrized(q_llt.solve(Eigen::MatrixXd::Identity(model.n_u(), model.n_u())));
    return GaussianDist(std::move(m), std::move(C));
}

struct SyntheticData {
    Eigen::VectorXd y;
    Eigen::VectorXd u_true;
    Eigen::VectorXd b_true;
};

/// Load of f_true with homogeneous boundary rows.
inline Eigen::VectorXd forcing_load(const FemSystem& sys, const ScalarField& f) {
    Eigen::VectorXd b = assemble_load(sys.mesh, f);
    for (Index i : sys.mesh.boundary_nodes) b(i) = 0.0;
    return b;
}

/// b = load(f_true); u = A_θ^{-1}(b + e), e ~ N(0,G); y = Hu + r, r ~ N(0,R).
inline SyntheticData generate_data(const LinearModel& model, const Eigen::VectorXd& b_true, std::uint64_t seed) {
    Rng rng(seed, 0xda7aULL);
    SyntheticData d;
    d.b_true = b_true;
    const Eigen::VectorXd e = model.G_llt().matrixL() * rng.normal_vector(model.n_u());
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(model.A_theta());
    d.u_true = lu.solve(b_true + e);
    d.y = model.H() * d.u_true;
    if (model.n_y() > 0) d.y += model.R_llt().matrixL() * rng.normal_vector(model.n_y());
    return d;
}

inline SyntheticData generate_data(const LinearModel& model, const ScalarField& f_true, std::uint64_t seed) {
    return generate_data(model, forcing_load(model.system(), f_true), seed);
}

} // namespace statfem

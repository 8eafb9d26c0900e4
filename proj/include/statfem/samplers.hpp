#pragma once

#include "statfem/errors.hpp"
#include "statfem/linear_model.hpp"
#include "statfem/random.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace statfem {

struct IplaConfig {
    double step_size = 1e-3;
    Index n_particles = 10;
    Index n_iters = 1000;
    Index warm_start_len = 0;
    std::uint64_t rng_seed = 0;
    bool preconditioned = true;
    double divergence_threshold = 1e8;
    Index trace_stride = 0;    // 0: 10 for vector parameters, 1 for scalar ones
    Index refresh_stride = 1;  // P_u[θ] rebuild period in the diffusivity run
    bool step_size_guard = true;
    Index plateau_window = 0;  // 0 disables the gradient-plateau stop
    double plateau_tol = 1e-4;

    void validate() const {
        STATFEM_REQUIRE(step_size > 0.0 && std::isfinite(step_size), "step size must be positive");
        STATFEM_REQUIRE(n_particles >= 1, "need at least one particle");
        STATFEM_REQUIRE(n_iters >= 1, "need at least one iteration");
        STATFEM_REQUIRE(warm_start_len >= 0, "warm start length must be nonnegative");
        STATFEM_REQUIRE(divergence_threshold > 0.0, "divergence threshold must be positive");
        STATFEM_REQUIRE(trace_stride >= 0 && refresh_stride >= 1, "strides must be positive");
        STATFEM_REQUIRE(plateau_window >= 0 && plateau_tol > 0.0, "plateau settings invalid");
    }
};

/// N latent particles (columns) plus the parameter iterate.
struct ParticleSystem {
    Eigen::MatrixXd particles;
    Eigen::VectorXd param;
    std::vector<std::uint64_t> stream_ids;
    Index iter = 0;

    Index n_particles() const { return particles.cols(); }

    static ParticleSystem zeros(Index n_u, Index n_particles, Eigen::VectorXd param) {
        ParticleSystem s;
        s.particles = Eigen::MatrixXd::Zero(n_u, n_particles);
        s.param = std::move(param);
        s.stream_ids.resize(static_cast<std::size_t>(n_particles));
        std::iota(s.stream_ids.begin(), s.stream_ids.end(), std::uint64_t{0});
        return s;
    }
};

struct DivergenceStatus {
    bool diverged = false;
    std::string reason;
};

/// Diverged iff any entry is non-finite or exceeds the threshold in magnitude.
inline DivergenceStatus detect_divergence(const ParticleSystem& state, double threshold) {
    auto check = [&](const auto& m, const char* what) -> DivergenceStatus {
        if (m.size() == 0) return {};
        if (!m.allFinite()) return {true, std::string("non-finite ") + what};
        if (m.cwiseAbs().maxCoeff() > threshold) return {true, std::string(what) + " exceeds threshold"};
        return {};
    };
    if (auto s = check(state.param, "parameter"); s.diverged) return s;
    return check(state.particles, "particle");
}

enum class RunStatus { ok, diverged, failed };

struct TraceRecord {
    Index iter = 0;
    Eigen::VectorXd param;
    double grad_norm = 0.0;
    Eigen::VectorXd particle_mean;
    Eigen::VectorXd particle_var;

    double particle_mean_norm() const { return particle_mean.norm(); }
    double particle_var_mean() const { return particle_var.size() ? particle_var.mean() : 0.0; }
};

struct Trace {
    std::vector<TraceRecord> records;
    ParticleSystem final_state;
    RunStatus status = RunStatus::ok;
    Index diverged_iter = -1;
    Index iterations_run = 0;
    std::string message;
    std::vector<std::string> warnings;

    bool ok() const { return status == RunStatus::ok; }
};

namespace detail {

inline Index resolve_stride(const IplaConfig& c, Index param_dim) {
    if (c.trace_stride > 0) return c.trace_stride;
    return param_dim > 1 ? 10 : 1;
}

inline void column_moments(const Eigen::MatrixXd& U, Eigen::VectorXd& mean, Eigen::VectorXd& var) {
    const Index N = U.cols();
    mean = U.rowwise().mean();
    if (N > 1)
        var = (U.colwise() - mean).rowwise().squaredNorm() / static_cast<double>(N - 1);
    else
        var = Eigen::VectorXd::Zero(U.rows());
}

inline TraceRecord make_record(Index iter, const Eigen::VectorXd& param, double grad_norm, const Eigen::MatrixXd& U) {
    TraceRecord r;
    r.iter = iter;
    r.param = param;
    r.grad_norm = grad_norm;
    column_moments(U, r.particle_mean, r.particle_var);
    return r;
}

inline std::vector<Rng> particle_rngs(std::uint64_t seed, const std::vector<std::uint64_t>& ids) {
    std::vector<Rng> out;
    out.reserve(ids.size());
    for (auto id : ids) out.emplace_back(seed, particle_stream(id));
    return out;
}

/// Storage positions sorted by stream id, so reductions do not depend on storage order.
inline std::vector<Index> reduction_order(const std::vector<std::uint64_t>& ids) {
    std::vector<Index> order(ids.size());
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return ids[a] < ids[b]; });
    return order;
}

inline void fill_particle_noise(std::vector<Rng>& rngs, Eigen::MatrixXd& Z) {
    for (Index n = 0; n < Z.cols(); ++n) {
        auto col = Z.col(n);
        rngs[static_cast<std::size_t>(n)].fill_normal(col);
    }
}

/// Stops when the windowed mean of the gradient norm changes by less than tol.
class PlateauMonitor {
public:
    PlateauMonitor(Index window, double tol) : window_(window), tol_(tol) {}
    bool enabled() const { return window_ > 0; }
    bool push(double g) {
        if (!enabled()) return false;
        sum_ += g;
        if (++count_ < window_) return false;
        const double mean = sum_ / static_cast<double>(window_);
        sum_ = 0.0;
        count_ = 0;
        const bool flat = previous_ > 0.0 && std::abs(mean - previous_) < tol_ * previous_;
        previous_ = mean;
        return flat;
    }

private:
    Index window_;
    double tol_;
    double sum_ = 0.0;
    Index count_ = 0;
    double previous_ = -1.0;
};

} // namespace detail

/// Forward model consumed by the preconditioned forcing engine: residual F(u)
/// (A_θu in the linear case) and a Gaussian approximation of p(u | b) in
/// information form, latent_factor = chol(C^{-1} + H^T R^{-1} H) and
/// latent_shift(b) = C^{-1} m(b).
template <class M>
concept ForcingForwardModel = requires(M& m, const Eigen::VectorXd& v, Index k) {
    { m.dim() } -> std::convertible_to<Index>;
    { m.residual(v) } -> std::convertible_to<Eigen::VectorXd>;
    m.refresh(v, k);
    { m.latent_factor() } -> std::convertible_to<const Eigen::LLT<Eigen::MatrixXd>&>;
    { m.latent_shift(v) } -> std::convertible_to<Eigen::VectorXd>;
};

/// Quantities shared by every forcing run: G, Σ factors, prior mean, the
/// forcing preconditioner and H^T R^{-1} y.
struct ForcingEngineInputs {
    const Eigen::LLT<Eigen::MatrixXd>* G_llt = nullptr;
    const Eigen::LLT<Eigen::MatrixXd>* Sigma_llt = nullptr;
    const Eigen::VectorXd* mu = nullptr;
    const Preconditioners* precond = nullptr;
    Eigen::VectorXd HtRy;
};

namespace detail {

inline double forcing_grad_norm(const ForcingEngineInputs& in, const Eigen::VectorXd& rbar, const Eigen::VectorXd& b) {
    const Eigen::VectorXd g = -in.G_llt->solve(rbar - b) + in.Sigma_llt->solve(b - *in.mu);
    return g.norm();
}

/// Preconditioned interacting particle updates for the forcing:
///   b <- (1-γ)b + γ P_b(G^{-1} mean_n F(u_n) + Σ^{-1}μ) + sqrt(2γ/N) P_b^{1/2} ζ
///   u <- (1-γ)u + γ P_u(latent_shift(b) + H^T R^{-1} y) + sqrt(2γ) P_u^{1/2} ζ_n
template <ForcingForwardModel Model>
Trace run_forcing_engine(Model& model, const ForcingEngineInputs& in, const IplaConfig& cfg, ParticleSystem state) {
    const Index n = model.dim();
    const Index N = state.n_particles();
    const double gamma = cfg.step_size;
    const Index stride = resolve_stride(cfg, n);
    const Preconditioners& P = *in.precond;
    const Eigen::MatrixXd Lb = P.P_b_llt.matrixL();

    Rng param_rng(cfg.rng_seed, kParamStream);
    std::vector<Rng> rngs = particle_rngs(cfg.rng_seed, state.stream_ids);
    const std::vector<Index> order = reduction_order(state.stream_ids);
    PlateauMonitor plateau(cfg.plateau_window, cfg.plateau_tol);

    Trace trace;
    trace.records.reserve(static_cast<std::size_t>((cfg.n_iters + stride - 1) / stride));
    Eigen::VectorXd zeta0(n), rbar(n), b_next(n);
    Eigen::MatrixXd Z(n, N);
    const double b_noise = std::sqrt(2.0 * gamma / static_cast<double>(N));
    const double u_noise = std::sqrt(2.0 * gamma);

    for (Index k = 0; k < cfg.n_iters; ++k) {
        Eigen::VectorXd& b = state.param;
        try {
            model.refresh(b, k);
        } catch (const std::exception& ex) {
            trace.status = RunStatus::failed;
            trace.message = std::string("approximation refresh failed at iter=") + std::to_string(k) + ": " + ex.what();
            break;
        }
        rbar.setZero();
        for (Index idx : order) rbar += model.residual(state.particles.col(idx));
        rbar /= static_cast<double>(N);

        const Eigen::LLT<Eigen::MatrixXd>& Lu = model.latent_factor();
        const Eigen::VectorXd center = Lu.solve(model.latent_shift(b) + in.HtRy);

        param_rng.fill_normal(zeta0);
        fill_particle_noise(rngs, Z);

        b_next = (1.0 - gamma) * b + gamma * (P.b_gain * rbar + P.b_offset);
        b_next.noalias() += b_noise * (Lb * zeta0);

        Lu.matrixU().solveInPlace(Z);
        state.particles *= (1.0 - gamma);
        state.particles.colwise() += gamma * center;
        state.particles += u_noise * Z;

        const bool record = k % stride == 0;
        double gnorm = 0.0;
        if (record || plateau.enabled()) gnorm = forcing_grad_norm(in, rbar, b);
        b = b_next;
        state.iter = k + 1;
        trace.iterations_run = k + 1;

        if (auto d = detect_divergence(state, cfg.divergence_threshold); d.diverged) {
            trace.status = RunStatus::diverged;
            trace.diverged_iter = k + 1;
            trace.message = d.reason;
            break;
        }
        if (record) trace.records.push_back(make_record(k + 1, b, gnorm, state.particles));
        if (plateau.push(gnorm)) {
            trace.message = "gradient plateau at iter=" + std::to_string(k + 1);
            break;
        }
    }
    trace.final_state = std::move(state);
    return trace;
}

/// Linear forward model for the engine: residual A_θu, latent shift A_θ^T G^{-1} b.
class LinearForcingModel {
public:
    LinearForcingModel(const LinearModel& m, const Preconditioners& p) : m_(m), p_(p) {}
    Index dim() const { return m_.n_u(); }
    Eigen::VectorXd residual(const Eigen::VectorXd& u) const { return matvec(m_.A_theta(), u); }
    void refresh(const Eigen::VectorXd&, Index) {}
    const Eigen::LLT<Eigen::MatrixXd>& latent_factor() const { return p_.latent_llt; }
    Eigen::VectorXd latent_shift(const Eigen::VectorXd& b) const { return matvec_t(m_.A_theta(), m_.G_llt().solve(b)); }

private:
    const LinearModel& m_;
    const Preconditioners& p_;
};

} // namespace detail

/// Interacting particle Langevin estimation of the forcing b at fixed θ.
/// Particles start at zero and b at the prior mean unless `init` is given.
inline Trace ipla_forcing_run(const LinearModel& model, const Eigen::VectorXd& y, const IplaConfig& cfg,
                              std::optional<ParticleSystem> init = std::nullopt) {
    cfg.validate();
    STATFEM_REQUIRE(y.size() == model.n_y(), "observation vector size mismatch");
    const Index n = model.n_u();
    ParticleSystem state = init ? std::move(*init)
                                : ParticleSystem::zeros(n, cfg.n_particles, model.forcing_prior().mean());
    STATFEM_REQUIRE(state.particles.rows() == n && state.param.size() == n, "initial state size mismatch");
    STATFEM_REQUIRE(static_cast<Index>(state.stream_ids.size()) == state.n_particles(), "stream ids size mismatch");

    Preconditioners P;
    try {
        P = build_preconditioners(model);
    } catch (const NumericalError& ex) {
        throw NumericalError(std::string("preconditioner setup failed: ") + ex.what());
    }

    std::vector<std::string> warnings;
    if (cfg.step_size_guard) {
        const BlockHessian h = hessian(model);
        const ConvexityConstants c = cfg.preconditioned ? convexity_constants(h, P) : convexity_constants(h);
        if (cfg.step_size > 2.0 / (c.mu + c.L))
            warnings.push_back("step size " + std::to_string(cfg.step_size) + " exceeds 2/(mu+L) = " +
                               std::to_string(2.0 / (c.mu + c.L)));
    }

    ForcingEngineInputs in;
    in.G_llt = &model.G_llt();
    in.Sigma_llt = &model.Sigma_llt();
    in.mu = &model.forcing_prior().mean();
    in.precond = &P;
    in.HtRy = model.n_y() > 0 ? model.HtRinv_y(y) : Eigen::VectorXd::Zero(n);

    Trace trace;
    if (cfg.preconditioned) {
        detail::LinearForcingModel fm(model, P);
        trace = detail::run_forcing_engine(fm, in, cfg, std::move(state));
    } else {
        // Plain gradient steps on both blocks.
        const Index N = state.n_particles();
        const double gamma = cfg.step_size;
        const Index stride = detail::resolve_stride(cfg, n);
        const Eigen::MatrixXd& A = model.A_theta();
        const Eigen::MatrixXd Q = detail::normal_precision(A, model.G_llt()) + model.HtRinvH();
        Rng param_rng(cfg.rng_seed, kParamStream);
        std::vector<Rng> rngs = detail::particle_rngs(cfg.rng_seed, state.stream_ids);
        detail::PlateauMonitor plateau(cfg.plateau_window, cfg.plateau_tol);
        Eigen::VectorXd zeta0(n);
        Eigen::MatrixXd Z(n, N), QU(n, N);
        const double b_noise = std::sqrt(2.0 * gamma / static_cast<double>(N));
        const double u_noise = std::sqrt(2.0 * gamma);
        for (Index k = 0; k < cfg.n_iters; ++k) {
            Eigen::VectorXd& b = state.param;
            const Eigen::VectorXd ubar = state.particles.rowwise().mean();
            const Eigen::VectorXd rbar = A * ubar;
            const Eigen::VectorXd grad_b =
                -model.G_llt().solve(rbar - b) + model.Sigma_llt().solve(b - model.forcing_prior().mean());
            const Eigen::VectorXd c = A.transpose() * model.G_llt().solve(b) + in.HtRy;
            param_rng.fill_normal(zeta0);
            detail::fill_particle_noise(rngs, Z);
            QU.noalias() = Q * state.particles;
            state.particles -= gamma * (QU.colwise() - c);
            state.particles += u_noise * Z;
            b += -gamma * grad_b + b_noise * zeta0;
            state.iter = k + 1;
            trace.iterations_run = k + 1;
            if (auto d = detect_divergence(state, cfg.divergence_threshold); d.diverged) {
                trace.status = RunStatus::diverged;
                trace.diverged_iter = k + 1;
                trace.message = d.reason;
                break;
            }
            if (k % stride == 0) trace.records.push_back(detail::make_record(k + 1, b, grad_b.norm(), state.particles));
            if (plateau.push(grad_b.norm())) {
                trace.message = "gradient plateau at iter=" + std::to_string(k + 1);
                break;
            }
        }
        trace.final_state = std::move(state);
    }
    trace.warnings.insert(trace.warnings.begin(), warnings.begin(), warnings.end());
    return trace;
}

/// Joint estimation of θ = log diffusivity with known forcing b. The first
/// warm_start_len iterations move only the particles with θ held at θ_0.
inline Trace ipla_diffusivity_run(const LinearModel& model, const Eigen::VectorXd& y, const Eigen::VectorXd& b_known,
                                  const IplaConfig& cfg, std::optional<double> theta0 = std::nullopt) {
    cfg.validate();
    const Index n = model.n_u();
    STATFEM_REQUIRE(b_known.size() == n, "forcing size mismatch");
    STATFEM_REQUIRE(y.size() == model.n_y(), "observation vector size mismatch");
    const Index N = cfg.n_particles;
    const double gamma = cfg.step_size;
    const Index total = cfg.warm_start_len + cfg.n_iters;
    const Index stride = detail::resolve_stride(cfg, 1);
    const ThetaPrior& tp = model.theta_prior();

    const Eigen::MatrixXd& A = model.A();
    const Eigen::MatrixXd K0 = detail::normal_precision(A, model.G_llt());
    const Eigen::VectorXd AtGib = A.transpose() * model.G_llt().solve(b_known);
    const Eigen::VectorXd HtRy = model.n_y() > 0 ? model.HtRinv_y(y) : Eigen::VectorXd::Zero(n);

    ParticleSystem state = ParticleSystem::zeros(n, N, Eigen::VectorXd::Constant(1, theta0.value_or(tp.mean)));
    Rng param_rng(cfg.rng_seed, kParamStream);
    std::vector<Rng> rngs = detail::particle_rngs(cfg.rng_seed, state.stream_ids);
    Eigen::MatrixXd Z(n, N), AU(n, N), GiR(n, N);
    Eigen::LLT<Eigen::MatrixXd> latent;
    double factor_theta = std::numeric_limits<double>::quiet_NaN();
    Index last_refresh = -cfg.refresh_stride;
    const double u_noise = std::sqrt(2.0 * gamma);
    const double t_noise = std::sqrt(2.0 * gamma / static_cast<double>(N));

    Trace trace;
    trace.records.reserve(static_cast<std::size_t>((total + stride - 1) / stride));
    for (Index k = 0; k < total; ++k) {
        const double theta = state.param(0);
        const double s = std::exp(theta);
        const bool joint = k >= cfg.warm_start_len;

        double theta_next = theta;
        double grad_theta = 0.0;
        if (joint) {
            AU.noalias() = s * (A * state.particles);
            GiR = model.G_llt().solve(AU.colwise() - b_known);
            const double data_term = (GiR.array() * AU.array()).sum() / static_cast<double>(N);
            grad_theta = -static_cast<double>(n) + (theta - tp.mean) / tp.var + data_term;
            theta_next = theta - gamma * grad_theta + t_noise * param_rng.normal();
        }

        detail::fill_particle_noise(rngs, Z);
        const Eigen::VectorXd c = s * AtGib + HtRy;
        if (cfg.preconditioned) {
            if (theta != factor_theta && k - last_refresh >= cfg.refresh_stride) {
                latent.compute(s * s * K0 + model.HtRinvH());
                if (latent.info() != Eigen::Success) {
                    trace.status = RunStatus::diverged;
                    trace.diverged_iter = k;
                    trace.message = "latent precision factorization failed at theta=" + std::to_string(theta);
                    break;
                }
                factor_theta = theta;
                last_refresh = k;
            }
            const Eigen::VectorXd center = latent.solve(c);
            latent.matrixU().solveInPlace(Z);
            state.particles *= (1.0 - gamma);
            state.particles.colwise() += gamma * center;
            state.particles += u_noise * Z;
        } else {
            const Eigen::MatrixXd grad = (s * s * K0 + model.HtRinvH()) * state.particles;
            state.particles -= gamma * (grad.colwise() - c);
            state.particles += u_noise * Z;
        }
        state.param(0) = theta_next;
        state.iter = k + 1;
        trace.iterations_run = k + 1;
        if (auto d = detect_divergence(state, cfg.divergence_threshold); d.diverged) {
            trace.status = RunStatus::diverged;
            trace.diverged_iter = k + 1;
            trace.message = d.reason;
            break;
        }
        if (k % stride == 0) trace.records.push_back(detail::make_record(k + 1, state.param, std::abs(grad_theta), state.particles));
    }
    trace.final_state = std::move(state);
    return trace;
}

/// x <- x - γ P score(x) + sqrt(2γ) P^{1/2} ζ. The trace records x at every
/// `stride`-th iterate in `param`.
inline Trace ula_run(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& score, const Eigen::VectorXd& x0,
                     double gamma, Index K, Rng& rng, const std::optional<Eigen::MatrixXd>& precond = std::nullopt,
                     Index stride = 1, double threshold = 1e8) {
    STATFEM_REQUIRE(gamma > 0.0 && K >= 1 && stride >= 1, "invalid ULA settings");
    const Index n = x0.size();
    Eigen::MatrixXd L;
    if (precond) {
        STATFEM_REQUIRE(precond->rows() == n && precond->cols() == n, "preconditioner size mismatch");
        Eigen::LLT<Eigen::MatrixXd> llt(detail::symmetrized(*precond));
        if (llt.info() != Eigen::Success) throw std::invalid_argument("preconditioner is not positive definite");
        L = llt.matrixL();
    }
    ParticleSystem state;
    state.particles.resize(n, 0);
    state.param = x0;
    Trace trace;
    trace.records.reserve(static_cast<std::size_t>((K + stride - 1) / stride));
    const double noise = std::sqrt(2.0 * gamma);
    Eigen::VectorXd z(n);
    for (Index k = 0; k < K; ++k) {
        Eigen::VectorXd& x = state.param;
        const Eigen::VectorXd g = score(x);
        STATFEM_REQUIRE(g.size() == n, "score dimension mismatch");
        rng.fill_normal(z);
        if (precond)
            x += -gamma * (*precond * g) + noise * (L * z);
        else
            x += -gamma * g + noise * z;
        state.iter = k + 1;
        trace.iterations_run = k + 1;
        if (auto d = detect_divergence(state, threshold); d.diverged) {
            trace.status = RunStatus::diverged;
            trace.diverged_iter = k + 1;
            trace.message = d.reason;
            break;
        }
        if (k % stride == 0) {
            TraceRecord r;
            r.iter = k + 1;
            r.param = x;
            r.grad_norm = g.norm();
            trace.records.push_back(std::move(r));
        }
    }
    trace.final_state = std::move(state);
    return trace;
}

/// Bisection on log10 γ between a stable and an unstable step, expanding the
/// bracket by decades when the endpoints are misclassified.
inline double max_stable_stepsize(const std::function<bool(double)>& stable, double gamma_lo, double gamma_hi,
                                  double resolution_decades = 0.05) {
    STATFEM_REQUIRE(gamma_lo > 0.0 && gamma_hi > gamma_lo, "invalid step-size bracket");
    STATFEM_REQUIRE(resolution_decades > 0.0, "resolution must be positive");
    double lo = std::log10(gamma_lo), hi = std::log10(gamma_hi);
    for (int i = 0; i < 40 && !stable(std::pow(10.0, lo)); ++i) {
        hi = lo;
        lo -= 1.0;
    }
    for (int i = 0; i < 40 && stable(std::pow(10.0, hi)); ++i) {
        lo = hi;
        hi += 1.0;
    }
    while (hi - lo > resolution_decades) {
        const double mid = 0.5 * (lo + hi);
        if (stable(std::pow(10.0, mid)))
            lo = mid;
        else
            hi = mid;
    }
    return std::pow(10.0, lo);
}

/// Largest γ for which the forcing run stays bounded over cfg.n_iters for three seeds.
inline double max_stable_stepsize(const LinearModel& model, const Eigen::VectorXd& y, const IplaConfig& cfg_template,
                                  double gamma_lo, double gamma_hi, double resolution_decades = 0.05) {
    STATFEM_REQUIRE(gamma_lo > 0.0 && gamma_hi > gamma_lo, "invalid step-size bracket");
    auto stable = [&](double gamma) {
        for (std::uint64_t s = 0; s < 3; ++s) {
            IplaConfig c = cfg_template;
            c.step_size = gamma;
            c.rng_seed = cfg_template.rng_seed + s;
            c.step_size_guard = false;
            c.plateau_window = 0;
            c.trace_stride = std::max<Index>(c.n_iters, 1);
            if (ipla_forcing_run(model, y, c).status != RunStatus::ok) return false;
        }
        return true;
    };
    return max_stable_stepsize(stable, gamma_lo, gamma_hi, resolution_decades);
}

} // namespace statfem

#pragma once

#include "statfem/statfem.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>

namespace statfem::testing {

inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                   double h = 1e-5) {
    Eigen::VectorXd g(x.size());
    for (Index i = 0; i < x.size(); ++i) {
        const double s = h * std::max(1.0, std::abs(x(i)));
        Eigen::VectorXd xp = x, xm = x;
        xp(i) += s;
        xm(i) -= s;
        g(i) = (f(xp) - f(xm)) / (2.0 * s);
    }
    return g;
}

inline double rel_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const double scale = std::max(b.norm(), 1e-300);
    return (a - b).norm() / scale;
}

inline Eigen::MatrixXd random_spd(Index n, Rng& rng, double shift = 0.5) {
    Eigen::MatrixXd X(n, n);
    rng.fill_normal(X);
    return X * X.transpose() / static_cast<double>(n) + shift * Eigen::MatrixXd::Identity(n, n);
}

/// Interval model with SE misspecification and prior kernels; boundary entries
/// of the covariances are kept at a fraction of the kernel amplitude.
struct SmallModelOptions {
    Index n_nodes = 9;
    Index n_y = 4;
    double sigma_y = 1e-1;
    SeKernel error_kernel{1.0, 0.2, 1};
    SeKernel prior_kernel{4.0, 0.2, 1};
    double theta = 0.0;
    ThetaPrior theta_prior{0.5, 0.25};
    double jitter_rel = 1e-3;
};

inline LinearModel small_linear_model(const SmallModelOptions& o = {}) {
    const Mesh mesh = build_interval_mesh(o.n_nodes);
    FemSystem sys = build_fem_system(mesh, [](const Point& p) { return std::sin(3.0 * p.x); },
                                     interval_observation_points(o.n_y));
    const LaplacianEigs eigs = solve_laplacian_eigs(sys, default_rank(mesh));
    const auto opts = [&](const SeKernel& k) {
        return CovarianceOptions{o.jitter_rel * k.amplitude, 1e-2 * k.amplitude};
    };
    Eigen::MatrixXd G = assemble_error_covariance(sys, eigs, o.error_kernel, opts(o.error_kernel));
    GaussianDist prior = assemble_forcing_prior(sys, [](const Point& p) { return p.x; }, o.prior_kernel, eigs,
                                                opts(o.prior_kernel));
    const Eigen::MatrixXd R = observation_noise(o.n_y, o.sigma_y);
    return LinearModel(std::move(sys), std::move(G), R, std::move(prior), o.theta_prior, o.theta);
}

/// Three-node interval (one free node plus two boundary nodes) with dense
/// hand-picked covariances, small enough to check every formula by hand.
inline LinearModel three_dof_model(double theta = 0.0) {
    const Mesh mesh = build_interval_mesh(3);
    FemSystem sys = build_fem_system(mesh, [](const Point&) { return 1.0; }, {Point{0.25, 0.0}, Point{0.6, 0.0}});
    Eigen::MatrixXd G(3, 3);
    G << 0.5, 0.1, 0.0, 0.1, 0.8, 0.2, 0.0, 0.2, 0.4;
    Eigen::MatrixXd S(3, 3);
    S << 1.0, 0.3, 0.1, 0.3, 2.0, 0.4, 0.1, 0.4, 1.5;
    Eigen::VectorXd mu(3);
    mu << 0.2, -0.5, 0.3;
    const Eigen::MatrixXd R = observation_noise(2, 0.3);
    return LinearModel(std::move(sys), G, R, GaussianDist(mu, S), ThetaPrior{0.1, 0.5}, theta);
}

} // namespace statfem::testing

#pragma once

#include "statfem/errors.hpp"
#include "statfem/fem.hpp"
#include "statfem/gp_field.hpp"
#include "statfem/io.hpp"
#include "statfem/linear_model.hpp"
#include "statfem/mesh.hpp"
#include "statfem/nonlinear.hpp"
#include "statfem/samplers.hpp"
#include "statfem/version.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <functional>
#include <numbers>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace statfem {

struct KernelConfig {
    double amplitude = 1.0;
    double length_scale = 0.1;
};

struct StabilitySettings {
    std::vector<Index> n_u{5, 10, 20, 30, 50};
    std::vector<double> length_scales{0.01, 0.1};
    double gamma_lo = 1e-6;
    double gamma_hi = 1.0;
    Index n_iters = 10000;
    double resolution = 0.05;
    bool preconditioned = true;
};

struct NonlinearSettings {
    std::vector<std::string> methods{"FOT", "UT", "MC"};
    std::vector<Index> particles{1, 4, 16, 64};
    Index mc_samples = 200;
    Index refresh_stride = 0;
    UtParams ut;
    double bc_left = 0.0;
    double bc_right = 1.0;
};

/// Fully resolved settings of one experiment run.
struct ExperimentConfig {
    std::string problem = "poisson-1d";
    Index n_u = 64;
    Index n_rings = 8;
    std::string mesh_file;
    Index n_y = 16;
    double sigma_y = 1e-2;
    KernelConfig error_kernel{1.0, 0.1};
    KernelConfig prior_kernel{4.0, 0.1};
    Index eig_rank = 0;
    double jitter_rel = 1e-8;
    double boundary_variance_rel = 1e-4;
    double theta_true = 0.0;
    double theta_prior_mean = 1.5;
    double theta_prior_var = 0.5625;
    IplaConfig ipla;
    Index replicates = 10;
    std::uint64_t data_seed = 1;
    Index threads = 0;
    std::string output_dir;
    std::vector<Index> convergence_particles{8, 16, 32, 64, 128, 256};
    std::vector<Index> variance_particles{16, 64, 256};
    StabilitySettings stability;
    std::vector<Index> condition_n_u{32, 64, 128, 256, 512};
    std::vector<Index> warm_starts{0, 10, 100, 1000, 10000};
    NonlinearSettings nonlinear;

    void validate() const;
};

inline const std::vector<std::string>& known_problems() {
    static const std::vector<std::string> p{"poisson-1d", "poisson-disc", "diffusivity-1d", "nonlinear-1d"};
    return p;
}

inline void ExperimentConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError(msg);
    };
    require(std::find(known_problems().begin(), known_problems().end(), problem) != known_problems().end(),
            "unknown problem '" + problem + "'");
    require(n_u >= 2, "mesh.n_u must be at least 2");
    require(n_rings >= 1, "mesh.n_rings must be at least 1");
    require(n_y >= 0, "observations.n_y must be nonnegative");
    require(sigma_y > 0.0, "observations.sigma_y must be positive");
    require(error_kernel.amplitude > 0.0 && error_kernel.length_scale > 0.0, "error_kernel must be positive");
    require(prior_kernel.amplitude > 0.0 && prior_kernel.length_scale > 0.0, "prior_kernel must be positive");
    require(eig_rank >= 0, "covariance.rank must be nonnegative");
    require(jitter_rel >= 0.0 && boundary_variance_rel >= 0.0, "covariance scalings must be nonnegative");
    require(theta_prior_var > 0.0, "theta.prior_var must be positive");
    require(replicates >= 1, "replicates must be at least 1");
    require(threads >= 0, "threads must be nonnegative");
    try {
        ipla.validate();
    } catch (const std::invalid_argument& ex) {
        throw ConfigError(std::string("ipla: ") + ex.what());
    }
    for (Index n : convergence_particles) require(n >= 1, "convergence.particles must be positive");
    for (Index n : variance_particles) require(n >= 2, "posterior_variance.particles must be at least 2");
    for (Index n : stability.n_u) require(n >= 3, "stability.n_u entries must be at least 3");
    for (double l : stability.length_scales) require(l > 0.0, "stability.length_scales must be positive");
    require(stability.gamma_lo > 0.0 && stability.gamma_hi > stability.gamma_lo, "stability bracket invalid");
    require(stability.n_iters >= 1 && stability.resolution > 0.0, "stability settings invalid");
    for (Index n : condition_n_u) require(n >= 3, "condition.n_u entries must be at least 3");
    for (Index w : warm_starts) require(w >= 0, "diffusivity.warm_starts must be nonnegative");
    for (const auto& m : nonlinear.methods) {
        try {
            parse_approx_method(m);
        } catch (const std::invalid_argument& ex) {
            throw ConfigError(ex.what());
        }
    }
    for (Index n : nonlinear.particles) require(n >= 1, "nonlinear.particles must be positive");
    require(nonlinear.mc_samples >= 2, "nonlinear.mc_samples must be at least 2");
    require(nonlinear.refresh_stride >= 0, "nonlinear.refresh_stride must be nonnegative");
}

inline json to_json(const ExperimentConfig& c) {
    json j;
    j["problem"] = c.problem;
    j["mesh"] = {{"n_u", c.n_u}, {"n_rings", c.n_rings}, {"file", c.mesh_file}};
    j["observations"] = {{"n_y", c.n_y}, {"sigma_y", c.sigma_y}};
    j["error_kernel"] = {{"amplitude", c.error_kernel.amplitude}, {"length_scale", c.error_kernel.length_scale}};
    j["prior_kernel"] = {{"amplitude", c.prior_kernel.amplitude}, {"length_scale", c.prior_kernel.length_scale}};
    j["covariance"] = {{"rank", c.eig_rank}, {"jitter_rel", c.jitter_rel}, {"boundary_variance_rel", c.boundary_variance_rel}};
    j["theta"] = {{"true", c.theta_true}, {"prior_mean", c.theta_prior_mean}, {"prior_var", c.theta_prior_var}};
    j["ipla"] = to_json(c.ipla);
    j["replicates"] = c.replicates;
    j["data_seed"] = c.data_seed;
    j["threads"] = c.threads;
    j["output_dir"] = c.output_dir;
    j["convergence"] = {{"particles", c.convergence_particles}};
    j["posterior_variance"] = {{"particles", c.variance_particles}};
    j["stability"] = {{"n_u", c.stability.n_u},
                      {"length_scales", c.stability.length_scales},
                      {"gamma_lo", c.stability.gamma_lo},
                      {"gamma_hi", c.stability.gamma_hi},
                      {"n_iters", c.stability.n_iters},
                      {"resolution", c.stability.resolution},
                      {"preconditioned", c.stability.preconditioned}};
    j["condition"] = {{"n_u", c.condition_n_u}};
    j["diffusivity"] = {{"warm_starts", c.warm_starts}};
    j["nonlinear"] = {{"methods", c.nonlinear.methods},
                      {"particles", c.nonlinear.particles},
                      {"mc_samples", c.nonlinear.mc_samples},
                      {"refresh_stride", c.nonlinear.refresh_stride},
                      {"ut", {{"alpha", c.nonlinear.ut.alpha}, {"beta", c.nonlinear.ut.beta}, {"kappa", c.nonlinear.ut.kappa}}},
                      {"bc_left", c.nonlinear.bc_left},
                      {"bc_right", c.nonlinear.bc_right}};
    return j;
}

namespace detail {

inline void check_known_keys(const json& doc, const json& reference, const std::string& prefix) {
    if (!doc.is_object()) return;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!reference.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
        if (reference.at(it.key()).is_object()) {
            if (!it.value().is_object()) throw ConfigError("config key '" + key + "' must be an object");
            check_known_keys(it.value(), reference.at(it.key()), key);
        }
    }
}

template <class T>
void read_key(const json& j, const char* section, const char* key, T& out) {
    const json& node = section ? j.at(section) : j;
    if (!node.contains(key)) return;
    try {
        out = node.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config key '") + (section ? std::string(section) + "." : "") + key +
                          "' has the wrong type");
    }
}

} // namespace detail

inline ExperimentConfig from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    ExperimentConfig c;
    const json reference = to_json(c);
    detail::check_known_keys(j, reference, "");
    json doc = reference;
    doc.merge_patch(j);
    using detail::read_key;
    read_key(doc, nullptr, "problem", c.problem);
    read_key(doc, "mesh", "n_u", c.n_u);
    read_key(doc, "mesh", "n_rings", c.n_rings);
    read_key(doc, "mesh", "file", c.mesh_file);
    read_key(doc, "observations", "n_y", c.n_y);
    read_key(doc, "observations", "sigma_y", c.sigma_y);
    read_key(doc, "error_kernel", "amplitude", c.error_kernel.amplitude);
    read_key(doc, "error_kernel", "length_scale", c.error_kernel.length_scale);
    read_key(doc, "prior_kernel", "amplitude", c.prior_kernel.amplitude);
    read_key(doc, "prior_kernel", "length_scale", c.prior_kernel.length_scale);
    read_key(doc, "covariance", "rank", c.eig_rank);
    read_key(doc, "covariance", "jitter_rel", c.jitter_rel);
    read_key(doc, "covariance", "boundary_variance_rel", c.boundary_variance_rel);
    read_key(doc, "theta", "true", c.theta_true);
    read_key(doc, "theta", "prior_mean", c.theta_prior_mean);
    read_key(doc, "theta", "prior_var", c.theta_prior_var);
    read_key(doc, "ipla", "step_size", c.ipla.step_size);
    read_key(doc, "ipla", "n_particles", c.ipla.n_particles);
    read_key(doc, "ipla", "n_iters", c.ipla.n_iters);
    read_key(doc, "ipla", "warm_start_len", c.ipla.warm_start_len);
    read_key(doc, "ipla", "rng_seed", c.ipla.rng_seed);
    read_key(doc, "ipla", "preconditioned", c.ipla.preconditioned);
    read_key(doc, "ipla", "divergence_threshold", c.ipla.divergence_threshold);
    read_key(doc, "ipla", "trace_stride", c.ipla.trace_stride);
    read_key(doc, "ipla", "refresh_stride", c.ipla.refresh_stride);
    read_key(doc, "ipla", "step_size_guard", c.ipla.step_size_guard);
    read_key(doc, "ipla", "plateau_window", c.ipla.plateau_window);
    read_key(doc, "ipla", "plateau_tol", c.ipla.plateau_tol);
    read_key(doc, nullptr, "replicates", c.replicates);
    read_key(doc, nullptr, "data_seed", c.data_seed);
    read_key(doc, nullptr, "threads", c.threads);
    read_key(doc, nullptr, "output_dir", c.output_dir);
    read_key(doc, "convergence", "particles", c.convergence_particles);
    read_key(doc, "posterior_variance", "particles", c.variance_particles);
    read_key(doc, "stability", "n_u", c.stability.n_u);
    read_key(doc, "stability", "length_scales", c.stability.length_scales);
    read_key(doc, "stability", "gamma_lo", c.stability.gamma_lo);
    read_key(doc, "stability", "gamma_hi", c.stability.gamma_hi);
    read_key(doc, "stability", "n_iters", c.stability.n_iters);
    read_key(doc, "stability", "resolution", c.stability.resolution);
    read_key(doc, "stability", "preconditioned", c.stability.preconditioned);
    read_key(doc, "condition", "n_u", c.condition_n_u);
    read_key(doc, "diffusivity", "warm_starts", c.warm_starts);
    read_key(doc, "nonlinear", "methods", c.nonlinear.methods);
    read_key(doc, "nonlinear", "particles", c.nonlinear.particles);
    read_key(doc, "nonlinear", "mc_samples", c.nonlinear.mc_samples);
    read_key(doc, "nonlinear", "refresh_stride", c.nonlinear.refresh_stride);
    read_key(doc, "nonlinear", "bc_left", c.nonlinear.bc_left);
    read_key(doc, "nonlinear", "bc_right", c.nonlinear.bc_right);
    if (doc.at("nonlinear").contains("ut")) {
        const json& ut = doc.at("nonlinear").at("ut");
        if (!ut.is_object()) throw ConfigError("nonlinear.ut must be an object");
        read_key(ut, nullptr, "alpha", c.nonlinear.ut.alpha);
        read_key(ut, nullptr, "beta", c.nonlinear.ut.beta);
        read_key(ut, nullptr, "kappa", c.nonlinear.ut.kappa);
    }
    c.validate();
    return c;
}

inline std::string default_problem(const std::string& command) {
    if (command == "diffusivity") return "diffusivity-1d";
    if (command == "nonlinear") return "nonlinear-1d";
    return "poisson-1d";
}

/// Problem and command defaults; anything a config file sets overrides these.
inline ExperimentConfig default_config(const std::string& problem, const std::string& command) {
    ExperimentConfig c;
    c.problem = problem;
    c.ipla.rng_seed = 12345;
    if (problem == "poisson-1d") {
        c.n_u = 64;
        c.n_y = 16;
        c.error_kernel = {1.0, 0.1};
        c.prior_kernel = {4.0, 0.1};
    } else if (problem == "poisson-disc") {
        c.n_rings = 8;
        c.n_y = 16;
        c.error_kernel = {1.0, 0.1};
        c.prior_kernel = {100.0, 0.2};
    } else if (problem == "diffusivity-1d") {
        c.n_u = 64;
        c.n_y = 32;
        c.error_kernel = {3.0, 0.02};
        c.prior_kernel = {1.0, 0.1};
        c.theta_true = 0.0;
        c.theta_prior_mean = 1.5;
        c.theta_prior_var = 0.75 * 0.75;
        c.ipla.step_size = 1e-3;
        c.ipla.n_particles = 8;
        c.ipla.n_iters = 10000;
        c.replicates = 1;
    } else if (problem == "nonlinear-1d") {
        c.n_u = 32;
        c.n_y = 16;
        c.error_kernel = {1.0, 0.02};
        c.prior_kernel = {6.0, 0.1};
        c.ipla.step_size = 5e-3;
        c.ipla.n_particles = 4;
        c.ipla.n_iters = 10000;
        c.ipla.trace_stride = 100;
        c.replicates = 10;
    } else {
        throw ConfigError("unknown problem '" + problem + "'");
    }
    if (command == "convergence") {
        c.ipla.step_size = 0.5;
        c.ipla.n_iters = 20000;
        c.ipla.plateau_window = 1000;
        c.ipla.plateau_tol = 1e-4;
        c.ipla.trace_stride = 1000;
        c.replicates = 10;
    } else if (command == "posterior-variance") {
        c.ipla.step_size = 0.01;
        c.ipla.n_iters = 10000;
        c.ipla.trace_stride = 1000;
        c.replicates = 5;
    } else if (command == "stability") {
        c.ipla.n_particles = 10;
        c.ipla.preconditioned = false;
        c.replicates = 1;
    }
    return c;
}

/// Defaults for the config's problem (or the command's default problem), then the
/// user document on top, then `key=value` overrides.
inline ExperimentConfig load_config(json user, const std::string& command, const std::vector<std::string>& overrides = {}) {
    if (user.is_null()) user = json::object();
    if (!user.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& o : overrides) apply_override(user, o);
    std::string problem = default_problem(command);
    if (user.contains("problem")) {
        if (!user.at("problem").is_string()) throw ConfigError("problem must be a string");
        problem = user.at("problem").get<std::string>();
    }
    if (std::find(known_problems().begin(), known_problems().end(), problem) == known_problems().end())
        throw ConfigError("unknown problem '" + problem + "'");
    json doc = to_json(default_config(problem, command));
    detail::check_known_keys(user, doc, "");
    doc.merge_patch(user);
    return from_json(doc);
}

/// Runs fn(0..n-1) on a pool of worker threads; results must go to per-index slots.
inline void parallel_for(Index n, Index threads, const std::function<void(Index)>& fn) {
    if (n <= 0) return;
    if (threads <= 0) threads = std::max<Index>(1, static_cast<Index>(std::thread::hardware_concurrency()));
    threads = std::min(threads, n);
    if (threads == 1) {
        for (Index i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<Index> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
    auto worker = [&] {
        for (Index i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(i)] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (Index t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline ScalarField true_forcing(const std::string& problem) {
    using std::numbers::pi;
    if (problem == "poisson-1d") return [](const Point& p) { return 5.0 * std::sin(6.0 * pi * p.x); };
    if (problem == "poisson-disc")
        return [](const Point& p) {
            const double a = (p.x + 0.4) * (p.x + 0.4) + (p.y + 0.4) * (p.y + 0.4);
            const double b = (p.x - 0.4) * (p.x - 0.4) + (p.y - 0.4) * (p.y - 0.4);
            return 100.0 * std::exp(-a / (2.0 * 0.2 * 0.2)) + 100.0 * std::exp(-b / (2.0 * 0.2 * 0.2));
        };
    if (problem == "diffusivity-1d") return [](const Point& p) { return 20.0 * std::sin(4.0 * pi * p.x); };
    if (problem == "nonlinear-1d") return [](const Point& p) { return 10.0 * std::sin(2.0 * pi * p.x); };
    throw ConfigError("unknown problem '" + problem + "'");
}

inline Mesh build_mesh(const ExperimentConfig& c) {
    if (!c.mesh_file.empty()) return read_mesh_file(c.mesh_file);
    if (c.problem == "poisson-disc") return build_disc_mesh(static_cast<int>(c.n_rings));
    return build_interval_mesh(c.n_u);
}

inline std::vector<Point> observation_points(const ExperimentConfig& c, const Mesh& mesh) {
    return mesh.dim == 1 ? interval_observation_points(c.n_y) : disc_observation_points(c.n_y);
}

inline CovarianceOptions covariance_options(const ExperimentConfig& c, const KernelConfig& k) {
    return CovarianceOptions{c.jitter_rel * k.amplitude, c.boundary_variance_rel * k.amplitude};
}

/// Linear model at θ = θ_true with its data-generating forcing.
struct LinearProblem {
    LinearModel model;
    LaplacianEigs eigs;
    Eigen::VectorXd b_true;
    ScalarField f_true;
};

inline LinearProblem build_linear_problem(const ExperimentConfig& c) {
    if (c.problem == "nonlinear-1d") throw ConfigError("nonlinear-1d is not a linear problem");
    const Mesh mesh = build_mesh(c);
    const ScalarField f = true_forcing(c.problem);
    FemSystem sys = build_fem_system(mesh, f, observation_points(c, mesh));
    LaplacianEigs eigs = solve_laplacian_eigs(sys, c.eig_rank > 0 ? c.eig_rank : default_rank(mesh));
    const SeKernel kg{c.error_kernel.amplitude, c.error_kernel.length_scale, mesh.dim};
    const SeKernel kf{c.prior_kernel.amplitude, c.prior_kernel.length_scale, mesh.dim};
    Eigen::MatrixXd G = assemble_error_covariance(sys, eigs, kg, covariance_options(c, c.error_kernel));
    GaussianDist prior = assemble_forcing_prior(sys, [](const Point&) { return 0.0; }, kf, eigs,
                                                covariance_options(c, c.prior_kernel));
    Eigen::VectorXd b = forcing_load(sys, f);
    const Eigen::MatrixXd R = c.n_y > 0 ? observation_noise(c.n_y, c.sigma_y) : Eigen::MatrixXd(0, 0);
    LinearModel model(std::move(sys), std::move(G), R, std::move(prior),
                      ThetaPrior{c.theta_prior_mean, c.theta_prior_var}, c.theta_true);
    return LinearProblem{std::move(model), std::move(eigs), std::move(b), f};
}

struct NonlinearProblem {
    NonlinearSystem system;
    Eigen::VectorXd b_true;
    ScalarField f_true;
};

inline NonlinearProblem build_nonlinear_problem(const ExperimentConfig& c, DiffusivityLaw law = DiffusivityLaw::quadratic()) {
    if (c.problem != "nonlinear-1d") throw ConfigError("problem '" + c.problem + "' is not nonlinear");
    const Mesh mesh = build_mesh(c);
    if (mesh.dim != 1) throw ConfigError("nonlinear-1d needs a 1D mesh");
    DirichletSpec bc;
    bc.values[mesh.boundary_nodes.front()] = c.nonlinear.bc_left;
    bc.values[mesh.boundary_nodes.back()] = c.nonlinear.bc_right;
    const ScalarField f = true_forcing(c.problem);
    FemSystem sys = build_fem_system(mesh, [](const Point&) { return 0.0; }, observation_points(c, mesh), bc);
    const LaplacianEigs eigs = solve_laplacian_eigs(sys, c.eig_rank > 0 ? c.eig_rank : default_rank(mesh));
    const SeKernel kg{c.error_kernel.amplitude, c.error_kernel.length_scale, 1};
    const SeKernel kf{c.prior_kernel.amplitude, c.prior_kernel.length_scale, 1};
    Eigen::MatrixXd G = assemble_error_covariance(sys, eigs, kg, covariance_options(c, c.error_kernel));
    GaussianDist prior = assemble_forcing_prior(sys, [](const Point&) { return 0.0; }, kf, eigs,
                                                covariance_options(c, c.prior_kernel));
    Eigen::VectorXd b = forcing_load(sys, f);
    const Eigen::MatrixXd R = c.n_y > 0 ? observation_noise(c.n_y, c.sigma_y) : Eigen::MatrixXd(0, 0);
    NonlinearSystem nl(std::move(sys), std::move(bc), std::move(law), std::move(G), R, std::move(prior));
    return NonlinearProblem{std::move(nl), std::move(b), f};
}

inline json hyperparameters_json(const ExperimentConfig& c) {
    return {{"error_kernel", {{"amplitude", c.error_kernel.amplitude}, {"length_scale", c.error_kernel.length_scale}}},
            {"prior_kernel", {{"amplitude", c.prior_kernel.amplitude}, {"length_scale", c.prior_kernel.length_scale}}},
            {"sigma_y", c.sigma_y}};
}

/// Least-squares fit of log error = log C - p log N on replicate-mean log errors.
struct FitResult {
    double slope = 0.0;     // p, positive for decaying errors
    double intercept = 0.0; // log C
    std::vector<double> mean_errors;
    std::vector<double> std_errors;
};

inline double mean_of(const std::vector<double>& v) {
    STATFEM_REQUIRE(!v.empty(), "mean of an empty sample");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

/// Standard error of the mean; zero for a single value.
inline double std_error_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

inline FitResult fit_order(const std::vector<double>& ns, const std::vector<std::vector<double>>& errors) {
    STATFEM_REQUIRE(ns.size() >= 3, "fit_order needs at least three ladder points");
    STATFEM_REQUIRE(ns.size() == errors.size(), "one error sample per ladder point");
    FitResult fit;
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < ns.size(); ++i) {
        STATFEM_REQUIRE(ns[i] > 0.0, "ladder points must be positive");
        STATFEM_REQUIRE(!errors[i].empty(), "empty error sample");
        double s = 0.0;
        for (double e : errors[i]) {
            STATFEM_REQUIRE(e > 0.0 && std::isfinite(e), "errors must be positive and finite");
            s += std::log(e);
        }
        lx.push_back(std::log(ns[i]));
        ly.push_back(s / static_cast<double>(errors[i].size()));
        fit.mean_errors.push_back(mean_of(errors[i]));
        fit.std_errors.push_back(std_error_of(errors[i]));
    }
    const double mx = mean_of(lx), my = mean_of(ly);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    STATFEM_REQUIRE(sxx > 0.0, "ladder points must not all coincide");
    fit.slope = -sxy / sxx;
    fit.intercept = my + fit.slope * mx;
    return fit;
}

inline FitResult fit_order(const std::vector<Index>& ns, const std::vector<std::vector<double>>& errors) {
    return fit_order(std::vector<double>(ns.begin(), ns.end()), errors);
}

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::filesystem::path out_path(const ExperimentConfig& c, const std::string& name) {
    return std::filesystem::path(c.output_dir) / name;
}

inline json base_metadata(const ExperimentConfig& c, const std::string& command) {
    return {{"command", command},
            {"config", to_json(c)},
            {"version", kVersion},
            {"data_seed", c.data_seed},
            {"rng_seed", c.ipla.rng_seed},
            {"data_protocol", "fixed mesh; fresh e ~ N(0,G) and r ~ N(0,R) per replicate, seed data_seed + replicate"}};
}

inline void add_unique(std::vector<std::string>& out, const std::vector<std::string>& in) {
    for (const auto& w : in)
        if (std::find(out.begin(), out.end(), w) == out.end()) out.push_back(w);
}

inline std::uint64_t job_seed(std::uint64_t base, Index replicate, Index slot) {
    return base + 1000003ULL * static_cast<std::uint64_t>(replicate) + 7919ULL * static_cast<std::uint64_t>(slot);
}

} // namespace detail

struct ConvergenceResult {
    std::vector<Index> ns;
    std::vector<std::vector<double>> err_l2; // [ladder][replicate], converged runs only
    std::vector<std::vector<double>> err_L2;
    FitResult fit_l2;
    FitResult fit_L2;
    Index runs = 0;
    Index diverged = 0;
    Index max_iterations = 0;
    std::vector<std::string> warnings;
    double seconds = 0.0;
};

/// ‖b_K − b*‖ over a particle ladder with fresh data per replicate, then the fitted order.
inline ConvergenceResult cmd_convergence_order(const ExperimentConfig& cfg) {
    if (cfg.problem != "poisson-1d" && cfg.problem != "poisson-disc")
        throw ConfigError("convergence needs problem poisson-1d or poisson-disc");
    if (cfg.convergence_particles.size() < 3) throw ConfigError("convergence.particles needs at least three entries");
    const auto t0 = std::chrono::steady_clock::now();
    const LinearProblem prob = build_linear_problem(cfg);
    const LinearModel& model = prob.model;
    const Index R = cfg.replicates;
    const Index L = static_cast<Index>(cfg.convergence_particles.size());

    std::vector<SyntheticData> data(static_cast<std::size_t>(R));
    std::vector<Eigen::VectorXd> bstar(static_cast<std::size_t>(R));
    parallel_for(R, cfg.threads, [&](Index r) {
        data[r] = generate_data(model, prob.b_true, cfg.data_seed + static_cast<std::uint64_t>(r));
        bstar[r] = analytic_mmap(model, data[r].y);
    });

    struct Job {
        double e2 = 0.0, eL = 0.0;
        Index iters = 0;
        RunStatus status = RunStatus::ok;
        std::vector<std::string> warnings;
    };
    std::vector<Job> jobs(static_cast<std::size_t>(R * L));
    // Largest particle counts first so the pool drains evenly.
    std::vector<Index> order(static_cast<std::size_t>(R * L));
    for (Index i = 0; i < R * L; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
        return cfg.convergence_particles[a % L] > cfg.convergence_particles[b % L];
    });
    parallel_for(R * L, cfg.threads, [&](Index k) {
        const Index j = order[k];
        const Index r = j / L, i = j % L;
        IplaConfig ic = cfg.ipla;
        ic.n_particles = cfg.convergence_particles[i];
        ic.rng_seed = detail::job_seed(cfg.ipla.rng_seed, r, i);
        const Trace tr = ipla_forcing_run(model, data[r].y, ic);
        Job& out = jobs[j];
        out.status = tr.status;
        out.iters = tr.iterations_run;
        out.warnings = tr.warnings;
        if (tr.ok()) {
            out.e2 = (tr.final_state.param - bstar[r]).norm();
            out.eL = load_l2_norm(model.system(), tr.final_state.param - bstar[r]);
        }
    });

    ConvergenceResult res;
    res.ns = cfg.convergence_particles;
    res.err_l2.resize(static_cast<std::size_t>(L));
    res.err_L2.resize(static_cast<std::size_t>(L));
    CsvTable table;
    table.header = {"N", "replicate", "err_l2", "err_L2", "iterations", "diverged"};
    for (Index r = 0; r < R; ++r)
        for (Index i = 0; i < L; ++i) {
            const Job& j = jobs[r * L + i];
            ++res.runs;
            res.max_iterations = std::max(res.max_iterations, j.iters);
            detail::add_unique(res.warnings, j.warnings);
            const bool bad = j.status != RunStatus::ok;
            if (bad) {
                ++res.diverged;
                res.warnings.push_back("run N=" + std::to_string(res.ns[i]) + " replicate=" + std::to_string(r) +
                                       " diverged and was excluded");
            } else {
                res.err_l2[i].push_back(j.e2);
                res.err_L2[i].push_back(j.eL);
            }
            table.rows.push_back({static_cast<double>(res.ns[i]), static_cast<double>(r), bad ? NAN : j.e2,
                                  bad ? NAN : j.eL, static_cast<double>(j.iters), bad ? 1.0 : 0.0});
        }
    if (static_cast<double>(res.diverged) > 0.2 * static_cast<double>(res.runs))
        throw NumericalError("convergence experiment: " + std::to_string(res.diverged) + " of " +
                             std::to_string(res.runs) + " runs diverged");
    res.fit_l2 = fit_order(res.ns, res.err_l2);
    res.fit_L2 = fit_order(res.ns, res.err_L2);
    res.seconds = detail::seconds_since(t0);

    if (!cfg.output_dir.empty()) {
        write_csv_file(detail::out_path(cfg, "convergence_errors.csv"), table);
        CsvTable fit;
        fit.header = {"N", "mean_err_l2", "se_err_l2", "mean_err_L2", "se_err_L2"};
        for (Index i = 0; i < L; ++i)
            fit.rows.push_back({static_cast<double>(res.ns[i]), res.fit_l2.mean_errors[i], res.fit_l2.std_errors[i],
                                res.fit_L2.mean_errors[i], res.fit_L2.std_errors[i]});
        fit.comments.push_back("order_l2=" + detail::fmt_double(res.fit_l2.slope) +
                               " log_C_l2=" + detail::fmt_double(res.fit_l2.intercept));
        fit.comments.push_back("order_L2=" + detail::fmt_double(res.fit_L2.slope) +
                               " log_C_L2=" + detail::fmt_double(res.fit_L2.intercept));
        write_csv_file(detail::out_path(cfg, "convergence_fit.csv"), fit);
        json meta = detail::base_metadata(cfg, "convergence");
        meta["order_l2"] = res.fit_l2.slope;
        meta["order_L2"] = res.fit_L2.slope;
        meta["iterations_K"] = res.max_iterations;
        meta["runs"] = res.runs;
        meta["diverged"] = res.diverged;
        meta["warnings"] = res.warnings;
        meta["wall_clock_s"] = res.seconds;
        meta["model"] = model_summary(model, hyperparameters_json(cfg));
        write_json_file(detail::out_path(cfg, "metadata.json"), meta);
    }
    return res;
}

struct PosteriorVarianceResult {
    std::vector<Index> ns;
    Eigen::VectorXd analytic_var;
    std::vector<Eigen::VectorXd> particle_var;      // replicate 0, per N
    std::vector<std::vector<double>> rel_errors;    // [N][replicate] mean absolute relative error
    std::vector<double> mean_rel_error;
    std::vector<double> se_rel_error;
    double seconds = 0.0;
};

/// Mean over interior nodes of |v_i − a_i| / a_i.
inline double mean_abs_rel_error(const Mesh& mesh, const Eigen::VectorXd& v, const Eigen::VectorXd& a) {
    double s = 0.0;
    Index n = 0;
    for (Index i : mesh.free_nodes()) {
        s += std::abs(v(i) - a(i)) / a(i);
        ++n;
    }
    STATFEM_REQUIRE(n > 0, "mesh has no interior nodes");
    return s / static_cast<double>(n);
}

/// Final particle-cloud variance against the exact posterior variance diag(P_u).
inline PosteriorVarianceResult cmd_posterior_variance(const ExperimentConfig& cfg) {
    if (cfg.problem != "poisson-1d" && cfg.problem != "poisson-disc")
        throw ConfigError("posterior-variance needs problem poisson-1d or poisson-disc");
    const auto t0 = std::chrono::steady_clock::now();
    const LinearProblem prob = build_linear_problem(cfg);
    const LinearModel& model = prob.model;
    const Mesh& mesh = model.system().mesh;
    const Index R = cfg.replicates;
    const Index L = static_cast<Index>(cfg.variance_particles.size());

    std::vector<SyntheticData> data(static_cast<std::size_t>(R));
    for (Index r = 0; r < R; ++r) data[r] = generate_data(model, prob.b_true, cfg.data_seed + static_cast<std::uint64_t>(r));
    const Preconditioners P = build_preconditioners(model);

    PosteriorVarianceResult res;
    res.ns = cfg.variance_particles;
    res.analytic_var = P.P_u.diagonal();
    std::vector<Eigen::VectorXd> var(static_cast<std::size_t>(R * L));
    std::vector<RunStatus> status(static_cast<std::size_t>(R * L));
    parallel_for(R * L, cfg.threads, [&](Index j) {
        const Index r = j / L, i = j % L;
        IplaConfig ic = cfg.ipla;
        ic.n_particles = cfg.variance_particles[i];
        ic.rng_seed = detail::job_seed(cfg.ipla.rng_seed, r, i);
        const Trace tr = ipla_forcing_run(model, data[r].y, ic);
        status[j] = tr.status;
        Eigen::VectorXd mean;
        detail::column_moments(tr.final_state.particles, mean, var[j]);
    });
    for (Index j = 0; j < R * L; ++j)
        if (status[j] != RunStatus::ok) throw NumericalError("posterior-variance run diverged");
    res.rel_errors.resize(static_cast<std::size_t>(L));
    for (Index i = 0; i < L; ++i) {
        res.particle_var.push_back(var[i]);
        for (Index r = 0; r < R; ++r) res.rel_errors[i].push_back(mean_abs_rel_error(mesh, var[r * L + i], res.analytic_var));
        res.mean_rel_error.push_back(mean_of(res.rel_errors[i]));
        res.se_rel_error.push_back(std_error_of(res.rel_errors[i]));
    }
    res.seconds = detail::seconds_since(t0);

    if (!cfg.output_dir.empty()) {
        CsvTable nodes;
        nodes.header = {"node", "x", "y", "analytic_var"};
        for (Index n : res.ns) nodes.header.push_back("var_N" + std::to_string(n));
        for (Index k = 0; k < model.n_u(); ++k) {
            std::vector<double> row{static_cast<double>(k), mesh.nodes[k].x, mesh.nodes[k].y, res.analytic_var(k)};
            for (Index i = 0; i < L; ++i) row.push_back(res.particle_var[i](k));
            nodes.rows.push_back(std::move(row));
        }
        write_csv_file(detail::out_path(cfg, "posterior_variance_nodes.csv"), nodes);
        CsvTable summary;
        summary.header = {"N", "mean_abs_rel_error", "se"};
        for (Index i = 0; i < L; ++i)
            summary.rows.push_back({static_cast<double>(res.ns[i]), res.mean_rel_error[i], res.se_rel_error[i]});
        write_csv_file(detail::out_path(cfg, "posterior_variance_summary.csv"), summary);
        json meta = detail::base_metadata(cfg, "posterior-variance");
        meta["mean_abs_rel_error"] = res.mean_rel_error;
        meta["wall_clock_s"] = res.seconds;
        meta["model"] = model_summary(model, hyperparameters_json(cfg));
        write_json_file(detail::out_path(cfg, "metadata.json"), meta);
    }
    return res;
}

struct StabilityRow {
    Index n_u = 0;
    double length_scale = 0.0;
    double log10_gamma = 0.0;
    double log10_gamma_precond = NAN;
};

struct StabilityResult {
    std::vector<StabilityRow> rows;
    double seconds = 0.0;

    const StabilityRow& at(Index n_u, double ell) const {
        for (const auto& r : rows)
            if (r.n_u == n_u && std::abs(r.length_scale - ell) < 1e-12) return r;
        throw std::out_of_range("no stability row for n_u=" + std::to_string(n_u));
    }
};

/// Largest stable step over the (n_u, ℓ) grid, unpreconditioned and optionally preconditioned.
inline StabilityResult cmd_stability(const ExperimentConfig& cfg) {
    if (cfg.problem != "poisson-1d") throw ConfigError("stability needs problem poisson-1d");
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<StabilityRow> rows;
    for (double ell : cfg.stability.length_scales)
        for (Index n : cfg.stability.n_u) rows.push_back({n, ell, 0.0, NAN});
    const Index jobs = static_cast<Index>(rows.size()) * (cfg.stability.preconditioned ? 2 : 1);
    parallel_for(jobs, cfg.threads, [&](Index j) {
        const Index cell = j % static_cast<Index>(rows.size());
        const bool precond = j >= static_cast<Index>(rows.size());
        StabilityRow& row = rows[cell];
        ExperimentConfig c = cfg;
        c.n_u = row.n_u;
        c.error_kernel.length_scale = row.length_scale;
        const LinearProblem prob = build_linear_problem(c);
        const SyntheticData d = generate_data(prob.model, prob.b_true, cfg.data_seed);
        IplaConfig tmpl = cfg.ipla;
        tmpl.n_iters = cfg.stability.n_iters;
        tmpl.preconditioned = precond;
        const double lo = precond ? 1e-2 : cfg.stability.gamma_lo;
        const double hi = precond ? 10.0 : cfg.stability.gamma_hi;
        const double g = max_stable_stepsize(prob.model, d.y, tmpl, lo, hi, cfg.stability.resolution);
        (precond ? row.log10_gamma_precond : row.log10_gamma) = std::log10(g);
    });
    StabilityResult res;
    res.rows = rows;
    res.seconds = detail::seconds_since(t0);
    if (!cfg.output_dir.empty()) {
        CsvTable t;
        t.header = {"n_u", "length_scale", "log10_max_gamma", "log10_max_gamma_precond"};
        for (const auto& r : res.rows)
            t.rows.push_back({static_cast<double>(r.n_u), r.length_scale, r.log10_gamma, r.log10_gamma_precond});
        write_csv_file(detail::out_path(cfg, "stability.csv"), t);
        json meta = detail::base_metadata(cfg, "stability");
        meta["wall_clock_s"] = res.seconds;
        write_json_file(detail::out_path(cfg, "metadata.json"), meta);
    }
    return res;
}

struct ConditionRow {
    Index n_u = 0;
    ConvexityConstants plain;
    ConvexityConstants precond;
    ConvexityConstants identity;
};

struct ConditionResult {
    std::vector<ConditionRow> rows;
    double seconds = 0.0;
};

/// κ and κ_P of the joint potential across mesh refinements.
inline ConditionResult cmd_condition_numbers(const ExperimentConfig& cfg) {
    if (cfg.problem != "poisson-1d") throw ConfigError("condition needs problem poisson-1d");
    const auto t0 = std::chrono::steady_clock::now();
    ConditionResult res;
    res.rows.resize(cfg.condition_n_u.size());
    parallel_for(static_cast<Index>(cfg.condition_n_u.size()), cfg.threads, [&](Index i) {
        ExperimentConfig c = cfg;
        c.n_u = cfg.condition_n_u[i];
        const LinearProblem prob = build_linear_problem(c);
        const BlockHessian h = hessian(prob.model);
        ConditionRow& row = res.rows[i];
        row.n_u = c.n_u;
        row.plain = convexity_constants(h);
        row.precond = convexity_constants(h, build_preconditioners(prob.model));
        const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(c.n_u, c.n_u);
        row.identity = convexity_constants(h, I, I);
    });
    res.seconds = detail::seconds_since(t0);
    if (!cfg.output_dir.empty()) {
        CsvTable t;
        t.header = {"n_u", "kappa", "kappa_P", "kappa_identity", "mu", "L", "mu_P", "L_P"};
        for (const auto& r : res.rows)
            t.rows.push_back({static_cast<double>(r.n_u), r.plain.kappa, r.precond.kappa, r.identity.kappa, r.plain.mu,
                              r.plain.L, r.precond.mu, r.precond.L});
        write_csv_file(detail::out_path(cfg, "condition.csv"), t);
        json meta = detail::base_metadata(cfg, "condition");
        meta["wall_clock_s"] = res.seconds;
        write_json_file(detail::out_path(cfg, "metadata.json"), meta);
    }
    return res;
}

struct DiffusivityRun {
    Index warm_start_len = 0;
    Trace trace;
    double final_theta = 0.0;
    double max_excursion = 0.0; // max θ − θ_0 over the first 1000 joint iterations
    Index hit_iter = -1;        // first iteration with |e^θ − e^{θ_true}| ≤ 0.2
};

struct DiffusivityResult {
    std::vector<DiffusivityRun> runs;
    double seconds = 0.0;

    const DiffusivityRun& at(Index warm) const {
        for (const auto& r : runs)
            if (r.warm_start_len == warm) return r;
        throw std::out_of_range("no run with warm start " + std::to_string(warm));
    }
};

/// θ traces for each warm-start length, data generated at θ_true with known forcing.
inline DiffusivityResult cmd_diffusivity(const ExperimentConfig& cfg) {
    if (cfg.problem != "diffusivity-1d") throw ConfigError("diffusivity needs problem diffusivity-1d");
    const auto t0 = std::chrono::steady_clock::now();
    const LinearProblem prob = build_linear_problem(cfg);
    const SyntheticData d = generate_data(prob.model, prob.b_true, cfg.data_seed);
    const double theta0 = cfg.theta_prior_mean;
    const double kappa_true = std::exp(cfg.theta_true);
    DiffusivityResult res;
    res.runs.resize(cfg.warm_starts.size());
    parallel_for(static_cast<Index>(cfg.warm_starts.size()), cfg.threads, [&](Index i) {
        IplaConfig ic = cfg.ipla;
        ic.warm_start_len = cfg.warm_starts[i];
        DiffusivityRun& run = res.runs[i];
        run.warm_start_len = ic.warm_start_len;
        run.trace = ipla_diffusivity_run(prob.model, d.y, prob.b_true, ic, theta0);
        run.final_theta = run.trace.final_state.param(0);
        run.max_excursion = 0.0;
        for (const auto& r : run.trace.records) {
            if (r.iter > ic.warm_start_len && r.iter <= ic.warm_start_len + 1000)
                run.max_excursion = std::max(run.max_excursion, r.param(0) - theta0);
            if (run.hit_iter < 0 && std::abs(std::exp(r.param(0)) - kappa_true) <= 0.2) run.hit_iter = r.iter;
        }
    });
    res.seconds = detail::seconds_since(t0);
    if (!cfg.output_dir.empty()) {
        CsvTable summary;
        summary.header = {"warm_start_len", "final_theta", "final_kappa", "max_excursion", "hit_iter", "diverged"};
        for (const auto& r : res.runs) {
            summary.rows.push_back({static_cast<double>(r.warm_start_len), r.final_theta, std::exp(r.final_theta),
                                    r.max_excursion, static_cast<double>(r.hit_iter),
                                    r.trace.status == RunStatus::ok ? 0.0 : 1.0});
            write_csv_file(detail::out_path(cfg, "theta_trace_warm" + std::to_string(r.warm_start_len) + ".csv"),
                           trace_table(r.trace));
        }
        write_csv_file(detail::out_path(cfg, "diffusivity_summary.csv"), summary);
        json meta = detail::base_metadata(cfg, "diffusivity");
        meta["theta0"] = theta0;
        meta["wall_clock_s"] = res.seconds;
        meta["model"] = model_summary(prob.model, hyperparameters_json(cfg));
        write_json_file(detail::out_path(cfg, "metadata.json"), meta);
    }
    return res;
}

struct MethodStats {
    ApproxMethod method = ApproxMethod::FOT;
    std::vector<double> errors;             // per replicate, L2 forcing error of b_K
    std::vector<double> seconds;            // per replicate, whole run
    std::vector<double> seconds_per_refresh;
    std::vector<RefreshStats> refresh;
    Index failed = 0;
};

struct NonlinearResult {
    std::vector<MethodStats> methods;
    std::vector<Index> sweep_ns;
    std::vector<std::vector<double>> sweep_errors; // [N][replicate], FOT
    double seconds = 0.0;

    const MethodStats& method(ApproxMethod m) const {
        for (const auto& s : methods)
            if (s.method == m) return s;
        throw std::out_of_range(std::string("method not run: ") + to_string(m));
    }
};

/// FOT/UT/MC comparison at the configured budget plus an FOT particle sweep. Each
/// replicate draws one dataset and shares its sampler seed across methods.
inline NonlinearResult cmd_nonlinear(const ExperimentConfig& cfg) {
    if (cfg.problem != "nonlinear-1d") throw ConfigError("nonlinear needs problem nonlinear-1d");
    const auto t0 = std::chrono::steady_clock::now();
    const NonlinearProblem prob = build_nonlinear_problem(cfg);
    const NonlinearSystem& sys = prob.system;
    const Index R = cfg.replicates;
    std::vector<NonlinearData> data(static_cast<std::size_t>(R));
    for (Index r = 0; r < R; ++r) data[r] = generate_nonlinear_data(sys, prob.b_true, cfg.data_seed + static_cast<std::uint64_t>(r));

    NonlinearIplaOptions opt;
    opt.refresh_stride = cfg.nonlinear.refresh_stride;
    opt.ut = cfg.nonlinear.ut;
    opt.mc_samples = cfg.nonlinear.mc_samples;

    const Index M = static_cast<Index>(cfg.nonlinear.methods.size());
    const Index S = static_cast<Index>(cfg.nonlinear.particles.size());
    const Index per_rep = M + S;
    struct Job {
        double error = NAN, seconds = 0.0;
        RefreshStats stats;
        bool ok = false;
        Trace trace;
    };
    std::vector<Job> jobs(static_cast<std::size_t>(R * per_rep));
    parallel_for(R * per_rep, cfg.threads, [&](Index j) {
        const Index r = j / per_rep, k = j % per_rep;
        IplaConfig ic = cfg.ipla;
        ic.rng_seed = detail::job_seed(cfg.ipla.rng_seed, r, 0);
        ApproxMethod m = ApproxMethod::FOT;
        if (k < M)
            m = parse_approx_method(cfg.nonlinear.methods[k]);
        else
            ic.n_particles = cfg.nonlinear.particles[k - M];
        const auto t = std::chrono::steady_clock::now();
        NonlinearRun run = nonlinear_ipla_run(sys, data[r].y, m, ic, opt);
        Job& out = jobs[j];
        out.seconds = detail::seconds_since(t);
        out.stats = run.stats;
        out.ok = run.trace.ok();
        if (out.ok) out.error = load_l2_norm(sys.fem(), run.trace.final_state.param - prob.b_true);
        if (r == 0) out.trace = std::move(run.trace);
    });

    NonlinearResult res;
    for (Index k = 0; k < M; ++k) {
        MethodStats s;
        s.method = parse_approx_method(cfg.nonlinear.methods[k]);
        for (Index r = 0; r < R; ++r) {
            const Job& j = jobs[r * per_rep + k];
            if (!j.ok) {
                ++s.failed;
                continue;
            }
            s.errors.push_back(j.error);
            s.seconds.push_back(j.seconds);
            s.seconds_per_refresh.push_back(j.stats.seconds_per_refresh());
            s.refresh.push_back(j.stats);
        }
        res.methods.push_back(std::move(s));
    }
    res.sweep_ns = cfg.nonlinear.particles;
    res.sweep_errors.resize(static_cast<std::size_t>(S));
    for (Index i = 0; i < S; ++i)
        for (Index r = 0; r < R; ++r) {
            const Job& j = jobs[r * per_rep + M + i];
            if (j.ok) res.sweep_errors[i].push_back(j.error);
        }
    res.seconds = detail::seconds_since(t0);

    if (!cfg.output_dir.empty()) {
        CsvTable cmp;
        cmp.header = {"method", "replicate", "l2_forcing_error", "wall_clock_s", "s_per_refresh", "refreshes",
                      "newton_iterations", "solves"};
        for (Index k = 0; k < M; ++k)
            for (Index r = 0; r < R; ++r) {
                const Job& j = jobs[r * per_rep + k];
                cmp.rows.push_back({static_cast<double>(k), static_cast<double>(r), j.error, j.seconds,
                                    j.stats.seconds_per_refresh(), static_cast<double>(j.stats.refreshes),
                                    static_cast<double>(j.stats.newton_iterations), static_cast<double>(j.stats.solves)});
            }
        for (Index k = 0; k < M; ++k) cmp.comments.push_back("method " + std::to_string(k) + " = " + cfg.nonlinear.methods[k]);
        write_csv_file(detail::out_path(cfg, "nonlinear_comparison.csv"), cmp);
        CsvTable sweep;
        sweep.header = {"N", "replicate", "l2_forcing_error"};
        for (Index i = 0; i < S; ++i)
            for (Index r = 0; r < R; ++r)
                sweep.rows.push_back({static_cast<double>(res.sweep_ns[i]), static_cast<double>(r), jobs[r * per_rep + M + i].error});
        write_csv_file(detail::out_path(cfg, "nonlinear_sweep.csv"), sweep);
        for (Index k = 0; k < per_rep; ++k) {
            const std::string name = k < M ? "trace_" + cfg.nonlinear.methods[k] + ".csv"
                                           : "trace_FOT_N" + std::to_string(res.sweep_ns[k - M]) + ".csv";
            write_csv_file(detail::out_path(cfg, name), trace_table(jobs[k].trace));
        }
        json meta = detail::base_metadata(cfg, "nonlinear");
        json methods = json::array();
        for (Index k = 0; k < M; ++k) {
            const MethodStats& s = res.methods[k];
            json m;
            m["method"] = to_string(s.method);
            m["refresh_stride"] = opt.refresh_stride > 0 ? opt.refresh_stride : (s.method == ApproxMethod::FOT ? 1 : 10);
            m["failed_runs"] = s.failed;
            if (!s.errors.empty()) {
                m["mean_l2_forcing_error"] = mean_of(s.errors);
                m["mean_wall_clock_s"] = mean_of(s.seconds);
                m["mean_s_per_refresh"] = mean_of(s.seconds_per_refresh);
                long its = 0, solves = 0, refreshes = 0;
                for (const auto& st : s.refresh) {
                    its += st.newton_iterations;
                    solves += st.solves;
                    refreshes += st.refreshes;
                }
                m["newton_iterations_per_solve"] = solves ? static_cast<double>(its) / static_cast<double>(solves) : 0.0;
                m["solves_per_refresh"] = refreshes ? static_cast<double>(solves) / static_cast<double>(refreshes) : 0.0;
            }
            methods.push_back(m);
        }
        meta["methods"] = methods;
        meta["wall_clock_s"] = res.seconds;
        write_json_file(detail::out_path(cfg, "metadata.json"), meta);
    }
    return res;
}

} // namespace statfem

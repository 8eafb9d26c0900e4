#include "statfem/statfem.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

using namespace statfem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct CommandArgs {
    std::string config_file;
};

ExperimentConfig resolve(const std::string& command, const CommandArgs& args, const std::vector<std::string>& extras) {
    json user = args.config_file.empty() ? json::object() : read_json_file(args.config_file);
    std::vector<std::string> overrides;
    for (const auto& e : extras) {
        if (e.rfind("--", 0) != 0 || e.find('=') == std::string::npos)
            throw ConfigError("unrecognised argument '" + e + "' (overrides look like --key.path=value)");
        overrides.push_back(e);
    }
    ExperimentConfig cfg = load_config(std::move(user), command, overrides);
    if (cfg.output_dir.empty()) cfg.output_dir = "results/" + command;
    return cfg;
}

void print_fit(const char* label, const FitResult& f) {
    std::printf("%s order p = %.4f (log C = %.4f)\n", label, f.slope, f.intercept);
}

int run_convergence(const ExperimentConfig& cfg) {
    const ConvergenceResult r = cmd_convergence_order(cfg);
    std::printf("%-6s %-14s %-14s\n", "N", "mean_err_l2", "mean_err_L2");
    for (std::size_t i = 0; i < r.ns.size(); ++i)
        std::printf("%-6lld %-14.6e %-14.6e\n", static_cast<long long>(r.ns[i]), r.fit_l2.mean_errors[i],
                    r.fit_L2.mean_errors[i]);
    print_fit("l2", r.fit_l2);
    print_fit("L2", r.fit_L2);
    std::printf("runs %lld, diverged %lld, K <= %lld, %.1f s\n", static_cast<long long>(r.runs),
                static_cast<long long>(r.diverged), static_cast<long long>(r.max_iterations), r.seconds);
    for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    return 0;
}

int run_posterior_variance(const ExperimentConfig& cfg) {
    const PosteriorVarianceResult r = cmd_posterior_variance(cfg);
    for (std::size_t i = 0; i < r.ns.size(); ++i)
        std::printf("N=%-5lld mean abs rel variance error %.4f (se %.4f)\n", static_cast<long long>(r.ns[i]),
                    r.mean_rel_error[i], r.se_rel_error[i]);
    return 0;
}

int run_stability(const ExperimentConfig& cfg) {
    const StabilityResult r = cmd_stability(cfg);
    std::printf("%-6s %-8s %-16s %-16s\n", "n_u", "ell", "log10_gamma", "log10_gamma_P");
    for (const auto& row : r.rows)
        std::printf("%-6lld %-8.3g %-16.2f %-16.2f\n", static_cast<long long>(row.n_u), row.length_scale,
                    row.log10_gamma, row.log10_gamma_precond);
    return 0;
}

int run_condition(const ExperimentConfig& cfg) {
    const ConditionResult r = cmd_condition_numbers(cfg);
    std::printf("%-6s %-14s %-14s\n", "n_u", "kappa", "kappa_P");
    for (const auto& row : r.rows)
        std::printf("%-6lld %-14.6e %-14.6e\n", static_cast<long long>(row.n_u), row.plain.kappa, row.precond.kappa);
    return 0;
}

int run_diffusivity(const ExperimentConfig& cfg) {
    const DiffusivityResult r = cmd_diffusivity(cfg);
    std::printf("%-8s %-12s %-12s %-14s %-8s\n", "warm", "theta_K", "kappa_K", "max_excursion", "hit");
    for (const auto& run : r.runs)
        std::printf("%-8lld %-12.5f %-12.5f %-14.5f %-8lld\n", static_cast<long long>(run.warm_start_len),
                    run.final_theta, std::exp(run.final_theta), run.max_excursion, static_cast<long long>(run.hit_iter));
    return 0;
}

int run_nonlinear(const ExperimentConfig& cfg) {
    const NonlinearResult r = cmd_nonlinear(cfg);
    std::printf("%-6s %-14s %-12s %-14s %-6s\n", "method", "mean_L2_err", "mean_wall_s", "s_per_refresh", "failed");
    for (const auto& m : r.methods) {
        if (m.errors.empty()) {
            std::printf("%-6s all runs failed\n", to_string(m.method));
            continue;
        }
        std::printf("%-6s %-14.6e %-12.3f %-14.3e %-6lld\n", to_string(m.method), mean_of(m.errors), mean_of(m.seconds),
                    mean_of(m.seconds_per_refresh), static_cast<long long>(m.failed));
    }
    for (std::size_t i = 0; i < r.sweep_ns.size(); ++i)
        if (!r.sweep_errors[i].empty())
            std::printf("FOT N=%-4lld mean L2 error %.6e\n", static_cast<long long>(r.sweep_ns[i]), mean_of(r.sweep_errors[i]));
    return 0;
}

int run_solve(const ExperimentConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    CsvTable t;
    t.header = {"node", "x", "y", "u"};
    Eigen::VectorXd u;
    const Mesh* mesh = nullptr;
    json meta;
    std::optional<LinearProblem> lin;
    std::optional<NonlinearProblem> nl;
    if (cfg.problem == "nonlinear-1d") {
        nl.emplace(build_nonlinear_problem(cfg));
        const NewtonResult res = newton_solve(nl->system, nl->b_true, nl->system.lifted(Eigen::VectorXd::Zero(nl->system.n_u())));
        u = res.u;
        mesh = &nl->system.mesh();
        meta["newton_iterations"] = res.iterations;
        meta["residual"] = res.residual;
    } else {
        lin.emplace(build_linear_problem(cfg));
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(lin->model.A_theta());
        u = lu.solve(lin->b_true);
        mesh = &lin->model.system().mesh;
        meta["model"] = model_summary(lin->model, hyperparameters_json(cfg));
    }
    for (Index i = 0; i < u.size(); ++i)
        t.rows.push_back({static_cast<double>(i), mesh->nodes[i].x, mesh->nodes[i].y, u(i)});
    const std::filesystem::path dir(cfg.output_dir);
    write_csv_file(dir / "solution.csv", t);
    meta["command"] = "solve";
    meta["config"] = to_json(cfg);
    meta["version"] = kVersion;
    meta["wall_clock_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json_file(dir / "metadata.json", meta);
    std::printf("n_u=%lld max|u|=%.6e -> %s\n", static_cast<long long>(u.size()), u.cwiseAbs().maxCoeff(),
                (dir / "solution.csv").string().c_str());
    return 0;
}

int run_eigs(const ExperimentConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    const Mesh mesh = build_mesh(cfg);
    const FemSystem sys = build_fem_system(mesh, [](const Point&) { return 0.0; }, {});
    const LaplacianEigs eigs = solve_laplacian_eigs(sys, cfg.eig_rank > 0 ? cfg.eig_rank : default_rank(mesh));
    const std::filesystem::path dir(cfg.output_dir);
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "eigs.csv");
    if (!out) throw std::runtime_error("cannot write " + (dir / "eigs.csv").string());
    write_eigs_csv(out, eigs);
    json meta;
    meta["command"] = "eigs";
    meta["config"] = to_json(cfg);
    meta["version"] = kVersion;
    meta["rank"] = eigs.rank();
    meta["wall_clock_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json_file(dir / "metadata.json", meta);
    const Index show = std::min<Index>(eigs.rank(), 5);
    for (Index l = 0; l < show; ++l) std::printf("lambda_%lld = %.8f\n", static_cast<long long>(l + 1), eigs.eigenvalues(l));
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"statFEM forcing and parameter estimation with interacting particle Langevin samplers"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    struct Entry {
        const char* name;
        const char* help;
        int (*run)(const ExperimentConfig&);
    };
    const std::vector<Entry> entries{
        {"convergence", "error decay in the particle count and fitted order", run_convergence},
        {"posterior-variance", "particle variance against the exact posterior variance", run_posterior_variance},
        {"stability", "largest stable step size over mesh size and length scale", run_stability},
        {"condition", "condition numbers of the plain and preconditioned potential", run_condition},
        {"diffusivity", "joint diffusivity estimation for several warm-start lengths", run_diffusivity},
        {"nonlinear", "FOT/UT/MC comparison and particle sweep for the nonlinear problem", run_nonlinear},
        {"solve", "single forward solve at the true forcing", run_solve},
        {"eigs", "export Dirichlet Laplacian eigenpairs", run_eigs},
    };
    std::vector<CommandArgs> args(entries.size());
    std::vector<CLI::App*> subs;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        CLI::App* sub = app.add_subcommand(entries[i].name, entries[i].help);
        sub->add_option("-c,--config", args[i].config_file, "JSON config file")->check(CLI::ExistingFile);
        sub->allow_extras();
        sub->footer("Any config key can be overridden as --section.key=value, e.g. --ipla.n_iters=5000");
        subs.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (!subs[i]->parsed()) continue;
        try {
            const ExperimentConfig cfg = resolve(entries[i].name, args[i], subs[i]->remaining());
            return entries[i].run(cfg);
        } catch (const ConfigError& e) {
            std::fprintf(stderr, "config error: %s\n", e.what());
            return kExitConfig;
        } catch (const LocationError& e) {
            std::fprintf(stderr, "config error: %s\n", e.what());
            return kExitConfig;
        } catch (const std::invalid_argument& e) {
            std::fprintf(stderr, "invalid argument: %s\n", e.what());
            return kExitConfig;
        } catch (const NumericalError& e) {
            std::fprintf(stderr, "numerical failure: %s\n", e.what());
            return kExitNumerical;
        } catch (const AssemblyError& e) {
            std::fprintf(stderr, "numerical failure: %s\n", e.what());
            return kExitNumerical;
        } catch (const std::exception& e) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return 1;
        }
    }
    return 1;
}

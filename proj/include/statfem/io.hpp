#pragma once

#include "statfem/errors.hpp"
#include "statfem/linear_model.hpp"
#include "statfem/samplers.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace statfem {

using json = nlohmann::json;

namespace detail {

/// Shortest decimal that round-trips a double.
inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) out.push_back(cur);
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

inline double parse_double(const std::string& s) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("not a number: '" + s + "'");
    }
    if (pos != s.size()) throw std::invalid_argument("trailing characters in number: '" + s + "'");
    return v;
}

} // namespace detail

/// Header plus numeric rows; '#' lines are kept as comments.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
    std::vector<std::string> comments;

    Index column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<Index>(i);
        throw std::invalid_argument("no column '" + name + "'");
    }
};

inline void write_csv(std::ostream& out, const CsvTable& t) {
    for (std::size_t i = 0; i < t.header.size(); ++i) out << (i ? "," : "") << t.header[i];
    out << "\n";
    for (const auto& row : t.rows) {
        STATFEM_REQUIRE(row.size() == t.header.size(), "CSV row width does not match header");
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << detail::fmt_double(row[i]);
        out << "\n";
    }
    for (const auto& c : t.comments) out << "# " << c << "\n";
}

inline CsvTable read_csv(std::istream& in) {
    CsvTable t;
    std::string line;
    bool have_header = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::string c = line.substr(1);
            if (!c.empty() && c[0] == ' ') c.erase(0, 1);
            t.comments.push_back(c);
            continue;
        }
        if (!have_header) {
            t.header = detail::split(line, ',');
            have_header = true;
            continue;
        }
        const auto cells = detail::split(line, ',');
        if (cells.size() != t.header.size()) throw std::invalid_argument("CSV row width does not match header");
        std::vector<double> row;
        row.reserve(cells.size());
        for (const auto& c : cells) row.push_back(detail::parse_double(c));
        t.rows.push_back(std::move(row));
    }
    if (!have_header) throw std::invalid_argument("CSV has no header");
    return t;
}

inline void write_csv_file(const std::filesystem::path& path, const CsvTable& t) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write_csv(out, t);
}

inline CsvTable read_csv_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return read_csv(in);
}

/// iter,param_0..param_{d-1},grad_norm,particle_mean_norm,particle_var_mean
inline CsvTable trace_table(const Trace& trace) {
    CsvTable t;
    const Index d = trace.records.empty() ? trace.final_state.param.size() : trace.records.front().param.size();
    t.header.push_back("iter");
    for (Index i = 0; i < d; ++i) t.header.push_back("param_" + std::to_string(i));
    t.header.insert(t.header.end(), {"grad_norm", "particle_mean_norm", "particle_var_mean"});
    for (const auto& r : trace.records) {
        std::vector<double> row;
        row.reserve(t.header.size());
        row.push_back(static_cast<double>(r.iter));
        for (Index i = 0; i < d; ++i) row.push_back(r.param(i));
        row.push_back(r.grad_norm);
        row.push_back(r.particle_mean.size() ? r.particle_mean_norm() : 0.0);
        row.push_back(r.particle_var_mean());
        t.rows.push_back(std::move(row));
    }
    if (trace.status == RunStatus::diverged) t.comments.push_back("diverged at iter=" + std::to_string(trace.diverged_iter));
    if (trace.status == RunStatus::failed) t.comments.push_back("failed: " + trace.message);
    return t;
}

inline void write_trace_csv(std::ostream& out, const Trace& trace) { write_csv(out, trace_table(trace)); }

/// Iteration at which a trace CSV reports divergence, if any.
inline std::optional<Index> diverged_iter(const CsvTable& t) {
    const std::string key = "diverged at iter=";
    for (const auto& c : t.comments)
        if (c.rfind(key, 0) == 0) return static_cast<Index>(std::stoll(c.substr(key.size())));
    return std::nullopt;
}

/// Parses the value of a `key=value` override: JSON if it parses, else a plain string.
inline json parse_override_value(const std::string& text) {
    json v = json::parse(text, nullptr, false);
    if (v.is_discarded()) return json(text);
    return v;
}

/// Applies `a.b.c=value` (a leading `--` is accepted) to a JSON object.
inline void apply_override(json& doc, std::string expr) {
    if (expr.rfind("--", 0) == 0) expr.erase(0, 2);
    const auto eq = expr.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: '" + expr + "'");
    const std::string path = expr.substr(0, eq);
    const json value = parse_override_value(expr.substr(eq + 1));
    json* node = &doc;
    const auto keys = detail::split(path, '.');
    for (std::size_t i = 0; i < keys.size(); ++i) {
        if (keys[i].empty()) throw ConfigError("empty key in override '" + path + "'");
        if (node->is_null()) *node = json::object();
        if (!node->is_object()) throw ConfigError("override path '" + path + "' descends into a non-object");
        if (i + 1 == keys.size())
            (*node)[keys[i]] = value;
        else
            node = &(*node)[keys[i]];
    }
}

inline json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json doc = json::parse(in, nullptr, false, true);
    if (doc.is_discarded()) throw ConfigError("config " + path.string() + " is not valid JSON");
    return doc;
}

inline void write_json_file(const std::filesystem::path& path, const json& doc) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << doc.dump(2) << "\n";
}

inline json to_json(const IplaConfig& c) {
    return {{"step_size", c.step_size},
            {"n_particles", c.n_particles},
            {"n_iters", c.n_iters},
            {"warm_start_len", c.warm_start_len},
            {"rng_seed", c.rng_seed},
            {"preconditioned", c.preconditioned},
            {"divergence_threshold", c.divergence_threshold},
            {"trace_stride", c.trace_stride},
            {"refresh_stride", c.refresh_stride},
            {"step_size_guard", c.step_size_guard},
            {"plateau_window", c.plateau_window},
            {"plateau_tol", c.plateau_tol}};
}

inline json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

/// Dimensions, θ, condition numbers and hyperparameters of a linear model.
inline json model_summary(const LinearModel& model, const json& hyperparameters = json::object()) {
    json s;
    s["n_u"] = model.n_u();
    s["n_y"] = model.n_y();
    s["theta"] = model.theta();
    s["theta_prior"] = {{"mean", model.theta_prior().mean}, {"var", model.theta_prior().var}};
    try {
        const BlockHessian h = hessian(model);
        const ConvexityConstants c = convexity_constants(h);
        const ConvexityConstants cp = convexity_constants(h, build_preconditioners(model));
        s["condition"] = {{"mu", c.mu}, {"L", c.L}, {"kappa", c.kappa},
                          {"mu_P", cp.mu}, {"L_P", cp.L}, {"kappa_P", cp.kappa}};
    } catch (const std::exception& ex) {
        s["condition"] = {{"error", ex.what()}};
    }
    s["hyperparameters"] = hyperparameters;
    return s;
}

} // namespace statfem

#pragma once

#include "statfem/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

namespace statfem {

using Index = Eigen::Index;

struct Point {
    double x = 0.0;
    double y = 0.0;
};

/// P1 mesh on an interval or a triangulated planar domain.
/// Intervals store their two node indices in the first two slots of each element.
struct Mesh {
    int dim = 1;
    std::vector<Point> nodes;
    std::vector<std::array<Index, 3>> elements;
    std::vector<Index> boundary_nodes; // sorted, unique

    Index num_nodes() const { return static_cast<Index>(nodes.size()); }
    Index num_elements() const { return static_cast<Index>(elements.size()); }
    int nodes_per_element() const { return dim + 1; }

    bool is_boundary(Index i) const {
        return std::binary_search(boundary_nodes.begin(), boundary_nodes.end(), i);
    }

    std::vector<Index> free_nodes() const {
        std::vector<Index> out;
        out.reserve(nodes.size() - boundary_nodes.size());
        for (Index i = 0; i < num_nodes(); ++i)
            if (!is_boundary(i)) out.push_back(i);
        return out;
    }
};

namespace detail {

inline double signed_area(const Point& a, const Point& b, const Point& c) {
    return 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
}

inline void finalize_boundary(Mesh& mesh) {
    std::sort(mesh.boundary_nodes.begin(), mesh.boundary_nodes.end());
    mesh.boundary_nodes.erase(std::unique(mesh.boundary_nodes.begin(), mesh.boundary_nodes.end()),
                              mesh.boundary_nodes.end());
}

} // namespace detail

/// Element measure: length in 1D, signed area in 2D.
inline double element_measure(const Mesh& mesh, Index e) {
    const auto& el = mesh.elements[static_cast<std::size_t>(e)];
    if (mesh.dim == 1) return mesh.nodes[el[1]].x - mesh.nodes[el[0]].x;
    return detail::signed_area(mesh.nodes[el[0]], mesh.nodes[el[1]], mesh.nodes[el[2]]);
}

/// Checks index ranges, positive measure and boundary bookkeeping.
inline void validate_mesh(const Mesh& mesh) {
    STATFEM_REQUIRE(mesh.dim == 1 || mesh.dim == 2, "mesh dimension must be 1 or 2");
    STATFEM_REQUIRE(mesh.num_nodes() >= mesh.dim + 1, "mesh has too few nodes");
    STATFEM_REQUIRE(!mesh.elements.empty(), "mesh has no elements");
    for (Index e = 0; e < mesh.num_elements(); ++e) {
        const auto& el = mesh.elements[static_cast<std::size_t>(e)];
        for (int k = 0; k < mesh.nodes_per_element(); ++k)
            STATFEM_REQUIRE(el[k] >= 0 && el[k] < mesh.num_nodes(), "element index out of range");
    }
    for (Index b : mesh.boundary_nodes)
        STATFEM_REQUIRE(b >= 0 && b < mesh.num_nodes(), "boundary index out of range");
    STATFEM_REQUIRE(std::is_sorted(mesh.boundary_nodes.begin(), mesh.boundary_nodes.end()),
                    "boundary node list must be sorted");
}

/// Uniform mesh of [0,1] with nodes x_i = i/(n-1).
inline Mesh build_interval_mesh(Index n_nodes) {
    STATFEM_REQUIRE(n_nodes >= 2, "interval mesh needs at least 2 nodes");
    Mesh mesh;
    mesh.dim = 1;
    mesh.nodes.resize(static_cast<std::size_t>(n_nodes));
    for (Index i = 0; i < n_nodes; ++i)
        mesh.nodes[static_cast<std::size_t>(i)].x = static_cast<double>(i) / static_cast<double>(n_nodes - 1);
    mesh.nodes.back().x = 1.0;
    for (Index i = 0; i + 1 < n_nodes; ++i) mesh.elements.push_back({i, i + 1, -1});
    mesh.boundary_nodes = {0, n_nodes - 1};
    return mesh;
}

/// Unit disc from concentric rings; ring r sits at radius r/n_rings and holds 6r nodes.
/// Consecutive rings are stitched by walking both rings in angle order.
inline Mesh build_disc_mesh(int n_rings) {
    STATFEM_REQUIRE(n_rings >= 1, "disc mesh needs at least one ring");
    constexpr double two_pi = 2.0 * std::numbers::pi;
    Mesh mesh;
    mesh.dim = 2;
    mesh.nodes.push_back({0.0, 0.0});
    std::vector<Index> ring_start{0};
    std::vector<Index> ring_size{1};
    for (int r = 1; r <= n_rings; ++r) {
        const Index count = 6 * r;
        const double radius = static_cast<double>(r) / n_rings;
        ring_start.push_back(mesh.num_nodes());
        ring_size.push_back(count);
        for (Index k = 0; k < count; ++k) {
            const double a = two_pi * static_cast<double>(k) / static_cast<double>(count);
            mesh.nodes.push_back({radius * std::cos(a), radius * std::sin(a)});
        }
    }
    for (int r = 1; r <= n_rings; ++r) {
        const Index n_in = ring_size[r - 1];
        const Index n_out = ring_size[r];
        const Index s_in = ring_start[r - 1];
        const Index s_out = ring_start[r];
        auto in = [&](Index i) { return s_in + (i % n_in); };
        auto out = [&](Index j) { return s_out + (j % n_out); };
        if (n_in == 1) {
            for (Index j = 0; j < n_out; ++j) mesh.elements.push_back({s_in, out(j), out(j + 1)});
            continue;
        }
        Index i = 0, j = 0;
        while (i < n_in || j < n_out) {
            const double next_in = static_cast<double>(i + 1) / static_cast<double>(n_in);
            const double next_out = static_cast<double>(j + 1) / static_cast<double>(n_out);
            if (j < n_out && (i >= n_in || next_out <= next_in + 1e-12)) {
                mesh.elements.push_back({in(i), out(j), out(j + 1)});
                ++j;
            } else {
                mesh.elements.push_back({in(i), out(j), in(i + 1)});
                ++i;
            }
        }
    }
    for (auto& el : mesh.elements)
        if (detail::signed_area(mesh.nodes[el[0]], mesh.nodes[el[1]], mesh.nodes[el[2]]) < 0.0)
            std::swap(el[1], el[2]);
    for (Index k = 0; k < ring_size.back(); ++k) mesh.boundary_nodes.push_back(ring_start.back() + k);
    return mesh;
}

/// Parses the line-oriented text format:
///   dim <1|2>
///   node <x> [<y>]
///   elem <i> <j> [<k>]
///   boundary <i>
/// '#' starts a comment. Triangles are reoriented to positive area.
inline Mesh read_mesh(std::istream& in) {
    Mesh mesh;
    bool have_dim = false;
    std::string line;
    int line_no = 0;
    auto fail = [&](const std::string& why) {
        throw std::invalid_argument("mesh line " + std::to_string(line_no) + ": " + why);
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        std::string key;
        if (!(ss >> key)) continue;
        if (key == "dim") {
            if (!(ss >> mesh.dim) || (mesh.dim != 1 && mesh.dim != 2)) fail("bad dim");
            have_dim = true;
        } else if (key == "node") {
            if (!have_dim) fail("node before dim");
            Point p;
            if (!(ss >> p.x)) fail("bad node");
            if (mesh.dim == 2 && !(ss >> p.y)) fail("bad node");
            mesh.nodes.push_back(p);
        } else if (key == "elem") {
            if (!have_dim) fail("elem before dim");
            std::array<Index, 3> el{-1, -1, -1};
            for (int k = 0; k < mesh.dim + 1; ++k)
                if (!(ss >> el[k])) fail("bad elem");
            mesh.elements.push_back(el);
        } else if (key == "boundary") {
            Index b;
            if (!(ss >> b)) fail("bad boundary");
            mesh.boundary_nodes.push_back(b);
        } else {
            fail("unknown keyword '" + key + "'");
        }
        std::string extra;
        if (ss >> extra) fail("trailing token '" + extra + "'");
    }
    if (!have_dim) throw std::invalid_argument("mesh file has no dim line");
    detail::finalize_boundary(mesh);
    if (mesh.dim == 1) {
        for (auto& el : mesh.elements)
            if (mesh.nodes.size() > static_cast<std::size_t>(std::max(el[0], el[1])) && el[0] >= 0 &&
                el[1] >= 0 && mesh.nodes[el[0]].x > mesh.nodes[el[1]].x)
                std::swap(el[0], el[1]);
    }
    validate_mesh(mesh);
    if (mesh.dim == 2)
        for (auto& el : mesh.elements)
            if (detail::signed_area(mesh.nodes[el[0]], mesh.nodes[el[1]], mesh.nodes[el[2]]) < 0.0)
                std::swap(el[1], el[2]);
    return mesh;
}

inline Mesh read_mesh_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open mesh file " + path);
    return read_mesh(in);
}

inline void write_mesh(std::ostream& out, const Mesh& mesh) {
    out.precision(17);
    out << "dim " << mesh.dim << "\n";
    for (const auto& p : mesh.nodes) {
        out << "node " << p.x;
        if (mesh.dim == 2) out << " " << p.y;
        out << "\n";
    }
    for (const auto& el : mesh.elements) {
        out << "elem";
        for (int k = 0; k < mesh.nodes_per_element(); ++k) out << " " << el[k];
        out << "\n";
    }
    for (Index b : mesh.boundary_nodes) out << "boundary " << b << "\n";
}

} // namespace statfem

#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "permbridge/common.hpp"

namespace permbridge {

/// Uniform staggered (MAC) grid on the unit square: u1 on vertical faces,
/// u2 on horizontal faces, p at cell centers. Index (i, j) is column-major in
/// x then y: id = j*n + i, with periodic wrap where applicable.
struct Grid {
    int n = 0;
    Real h = 0.0;

    explicit Grid(int n_) : n(n_), h(Real(1) / n_) {
        if (n < 16) throw std::invalid_argument("Grid: n must be >= 16");
    }

    int size() const { return n * n; }
    int wrap(int k) const { return (k % n + n) % n; }
    int idx(int i, int j) const { return wrap(j) * n + wrap(i); }

    // staggered coordinates
    Vec2 u1_pos(int i, int j) const { return {i * h, (j + 0.5) * h}; }
    Vec2 u2_pos(int i, int j) const { return {(i + 0.5) * h, j * h}; }
    Vec2 p_pos(int i, int j) const { return {(i + 0.5) * h, (j + 0.5) * h}; }
};

/// Scalar field on one staggered location, flat storage.
using Field = std::vector<Real>;

/// Discrete velocity/pressure state on a Grid.
struct FlowState {
    Grid grid;
    Field u1, u2, p;

    explicit FlowState(const Grid& g)
        : grid(g), u1(g.size(), 0.0), u2(g.size(), 0.0), p(g.size(), 0.0) {}

    bool finite() const {
        auto ok = [](const Field& f) {
            for (Real v : f)
                if (!std::isfinite(v)) return false;
            return true;
        };
        return ok(u1) && ok(u2) && ok(p);
    }

    /// Cell-centered velocity by averaging the adjacent faces.
    Vec2 cell_velocity(int i, int j) const {
        const auto& g = grid;
        return {0.5 * (u1[g.idx(i, j)] + u1[g.idx(i + 1, j)]),
                0.5 * (u2[g.idx(i, j)] + u2[g.idx(i, j + 1)])};
    }

    /// Bilinear sample of the cell-centered velocity/pressure at a point.
    Vec2 sample_velocity(const Vec2& x) const { return {sample(u1, x, 0), sample(u2, x, 1)}; }
    Real sample_pressure(const Vec2& x) const { return sample(p, x, 2); }

private:
    // which: 0 = u1 faces, 1 = u2 faces, 2 = centers
    Real sample(const Field& f, const Vec2& x, int which) const {
        const auto& g = grid;
        Real fx, fy;
        switch (which) {
            case 0: fx = x.x / g.h; fy = x.y / g.h - 0.5; break;
            case 1: fx = x.x / g.h - 0.5; fy = x.y / g.h; break;
            default: fx = x.x / g.h - 0.5; fy = x.y / g.h - 0.5; break;
        }
        const int i0 = static_cast<int>(std::floor(fx));
        const int j0 = static_cast<int>(std::floor(fy));
        const Real ax = fx - i0, ay = fy - j0;
        return (1 - ax) * (1 - ay) * f[g.idx(i0, j0)] + ax * (1 - ay) * f[g.idx(i0 + 1, j0)] +
               (1 - ax) * ay * f[g.idx(i0, j0 + 1)] + ax * ay * f[g.idx(i0 + 1, j0 + 1)];
    }
};

/// Versioned flat-array export; format: one header line
/// "permbridge-field v1 <n> <layout> <name>" then n*n values, row per line.
inline void write_field_csv(const Field& f, const Grid& g, const std::string& layout,
                            const std::string& name, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << "permbridge-field v1 " << g.n << " " << layout << " " << name << "\n";
    out.precision(17);
    for (int j = 0; j < g.n; ++j) {
        for (int i = 0; i < g.n; ++i) out << f[g.idx(i, j)] << (i + 1 == g.n ? "" : ",");
        out << "\n";
    }
}

inline Field read_field_csv(const std::string& path, int expect_n) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string magic, version, layout, name;
    int n = 0;
    in >> magic >> version >> n >> layout >> name;
    if (magic != "permbridge-field" || version != "v1")
        throw std::runtime_error("bad field header in " + path);
    if (expect_n > 0 && n != expect_n) throw std::runtime_error("field size mismatch in " + path);
    Field f(static_cast<std::size_t>(n) * n);
    char comma;
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            in >> f[static_cast<std::size_t>(j) * n + i];
            if (i + 1 < n) in >> comma;
        }
    if (!in) throw std::runtime_error("truncated field file " + path);
    return f;
}

inline void write_flow_state(const FlowState& s, const std::string& prefix) {
    write_field_csv(s.u1, s.grid, "u1-faces", "u1", prefix + "_u1.csv");
    write_field_csv(s.u2, s.grid, "u2-faces", "u2", prefix + "_u2.csv");
    write_field_csv(s.p, s.grid, "centers", "p", prefix + "_p.csv");
}

}  // namespace permbridge

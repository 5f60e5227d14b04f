#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "permbridge/common.hpp"

#include "json.hpp"

namespace permbridge {

struct geometry_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct sampling_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Circular perforation (impermeable fiber cross-section).
struct Fiber {
    Vec2 center;
    Real radius = 0.0;
};

/// Periodic microscale unit cell: unit square perforated by fiber discs that
/// all lie inside the tow box.
struct MicroCell {
    Box domain = unit_box();
    Box tow_box;
    std::vector<Fiber> fibers;
    bool periodic = true;
    std::uint64_t seed = 0;

    /// Validates the construction invariants (containment, pairwise
    /// separation including periodic images).
    void validate() const;
};

/// Mesoscale cell: unit square with a porous box carrying a piecewise
/// constant permeability tensor per segment. Segments tile the porous box
/// in a seg_nx x seg_ny grid; the fluid exterior carries infinite
/// permeability (no Brinkman drag), represented implicitly.
struct MesoCell {
    Box domain = unit_box();
    Box porous_box{{0.28, 0.28}, {0.72, 0.72}};
    int seg_nx = 1;
    int seg_ny = 1;
    std::vector<Mat2> tensors;  // row-major, seg_nx * seg_ny entries

    static constexpr int kMaxSegments = 255;

    void validate() const {
        if (!(porous_box.lo.x > domain.lo.x && porous_box.hi.x < domain.hi.x &&
              porous_box.lo.y > domain.lo.y && porous_box.hi.y < domain.hi.y))
            throw geometry_error("MesoCell: porous_box must be strictly inside domain");
        if (seg_nx < 1 || seg_ny < 1 || seg_nx * seg_ny > kMaxSegments)
            throw geometry_error("MesoCell: segment count outside [1, 255]");
        if (tensors.size() != static_cast<std::size_t>(seg_nx * seg_ny))
            throw geometry_error("MesoCell: tensor count mismatch");
        for (const auto& k : tensors)
            if (!k.spd()) throw geometry_error("MesoCell: permeability tensor not SPD");
    }

    /// Segment index of a point inside the porous box, -1 if outside.
    int segment_at(const Vec2& p) const {
        if (!porous_box.contains(p)) return -1;
        int ix = std::min(seg_nx - 1, static_cast<int>((p.x - porous_box.lo.x) / porous_box.width() * seg_nx));
        int iy = std::min(seg_ny - 1, static_cast<int>((p.y - porous_box.lo.y) / porous_box.height() * seg_ny));
        return iy * seg_nx + ix;
    }
};

inline MesoCell make_benchmark_meso(Real k11) {
    MesoCell m;
    m.tensors = {Mat2::iso(k11)};
    m.validate();
    return m;
}

/// Per-segment downscaling features.
struct SegmentGrid {
    int n_x = 1;
    int n_y = 1;
    Box porous_box;
    std::vector<Real> fvc;          // area fraction per segment
    std::vector<Real> orientation;  // fixed 0 in 2D transverse flow
    std::vector<Real> fiber_radius;

    int count() const { return n_x * n_y; }
    Box segment_box(int s) const {
        const int ix = s % n_x, iy = s / n_x;
        const Real wx = porous_box.width() / n_x, wy = porous_box.height() / n_y;
        return {{porous_box.lo.x + ix * wx, porous_box.lo.y + iy * wy},
                {porous_box.lo.x + (ix + 1) * wx, porous_box.lo.y + (iy + 1) * wy}};
    }
};

/// Collocation and coupling point sets for the physics-informed solvers.
struct PointSets {
    std::vector<Vec2> interior;        // N_r minus edge points
    std::vector<Vec2> fiber_boundary;  // N_b
    std::vector<Vec2> edge_in, edge_out, edge_up, edge_down;
    std::vector<Vec2> coupling_velocity;
    std::vector<Vec2> coupling_pressure;
    std::uint64_t seed = 0;

    std::size_t n_residual() const {
        return interior.size() + edge_in.size() + edge_out.size() + edge_up.size() +
               edge_down.size();
    }
    /// All residual collocation points (interior + domain edges).
    std::vector<Vec2> residual_points() const {
        std::vector<Vec2> all = interior;
        for (const auto* e : {&edge_in, &edge_out, &edge_up, &edge_down})
            all.insert(all.end(), e->begin(), e->end());
        return all;
    }
};

struct CollocationCounts {
    int interior_split = 15000;       // inside split_box
    int interior_complement = 45000;  // domain minus split_box
    int per_edge = 200;
    int per_fiber = 200;
};

// ---------------------------------------------------------------------------

inline void MicroCell::validate() const {
    for (const auto& f : fibers) {
        if (f.radius <= 0.0) throw geometry_error("fiber radius must be positive");
        if (f.center.x - f.radius < tow_box.lo.x || f.center.x + f.radius > tow_box.hi.x ||
            f.center.y - f.radius < tow_box.lo.y || f.center.y + f.radius > tow_box.hi.y)
            throw geometry_error("fiber protrudes beyond tow box");
    }
    if (!(tow_box.lo.x > domain.lo.x && tow_box.hi.x < domain.hi.x &&
          tow_box.lo.y > domain.lo.y && tow_box.hi.y < domain.hi.y))
        throw geometry_error("tow box must lie strictly inside the domain");
    for (std::size_t i = 0; i < fibers.size(); ++i) {
        for (std::size_t j = i + 1; j < fibers.size(); ++j) {
            // periodic images of fiber j against fiber i
            for (int sx = -1; sx <= 1; ++sx) {
                for (int sy = -1; sy <= 1; ++sy) {
                    const Vec2 cj{fibers[j].center.x + sx, fibers[j].center.y + sy};
                    const Real d = (cj - fibers[i].center).norm();
                    if (d < fibers[i].radius + fibers[j].radius)
                        throw geometry_error("overlapping fibers");
                }
            }
        }
    }
}

/// Regular n_side x n_side fiber lattice centered in the tow box.
inline MicroCell build_micro_cell(int n_side, Real radius, Box tow_box) {
    if (n_side < 1) throw geometry_error("n_side must be positive");
    if (radius <= 0.0) throw geometry_error("radius must be positive");
    const Real pitch_x = tow_box.width() / n_side;
    const Real pitch_y = tow_box.height() / n_side;
    if (std::min(pitch_x, pitch_y) <= 2.0 * radius)
        throw geometry_error("infeasible lattice: pitch <= fiber diameter");

    MicroCell cell;
    cell.tow_box = tow_box;
    cell.fibers.reserve(static_cast<std::size_t>(n_side) * n_side);
    for (int j = 0; j < n_side; ++j)
        for (int i = 0; i < n_side; ++i)
            cell.fibers.push_back({{tow_box.lo.x + (i + 0.5) * pitch_x,
                                    tow_box.lo.y + (j + 0.5) * pitch_y},
                                   radius});
    cell.validate();
    return cell;
}

/// Signed distance to the fiber union with the 8-neighbor periodic image set;
/// negative inside a fiber.
inline Real signed_distance(const MicroCell& cell, const Vec2& x) {
    Real best = std::numeric_limits<Real>::max();
    for (const auto& f : cell.fibers) {
        for (int sx = -1; sx <= 1; ++sx) {
            for (int sy = -1; sy <= 1; ++sy) {
                const Vec2 c{f.center.x + sx, f.center.y + sy};
                best = std::min(best, (x - c).norm() - f.radius);
            }
        }
    }
    return best;
}

/// Fiber volume content of the tow box (area fraction).
inline Real tow_fvc(const MicroCell& cell) {
    Real area = 0.0;
    for (const auto& f : cell.fibers) area += kPi * f.radius * f.radius;
    return area / cell.tow_box.area();
}

// --- circle/rectangle overlap -----------------------------------------------

/// Area of disc(center, r) ∩ box, exact (closed-form piecewise integration).
inline Real disc_box_overlap(const Vec2& center, Real r, const Box& box) {
    const Real x1 = std::max(box.lo.x - center.x, -r);
    const Real x2 = std::min(box.hi.x - center.x, r);
    if (x2 <= x1) return 0.0;
    const Real y1 = box.lo.y - center.y, y2 = box.hi.y - center.y;
    if (y1 >= r || y2 <= -r) return 0.0;

    // antiderivative of the half-chord sqrt(r^2 - x^2)
    auto G = [r](Real x) {
        x = std::clamp(x, -r, r);
        return 0.5 * (x * std::sqrt(std::max(Real(0), r * r - x * x)) +
                      r * r * std::asin(std::clamp(x / r, Real(-1), Real(1))));
    };
    // split where the chord crosses the horizontal box edges; inside each
    // piece the clamp branches are fixed, so the integral is closed-form
    std::vector<Real> cuts = {x1, x2};
    for (Real y : {y1, y2}) {
        if (std::abs(y) < r) {
            const Real xc = std::sqrt(r * r - y * y);
            for (Real s : {-xc, xc})
                if (s > x1 && s < x2) cuts.push_back(s);
        }
    }
    std::sort(cuts.begin(), cuts.end());
    Real area = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        const Real a = cuts[i], b = cuts[i + 1];
        if (b <= a) continue;
        const Real mid = 0.5 * (a + b);
        const Real c_mid = std::sqrt(std::max(Real(0), r * r - mid * mid));
        const Real upper = std::min(y2, c_mid), lower = std::max(y1, -c_mid);
        if (upper <= lower) continue;
        const Real seg = G(b) - G(a);
        area += (y2 < c_mid ? y2 * (b - a) : seg) - (y1 > -c_mid ? y1 * (b - a) : -seg);
    }
    return area;
}

/// Downscaling: tile the porous box into n_x x n_y segments and compute the
/// per-segment structural features from the resolved micro cell.
inline SegmentGrid decompose_segments(const MesoCell& meso, const MicroCell& cell,
                                      int n_x, int n_y) {
    if (n_x < 1 || n_y < 1 || n_x * n_y > MesoCell::kMaxSegments)
        throw geometry_error("segment cap exceeded (max 255 material IDs)");
    SegmentGrid grid;
    grid.n_x = n_x;
    grid.n_y = n_y;
    grid.porous_box = meso.porous_box;
    const int n = n_x * n_y;
    grid.fvc.resize(n);
    grid.orientation.assign(n, 0.0);
    Real mean_radius = 0.0;
    for (const auto& f : cell.fibers) mean_radius += f.radius;
    if (!cell.fibers.empty()) mean_radius /= static_cast<Real>(cell.fibers.size());
    grid.fiber_radius.assign(n, mean_radius);
    for (int s = 0; s < n; ++s) {
        const Box sb = grid.segment_box(s);
        Real overlap = 0.0;
        for (const auto& f : cell.fibers) overlap += disc_box_overlap(f.center, f.radius, sb);
        grid.fvc[s] = overlap / sb.area();
    }
    return grid;
}

// --- sampling ----------------------------------------------------------------

/// Rejection-sample interior fluid points, stratified into split_box and its
/// complement; equi-angular fiber boundary points; random points on the four
/// domain edges. Reproducible from the seed.
inline PointSets sample_collocation(const MicroCell& cell, const CollocationCounts& counts,
                                    Box split_box, std::uint64_t seed,
                                    int max_attempts_factor = 1000) {
    PointSets out;
    out.seed = seed;
    Rng rng = make_rng(seed);

    auto draw_region = [&](bool inside_split, int want) {
        std::vector<Vec2> pts;
        pts.reserve(want);
        long long attempts = 0;
        const long long cap = static_cast<long long>(want) * max_attempts_factor + 1000;
        while (static_cast<int>(pts.size()) < want) {
            if (++attempts > cap)
                throw sampling_error("rejection sampling failed: degenerate geometry");
            Vec2 p{rng.uniform(), rng.uniform()};
            const bool in_split = split_box.contains(p);
            if (in_split != inside_split) continue;
            if (signed_distance(cell, p) <= 0.0) continue;
            pts.push_back(p);
        }
        return pts;
    };

    out.interior = draw_region(true, counts.interior_split);
    auto complement = draw_region(false, counts.interior_complement);
    out.interior.insert(out.interior.end(), complement.begin(), complement.end());

    auto edge_points = [&](int axis, Real fixed) {
        std::vector<Vec2> pts;
        pts.reserve(counts.per_edge);
        for (int i = 0; i < counts.per_edge; ++i) {
            const Real t = rng.uniform();
            pts.push_back(axis == 0 ? Vec2{fixed, t} : Vec2{t, fixed});
        }
        return pts;
    };
    out.edge_in = edge_points(0, 0.0);
    out.edge_out = edge_points(0, 1.0);
    out.edge_down = edge_points(1, 0.0);
    out.edge_up = edge_points(1, 1.0);

    out.fiber_boundary.reserve(cell.fibers.size() * counts.per_fiber);
    for (const auto& f : cell.fibers) {
        for (int k = 0; k < counts.per_fiber; ++k) {
            const Real phi = 2.0 * kPi * k / counts.per_fiber;
            out.fiber_boundary.push_back(
                {f.center.x + f.radius * std::cos(phi), f.center.y + f.radius * std::sin(phi)});
        }
    }
    return out;
}

/// Coupling sets: keep mesh points outside the buffered tow and away from the
/// up/down boundaries, where the coarse solution is trusted.
inline std::pair<std::vector<Vec2>, std::vector<Vec2>> build_coupling_sets(
    const MesoCell& meso, const std::vector<Vec2>& mesh_points, Box buffer_box,
    Real edge_margin = 0.015) {
    if (!(buffer_box.lo.x <= meso.porous_box.lo.x && buffer_box.hi.x >= meso.porous_box.hi.x &&
          buffer_box.lo.y <= meso.porous_box.lo.y && buffer_box.hi.y >= meso.porous_box.hi.y))
        throw geometry_error("buffer box must contain the porous box");
    std::vector<Vec2> kept;
    for (const auto& p : mesh_points) {
        if (buffer_box.contains(p)) continue;
        if (p.y < edge_margin || p.y > meso.domain.hi.y - edge_margin) continue;
        kept.push_back(p);
    }
    if (kept.empty()) throw geometry_error("coupling set is empty");
    return {kept, kept};
}

// --- serialization -----------------------------------------------------------

inline nlohmann::json to_json(const MicroCell& cell) {
    nlohmann::json j;
    j["domain"] = {cell.domain.lo.x, cell.domain.lo.y, cell.domain.hi.x, cell.domain.hi.y};
    j["tow_box"] = {cell.tow_box.lo.x, cell.tow_box.lo.y, cell.tow_box.hi.x, cell.tow_box.hi.y};
    j["seed"] = cell.seed;
    auto& fibers = j["fibers"] = nlohmann::json::array();
    for (const auto& f : cell.fibers)
        fibers.push_back({{"cx", f.center.x}, {"cy", f.center.y}, {"r", f.radius}});
    return j;
}

inline MicroCell micro_cell_from_json(const nlohmann::json& j) {
    MicroCell cell;
    auto box = [](const nlohmann::json& a) {
        return Box{{a.at(0).get<Real>(), a.at(1).get<Real>()},
                   {a.at(2).get<Real>(), a.at(3).get<Real>()}};
    };
    cell.domain = box(j.at("domain"));
    cell.tow_box = box(j.at("tow_box"));
    cell.seed = j.value("seed", std::uint64_t(0));
    for (const auto& f : j.at("fibers"))
        cell.fibers.push_back({{f.at("cx").get<Real>(), f.at("cy").get<Real>()}, f.at("r").get<Real>()});
    cell.validate();
    return cell;
}

inline void save_micro_cell(const MicroCell& cell, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << to_json(cell).dump(2) << "\n";
}

inline MicroCell load_micro_cell(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    nlohmann::json j;
    in >> j;
    return micro_cell_from_json(j);
}

}  // namespace permbridge

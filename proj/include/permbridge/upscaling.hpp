#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "permbridge/common.hpp"
#include "permbridge/geometry.hpp"
#include "permbridge/grid.hpp"
#include "permbridge/stokes.hpp"

namespace permbridge {

struct averaging_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Restricted averaging window: base box shrunk by the inset l_p.
struct AveragingWindow {
    Box base{{0.3125, 0.3125}, {0.6875, 0.6875}};
    Real l_p = 0.0;

    Box box() const {
        const Box b = base.inset(l_p);
        if (b.width() <= 0.0 || b.height() <= 0.0)
            throw averaging_error("averaging window is empty");
        return b;
    }
};

using FluidMask = std::function<bool(const Vec2&)>;

inline FluidMask micro_fluid_mask(const MicroCell& cell) {
    return [&cell](const Vec2& x) { return signed_distance(cell, x) > 0.0; };
}

/// Mean of the cell-centered velocity over the window, normalized by the
/// fluid measure of the window (midpoint rule on cell centers).
inline Vec2 volume_average_velocity(const FlowState& state, const AveragingWindow& window,
                                    const FluidMask& mask = {}) {
    const Grid& g = state.grid;
    const Box w = window.box();
    Real sx = 0.0, sy = 0.0;
    long long count = 0;
    for (int j = 0; j < g.n; ++j) {
        for (int i = 0; i < g.n; ++i) {
            const Vec2 c = g.p_pos(i, j);
            if (!w.contains(c)) continue;
            if (mask && !mask(c)) continue;
            const Vec2 u = state.cell_velocity(i, j);
            sx += u.x;
            sy += u.y;
            ++count;
        }
    }
    if (count == 0) throw averaging_error("no cells inside averaging window");
    return {sx / count, sy / count};
}

/// PD = f - mean discrete pressure gradient over the window fluid.
inline Vec2 pressure_drop(const FlowState& state, const AveragingWindow& window, Vec2 f,
                          const FluidMask& mask = {}) {
    const Grid& g = state.grid;
    const Box w = window.box();
    Real gx = 0.0, gy = 0.0;
    long long count = 0;
    for (int j = 0; j < g.n; ++j) {
        for (int i = 0; i < g.n; ++i) {
            const Vec2 c = g.p_pos(i, j);
            if (!w.contains(c)) continue;
            if (mask && !mask(c)) continue;
            gx += (state.p[g.idx(i + 1, j)] - state.p[g.idx(i - 1, j)]) / (2.0 * g.h);
            gy += (state.p[g.idx(i, j + 1)] - state.p[g.idx(i, j - 1)]) / (2.0 * g.h);
            ++count;
        }
    }
    if (count == 0) throw averaging_error("no cells inside averaging window");
    return {f.x - gx / count, f.y - gy / count};
}

/// Scalar Darcy inversion K11 = (1/mu) * PD^-1 * U.
inline Real darcy_scalar(Real U, Real PD, Real mu) {
    if (PD == 0.0) throw std::domain_error("darcy_scalar: zero pressure drop");
    return U / (mu * PD);
}

/// Tensor Darcy inversion K = mu * U * PD^-1, symmetrized. The asymmetry of
/// the raw product is returned through asymmetry_out when provided.
inline Mat2 darcy_tensor(const Mat2& U, const Mat2& PD, Real mu, Real* asymmetry_out = nullptr) {
    const Real scale = PD.max_abs();
    if (scale == 0.0) throw std::domain_error("darcy_tensor: zero pressure-drop matrix");
    const Real cond_proxy = scale * PD.inverse().max_abs();
    if (cond_proxy > 1e12) throw std::domain_error("darcy_tensor: near-singular pressure drop");
    const Mat2 K = U * PD.inverse() * mu;
    if (asymmetry_out) *asymmetry_out = std::abs(K.a12 - K.a21);
    return {K.a11, 0.5 * (K.a12 + K.a21), 0.5 * (K.a12 + K.a21), K.a22};
}

/// Point estimate with an uncertainty band from the l_p sweep.
struct PermeabilityEstimate {
    Mat2 tensor;
    Real band_low = 0.0;
    Real band_high = 0.0;
    AveragingWindow window;
    std::vector<std::pair<Real, Real>> sweep;  // (l_p, K11)
};

inline Real window_k11(const FlowState& state, const MicroCell& cell, const SolverConfig& config,
                       Real l_p) {
    AveragingWindow w;
    w.l_p = l_p;
    const FluidMask mask = micro_fluid_mask(cell);
    const Real U = volume_average_velocity(state, w, mask).x;
    const Real PD = pressure_drop(state, w, config.body_force, mask).x;
    return darcy_scalar(U, PD, config.mu);
}

/// K11 from a converged micro state at l_p = 0, plus the min/max band over
/// the inset sweep.
inline PermeabilityEstimate permeability_with_band(const FlowState& state, const MicroCell& cell,
                                                   const SolverConfig& config, Real l_p_max = 0.045,
                                                   int n_samples = 10) {
    PermeabilityEstimate est;
    const Real k0 = window_k11(state, cell, config, 0.0);
    est.tensor = Mat2::iso(k0);
    est.band_low = k0;
    est.band_high = k0;
    est.sweep.reserve(n_samples);
    for (int s = 0; s < n_samples; ++s) {
        const Real lp = l_p_max * s / (n_samples - 1);
        const Real k = window_k11(state, cell, config, lp);
        est.sweep.emplace_back(lp, k);
        est.band_low = std::min(est.band_low, k);
        est.band_high = std::max(est.band_high, k);
    }
    return est;
}

/// Convenience: solve the micro problem then extract the estimate.
inline PermeabilityEstimate permeability_with_band(const MicroCell& cell, const Grid& grid,
                                                   const SolverConfig& config, Real l_p_max = 0.045,
                                                   int n_samples = 10, SolveReport* report = nullptr) {
    const FlowState state = solve_stokes_micro(cell, grid, config, BcMode::periodic_benchmark, report);
    return permeability_with_band(state, cell, config, l_p_max, n_samples);
}

/// Mesoscale permeability: Darcy inversion with full-domain averaging of the
/// Brinkman state (continuum; no fluid mask).
inline Real meso_permeability(const FlowState& state, const SolverConfig& config) {
    AveragingWindow full;
    full.base = unit_box();
    // midpoint rule covers every cell; shrink epsilon avoids edge ambiguity
    full.base.hi = {1.0, 1.0};
    const Real U = volume_average_velocity(state, full).x;
    const Real PD = pressure_drop(state, full, config.body_force).x;
    return darcy_scalar(U, PD, config.mu);
}

/// SBM assignment: map per-segment features through a predictor to build the
/// piecewise-constant mesoscale permeability field.
inline MesoCell assign_segment_permeabilities(
    const SegmentGrid& segments,
    const std::function<Mat2(Real fvc, Real radius, Real orientation)>& predictor) {
    if (segments.count() > MesoCell::kMaxSegments)
        throw geometry_error("segment cap exceeded (max 255 material IDs)");
    MesoCell meso;
    meso.porous_box = segments.porous_box;
    meso.seg_nx = segments.n_x;
    meso.seg_ny = segments.n_y;
    meso.tensors.resize(segments.count());
    for (int s = 0; s < segments.count(); ++s)
        meso.tensors[s] = predictor(segments.fvc[s], segments.fiber_radius[s], segments.orientation[s]);
    meso.validate();
    return meso;
}

}  // namespace permbridge

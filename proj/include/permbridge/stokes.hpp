#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "permbridge/common.hpp"
#include "permbridge/geometry.hpp"
#include "permbridge/grid.hpp"
#include "permbridge/poisson_fft.hpp"

namespace permbridge {

enum class BcMode {
    periodic_benchmark,  // u periodic in x and y, p periodic with in/out gauge
    channel_test         // no-slip walls at y = 0, 1; periodic in x
};

struct SolverConfig {
    Real mu = 1.0;
    Real mu_tilde = 1.0;
    Vec2 body_force{10.0, 0.0};
    Real penalization_permeability = 1e-9;
    // Effective drag ceiling mu/K: blocking beyond ~1e8 is indistinguishable
    // on the grid but amplifies roundoff in the residual; 0 disables the cap.
    Real drag_cap_permeability = 1e-8;
    Real linear_tolerance = 1e-8;  // absolute, on the raw discrete residuals
    Real permeability_stop = 0.01;
    bool use_permeability_stop = false;
    int max_cycles = 400000;
    Real dt = 0.0;  // pseudo-time step; 0 selects a heuristic
    int mask_subsamples = 8;
    int check_every = 40;
};

struct SolveReport {
    int outer_steps = 0;
    long long pcg_iterations = 0;
    Real momentum_residual_max = 0.0;
    Real divergence_max = 0.0;
    Real k11_last = 0.0;
    std::string stop_reason;
    std::vector<Real> residual_history;
};

struct solver_error : std::runtime_error {
    SolveReport report;
    solver_error(const std::string& msg, SolveReport rep)
        : std::runtime_error(msg), report(std::move(rep)) {}
};

/// Discrete problem: drag coefficients on both face sets (mu * K^-1, zero in
/// free fluid), off-diagonal drag for anisotropic tensors, body force, BCs.
struct StokesProblem {
    Grid grid;
    BcMode bc = BcMode::periodic_benchmark;
    Real mu = 1.0;
    Vec2 f{0.0, 0.0};
    Field c1, c2;          // diagonal drag at u1 / u2 faces
    Field d12_u1, d12_u2;  // off-diagonal drag (zero for isotropic media)
    bool has_offdiag = false;

    explicit StokesProblem(const Grid& g)
        : grid(g),
          c1(g.size(), 0.0),
          c2(g.size(), 0.0),
          d12_u1(g.size(), 0.0),
          d12_u2(g.size(), 0.0) {}
};

namespace detail {

/// Solid area fraction of the h x h control volume centered at pos.
inline Real face_solid_fraction(const MicroCell& cell, const Vec2& pos, Real h, int sub) {
    const Real sd = signed_distance(cell, {std::fmod(pos.x + 1.0, 1.0), std::fmod(pos.y + 1.0, 1.0)});
    const Real band = 0.75 * h * 1.4142135623730951;
    if (sd > band) return 0.0;
    if (sd < -band) return 1.0;
    int hits = 0;
    for (int a = 0; a < sub; ++a) {
        for (int b = 0; b < sub; ++b) {
            Vec2 q{pos.x + ((a + 0.5) / sub - 0.5) * h, pos.y + ((b + 0.5) / sub - 0.5) * h};
            q.x = std::fmod(q.x + 1.0, 1.0);
            q.y = std::fmod(q.y + 1.0, 1.0);
            if (signed_distance(cell, q) <= 0.0) ++hits;
        }
    }
    return static_cast<Real>(hits) / (sub * sub);
}

}  // namespace detail

/// Penalized microscale problem: fibers act through a Brinkman drag
/// mu/K_pen scaled by the local solid fraction.
inline StokesProblem make_micro_problem(const MicroCell& cell, const Grid& grid,
                                        const SolverConfig& config, BcMode bc) {
    for (const auto& f : cell.fibers)
        if (grid.h > f.radius / 4.0)
            throw solver_error("grid too coarse: h must be <= radius/4", {});
    StokesProblem prob(grid);
    prob.bc = bc;
    prob.mu = config.mu;
    prob.f = config.body_force;
    const Real cmax = config.mu / config.penalization_permeability;
    const Real cap = config.drag_cap_permeability > 0.0
                         ? config.mu / config.drag_cap_permeability
                         : std::numeric_limits<Real>::max();
    const int sub = std::max(1, config.mask_subsamples);
    parallel_blocks(static_cast<std::size_t>(grid.size()), 4096,
                    [&](std::size_t, std::size_t lo, std::size_t hi) {
                        for (std::size_t k = lo; k < hi; ++k) {
                            const int i = static_cast<int>(k) % grid.n;
                            const int j = static_cast<int>(k) / grid.n;
                            prob.c1[k] = std::min(cap, cmax * detail::face_solid_fraction(
                                                            cell, grid.u1_pos(i, j), grid.h, sub));
                            prob.c2[k] = std::min(cap, cmax * detail::face_solid_fraction(
                                                            cell, grid.u2_pos(i, j), grid.h, sub));
                        }
                    });
    return prob;
}

/// Mesoscale Stokes-Brinkman problem: piecewise-constant drag mu*K^-1 inside
/// the porous box, none in the fluid exterior.
inline StokesProblem make_meso_problem(const MesoCell& meso, const Grid& grid,
                                       const SolverConfig& config) {
    meso.validate();
    StokesProblem prob(grid);
    prob.bc = BcMode::periodic_benchmark;
    prob.mu = config.mu_tilde;  // Laplacian carries the Brinkman viscosity
    prob.f = config.body_force;
    std::vector<Mat2> drag(meso.tensors.size());
    for (std::size_t s = 0; s < meso.tensors.size(); ++s) {
        if (meso.tensors[s].det() <= 0.0)
            throw solver_error("invalid permeability tensor in field", {});
        drag[s] = meso.tensors[s].inverse() * config.mu;
        if (std::abs(drag[s].a12) > 0.0) prob.has_offdiag = true;
    }
    for (int j = 0; j < grid.n; ++j) {
        for (int i = 0; i < grid.n; ++i) {
            const int k = grid.idx(i, j);
            const int s1 = meso.segment_at(grid.u1_pos(i, j));
            if (s1 >= 0) {
                prob.c1[k] = drag[s1].a11;
                prob.d12_u1[k] = drag[s1].a12;
            }
            const int s2 = meso.segment_at(grid.u2_pos(i, j));
            if (s2 >= 0) {
                prob.c2[k] = drag[s2].a22;
                prob.d12_u2[k] = drag[s2].a21;
            }
        }
    }
    return prob;
}

namespace detail {

// Discrete momentum operator pieces. Channel mode reflects u1 across the
// walls (ghost = -u1) and pins the u2 wall row to zero.
struct MomentumOp {
    const StokesProblem* prob;
    Real inv_dt;
    int comp;  // 0 = u1, 1 = u2

    Real apply_at(const Field& u, int i, int j) const {
        const Grid& g = prob->grid;
        const Real ih2 = 1.0 / (g.h * g.h);
        const int k = g.idx(i, j);
        const bool channel = prob->bc == BcMode::channel_test;
        if (comp == 1 && channel && j == 0) return u[k];  // pinned wall row
        Real ym, yp;
        if (comp == 0 && channel) {
            ym = (j == 0) ? -u[k] : u[g.idx(i, j - 1)];
            yp = (j == g.n - 1) ? -u[k] : u[g.idx(i, j + 1)];
        } else {
            ym = u[g.idx(i, j - 1)];
            yp = u[g.idx(i, j + 1)];
        }
        const Real lap = (u[g.idx(i - 1, j)] + u[g.idx(i + 1, j)] + ym + yp - 4.0 * u[k]) * ih2;
        const Real c = (comp == 0 ? prob->c1 : prob->c2)[k];
        return (inv_dt + c) * u[k] - prob->mu * lap;
    }

    void apply(const Field& u, Field& out) const {
        const Grid& g = prob->grid;
        parallel_blocks(static_cast<std::size_t>(g.n), 16, [&](std::size_t, std::size_t lo, std::size_t hi) {
            for (std::size_t j = lo; j < hi; ++j)
                for (int i = 0; i < g.n; ++i)
                    out[g.idx(i, static_cast<int>(j))] = apply_at(u, i, static_cast<int>(j));
        });
    }

    Real diag_at(int i, int j) const {
        const Grid& g = prob->grid;
        const Real ih2 = 1.0 / (g.h * g.h);
        const bool channel = prob->bc == BcMode::channel_test;
        if (comp == 1 && channel && j == 0) return 1.0;
        Real d = inv_dt + (comp == 0 ? prob->c1 : prob->c2)[g.idx(i, j)] + 4.0 * prob->mu * ih2;
        if (comp == 0 && channel && (j == 0 || j == g.n - 1)) d += prob->mu * ih2;
        return d;
    }
};

/// Jacobi-preconditioned CG, deterministic reductions. Returns iterations.
inline int pcg(const MomentumOp& op, const Field& rhs, Field& x, Real abs_tol, int max_iter,
               Field& r, Field& z, Field& pdir, Field& Ap, const Field& inv_diag) {
    const std::size_t n = rhs.size();
    op.apply(x, Ap);
    for (std::size_t k = 0; k < n; ++k) r[k] = rhs[k] - Ap[k];
    auto dot = [&](const Field& a, const Field& b) {
        return deterministic_sum(n, [&](std::size_t k) { return a[k] * b[k]; });
    };
    for (std::size_t k = 0; k < n; ++k) z[k] = r[k] * inv_diag[k];
    Real rz = dot(r, z);
    pdir = z;
    Real rmax = 0.0;
    for (std::size_t k = 0; k < n; ++k) rmax = std::max(rmax, std::abs(r[k]));
    if (rmax <= abs_tol) return 0;
    int it = 0;
    for (; it < max_iter; ++it) {
        op.apply(pdir, Ap);
        const Real pAp = dot(pdir, Ap);
        if (pAp <= 0.0) break;
        const Real alpha = rz / pAp;
        for (std::size_t k = 0; k < n; ++k) {
            x[k] += alpha * pdir[k];
            r[k] -= alpha * Ap[k];
        }
        rmax = 0.0;
        for (std::size_t k = 0; k < n; ++k) rmax = std::max(rmax, std::abs(r[k]));
        if (rmax <= abs_tol) {
            ++it;
            break;
        }
        for (std::size_t k = 0; k < n; ++k) z[k] = r[k] * inv_diag[k];
        const Real rz_new = dot(r, z);
        const Real beta = rz_new / rz;
        rz = rz_new;
        for (std::size_t k = 0; k < n; ++k) pdir[k] = z[k] + beta * pdir[k];
    }
    return it;
}

}  // namespace detail

/// Raw discrete residuals of the steady problem for a given state.
inline std::pair<Real, Real> residual_report(const FlowState& s, const StokesProblem& prob) {
    const Grid& g = prob.grid;
    detail::MomentumOp op1{&prob, 0.0, 0};
    detail::MomentumOp op2{&prob, 0.0, 1};
    Real mom = 0.0;
    const bool channel = prob.bc == BcMode::channel_test;
    for (int j = 0; j < g.n; ++j) {
        for (int i = 0; i < g.n; ++i) {
            const int k = g.idx(i, j);
            const Real gpx = (s.p[k] - s.p[g.idx(i - 1, j)]) / g.h;
            Real r1 = op1.apply_at(s.u1, i, j) + gpx - prob.f.x;
            if (prob.has_offdiag) {
                const Real u2i = 0.25 * (s.u2[g.idx(i - 1, j)] + s.u2[k] +
                                         s.u2[g.idx(i - 1, j + 1)] + s.u2[g.idx(i, j + 1)]);
                r1 += prob.d12_u1[k] * u2i;
            }
            mom = std::max(mom, std::abs(r1));
            if (!(channel && j == 0)) {
                const Real gpy = (s.p[k] - s.p[g.idx(i, j - 1)]) / g.h;
                Real r2 = op2.apply_at(s.u2, i, j) + gpy - prob.f.y;
                if (prob.has_offdiag) {
                    const Real u1i = 0.25 * (s.u1[g.idx(i, j - 1)] + s.u1[k] +
                                             s.u1[g.idx(i + 1, j - 1)] + s.u1[g.idx(i + 1, j)]);
                    r2 += prob.d12_u2[k] * u1i;
                }
                mom = std::max(mom, std::abs(r2));
            }
        }
    }
    Real div = 0.0;
    for (int j = 0; j < g.n; ++j)
        for (int i = 0; i < g.n; ++i) {
            const int k = g.idx(i, j);
            const Real d = (s.u1[g.idx(i + 1, j)] - s.u1[k] + s.u2[g.idx(i, j + 1)] - s.u2[k]) / g.h;
            div = std::max(div, std::abs(d));
        }
    return {mom, div};
}

/// Direct solve of the fully periodic problem in streamfunction/mean-flow
/// form. With u = curl(psi) + U_mean the discrete divergence vanishes
/// identically, and minimizing the energy
///   (mu/2) <grad u, grad u> + (1/2) <D u, u> - <f, u>
/// over (psi, U_mean) gives an SPD system solved by sparse Cholesky. The
/// periodic pressure is recovered exactly from the curl-free momentum defect
/// with one FFT Poisson solve, so both residual contracts hold to solver
/// precision in a single pass.
inline FlowState solve_stokes_direct(const StokesProblem& prob, const SolverConfig& config,
                                     SolveReport* report_out = nullptr) {
    if (prob.bc != BcMode::periodic_benchmark)
        throw solver_error("direct path requires the fully periodic mode", {});
    const Grid& g = prob.grid;
    const int n = g.n;
    const int N = g.size();
    const Real ih = 1.0 / g.h;

    Real cmax = 0.0;
    for (Real c : prob.c1) cmax = std::max(cmax, c);
    for (Real c : prob.c2) cmax = std::max(cmax, c);
    if (cmax == 0.0 && (std::abs(prob.f.x) > 0 || std::abs(prob.f.y) > 0))
        throw solver_error("ill-posed: fully periodic cell with body force and no drag", {});

    using SpMat = Eigen::SparseMatrix<Real>;
    using Trip = Eigen::Triplet<Real>;

    // face operator Op = mu*(-Lap) + drag (diagonal + symmetric off-diagonal)
    std::vector<Trip> op_trips;
    op_trips.reserve(14u * static_cast<std::size_t>(N));
    const Real ih2 = ih * ih;
    auto U1 = [&](int i, int j) { return g.idx(i, j); };
    auto U2 = [&](int i, int j) { return N + g.idx(i, j); };
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            const int k = g.idx(i, j);
            for (auto [row, c] : {std::pair{U1(i, j), prob.c1[k]}, std::pair{U2(i, j), prob.c2[k]}}) {
                op_trips.emplace_back(row, row, c + 4.0 * prob.mu * ih2);
            }
            op_trips.emplace_back(U1(i, j), U1(i - 1, j), -prob.mu * ih2);
            op_trips.emplace_back(U1(i, j), U1(i + 1, j), -prob.mu * ih2);
            op_trips.emplace_back(U1(i, j), U1(i, j - 1), -prob.mu * ih2);
            op_trips.emplace_back(U1(i, j), U1(i, j + 1), -prob.mu * ih2);
            op_trips.emplace_back(U2(i, j), U2(i - 1, j), -prob.mu * ih2);
            op_trips.emplace_back(U2(i, j), U2(i + 1, j), -prob.mu * ih2);
            op_trips.emplace_back(U2(i, j), U2(i, j - 1), -prob.mu * ih2);
            op_trips.emplace_back(U2(i, j), U2(i, j + 1), -prob.mu * ih2);
        }
    }
    if (prob.has_offdiag) {
        // symmetric corner-interpolated coupling u1^T D12 u2
        for (int j = 0; j < n; ++j) {
            for (int i = 0; i < n; ++i) {
                const Real d = 0.5 * (prob.d12_u1[g.idx(i, j)] + prob.d12_u1[g.idx(i, g.wrap(j - 1))]);
                if (d == 0.0) continue;
                const int a[2] = {U1(i, j - 1), U1(i, j)};
                const int b[2] = {U2(i - 1, j), U2(i, j)};
                for (int s = 0; s < 2; ++s)
                    for (int t = 0; t < 2; ++t) {
                        op_trips.emplace_back(a[s], b[t], 0.25 * d);
                        op_trips.emplace_back(b[t], a[s], 0.25 * d);
                    }
            }
        }
    }
    SpMat Op(2 * N, 2 * N);
    Op.setFromTriplets(op_trips.begin(), op_trips.end());
    op_trips.clear();
    op_trips.shrink_to_fit();

    // G maps (psi without the pinned corner, U1, U2) to face velocities
    const int nvar = N + 1;  // psi corner (0,0) pinned to zero
    auto psi_var = [&](int i, int j) { return g.idx(i, j) - 1; };  // -1 marks the pinned corner
    std::vector<Trip> g_trips;
    g_trips.reserve(6u * static_cast<std::size_t>(N));
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            int v;
            if ((v = psi_var(i, g.wrap(j + 1))) >= 0) g_trips.emplace_back(U1(i, j), v, ih);
            if ((v = psi_var(i, j)) >= 0) g_trips.emplace_back(U1(i, j), v, -ih);
            if ((v = psi_var(g.wrap(i + 1), j)) >= 0) g_trips.emplace_back(U2(i, j), v, -ih);
            if ((v = psi_var(i, j)) >= 0) g_trips.emplace_back(U2(i, j), v, ih);
            g_trips.emplace_back(U1(i, j), N - 1, 1.0);
            g_trips.emplace_back(U2(i, j), N, 1.0);
        }
    }
    SpMat G(2 * N, nvar);
    G.setFromTriplets(g_trips.begin(), g_trips.end());
    g_trips.clear();
    g_trips.shrink_to_fit();

    const SpMat A = (G.transpose() * Op * G).pruned(1e-300);
    Eigen::VectorXd fvec(2 * N);
    for (int k = 0; k < N; ++k) {
        fvec[k] = prob.f.x;
        fvec[N + k] = prob.f.y;
    }
    const Eigen::VectorXd b = G.transpose() * fvec;

    Eigen::SimplicialLDLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt;
    ldlt.compute(A);
    if (ldlt.info() != Eigen::Success)
        throw solver_error("direct factorization failed (singular system)", {});
    Eigen::VectorXd x = ldlt.solve(b);
    for (int refine = 0; refine < 3; ++refine) {
        const Eigen::VectorXd resid = b - A * x;
        if (resid.lpNorm<Eigen::Infinity>() < 1e-14 * b.lpNorm<Eigen::Infinity>() + 1e-300) break;
        x += ldlt.solve(resid);
    }

    const Eigen::VectorXd u = G * x;
    FlowState s(g);
    for (int k = 0; k < N; ++k) {
        s.u1[k] = u[k];
        s.u2[k] = u[N + k];
    }

    // pressure recovery: momentum defect w = f - Op*u is discretely curl-free
    // and mean-free, hence an exact discrete gradient
    const Eigen::VectorXd w = fvec - Op * u;
    Field div_w(N);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i)
            div_w[g.idx(i, j)] = (w[U1(g.wrap(i + 1), j)] - w[U1(i, j)] +
                                  w[U2(i, g.wrap(j + 1))] - w[U2(i, j)]) * ih;
    PoissonFFT poisson(n, PoissonFFT::Mode::PeriodicXY);
    poisson.solve(div_w, s.p);

    SolveReport report;
    report.outer_steps = 1;
    report.stop_reason = "direct";
    auto [mom, div] = residual_report(s, prob);
    report.momentum_residual_max = mom;
    report.divergence_max = div;
    report.residual_history.push_back(mom);
    if (!s.finite()) throw solver_error("direct solve produced non-finite state", report);
    if (mom > config.linear_tolerance || div > config.linear_tolerance)
        throw solver_error("direct solve missed the residual tolerance", report);
    if (report_out) *report_out = report;
    return s;
}

/// Steady solve by incremental pressure-correction pseudo-time stepping:
/// implicit Helmholtz momentum step (Jacobi-PCG), exact FFT projection.
/// Converges for moderate drag contrasts (channel validation, Brinkman
/// media); the penalized micro problem uses the direct path instead.
/// Optional monitor maps the current state to a K11 estimate for the
/// permeability-change stopping rule (the 1% criterion).
inline FlowState solve_stokes_iterative(const StokesProblem& prob, const SolverConfig& config,
                                        SolveReport* report_out = nullptr,
                                        const std::function<Real(const FlowState&)>& k11_monitor = {}) {
    const Grid& g = prob.grid;
    Real cmax = 0.0;
    for (Real c : prob.c1) cmax = std::max(cmax, c);
    for (Real c : prob.c2) cmax = std::max(cmax, c);
    if (prob.bc == BcMode::periodic_benchmark && cmax == 0.0 &&
        (std::abs(prob.f.x) > 0 || std::abs(prob.f.y) > 0))
        throw solver_error("ill-posed: fully periodic cell with body force and no drag", {});

    const Real dt = config.dt > 0.0 ? config.dt : 0.05;
    FlowState s(g);
    PoissonFFT poisson(g.n, prob.bc == BcMode::periodic_benchmark
                                 ? PoissonFFT::Mode::PeriodicXY
                                 : PoissonFFT::Mode::PeriodicXWallsY);

    const std::size_t nn = static_cast<std::size_t>(g.size());
    Field rhs1(nn), rhs2(nn), r(nn), z(nn), pdir(nn), Ap(nn), phi(nn), div_rhs(nn);
    detail::MomentumOp op1{&prob, 1.0 / dt, 0};
    detail::MomentumOp op2{&prob, 1.0 / dt, 1};
    Field inv_diag1(nn), inv_diag2(nn);
    for (int j = 0; j < g.n; ++j)
        for (int i = 0; i < g.n; ++i) {
            inv_diag1[g.idx(i, j)] = 1.0 / op1.diag_at(i, j);
            inv_diag2[g.idx(i, j)] = 1.0 / op2.diag_at(i, j);
        }

    SolveReport report;
    Real mom_res = std::numeric_limits<Real>::max();
    Real k11_prev = 0.0;
    bool k11_valid = false;
    const bool channel = prob.bc == BcMode::channel_test;

    for (int step = 0; step < config.max_cycles; ++step) {
        // momentum rhs: u^k/dt + f - grad p - (explicit off-diagonal drag)
        for (int j = 0; j < g.n; ++j) {
            for (int i = 0; i < g.n; ++i) {
                const int k = g.idx(i, j);
                Real b1 = s.u1[k] / dt + prob.f.x - (s.p[k] - s.p[g.idx(i - 1, j)]) / g.h;
                if (prob.has_offdiag) {
                    const Real u2i = 0.25 * (s.u2[g.idx(i - 1, j)] + s.u2[k] +
                                             s.u2[g.idx(i - 1, j + 1)] + s.u2[g.idx(i, j + 1)]);
                    b1 -= prob.d12_u1[k] * u2i;
                }
                rhs1[k] = b1;
                if (channel && j == 0) {
                    rhs2[k] = 0.0;
                } else {
                    Real b2 = s.u2[k] / dt + prob.f.y - (s.p[k] - s.p[g.idx(i, j - 1)]) / g.h;
                    if (prob.has_offdiag) {
                        const Real u1i = 0.25 * (s.u1[g.idx(i, j - 1)] + s.u1[k] +
                                                 s.u1[g.idx(i + 1, j - 1)] + s.u1[g.idx(i + 1, j)]);
                        b2 -= prob.d12_u2[k] * u1i;
                    }
                    rhs2[k] = b2;
                }
            }
        }
        const Real inner_tol = std::max(0.05 * config.linear_tolerance,
                                        std::min(1e-3 * mom_res, 1e-2));
        report.pcg_iterations += detail::pcg(op1, rhs1, s.u1, inner_tol, 600, r, z, pdir, Ap, inv_diag1);
        report.pcg_iterations += detail::pcg(op2, rhs2, s.u2, inner_tol, 600, r, z, pdir, Ap, inv_diag2);

        // projection: div correction via exact Poisson solve
        for (int j = 0; j < g.n; ++j)
            for (int i = 0; i < g.n; ++i) {
                const int k = g.idx(i, j);
                div_rhs[k] = (s.u1[g.idx(i + 1, j)] - s.u1[k] + s.u2[g.idx(i, j + 1)] - s.u2[k]) /
                             (g.h * dt);
            }
        poisson.solve(div_rhs, phi);
        for (int j = 0; j < g.n; ++j)
            for (int i = 0; i < g.n; ++i) {
                const int k = g.idx(i, j);
                s.u1[k] -= dt * (phi[k] - phi[g.idx(i - 1, j)]) / g.h;
                if (!(channel && j == 0))
                    s.u2[k] -= dt * (phi[k] - phi[g.idx(i, j - 1)]) / g.h;
                s.p[k] += phi[k];
            }
        if (channel)  // restore exact wall condition
            for (int i = 0; i < g.n; ++i) s.u2[g.idx(i, 0)] = 0.0;

        if (step % config.check_every == config.check_every - 1 || step == config.max_cycles - 1) {
            auto [mom, div] = residual_report(s, prob);
            mom_res = mom;
            report.residual_history.push_back(mom);
            report.outer_steps = step + 1;
            report.momentum_residual_max = mom;
            report.divergence_max = div;
            if (!s.finite()) throw solver_error("solver diverged (non-finite state)", report);
            if (mom <= config.linear_tolerance && div <= config.linear_tolerance) {
                report.stop_reason = "residual";
                break;
            }
            if (config.use_permeability_stop && k11_monitor) {
                const Real k11 = k11_monitor(s);
                report.k11_last = k11;
                if (k11_valid && k11 != 0.0 &&
                    std::abs(k11 - k11_prev) < config.permeability_stop * std::abs(k11)) {
                    report.stop_reason = "permeability_stop";
                    break;
                }
                k11_prev = k11;
                k11_valid = true;
            }
        }
    }
    if (report.stop_reason.empty()) {
        report.stop_reason = "max_cycles";
        throw solver_error("solver did not converge within max_cycles", report);
    }
    if (report_out) *report_out = report;
    return s;
}

/// Entry point: fully periodic problems go through the direct streamfunction
/// path; the channel mode and the permeability-stop monitoring loop use the
/// pressure-correction iteration.
inline FlowState solve_stokes(const StokesProblem& prob, const SolverConfig& config,
                              SolveReport* report = nullptr,
                              const std::function<Real(const FlowState&)>& k11_monitor = {}) {
    const bool wants_monitor = config.use_permeability_stop && k11_monitor;
    if (prob.bc == BcMode::periodic_benchmark && !wants_monitor)
        return solve_stokes_direct(prob, config, report);
    return solve_stokes_iterative(prob, config, report, k11_monitor);
}

/// Microscale Stokes solve (fibers via penalization).
inline FlowState solve_stokes_micro(const MicroCell& cell, const Grid& grid,
                                    const SolverConfig& config, BcMode bc_mode,
                                    SolveReport* report = nullptr,
                                    const std::function<Real(const FlowState&)>& k11_monitor = {}) {
    const StokesProblem prob = make_micro_problem(cell, grid, config, bc_mode);
    FlowState s = solve_stokes(prob, config, report, k11_monitor);
    if (prob.bc == BcMode::periodic_benchmark) {
        // pressure gauge: zero mean over the inlet/outlet boundary columns
        Real gauge = 0.0;
        for (int j = 0; j < grid.n; ++j)
            gauge += s.p[grid.idx(0, j)] + s.p[grid.idx(grid.n - 1, j)];
        gauge /= 2.0 * grid.n;
        for (Real& v : s.p) v -= gauge;
    }
    return s;
}

/// Mesoscale Stokes-Brinkman solve.
inline FlowState solve_stokes_brinkman(const MesoCell& meso, const Grid& grid,
                                       const SolverConfig& config, SolveReport* report = nullptr) {
    const StokesProblem prob = make_meso_problem(meso, grid, config);
    FlowState s = solve_stokes(prob, config, report);
    Real gauge = 0.0;
    for (int j = 0; j < grid.n; ++j)
        gauge += s.p[grid.idx(0, j)] + s.p[grid.idx(grid.n - 1, j)];
    gauge /= 2.0 * grid.n;
    for (Real& v : s.p) v -= gauge;
    return s;
}

}  // namespace permbridge

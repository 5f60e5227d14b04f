#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "permbridge/poisson_fft.hpp"
#include "permbridge/stokes.hpp"
#include "permbridge/upscaling.hpp"

using namespace permbridge;

namespace {
const Box kTow{{0.28, 0.28}, {0.72, 0.72}};

SolverConfig fast_config() {
    SolverConfig c;
    c.linear_tolerance = 1e-8;
    return c;
}
}  // namespace

TEST_CASE("PoissonFFT periodic: solve then apply recovers rhs") {
    const int n = 64;
    PoissonFFT poisson(n, PoissonFFT::Mode::PeriodicXY);
    Grid g(n);
    Field rhs(g.size());
    Rng rng = make_rng(5);
    Real mean = 0.0;
    for (auto& v : rhs) {
        v = rng.uniform(-1.0, 1.0);
        mean += v;
    }
    mean /= rhs.size();
    for (auto& v : rhs) v -= mean;

    Field phi, back;
    poisson.solve(rhs, phi);
    poisson.apply_laplacian(phi, back);
    for (std::size_t k = 0; k < rhs.size(); ++k) CHECK(back[k] == Catch::Approx(rhs[k]).margin(1e-10));
}

TEST_CASE("PoissonFFT walls mode: solve then apply recovers rhs") {
    const int n = 32;
    PoissonFFT poisson(n, PoissonFFT::Mode::PeriodicXWallsY);
    Grid g(n);
    Field rhs(g.size());
    Rng rng = make_rng(9);
    Real mean = 0.0;
    for (auto& v : rhs) {
        v = rng.uniform(-1.0, 1.0);
        mean += v;
    }
    mean /= rhs.size();
    for (auto& v : rhs) v -= mean;

    Field phi, back;
    poisson.solve(rhs, phi);
    poisson.apply_laplacian(phi, back);
    for (std::size_t k = 0; k < rhs.size(); ++k) CHECK(back[k] == Catch::Approx(rhs[k]).margin(1e-10));
}

TEST_CASE("Poiseuille channel: analytic profile and mean velocity") {
    const int n = 64;
    MicroCell empty;
    empty.tow_box = kTow;
    SolverConfig config = fast_config();
    SolveReport report;
    const FlowState s =
        solve_stokes_micro(empty, Grid(n), config, BcMode::channel_test, &report);
    // u1(y) = 5 y (1 - y), mean 5/6
    Grid g(n);
    for (int j = 0; j < n; ++j) {
        const Real y = (j + 0.5) * g.h;
        CHECK(s.u1[g.idx(3, j)] == Catch::Approx(5.0 * y * (1.0 - y)).margin(2e-3));
    }
    Real mean = 0.0;
    for (int j = 0; j < n; ++j) mean += s.u1[g.idx(0, j)];
    mean /= n;
    CHECK(mean == Catch::Approx(5.0 / 6.0).epsilon(2e-3));
    CHECK(report.divergence_max <= 1e-8);
    CHECK(report.momentum_residual_max <= 1e-8);
}

TEST_CASE("residual_report: zero state momentum residual equals forcing") {
    const int n = 32;
    MicroCell empty;
    empty.tow_box = kTow;
    SolverConfig config;
    Grid g(n);
    const StokesProblem prob = make_micro_problem(empty, g, config, BcMode::channel_test);
    FlowState zero(g);
    auto [mom, div] = residual_report(zero, prob);
    CHECK(mom == Catch::Approx(10.0).epsilon(1e-12));
    CHECK(div == 0.0);
}

TEST_CASE("Brinkman uniform K over entire domain: constant Darcy state") {
    const int n = 32;
    MesoCell meso;
    meso.porous_box = {{1e-9, 1e-9}, {1.0 - 1e-9, 1.0 - 1e-9}};  // porous everywhere
    meso.tensors = {Mat2::iso(1e-3)};
    SolverConfig config = fast_config();
    SolveReport report;
    const FlowState s = solve_stokes_brinkman(meso, Grid(n), config, &report);
    // mu K^-1 u = f  =>  u1 = K f / mu = 1e-3 * 10 = 1e-2
    for (int k = 0; k < n * n; ++k) {
        CHECK(s.u1[k] == Catch::Approx(1e-2).margin(1e-8));
        CHECK(s.u2[k] == Catch::Approx(0.0).margin(1e-8));
        CHECK(std::abs(s.p[k]) <= 1e-6);
    }
    CHECK(report.momentum_residual_max <= 1e-8);
}

TEST_CASE("Brinkman drag monotonicity: larger K gives faster meso flow") {
    const int n = 48;
    SolverConfig config = fast_config();
    auto mean_u1 = [&](Real k11) {
        const MesoCell meso = make_benchmark_meso(k11);
        const FlowState s = solve_stokes_brinkman(meso, Grid(n), config);
        Real m = 0.0;
        for (Real v : s.u1) m += v;
        return m / s.u1.size();
    };
    CHECK(mean_u1(5e-4) > mean_u1(5e-5));
}

TEST_CASE("micro solve: converged state honors contracts (small grid)") {
    const int n = 96;
    const MicroCell cell = build_micro_cell(3, 0.05, kTow);
    SolverConfig config = fast_config();
    SolveReport report;
    const FlowState s = solve_stokes_micro(cell, Grid(n), config, BcMode::periodic_benchmark, &report);
    CHECK(report.momentum_residual_max <= config.linear_tolerance);
    CHECK(report.divergence_max <= config.linear_tolerance);

    // velocity inside fibers is penalized to ~0
    const Real cap = 10.0 * std::sqrt(config.penalization_permeability);
    Grid g(n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            const Vec2 pos = g.u1_pos(i, j);
            if (signed_distance(cell, pos) < -1.5 * g.h) CHECK(std::abs(s.u1[g.idx(i, j)]) <= cap);
        }

    // symmetric lattice: u1 symmetric about x2 = 0.5, u2 antisymmetric
    Real u1max = 0.0;
    for (Real v : s.u1) u1max = std::max(u1max, std::abs(v));
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            const int jm = g.wrap(n - 1 - j);
            CHECK(s.u1[g.idx(i, j)] / u1max ==
                  Catch::Approx(s.u1[g.idx(i, jm)] / u1max).margin(1e-6));
        }
}

TEST_CASE("micro solve: grid resolution precondition") {
    const MicroCell cell = build_micro_cell(5, 2.75e-2, kTow);
    SolverConfig config;
    CHECK_THROWS_AS(solve_stokes_micro(cell, Grid(32), config, BcMode::periodic_benchmark),
                    solver_error);
}

TEST_CASE("fully periodic forced cell without drag is rejected") {
    MicroCell empty;
    empty.tow_box = kTow;
    SolverConfig config;
    CHECK_THROWS_AS(solve_stokes_micro(empty, Grid(32), config, BcMode::periodic_benchmark),
                    solver_error);
}

TEST_CASE("permeability_stop early exit triggers") {
    const int n = 96;
    const MicroCell cell = build_micro_cell(3, 0.05, kTow);
    SolverConfig config = fast_config();
    config.use_permeability_stop = true;
    config.permeability_stop = 0.05;
    SolveReport report;
    auto monitor = [&](const FlowState& s) { return window_k11(s, cell, config, 0.0); };
    solve_stokes_micro(cell, Grid(n), config, BcMode::periodic_benchmark, &report, monitor);
    CHECK((report.stop_reason == "permeability_stop" || report.stop_reason == "residual"));
    CHECK(report.k11_last != 0.0);
}

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>

#include "permbridge/geometry.hpp"

using namespace permbridge;

namespace {
const Box kTow{{0.28, 0.28}, {0.72, 0.72}};

/// Monte-Carlo disc/box overlap oracle, independent of the quadrature path.
Real mc_overlap(const Vec2& c, Real r, const Box& box, int samples, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    long long hits = 0;
    for (int s = 0; s < samples; ++s) {
        const Vec2 p{rng.uniform(box.lo.x, box.hi.x), rng.uniform(box.lo.y, box.hi.y)};
        if ((p - c).norm() <= r) ++hits;
    }
    return box.area() * static_cast<Real>(hits) / samples;
}
}  // namespace

TEST_CASE("build_micro_cell: benchmark lattices") {
    const MicroCell c25 = build_micro_cell(5, 2.75e-2, kTow);
    REQUIRE(c25.fibers.size() == 25);
    CHECK(c25.fibers[0].center.x == Catch::Approx(0.28 + 0.5 * 0.088).epsilon(1e-14));
    CHECK((c25.fibers[1].center.x - c25.fibers[0].center.x) == Catch::Approx(0.088).epsilon(1e-13));

    const MicroCell c36 = build_micro_cell(6, 2.5e-2, kTow);
    REQUIRE(c36.fibers.size() == 36);
    CHECK((c36.fibers[1].center.x - c36.fibers[0].center.x) ==
          Catch::Approx(0.44 / 6.0).epsilon(1e-13));

    const MicroCell c1 = build_micro_cell(1, 0.1, kTow);
    REQUIRE(c1.fibers.size() == 1);
    CHECK(c1.fibers[0].center.x == Catch::Approx(0.5));
    CHECK(c1.fibers[0].center.y == Catch::Approx(0.5));
}

TEST_CASE("build_micro_cell: infeasible geometries rejected") {
    CHECK_THROWS_AS(build_micro_cell(5, 0.05, kTow), geometry_error);  // pitch 0.088 < 0.1
    CHECK_THROWS_AS(build_micro_cell(0, 0.01, kTow), geometry_error);
    CHECK_THROWS_AS(build_micro_cell(1, -0.1, kTow), geometry_error);
}

TEST_CASE("build_micro_cell: dihedral symmetry about the cell center") {
    const MicroCell cell = build_micro_cell(5, 2.75e-2, kTow);
    auto has_fiber_at = [&](Vec2 p) {
        for (const auto& f : cell.fibers)
            if ((f.center - p).norm() < 1e-12) return true;
        return false;
    };
    for (const auto& f : cell.fibers) {
        const Real dx = f.center.x - 0.5, dy = f.center.y - 0.5;
        CHECK(has_fiber_at({0.5 - dx, 0.5 + dy}));  // mirror x
        CHECK(has_fiber_at({0.5 + dx, 0.5 - dy}));  // mirror y
        CHECK(has_fiber_at({0.5 - dy, 0.5 + dx}));  // rotation
    }
}

TEST_CASE("signed_distance basics") {
    const MicroCell cell = build_micro_cell(5, 2.75e-2, kTow);
    const auto& f = cell.fibers[12];  // center fiber
    CHECK(signed_distance(cell, f.center) == Catch::Approx(-f.radius).epsilon(1e-13));
    CHECK(signed_distance(cell, {0.0, 0.0}) > 0.0);
    const Vec2 on_circle{f.center.x + f.radius, f.center.y};
    CHECK(std::abs(signed_distance(cell, on_circle)) <= 1e-12);
}

TEST_CASE("signed_distance periodicity closure") {
    const MicroCell cell = build_micro_cell(6, 2.5e-2, kTow);
    Rng rng = make_rng(7);
    for (int k = 0; k < 200; ++k) {
        const Vec2 x{rng.uniform(), rng.uniform()};
        const Real d0 = signed_distance(cell, x);
        const Real dx = signed_distance(cell, {std::fmod(x.x + 1.0, 1.0), x.y});
        const Real dy = signed_distance(cell, {x.x, std::fmod(x.y + 1.0, 1.0)});
        CHECK(std::abs(d0 - dx) <= 1e-12);
        CHECK(std::abs(d0 - dy) <= 1e-12);
    }
}

TEST_CASE("tow_fvc closed forms") {
    const Real f25 = tow_fvc(build_micro_cell(5, 2.75e-2, kTow));
    CHECK(f25 == Catch::Approx(25.0 * kPi * 2.75e-2 * 2.75e-2 / (0.44 * 0.44)).epsilon(1e-14));
    CHECK(f25 == Catch::Approx(0.3068).epsilon(2e-4));

    const Real f36 = tow_fvc(build_micro_cell(6, 2.5e-2, kTow));
    CHECK(f36 == Catch::Approx(0.3651).epsilon(2e-4));

    MicroCell empty;
    empty.tow_box = kTow;
    CHECK(tow_fvc(empty) == 0.0);
}

TEST_CASE("disc_box_overlap against Monte-Carlo oracle") {
    const Vec2 c{0.5, 0.5};
    const Box seg{{0.28, 0.28}, {0.5, 0.5}};  // quarter segment touching the center
    const Real analytic = disc_box_overlap(c, 0.1, seg);
    const Real mc = mc_overlap(c, 0.1, seg, 1000000, 42);
    CHECK(analytic == Catch::Approx(kPi * 0.01 / 4.0).epsilon(1e-9));
    CHECK(analytic == Catch::Approx(mc).epsilon(1e-2));
}

TEST_CASE("decompose_segments: 1x1 reduces to tow_fvc") {
    const MicroCell cell = build_micro_cell(5, 2.75e-2, kTow);
    const MesoCell meso = make_benchmark_meso(1e-4);
    const SegmentGrid seg = decompose_segments(meso, cell, 1, 1);
    REQUIRE(seg.count() == 1);
    CHECK(seg.fvc[0] == Catch::Approx(tow_fvc(cell)).epsilon(1e-10));
    CHECK(seg.orientation[0] == 0.0);
    CHECK(seg.fiber_radius[0] == Catch::Approx(2.75e-2));
}

TEST_CASE("decompose_segments: 5x5 lattice symmetry gives equal fvc") {
    const MicroCell cell = build_micro_cell(5, 2.75e-2, kTow);
    const MesoCell meso = make_benchmark_meso(1e-4);
    const SegmentGrid seg = decompose_segments(meso, cell, 5, 5);
    for (int s = 1; s < seg.count(); ++s)
        CHECK(seg.fvc[s] == Catch::Approx(seg.fvc[0]).epsilon(1e-9));
}

TEST_CASE("decompose_segments: 2x2 quarters of a centered fiber") {
    const MicroCell cell = build_micro_cell(1, 0.1, kTow);
    const MesoCell meso = make_benchmark_meso(1e-4);
    const SegmentGrid seg = decompose_segments(meso, cell, 2, 2);
    REQUIRE(seg.count() == 4);
    for (int s = 1; s < 4; ++s) CHECK(seg.fvc[s] == Catch::Approx(seg.fvc[0]).epsilon(1e-9));
    // Monte-Carlo oracle per quadrant
    const Real mc = mc_overlap({0.5, 0.5}, 0.1, seg.segment_box(0), 1000000, 3);
    CHECK(seg.fvc[0] == Catch::Approx(mc / seg.segment_box(0).area()).epsilon(1.5e-2));
    // sum consistency: sum fvc_s * area_s = total fiber area
    Real total = 0.0;
    for (int s = 0; s < 4; ++s) total += seg.fvc[s] * seg.segment_box(s).area();
    CHECK(total == Catch::Approx(kPi * 0.01).epsilon(1e-6));
}

TEST_CASE("decompose_segments: segment cap") {
    const MicroCell cell = build_micro_cell(1, 0.1, kTow);
    const MesoCell meso = make_benchmark_meso(1e-4);
    CHECK_THROWS_AS(decompose_segments(meso, cell, 16, 16), geometry_error);
}

TEST_CASE("segment area-weighted fvc matches total fiber area (25f)") {
    const MicroCell cell = build_micro_cell(5, 2.75e-2, kTow);
    const MesoCell meso = make_benchmark_meso(1e-4);
    for (int nx : {3, 5, 7}) {
        const SegmentGrid seg = decompose_segments(meso, cell, nx, nx);
        Real total = 0.0;
        for (int s = 0; s < seg.count(); ++s) total += seg.fvc[s] * seg.segment_box(s).area();
        CHECK(total == Catch::Approx(25.0 * kPi * 2.75e-2 * 2.75e-2).epsilon(1e-6));
    }
}

TEST_CASE("sample_collocation: benchmark counts and invariants") {
    const MicroCell cell = build_micro_cell(5, 2.75e-2, kTow);
    CollocationCounts counts;
    counts.interior_split = 1500;  // scaled-down proportions; full counts in acceptance
    counts.interior_complement = 4500;
    counts.per_edge = 200;
    counts.per_fiber = 200;
    const Box split{{0.22, 0.22}, {0.78, 0.78}};
    const PointSets ps = sample_collocation(cell, counts, split, 11);

    CHECK(ps.interior.size() == 6000);
    CHECK(ps.n_residual() == 6000 + 800);
    CHECK(ps.fiber_boundary.size() == 5000);

    int in_split = 0;
    for (const auto& p : ps.interior) {
        CHECK(signed_distance(cell, p) > 0.0);
        if (split.contains(p)) ++in_split;
    }
    CHECK(in_split == 1500);
    for (const auto& p : ps.fiber_boundary) CHECK(std::abs(signed_distance(cell, p)) <= 1e-12);
    for (const auto& p : ps.edge_in) CHECK(p.x == 0.0);
    for (const auto& p : ps.edge_up) CHECK(p.y == 1.0);
}

TEST_CASE("sample_collocation: deterministic in the seed") {
    const MicroCell cell = build_micro_cell(6, 2.5e-2, kTow);
    CollocationCounts counts;
    counts.interior_split = 300;
    counts.interior_complement = 700;
    const Box split{{0.22, 0.22}, {0.78, 0.78}};
    const PointSets a = sample_collocation(cell, counts, split, 99);
    const PointSets b = sample_collocation(cell, counts, split, 99);
    REQUIRE(a.interior.size() == b.interior.size());
    for (std::size_t i = 0; i < a.interior.size(); ++i) {
        CHECK(a.interior[i].x == b.interior[i].x);
        CHECK(a.interior[i].y == b.interior[i].y);
    }
    CHECK(sample_collocation(cell, counts, split, 100).interior[0].x != a.interior[0].x);
}

TEST_CASE("36-fiber boundary point count") {
    const MicroCell cell = build_micro_cell(6, 2.5e-2, kTow);
    CollocationCounts counts;
    counts.interior_split = 10;
    counts.interior_complement = 10;
    counts.per_fiber = 200;
    const PointSets ps = sample_collocation(cell, counts, {{0.22, 0.22}, {0.78, 0.78}}, 1);
    CHECK(ps.fiber_boundary.size() == 7200);
}

TEST_CASE("build_coupling_sets filtering") {
    const MesoCell meso = make_benchmark_meso(1e-4);
    const Box buffer{{0.22, 0.22}, {0.78, 0.78}};
    const std::vector<Vec2> pts = {{0.5, 0.5}, {0.1, 0.008}, {0.1, 0.5}, {0.9, 0.992}, {0.05, 0.1}};
    auto [vel, pre] = build_coupling_sets(meso, pts, buffer, 0.015);
    REQUIRE(vel.size() == 2);
    CHECK(vel[0].x == Catch::Approx(0.1));
    CHECK(vel[0].y == Catch::Approx(0.5));
    CHECK(vel[1].x == Catch::Approx(0.05));
    CHECK(pre.size() == vel.size());

    CHECK_THROWS_AS(build_coupling_sets(meso, {{0.5, 0.5}}, buffer, 0.015), geometry_error);
}

TEST_CASE("geometry serialization round-trips exactly") {
    MicroCell cell = build_micro_cell(5, 2.75e-2, kTow);
    cell.seed = 1234567;
    const std::string path = "geometry_roundtrip_test.json";
    save_micro_cell(cell, path);
    const MicroCell back = load_micro_cell(path);
    REQUIRE(back.fibers.size() == cell.fibers.size());
    for (std::size_t i = 0; i < cell.fibers.size(); ++i) {
        CHECK(back.fibers[i].center.x == cell.fibers[i].center.x);
        CHECK(back.fibers[i].center.y == cell.fibers[i].center.y);
        CHECK(back.fibers[i].radius == cell.fibers[i].radius);
    }
    CHECK(back.seed == cell.seed);
    CHECK(back.tow_box.lo.x == cell.tow_box.lo.x);
    std::remove(path.c_str());
}

TEST_CASE("overlapping fibers rejected by validate") {
    MicroCell cell;
    cell.tow_box = kTow;
    cell.fibers = {{{0.4, 0.4}, 0.05}, {{0.45, 0.4}, 0.05}};
    CHECK_THROWS_AS(cell.validate(), geometry_error);
    // periodic image overlap: fiber near x=0.29 inside tow vs image of one near 0.71
    MicroCell wide;
    wide.tow_box = {{0.02, 0.28}, {0.98, 0.72}};
    wide.fibers = {{{0.05, 0.5}, 0.06}, {{0.97, 0.5}, 0.06}};
    CHECK_THROWS_AS(wide.validate(), geometry_error);
}

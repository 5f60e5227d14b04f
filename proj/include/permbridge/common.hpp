#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace permbridge {

using Real = double;

constexpr Real kPi = 3.14159265358979323846;

/// 2D point / vector.
struct Vec2 {
    Real x = 0.0;
    Real y = 0.0;

    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(Real s) const { return {x * s, y * s}; }
    Real dot(const Vec2& o) const { return x * o.x + y * o.y; }
    Real norm() const { return std::sqrt(x * x + y * y); }
};

/// Axis-aligned box [lo.x, hi.x] x [lo.y, hi.y].
struct Box {
    Vec2 lo;
    Vec2 hi;

    Real width() const { return hi.x - lo.x; }
    Real height() const { return hi.y - lo.y; }
    Real area() const { return width() * height(); }
    bool contains(const Vec2& p) const {
        return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y;
    }
    bool contains_strict(const Vec2& p) const {
        return p.x > lo.x && p.x < hi.x && p.y > lo.y && p.y < hi.y;
    }
    Box inset(Real m) const { return {{lo.x + m, lo.y + m}, {hi.x - m, hi.y - m}}; }
};

inline Box unit_box() { return {{0.0, 0.0}, {1.0, 1.0}}; }

/// 2x2 matrix, row-major. Used for permeability tensors and Darcy algebra.
struct Mat2 {
    Real a11 = 0.0, a12 = 0.0, a21 = 0.0, a22 = 0.0;

    static Mat2 identity() { return {1.0, 0.0, 0.0, 1.0}; }
    static Mat2 iso(Real k) { return {k, 0.0, 0.0, k}; }
    static Mat2 diag(Real a, Real b) { return {a, 0.0, 0.0, b}; }

    Real det() const { return a11 * a22 - a12 * a21; }
    Real trace() const { return a11 + a22; }

    Mat2 operator*(const Mat2& o) const {
        return {a11 * o.a11 + a12 * o.a21, a11 * o.a12 + a12 * o.a22,
                a21 * o.a11 + a22 * o.a21, a21 * o.a12 + a22 * o.a22};
    }
    Mat2 operator*(Real s) const { return {a11 * s, a12 * s, a21 * s, a22 * s}; }

    Mat2 inverse() const {
        const Real d = det();
        if (d == 0.0) throw std::domain_error("Mat2::inverse: singular matrix");
        const Real inv = 1.0 / d;
        return {a22 * inv, -a12 * inv, -a21 * inv, a11 * inv};
    }
    Mat2 transpose() const { return {a11, a21, a12, a22}; }

    bool symmetric(Real tol = 1e-12) const { return std::abs(a12 - a21) <= tol; }
    bool spd(Real tol = 0.0) const {
        return symmetric(1e-9 * (std::abs(a12) + std::abs(a21) + 1.0)) &&
               a11 > tol && det() > tol;
    }
    /// Largest |entry|, for conditioning checks.
    Real max_abs() const {
        return std::max(std::max(std::abs(a11), std::abs(a12)),
                        std::max(std::abs(a21), std::abs(a22)));
    }
};

/// Deterministic RNG. mt19937_64 has a portable bit stream, but the standard
/// distributions do not, so uniform/normal draws are built directly from the
/// raw 64-bit output.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : s_(splitmix(seed)) {}

    std::uint64_t next_u64() {
        // xoshiro256++ core
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform in [0, 1).
    Real uniform() { return static_cast<Real>(next_u64() >> 11) * 0x1.0p-53; }

    Real uniform(Real a, Real b) { return a + (b - a) * uniform(); }

    /// Standard normal via the polar method (deterministic, no cached state
    /// surprises: both values of a pair are consumed).
    Real normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        Real u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const Real m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        have_spare_ = true;
        return u * m;
    }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }
    static std::array<std::uint64_t, 4> splitmix(std::uint64_t seed) {
        std::array<std::uint64_t, 4> s;
        std::uint64_t z = seed;
        for (auto& v : s) {
            z += 0x9e3779b97f4a7c15ULL;
            std::uint64_t w = z;
            w = (w ^ (w >> 30)) * 0xbf58476d1ce4e5b9ULL;
            w = (w ^ (w >> 27)) * 0x94d049bb133111ebULL;
            v = w ^ (w >> 31);
        }
        return s;
    }

    std::array<std::uint64_t, 4> s_;
    bool have_spare_ = false;
    Real spare_ = 0.0;
};

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

/// FNV-1a, used for config/dataset fingerprints in manifests.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a(s.data(), s.size(), h);
}

/// Global thread budget for the parallel loops below. 0 = library default.
inline int& thread_count() {
    static int n = 0;
    return n;
}

inline int effective_threads() {
#ifdef _OPENMP
    return thread_count() > 0 ? thread_count() : omp_get_max_threads();
#else
    return 1;
#endif
}

/// Parallel loop over [0, n) in fixed-size blocks. Each block is processed
/// sequentially by one thread; block boundaries do not depend on the thread
/// count, so block-local accumulations combined in block order reproduce
/// bit-identically for any number of threads.
template <typename Fn>
void parallel_blocks(std::size_t n, std::size_t block, Fn&& fn) {
    const std::size_t nblocks = (n + block - 1) / block;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(effective_threads())
#endif
    for (long long b = 0; b < static_cast<long long>(nblocks); ++b) {
        const std::size_t lo = static_cast<std::size_t>(b) * block;
        const std::size_t hi = std::min(lo + block, n);
        fn(static_cast<std::size_t>(b), lo, hi);
    }
}

/// Sum f(i) over [0, n) with a thread-count-independent reduction order.
template <typename Fn>
Real deterministic_sum(std::size_t n, Fn&& f, std::size_t block = 1024) {
    const std::size_t nblocks = (n + block - 1) / block;
    std::vector<Real> partial(nblocks, 0.0);
    parallel_blocks(n, block, [&](std::size_t b, std::size_t lo, std::size_t hi) {
        Real s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += f(i);
        partial[b] = s;
    });
    Real total = 0.0;
    for (Real s : partial) total += s;
    return total;
}

}  // namespace permbridge

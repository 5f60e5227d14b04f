#pragma once

#include <fftw3.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "permbridge/common.hpp"
#include "permbridge/grid.hpp"

namespace permbridge {

/// Direct solver for the discrete 5-point Poisson problem L*phi = rhs on the
/// cell-centered grid, either fully periodic or periodic in x with Neumann
/// walls in y (staggered mirror condition). The zero mode is gauged to zero,
/// so the returned phi has zero mean and the rhs must be mean-free.
class PoissonFFT {
public:
    enum class Mode { PeriodicXY, PeriodicXWallsY };

    PoissonFFT(int n, Mode mode) : n_(n), mode_(mode), h_(Real(1) / n) {
        buf_in_ = fftw_alloc_real(static_cast<std::size_t>(n) * n);
        if (mode_ == Mode::PeriodicXY) {
            spec_ = fftw_alloc_complex(static_cast<std::size_t>(n) * (n / 2 + 1));
            fwd_ = fftw_plan_dft_r2c_2d(n, n, buf_in_, spec_, FFTW_ESTIMATE);
            bwd_ = fftw_plan_dft_c2r_2d(n, n, spec_, buf_in_, FFTW_ESTIMATE);
        } else {
            buf_out_ = fftw_alloc_real(static_cast<std::size_t>(n) * n);
            // dim0 = y (DCT-II for staggered Neumann), dim1 = x (halfcomplex DFT)
            fwd_r2r_ = fftw_plan_r2r_2d(n, n, buf_in_, buf_out_, FFTW_REDFT10, FFTW_R2HC,
                                        FFTW_ESTIMATE);
            bwd_r2r_ = fftw_plan_r2r_2d(n, n, buf_out_, buf_in_, FFTW_REDFT01, FFTW_HC2R,
                                        FFTW_ESTIMATE);
        }
        // eigenvalues of the 1D second-difference operators
        eig_x_.resize(n);
        for (int m = 0; m < n; ++m) {
            const int k = (m <= n / 2) ? m : n - m;  // halfcomplex / DFT frequency
            eig_x_[m] = (2.0 * std::cos(2.0 * kPi * k / n) - 2.0) / (h_ * h_);
        }
        eig_y_.resize(n);
        for (int l = 0; l < n; ++l) {
            if (mode_ == Mode::PeriodicXY)
                eig_y_[l] = (2.0 * std::cos(2.0 * kPi * ((l <= n / 2) ? l : n - l) / n) - 2.0) /
                            (h_ * h_);
            else
                eig_y_[l] = (2.0 * std::cos(kPi * l / n) - 2.0) / (h_ * h_);
        }
    }

    ~PoissonFFT() {
        if (fwd_) fftw_destroy_plan(fwd_);
        if (bwd_) fftw_destroy_plan(bwd_);
        if (fwd_r2r_) fftw_destroy_plan(fwd_r2r_);
        if (bwd_r2r_) fftw_destroy_plan(bwd_r2r_);
        fftw_free(buf_in_);
        if (buf_out_) fftw_free(buf_out_);
        if (spec_) fftw_free(spec_);
    }

    PoissonFFT(const PoissonFFT&) = delete;
    PoissonFFT& operator=(const PoissonFFT&) = delete;

    /// Solves L*phi = rhs; overwrites and returns phi (mean-zero gauge).
    void solve(const Field& rhs, Field& phi) {
        const std::size_t nn = static_cast<std::size_t>(n_) * n_;
        if (rhs.size() != nn) throw std::invalid_argument("PoissonFFT: size mismatch");
        for (std::size_t k = 0; k < nn; ++k) buf_in_[k] = rhs[k];
        if (mode_ == Mode::PeriodicXY) {
            fftw_execute(fwd_);
            const int nxh = n_ / 2 + 1;
            for (int l = 0; l < n_; ++l) {
                for (int m = 0; m < nxh; ++m) {
                    const Real lam = eig_y_[l] + eig_x_[m];
                    fftw_complex& c = spec_[static_cast<std::size_t>(l) * nxh + m];
                    if (l == 0 && m == 0) {
                        c[0] = c[1] = 0.0;
                    } else {
                        c[0] /= lam;
                        c[1] /= lam;
                    }
                }
            }
            fftw_execute(bwd_);
            const Real scale = 1.0 / (static_cast<Real>(n_) * n_);
            phi.resize(nn);
            for (std::size_t k = 0; k < nn; ++k) phi[k] = buf_in_[k] * scale;
        } else {
            fftw_execute(fwd_r2r_);
            for (int l = 0; l < n_; ++l) {
                for (int m = 0; m < n_; ++m) {
                    const Real lam = eig_y_[l] + eig_x_[m];
                    Real& c = buf_out_[static_cast<std::size_t>(l) * n_ + m];
                    c = (l == 0 && m == 0) ? 0.0 : c / lam;
                }
            }
            fftw_execute(bwd_r2r_);
            const Real scale = 1.0 / (2.0 * static_cast<Real>(n_) * n_);
            phi.resize(nn);
            for (std::size_t k = 0; k < nn; ++k) phi[k] = buf_in_[k] * scale;
        }
    }

    /// Reference 5-point Laplacian with the solver's boundary treatment.
    void apply_laplacian(const Field& phi, Field& out) const {
        Grid g(n_);
        out.assign(phi.size(), 0.0);
        const Real ih2 = 1.0 / (h_ * h_);
        for (int j = 0; j < n_; ++j) {
            for (int i = 0; i < n_; ++i) {
                const Real c = phi[g.idx(i, j)];
                const Real xm = phi[g.idx(i - 1, j)], xp = phi[g.idx(i + 1, j)];
                Real ym, yp;
                if (mode_ == Mode::PeriodicXY) {
                    ym = phi[g.idx(i, j - 1)];
                    yp = phi[g.idx(i, j + 1)];
                } else {
                    ym = (j == 0) ? c : phi[g.idx(i, j - 1)];
                    yp = (j == n_ - 1) ? c : phi[g.idx(i, j + 1)];
                }
                out[g.idx(i, j)] = (xm + xp + ym + yp - 4.0 * c) * ih2;
            }
        }
    }

    int n() const { return n_; }
    Mode mode() const { return mode_; }

private:
    int n_;
    Mode mode_;
    Real h_;
    double* buf_in_ = nullptr;
    double* buf_out_ = nullptr;
    fftw_complex* spec_ = nullptr;
    fftw_plan fwd_ = nullptr, bwd_ = nullptr, fwd_r2r_ = nullptr, bwd_r2r_ = nullptr;
    std::vector<Real> eig_x_, eig_y_;
};

}  // namespace permbridge

#pragma once

// Real-to-complex 2D transforms on periodic grids, backed by FFTW.
//
// Convention: forward transform is unnormalized,
//     F[kx, ky] = sum_{x,y} f[x, y] exp(-2*pi*i*(kx*x/nx + ky*y/ny)),
// and the inverse carries 1/(nx*ny), so ifft2(fft2(f)) == f.
// Only the half spectrum ky = 0..ny/2 is stored; kx runs over the full
// axis in FFT order (0, 1, ..., nx/2, -nx/2+1, ..., -1).
//
// The inverse is defined for *any* half spectrum, Hermitian or not, as
//     f = Re( ifft2_full(S) ),
// where the missing columns ky > ny/2 are filled with conj(S[-kx, ny-ky]).
// Columns ky = 0 and ky = ny/2 are symmetrized explicitly before calling
// FFTW so this definition holds independent of the backend's handling of
// non-Hermitian input. It is what makes the adjoints below exact.

#include <fftw3.h>

#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <tuple>

#include "ssp/tensor.hpp"

namespace ssp {

template <class Real>
struct SpectralField {
    Array4<std::complex<Real>> data; // (B, C, nx, ny/2 + 1)
    int nx = 0;
    int ny = 0;

    int ny_half() const { return ny / 2 + 1; }
};

inline void check_grid_dims(int nx, int ny) {
    if (nx < 4 || ny < 4 || nx % 2 != 0 || ny % 2 != 0)
        throw ConfigError("grid dimensions must be even and >= 4, got " + std::to_string(nx) + "x" +
                          std::to_string(ny));
}

/// Signed frequency of FFT index i on an axis of length n (Nyquist maps to -n/2).
inline int signed_freq(int i, int n) { return i < n / 2 ? i : i - n; }

namespace detail {

template <class Real>
struct FftwApi;

template <>
struct FftwApi<double> {
    using plan = fftw_plan;
    using complex = fftw_complex;
    static plan r2c(int nx, int ny, double* in, complex* out) {
        return fftw_plan_dft_r2c_2d(nx, ny, in, out, FFTW_ESTIMATE | FFTW_UNALIGNED);
    }
    static plan c2r(int nx, int ny, complex* in, double* out) {
        return fftw_plan_dft_c2r_2d(nx, ny, in, out, FFTW_ESTIMATE | FFTW_UNALIGNED);
    }
    static void exec_r2c(plan p, double* in, complex* out) { fftw_execute_dft_r2c(p, in, out); }
    static void exec_c2r(plan p, complex* in, double* out) { fftw_execute_dft_c2r(p, in, out); }
    static void destroy(plan p) { fftw_destroy_plan(p); }
    static void* alloc(std::size_t bytes) { return fftw_malloc(bytes); }
    static void release(void* p) { fftw_free(p); }
};

template <>
struct FftwApi<float> {
    using plan = fftwf_plan;
    using complex = fftwf_complex;
    static plan r2c(int nx, int ny, float* in, complex* out) {
        return fftwf_plan_dft_r2c_2d(nx, ny, in, out, FFTW_ESTIMATE | FFTW_UNALIGNED);
    }
    static plan c2r(int nx, int ny, complex* in, float* out) {
        return fftwf_plan_dft_c2r_2d(nx, ny, in, out, FFTW_ESTIMATE | FFTW_UNALIGNED);
    }
    static void exec_r2c(plan p, float* in, complex* out) { fftwf_execute_dft_r2c(p, in, out); }
    static void exec_c2r(plan p, complex* in, float* out) { fftwf_execute_dft_c2r(p, in, out); }
    static void destroy(plan p) { fftwf_destroy_plan(p); }
    static void* alloc(std::size_t bytes) { return fftwf_malloc(bytes); }
    static void release(void* p) { fftwf_free(p); }
};

/// Process-wide plan cache. FFTW planning is not thread-safe, execution with
/// new-array functions is, so only lookups/creation take the lock.
template <class Real>
class PlanCache {
    using Api = FftwApi<Real>;

public:
    static PlanCache& instance() {
        static PlanCache cache;
        return cache;
    }

    typename Api::plan get(int nx, int ny, bool forward) {
        std::lock_guard<std::mutex> lock(mutex_);
        const auto key = std::make_tuple(nx, ny, forward);
        if (auto it = plans_.find(key); it != plans_.end()) return it->second;
        const std::size_t nr = static_cast<std::size_t>(nx) * ny;
        const std::size_t nc = static_cast<std::size_t>(nx) * (ny / 2 + 1);
        auto* real = static_cast<Real*>(Api::alloc(sizeof(Real) * nr));
        auto* cpx = static_cast<typename Api::complex*>(Api::alloc(sizeof(typename Api::complex) * nc));
        auto p = forward ? Api::r2c(nx, ny, real, cpx) : Api::c2r(nx, ny, cpx, real);
        Api::release(real);
        Api::release(cpx);
        plans_.emplace(key, p);
        return p;
    }

    ~PlanCache() {
        for (auto& kv : plans_) Api::destroy(kv.second);
    }

private:
    PlanCache() = default;
    std::mutex mutex_;
    std::map<std::tuple<int, int, bool>, typename Api::plan> plans_;
};

} // namespace detail

/// Forward transform of every (sample, channel) plane.
template <class Real>
SpectralField<Real> fft2(const Array4<Real>& field) {
    using Api = detail::FftwApi<Real>;
    const int nx = field.h();
    const int ny = field.w();
    check_grid_dims(nx, ny);
    SpectralField<Real> out{Array4<std::complex<Real>>(field.n(), field.c(), nx, ny / 2 + 1), nx, ny};
    auto plan = detail::PlanCache<Real>::instance().get(nx, ny, true);
    for (int i = 0; i < field.n(); ++i)
        for (int ch = 0; ch < field.c(); ++ch) {
            // r2c does not modify its input.
            auto* in = const_cast<Real*>(field.plane(i, ch));
            auto* dst = reinterpret_cast<typename Api::complex*>(out.data.plane(i, ch));
            Api::exec_r2c(plan, in, dst);
        }
    return out;
}

/// Replace columns ky = 0 and ky = ny/2 by their Hermitian parts along kx.
template <class Real>
void symmetrize_edge_columns(std::complex<Real>* plane, int nx, int ny) {
    const int nyh = ny / 2 + 1;
    for (int col : {0, ny / 2}) {
        for (int kx = 0; kx <= nx / 2; ++kx) {
            const int mx = (nx - kx) % nx;
            auto& a = plane[static_cast<std::size_t>(kx) * nyh + col];
            auto& b = plane[static_cast<std::size_t>(mx) * nyh + col];
            const std::complex<Real> s = Real(0.5) * (a + std::conj(b));
            a = s;
            b = std::conj(s);
        }
    }
}

/// Inverse transform, including the 1/(nx*ny) factor.
template <class Real>
Array4<Real> ifft2(const SpectralField<Real>& spec) {
    using Api = detail::FftwApi<Real>;
    const int nx = spec.nx;
    const int ny = spec.ny;
    check_grid_dims(nx, ny);
    if (spec.data.h() != nx || spec.data.w() != ny / 2 + 1)
        throw ShapeError("ifft2: spectrum shape " + spec.data.shape().str() + " does not match resolution " +
                         std::to_string(nx) + "x" + std::to_string(ny));
    Array4<Real> out(spec.data.n(), spec.data.c(), nx, ny);
    auto plan = detail::PlanCache<Real>::instance().get(nx, ny, false);
    const std::size_t plane = static_cast<std::size_t>(nx) * (ny / 2 + 1);
    std::vector<std::complex<Real>> work(plane);
    const Real scale = Real(1) / static_cast<Real>(static_cast<std::size_t>(nx) * ny);
    for (int i = 0; i < spec.data.n(); ++i)
        for (int ch = 0; ch < spec.data.c(); ++ch) {
            std::copy_n(spec.data.plane(i, ch), plane, work.data());
            symmetrize_edge_columns(work.data(), nx, ny);
            Real* dst = out.plane(i, ch);
            Api::exec_c2r(plan, reinterpret_cast<typename Api::complex*>(work.data()), dst);
            for (int k = 0; k < nx * ny; ++k) dst[k] *= scale;
        }
    return out;
}

/// Multiplicity of half-spectrum column ky in the full spectrum (1 on the
/// edge columns, 2 on interior columns).
inline double column_weight(int ky, int ny) { return (ky == 0 || ky == ny / 2) ? 1.0 : 2.0; }

/// Adjoint of fft2 with respect to the real inner products on both sides.
/// `grad` holds dL/dRe + i dL/dIm per coefficient.
inline Tensor fft2_adjoint(const SpectralField<double>& grad) {
    SpectralField<double> g = grad;
    const int nyh = g.ny / 2 + 1;
    const double total = static_cast<double>(g.nx) * g.ny;
    for (int i = 0; i < g.data.n(); ++i)
        for (int ch = 0; ch < g.data.c(); ++ch) {
            cplx* p = g.data.plane(i, ch);
            for (int kx = 0; kx < g.nx; ++kx)
                for (int ky = 0; ky < nyh; ++ky) p[kx * nyh + ky] *= total / column_weight(ky, g.ny);
        }
    return ifft2(g);
}

/// Adjoint of ifft2: maps dL/df to dL/dRe S + i dL/dIm S.
inline SpectralField<double> ifft2_adjoint(const Tensor& grad) {
    SpectralField<double> s = fft2(grad);
    const int nyh = s.ny / 2 + 1;
    const double total = static_cast<double>(s.nx) * s.ny;
    for (int i = 0; i < s.data.n(); ++i)
        for (int ch = 0; ch < s.data.c(); ++ch) {
            cplx* p = s.data.plane(i, ch);
            for (int kx = 0; kx < s.nx; ++kx)
                for (int ky = 0; ky < nyh; ++ky) p[kx * nyh + ky] *= column_weight(ky, s.ny) / total;
        }
    return s;
}

} // namespace ssp

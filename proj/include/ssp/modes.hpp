#pragma once

#include <array>
#include <cmath>

#include "ssp/fft.hpp"

namespace ssp {

/// Retained low-frequency index set on a half spectrum of an (nx, ny) grid.
///
/// Along x (full axis) the ceil(mx/2) lowest nonnegative and floor(mx/2)
/// highest (negative-frequency) FFT indices are kept; along y (half axis) the
/// first my indices. Block row i maps to spectral row `row(i)`.
struct RetainedSet {
    int nx = 0;
    int ny = 0;
    int mx = 0;
    int my = 0;

    RetainedSet() = default;
    RetainedSet(int nx_, int ny_, int mx_, int my_) : nx(nx_), ny(ny_), mx(mx_), my(my_) {
        check_grid_dims(nx, ny);
        if (mx < 1 || mx > nx || my < 1 || my > ny / 2 + 1)
            throw ConfigError("retained modes (" + std::to_string(mx) + "," + std::to_string(my) +
                              ") out of range for grid " + std::to_string(nx) + "x" + std::to_string(ny));
    }

    int positive_rows() const { return (mx + 1) / 2; }
    int row(int i) const { return i < positive_rows() ? i : nx - mx + i; }
    int col(int j) const { return j; }
    int kx(int i) const { return signed_freq(row(i), nx); }
    int ky(int j) const { return j; }
    int count() const { return mx * my; }

    /// True when spectral index (row, col) lies inside the set.
    bool contains(int r, int c) const {
        if (c >= my) return false;
        return r < positive_rows() || r >= nx - mx / 2;
    }
    friend bool operator==(const RetainedSet&, const RetainedSet&) = default;
};

/// Complex coefficients restricted to a RetainedSet. data is (N, C, mx, my)
/// where N runs over frames (batch-major, time-minor when T > 1).
struct RetainedBlock {
    CTensor data;
    RetainedSet modes;
};

inline RetainedBlock truncate(const SpectralField<double>& spec, int mx, int my) {
    RetainedSet set(spec.nx, spec.ny, mx, my);
    RetainedBlock out{CTensor(spec.data.n(), spec.data.c(), mx, my), set};
    for (int i = 0; i < spec.data.n(); ++i)
        for (int ch = 0; ch < spec.data.c(); ++ch)
            for (int a = 0; a < mx; ++a)
                for (int b = 0; b < my; ++b) out.data(i, ch, a, b) = spec.data(i, ch, set.row(a), set.col(b));
    return out;
}

/// Write block values into their retained positions of `spec`, leaving all other
/// coefficients untouched.
inline void embed_into(const RetainedBlock& block, SpectralField<double>& spec) {
    const auto& s = block.modes;
    if (spec.nx != s.nx || spec.ny != s.ny)
        throw ShapeError("embed: block resolution does not match target spectrum");
    if (spec.data.n() != block.data.n() || spec.data.c() != block.data.c())
        throw ShapeError("embed: batch/channel mismatch");
    for (int i = 0; i < block.data.n(); ++i)
        for (int ch = 0; ch < block.data.c(); ++ch)
            for (int a = 0; a < s.mx; ++a)
                for (int b = 0; b < s.my; ++b) spec.data(i, ch, s.row(a), s.col(b)) = block.data(i, ch, a, b);
}

/// Zero spectrum of resolution (nx, ny) holding the block at its retained indices.
inline SpectralField<double> embed(const RetainedBlock& block, int nx, int ny) {
    check_grid_dims(nx, ny);
    if (block.data.h() != block.modes.mx || block.data.w() != block.modes.my)
        throw ShapeError("embed: block data does not match its retained set");
    if (block.modes.mx > nx || block.modes.my > ny / 2 + 1)
        throw ConfigError("embed: resolution " + std::to_string(nx) + "x" + std::to_string(ny) +
                          " smaller than retained set");
    RetainedSet target(nx, ny, block.modes.mx, block.modes.my);
    RetainedBlock b{block.data, target};
    SpectralField<double> spec{CTensor(block.data.n(), block.data.c(), nx, ny / 2 + 1), nx, ny};
    embed_into(b, spec);
    return spec;
}

/// Zero the retained positions of `spec` (the complement of embed_into).
inline void clear_retained(SpectralField<double>& spec, const RetainedSet& s) {
    for (int i = 0; i < spec.data.n(); ++i)
        for (int ch = 0; ch < spec.data.c(); ++ch)
            for (int a = 0; a < s.mx; ++a)
                for (int b = 0; b < s.my; ++b) spec.data(i, ch, s.row(a), s.col(b)) = cplx{};
}

/// Frequency features (kx, ky, |k|, cos theta, sin theta), theta = atan2(ky, kx).
/// At k = 0 the angle is taken as 0.
inline std::array<double, 5> freq_features(int kx, int ky) {
    const double x = kx;
    const double y = ky;
    const double r = std::hypot(x, y);
    if (kx == 0 && ky == 0) return {0.0, 0.0, 0.0, 1.0, 0.0};
    // cos(atan2(y, x)) = x / r, sin(atan2(y, x)) = y / r, without the round trip.
    return {x, y, r, x / r, y / r};
}

} // namespace ssp

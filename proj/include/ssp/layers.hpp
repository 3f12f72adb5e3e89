#pragma once

// Parameterized building blocks with hand-written adjoints.
//
// Every layer follows the same contract: `forward(ps, x)` is a pure function
// of the parameters and the input; `backward(ps, x, dy, g)` takes the same
// input plus dL/dy, accumulates parameter gradients into `g` and returns
// dL/dx. Layers that need intermediate values keep them in a cache struct
// filled by forward.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "ssp/params.hpp"
#include "ssp/tensor.hpp"

namespace ssp {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

inline double gelu_grad(double x) {
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Tensor gelu(const Tensor& x) {
    Tensor y(x.shape());
    for (std::size_t k = 0; k < x.size(); ++k) y[k] = gelu(x[k]);
    return y;
}

/// dy * gelu'(pre), elementwise.
inline Tensor gelu_backward(const Tensor& pre, const Tensor& dy) {
    Tensor dx(pre.shape());
    for (std::size_t k = 0; k < pre.size(); ++k) dx[k] = dy[k] * gelu_grad(pre[k]);
    return dx;
}

// ---------------------------------------------------------------------------
// Dense: y = W x + b on row vectors, x is (rows, in).

struct Dense {
    ParamId weight = -1; // (out, in)
    ParamId bias = -1;   // (out)
    int in = 0;
    int out = 0;

    Dense() = default;
    Dense(ParamSet& ps, const std::string& name, int in_, int out_) : in(in_), out(out_) {
        weight = ps.add(name + ".weight", {out, in});
        bias = ps.add(name + ".bias", {out});
    }

    void init(ParamSet& ps, Rng& rng, double gain = 1.0) const {
        ps.fill_normal(weight, rng, gain / std::sqrt(static_cast<double>(in)));
        for (auto& v : ps[bias]) v = 0.0;
    }

    RowMat forward(const ParamSet& ps, const RowMat& x) const {
        ConstMatMap w(ps[weight].data(), out, in);
        Eigen::Map<const Eigen::RowVectorXd> b(ps[bias].data(), out);
        RowMat y = x * w.transpose();
        y.rowwise() += b;
        return y;
    }

    RowMat backward(const ParamSet& ps, const RowMat& x, const RowMat& dy, Grads& g) const {
        ConstMatMap w(ps[weight].data(), out, in);
        MatMap gw(g[weight].data(), out, in);
        Eigen::Map<Eigen::RowVectorXd> gb(g[bias].data(), out);
        gw.noalias() += dy.transpose() * x;
        gb += dy.colwise().sum();
        return dy * w;
    }
};

// ---------------------------------------------------------------------------
// Conv2d with circular padding, odd square kernel, integer stride.

struct Conv2d {
    ParamId weight = -1; // (cout, cin, k, k)
    ParamId bias = -1;   // (cout), -1 when disabled
    int cin = 0;
    int cout = 0;
    int kernel = 3;
    int stride = 1;

    Conv2d() = default;
    Conv2d(ParamSet& ps, const std::string& name, int cin_, int cout_, int kernel_, int stride_ = 1,
           bool with_bias = true)
        : cin(cin_), cout(cout_), kernel(kernel_), stride(stride_) {
        if (kernel % 2 == 0) throw ConfigError("Conv2d " + name + ": kernel must be odd");
        if (stride < 1) throw ConfigError("Conv2d " + name + ": stride must be positive");
        weight = ps.add(name + ".weight", {cout, cin, kernel, kernel});
        if (with_bias) bias = ps.add(name + ".bias", {cout});
    }

    int fan_in() const { return cin * kernel * kernel; }

    void init(ParamSet& ps, Rng& rng, double gain = 1.0) const {
        ps.fill_normal(weight, rng, gain / std::sqrt(static_cast<double>(fan_in())));
        if (bias >= 0)
            for (auto& v : ps[bias]) v = 0.0;
    }

    void check_input(const Tensor& x) const {
        if (x.c() != cin)
            throw ShapeError("Conv2d: expected " + std::to_string(cin) + " input channels, got " +
                             std::to_string(x.c()));
        if (x.h() % stride != 0 || x.w() % stride != 0)
            throw ShapeError("Conv2d: stride does not divide input extent " + x.shape().str());
    }

    /// Column matrix (cin*k*k, ho*wo) for sample i.
    RowMat im2col(const Tensor& x, int i) const {
        const int ho = x.h() / stride;
        const int wo = x.w() / stride;
        const int p = kernel / 2;
        RowMat col(fan_in(), ho * wo);
        std::vector<int> ys(static_cast<std::size_t>(ho) * kernel), xs(static_cast<std::size_t>(wo) * kernel);
        for (int oy = 0; oy < ho; ++oy)
            for (int a = 0; a < kernel; ++a) ys[oy * kernel + a] = ((oy * stride + a - p) % x.h() + x.h()) % x.h();
        for (int ox = 0; ox < wo; ++ox)
            for (int b = 0; b < kernel; ++b) xs[ox * kernel + b] = ((ox * stride + b - p) % x.w() + x.w()) % x.w();
        for (int c = 0; c < cin; ++c) {
            const double* src = x.plane(i, c);
            for (int a = 0; a < kernel; ++a)
                for (int b = 0; b < kernel; ++b) {
                    double* dst = col.row((c * kernel + a) * kernel + b).data();
                    for (int oy = 0; oy < ho; ++oy) {
                        const double* srow = src + static_cast<std::size_t>(ys[oy * kernel + a]) * x.w();
                        for (int ox = 0; ox < wo; ++ox) dst[oy * wo + ox] = srow[xs[ox * kernel + b]];
                    }
                }
        }
        return col;
    }

    /// Scatter-add of a column-matrix gradient back onto sample i of dx.
    void col2im(const RowMat& dcol, Tensor& dx, int i) const {
        const int ho = dx.h() / stride;
        const int wo = dx.w() / stride;
        const int p = kernel / 2;
        for (int c = 0; c < cin; ++c) {
            double* dst = dx.plane(i, c);
            for (int a = 0; a < kernel; ++a)
                for (int b = 0; b < kernel; ++b) {
                    const double* src = dcol.row((c * kernel + a) * kernel + b).data();
                    for (int oy = 0; oy < ho; ++oy) {
                        const int y = ((oy * stride + a - p) % dx.h() + dx.h()) % dx.h();
                        for (int ox = 0; ox < wo; ++ox) {
                            const int xx = ((ox * stride + b - p) % dx.w() + dx.w()) % dx.w();
                            dst[static_cast<std::size_t>(y) * dx.w() + xx] += src[oy * wo + ox];
                        }
                    }
                }
        }
    }

    Tensor forward(const ParamSet& ps, const Tensor& x) const {
        check_input(x);
        const int ho = x.h() / stride;
        const int wo = x.w() / stride;
        Tensor y(x.n(), cout, ho, wo);
        ConstMatMap w(ps[weight].data(), cout, fan_in());
        for (int i = 0; i < x.n(); ++i) {
            MatMap yi(y.sample(i), cout, ho * wo);
            if (kernel == 1 && stride == 1) {
                ConstMatMap xi(x.sample(i), cin, ho * wo);
                yi.noalias() = w * xi;
            } else {
                yi.noalias() = w * im2col(x, i);
            }
            if (bias >= 0) yi.colwise() += Eigen::Map<const Eigen::VectorXd>(ps[bias].data(), cout);
        }
        return y;
    }

    Tensor backward(const ParamSet& ps, const Tensor& x, const Tensor& dy, Grads& g) const {
        const int ho = x.h() / stride;
        const int wo = x.w() / stride;
        Tensor dx(x.shape());
        ConstMatMap w(ps[weight].data(), cout, fan_in());
        MatMap gw(g[weight].data(), cout, fan_in());
        for (int i = 0; i < x.n(); ++i) {
            ConstMatMap dyi(dy.sample(i), cout, ho * wo);
            if (bias >= 0) Eigen::Map<Eigen::VectorXd>(g[bias].data(), cout) += dyi.rowwise().sum();
            if (kernel == 1 && stride == 1) {
                ConstMatMap xi(x.sample(i), cin, ho * wo);
                gw.noalias() += dyi * xi.transpose();
                MatMap dxi(dx.sample(i), cin, ho * wo);
                dxi.noalias() = w.transpose() * dyi;
            } else {
                const RowMat col = im2col(x, i);
                gw.noalias() += dyi * col.transpose();
                const RowMat dcol = w.transpose() * dyi;
                col2im(dcol, dx, i);
            }
        }
        return dx;
    }
};

// ---------------------------------------------------------------------------
// Transposed convolution with kernel == stride == r (non-overlapping upsample).

struct Upsample {
    ParamId weight = -1; // (cin, cout, r, r)
    ParamId bias = -1;   // (cout)
    int cin = 0;
    int cout = 0;
    int factor = 1;

    Upsample() = default;
    Upsample(ParamSet& ps, const std::string& name, int cin_, int cout_, int r) : cin(cin_), cout(cout_), factor(r) {
        weight = ps.add(name + ".weight", {cin, cout, r, r});
        bias = ps.add(name + ".bias", {cout});
    }

    void init(ParamSet& ps, Rng& rng) const {
        ps.fill_normal(weight, rng, 1.0 / std::sqrt(static_cast<double>(cin)));
        for (auto& v : ps[bias]) v = 0.0;
    }

    Tensor forward(const ParamSet& ps, const Tensor& x) const {
        if (x.c() != cin) throw ShapeError("Upsample: channel mismatch");
        const int r = factor;
        Tensor y(x.n(), cout, x.h() * r, x.w() * r);
        const auto w = ps[weight];
        const auto b = ps[bias];
        for (int i = 0; i < x.n(); ++i)
            for (int o = 0; o < cout; ++o)
                for (int yy = 0; yy < x.h() * r; ++yy)
                    for (int xx = 0; xx < x.w() * r; ++xx) {
                        const int sy = yy / r, a = yy % r, sx = xx / r, bb = xx % r;
                        double s = b[o];
                        for (int c = 0; c < cin; ++c)
                            s += w[((static_cast<std::size_t>(c) * cout + o) * r + a) * r + bb] * x(i, c, sy, sx);
                        y(i, o, yy, xx) = s;
                    }
        return y;
    }

    Tensor backward(const ParamSet& ps, const Tensor& x, const Tensor& dy, Grads& g) const {
        const int r = factor;
        Tensor dx(x.shape());
        const auto w = ps[weight];
        auto gw = g[weight];
        auto gb = g[bias];
        for (int i = 0; i < x.n(); ++i)
            for (int o = 0; o < cout; ++o)
                for (int yy = 0; yy < x.h() * r; ++yy)
                    for (int xx = 0; xx < x.w() * r; ++xx) {
                        const int sy = yy / r, a = yy % r, sx = xx / r, bb = xx % r;
                        const double d = dy(i, o, yy, xx);
                        gb[o] += d;
                        for (int c = 0; c < cin; ++c) {
                            const std::size_t k = ((static_cast<std::size_t>(c) * cout + o) * r + a) * r + bb;
                            gw[k] += d * x(i, c, sy, sx);
                            dx(i, c, sy, sx) += d * w[k];
                        }
                    }
        return dx;
    }
};

// ---------------------------------------------------------------------------
// Axis-wise spectral mixing along the last axis.
//
// For every line along the last axis (length n) the lowest `modes` Fourier
// coefficients a_k = sum_x f(x) exp(-2 pi i k x / n) are mixed across
// channels by a complex matrix W_k (C x C), and the line is resynthesized
// from those modes only:
//     g(x) = (1/n) Re sum_k w_k b_k exp(2 pi i k x / n),  b_k = W_k a_k,
// with w_k = 1 at k = 0 and k = n/2, 2 otherwise (the real inverse transform
// of a half spectrum that is zero beyond `modes`).

class AxisMixer {
public:
    ParamId weight = -1; // (modes, C, C, 2) interleaved complex
    int channels = 0;
    int length = 0;
    int modes = 0;

    AxisMixer() = default;
    AxisMixer(ParamSet& ps, const std::string& name, int channels_, int length_, int modes_)
        : channels(channels_), length(length_), modes(modes_) {
        if (modes < 1 || modes > length / 2 + 1) throw ConfigError("AxisMixer " + name + ": modes out of range");
        weight = ps.add(name + ".weight", {modes, channels, channels, 2});
        build_tables();
    }

    void init(ParamSet& ps, Rng& rng) const {
        // Small complex weights: the mixer starts as a mild perturbation.
        ps.fill_normal(weight, rng, 0.5 / channels);
    }

    Tensor forward(const ParamSet& ps, const Tensor& x) const {
        check(x);
        const int lines = x.n() * x.c() * x.h();
        ConstMatMap X(x.data(), lines, length);
        const RowMat ar = X * cos_;
        const RowMat ai = -(X * sin_);
        RowMat br(lines, modes), bi(lines, modes);
        const int cols = x.n() * x.h();
        RowMat a_r(channels, cols), a_i(channels, cols);
        for (int k = 0; k < modes; ++k) {
            gather(ar, k, x, a_r);
            gather(ai, k, x, a_i);
            const auto [wr, wi] = weights(ps, k);
            const RowMat b_r = wr * a_r - wi * a_i;
            const RowMat b_i = wr * a_i + wi * a_r;
            scatter(b_r, k, x, br);
            scatter(b_i, k, x, bi);
        }
        Tensor y(x.shape());
        MatMap Y(y.data(), lines, length);
        Y.noalias() = br * icos_ - bi * isin_;
        return y;
    }

    Tensor backward(const ParamSet& ps, const Tensor& x, const Tensor& dy, Grads& g) const {
        check(x);
        const int lines = x.n() * x.c() * x.h();
        ConstMatMap X(x.data(), lines, length);
        ConstMatMap dY(dy.data(), lines, length);
        const RowMat ar = X * cos_;
        const RowMat ai = -(X * sin_);
        const RowMat dbr = dY * icos_.transpose();
        const RowMat dbi = -(dY * isin_.transpose());
        RowMat dar(lines, modes), dai(lines, modes);
        const int cols = x.n() * x.h();
        RowMat a_r(channels, cols), a_i(channels, cols), db_r(channels, cols), db_i(channels, cols);
        auto gwall = g[weight];
        const std::size_t cc = static_cast<std::size_t>(channels) * channels;
        for (int k = 0; k < modes; ++k) {
            gather(ar, k, x, a_r);
            gather(ai, k, x, a_i);
            gather(dbr, k, x, db_r);
            gather(dbi, k, x, db_i);
            const auto [wr, wi] = weights(ps, k);
            // dW = dB a^H
            const RowMat gwr = db_r * a_r.transpose() + db_i * a_i.transpose();
            const RowMat gwi = db_i * a_r.transpose() - db_r * a_i.transpose();
            double* gk = gwall.data() + 2 * cc * k;
            for (std::size_t e = 0; e < cc; ++e) {
                gk[2 * e] += gwr.data()[e];
                gk[2 * e + 1] += gwi.data()[e];
            }
            // da = W^H dB
            const RowMat da_r = wr.transpose() * db_r + wi.transpose() * db_i;
            const RowMat da_i = wr.transpose() * db_i - wi.transpose() * db_r;
            scatter(da_r, k, x, dar);
            scatter(da_i, k, x, dai);
        }
        Tensor dx(x.shape());
        MatMap dX(dx.data(), lines, length);
        dX.noalias() = dar * cos_.transpose() - dai * sin_.transpose();
        return dx;
    }

private:
    RowMat cos_, sin_;   // (length, modes): analysis
    RowMat icos_, isin_; // (modes, length): weighted synthesis including 1/n

    void build_tables() {
        cos_.resize(length, modes);
        sin_.resize(length, modes);
        icos_.resize(modes, length);
        isin_.resize(modes, length);
        for (int x = 0; x < length; ++x)
            for (int k = 0; k < modes; ++k) {
                // Reduce k*x mod n first so the angle is exact for large products.
                const double th = 2.0 * std::numbers::pi * static_cast<double>((k * x) % length) / length;
                const double wk = (k == 0 || 2 * k == length) ? 1.0 : 2.0;
                cos_(x, k) = std::cos(th);
                sin_(x, k) = std::sin(th);
                icos_(k, x) = wk * std::cos(th) / length;
                isin_(k, x) = wk * std::sin(th) / length;
            }
    }

    void check(const Tensor& x) const {
        if (x.c() != channels || x.w() != length)
            throw ShapeError("AxisMixer: expected (*, " + std::to_string(channels) + ", *, " + std::to_string(length) +
                             "), got " + x.shape().str());
    }

    std::pair<RowMat, RowMat> weights(const ParamSet& ps, int k) const {
        const auto w = ps[weight];
        const std::size_t cc = static_cast<std::size_t>(channels) * channels;
        RowMat wr(channels, channels), wi(channels, channels);
        for (std::size_t e = 0; e < cc; ++e) {
            wr.data()[e] = w[2 * (cc * k + e)];
            wi.data()[e] = w[2 * (cc * k + e) + 1];
        }
        return {wr, wi};
    }

    // Column k of a (lines, modes) matrix arranged as (channels, n*h).
    static void gather(const RowMat& m, int k, const Tensor& x, RowMat& out) {
        for (int i = 0; i < x.n(); ++i)
            for (int c = 0; c < x.c(); ++c)
                for (int y = 0; y < x.h(); ++y) out(c, i * x.h() + y) = m((i * x.c() + c) * x.h() + y, k);
    }
    static void scatter(const RowMat& in, int k, const Tensor& x, RowMat& m) {
        for (int i = 0; i < x.n(); ++i)
            for (int c = 0; c < x.c(); ++c)
                for (int y = 0; y < x.h(); ++y) m((i * x.c() + c) * x.h() + y, k) = in(c, i * x.h() + y);
    }
};

// ---------------------------------------------------------------------------
// Factorized spectral block: y = x + gelu(Mx(x) + My(x)), where My mixes along
// the last axis and Mx along the middle axis (via transposition).

struct SpectralBlockCache {
    Tensor pre; // Mx(x) + My(x)
};

struct FactorizedSpectralBlock {
    AxisMixer along_x;
    AxisMixer along_y;

    FactorizedSpectralBlock() = default;
    FactorizedSpectralBlock(ParamSet& ps, const std::string& name, int channels, int nx, int ny, int mx, int my)
        : along_x(ps, name + ".mix_x", channels, nx, mx), along_y(ps, name + ".mix_y", channels, ny, my) {}

    void init(ParamSet& ps, Rng& rng) const {
        along_x.init(ps, rng);
        along_y.init(ps, rng);
    }

    Tensor mix(const ParamSet& ps, const Tensor& x) const {
        Tensor s = along_y.forward(ps, x);
        s += transpose_hw(along_x.forward(ps, transpose_hw(x)));
        return s;
    }

    Tensor mix_backward(const ParamSet& ps, const Tensor& x, const Tensor& ds, Grads& g) const {
        Tensor dx = along_y.backward(ps, x, ds, g);
        dx += transpose_hw(along_x.backward(ps, transpose_hw(x), transpose_hw(ds), g));
        return dx;
    }

    Tensor forward(const ParamSet& ps, const Tensor& x, SpectralBlockCache* cache = nullptr) const {
        Tensor pre = mix(ps, x);
        Tensor y = x + gelu(pre);
        if (cache) cache->pre = std::move(pre);
        return y;
    }

    Tensor backward(const ParamSet& ps, const Tensor& x, const SpectralBlockCache& cache, const Tensor& dy,
                    Grads& g) const {
        const Tensor dpre = gelu_backward(cache.pre, dy);
        return dy + mix_backward(ps, x, dpre, g);
    }
};

/// Convolutional stand-in for FactorizedSpectralBlock: y = x + gelu(conv3x3(x)).
struct ConvBlock {
    Conv2d conv;

    ConvBlock() = default;
    ConvBlock(ParamSet& ps, const std::string& name, int channels) : conv(ps, name + ".conv", channels, channels, 3) {}

    void init(ParamSet& ps, Rng& rng) const { conv.init(ps, rng, 0.5); }

    Tensor forward(const ParamSet& ps, const Tensor& x, SpectralBlockCache* cache = nullptr) const {
        Tensor pre = conv.forward(ps, x);
        Tensor y = x + gelu(pre);
        if (cache) cache->pre = std::move(pre);
        return y;
    }

    Tensor backward(const ParamSet& ps, const Tensor& x, const SpectralBlockCache& cache, const Tensor& dy,
                    Grads& g) const {
        const Tensor dpre = gelu_backward(cache.pre, dy);
        return dy + conv.backward(ps, x, dpre, g);
    }
};

// ---------------------------------------------------------------------------
// Channel attention: global average pool -> Dense -> gelu -> Dense -> sigmoid,
// and the input is rescaled per channel by the resulting gate.

struct AttentionCache {
    RowMat pooled; // (n, C)
    RowMat hidden_pre;
    RowMat hidden;
    RowMat gate; // (n, C)
};

struct ChannelAttention {
    Dense squeeze;
    Dense excite;
    int channels = 0;

    ChannelAttention() = default;
    ChannelAttention(ParamSet& ps, const std::string& name, int channels_, int reduction)
        : squeeze(ps, name + ".fc1", channels_, std::max(1, channels_ / reduction)),
          excite(ps, name + ".fc2", std::max(1, channels_ / reduction), channels_), channels(channels_) {}

    void init(ParamSet& ps, Rng& rng) const {
        squeeze.init(ps, rng);
        excite.init(ps, rng);
    }

    Tensor forward(const ParamSet& ps, const Tensor& x, AttentionCache* cache = nullptr) const {
        if (x.c() != channels) throw ShapeError("ChannelAttention: channel mismatch");
        const std::size_t plane = x.shape().plane();
        RowMat pooled(x.n(), channels);
        for (int i = 0; i < x.n(); ++i)
            for (int c = 0; c < channels; ++c) {
                const double* p = x.plane(i, c);
                double s = 0.0;
                for (std::size_t k = 0; k < plane; ++k) s += p[k];
                pooled(i, c) = s / static_cast<double>(plane);
            }
        const RowMat hpre = squeeze.forward(ps, pooled);
        const RowMat h = hpre.unaryExpr([](double v) { return gelu(v); });
        const RowMat gate = excite.forward(ps, h).unaryExpr([](double v) { return sigmoid(v); });
        Tensor y(x.shape());
        for (int i = 0; i < x.n(); ++i)
            for (int c = 0; c < channels; ++c) {
                const double gv = gate(i, c);
                const double* src = x.plane(i, c);
                double* dst = y.plane(i, c);
                for (std::size_t k = 0; k < plane; ++k) dst[k] = gv * src[k];
            }
        if (cache) *cache = {pooled, hpre, h, gate};
        return y;
    }

    Tensor backward(const ParamSet& ps, const Tensor& x, const AttentionCache& cache, const Tensor& dy,
                    Grads& g) const {
        const std::size_t plane = x.shape().plane();
        Tensor dx(x.shape());
        RowMat dgate(x.n(), channels);
        for (int i = 0; i < x.n(); ++i)
            for (int c = 0; c < channels; ++c) {
                const double gv = cache.gate(i, c);
                const double* src = x.plane(i, c);
                const double* d = dy.plane(i, c);
                double* dst = dx.plane(i, c);
                double s = 0.0;
                for (std::size_t k = 0; k < plane; ++k) {
                    s += d[k] * src[k];
                    dst[k] = gv * d[k];
                }
                dgate(i, c) = s;
            }
        const RowMat dlogit = dgate.cwiseProduct(cache.gate.unaryExpr([](double v) { return v * (1.0 - v); }));
        const RowMat dh = excite.backward(ps, cache.hidden, dlogit, g);
        const RowMat dhpre = dh.cwiseProduct(cache.hidden_pre.unaryExpr([](double v) { return gelu_grad(v); }));
        const RowMat dpooled = squeeze.backward(ps, cache.pooled, dhpre, g);
        for (int i = 0; i < x.n(); ++i)
            for (int c = 0; c < channels; ++c) {
                const double add = dpooled(i, c) / static_cast<double>(plane);
                double* dst = dx.plane(i, c);
                for (std::size_t k = 0; k < plane; ++k) dst[k] += add;
            }
        return dx;
    }
};

} // namespace ssp

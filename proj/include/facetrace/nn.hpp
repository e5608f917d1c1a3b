#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "facetrace/rng.hpp"
#include "facetrace/tensor.hpp"

// Minimal NN op set: 3x3 convolution (pad 1, stride 1 or 2), fully connected,
// LeakyReLU, sigmoid, nearest-neighbour 2x upsample, channel concat/split.
// Convolution is im2col + GEMM, one GEMM per sample so the output lands
// directly in its NCHW slot. Backward passes rebuild the im2col buffer from
// the cached layer input instead of caching the patch matrix, which keeps the
// per-step memory footprint at "activations only".
//
// Everything is single-threaded and allocation order is fixed, so identical
// inputs give bit-identical outputs.

namespace facetrace::nn {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

template <typename T>
struct Conv2d {
    Tensor<T> w; // (out_c, in_c * 9), row per output channel
    Tensor<T> b; // (out_c)
    int in_c = 0, out_c = 0, stride = 1;

    Conv2d() = default;
    Conv2d(int in_channels, int out_channels, int stride_)
        : w({out_channels, in_channels * 9}),
          b({out_channels}),
          in_c(in_channels), out_c(out_channels), stride(stride_) {}

    int64_t param_count() const { return w.numel() + b.numel(); }
};

template <typename T>
struct Linear {
    Tensor<T> w; // (out_d, in_d)
    Tensor<T> b; // (out_d)
    int in_d = 0, out_d = 0;

    Linear() = default;
    Linear(int in_dim, int out_dim)
        : w({out_dim, in_dim}), b({out_dim}), in_d(in_dim), out_d(out_dim) {}

    int64_t param_count() const { return w.numel() + b.numel(); }
};

inline int conv_out_extent(int in, int stride) {
    // kernel 3, pad 1: stride 1 preserves, stride 2 halves (even extents only
    // in this model family).
    return (in + 2 - 3) / stride + 1;
}

// Patch matrix for one sample: (in_c * 9) x (oh * ow).
template <typename T>
void im2col(const T* x, int c_in, int h, int w, int stride, T* cols, int oh, int ow) {
    for (int c = 0; c < c_in; ++c) {
        const T* plane = x + int64_t(c) * h * w;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                T* row = cols + (int64_t(c) * 9 + ky * 3 + kx) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride + ky - 1;
                    if (iy < 0 || iy >= h) {
                        std::fill(row + int64_t(oy) * ow, row + int64_t(oy + 1) * ow, T(0));
                        continue;
                    }
                    const T* src = plane + int64_t(iy) * w;
                    T* dst = row + int64_t(oy) * ow;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride + kx - 1;
                        dst[ox] = (ix < 0 || ix >= w) ? T(0) : src[ix];
                    }
                }
            }
        }
    }
}

// Scatter-add of a patch-matrix gradient back onto the input plane.
template <typename T>
void col2im(const T* cols, int c_in, int h, int w, int stride, T* dx, int oh, int ow) {
    for (int c = 0; c < c_in; ++c) {
        T* plane = dx + int64_t(c) * h * w;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const T* row = cols + (int64_t(c) * 9 + ky * 3 + kx) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride + ky - 1;
                    if (iy < 0 || iy >= h) continue;
                    T* dst = plane + int64_t(iy) * w;
                    const T* src = row + int64_t(oy) * ow;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride + kx - 1;
                        if (ix >= 0 && ix < w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

template <typename T>
Tensor<T> conv_forward(const Conv2d<T>& conv, const Tensor<T>& x) {
    if (x.rank() != 4 || x.dim(1) != conv.in_c)
        throw ShapeError("conv_forward: input " + x.shape_str() + " does not match in_c=" +
                         std::to_string(conv.in_c));
    int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    int oh = conv_out_extent(h, conv.stride), ow = conv_out_extent(w, conv.stride);
    Tensor<T> y({n, conv.out_c, oh, ow});
    Tensor<T> cols({conv.in_c * 9, oh * ow});

    CMapRM<T> W(conv.w.data(), conv.out_c, conv.in_c * 9);
    for (int i = 0; i < n; ++i) {
        im2col(x.data() + int64_t(i) * conv.in_c * h * w, conv.in_c, h, w, conv.stride,
               cols.data(), oh, ow);
        CMapRM<T> C(cols.data(), conv.in_c * 9, oh * ow);
        MapRM<T> Y(y.data() + int64_t(i) * conv.out_c * oh * ow, conv.out_c, oh * ow);
        Y.noalias() = W * C;
        for (int c = 0; c < conv.out_c; ++c)
            Y.row(c).array() += conv.b[c];
    }
    return y;
}

// dy -> dx; weight/bias gradients accumulate into gw/gb (shapes of w/b).
template <typename T>
Tensor<T> conv_backward(const Conv2d<T>& conv, const Tensor<T>& x, const Tensor<T>& dy,
                        Tensor<T>& gw, Tensor<T>& gb) {
    int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    int oh = dy.dim(2), ow = dy.dim(3);
    Tensor<T> dx(x.dims());
    Tensor<T> cols({conv.in_c * 9, oh * ow});
    Tensor<T> dcols({conv.in_c * 9, oh * ow});

    CMapRM<T> W(conv.w.data(), conv.out_c, conv.in_c * 9);
    MapRM<T> GW(gw.data(), conv.out_c, conv.in_c * 9);
    for (int i = 0; i < n; ++i) {
        const T* xi = x.data() + int64_t(i) * conv.in_c * h * w;
        CMapRM<T> DY(dy.data() + int64_t(i) * conv.out_c * oh * ow, conv.out_c, oh * ow);

        im2col(xi, conv.in_c, h, w, conv.stride, cols.data(), oh, ow);
        CMapRM<T> C(cols.data(), conv.in_c * 9, oh * ow);
        GW.noalias() += DY * C.transpose();
        // Fixed-order reduction; Eigen's vectorized sum() peels to the
        // buffer's runtime alignment, which breaks run-to-run bit equality.
        const T* dyi = dy.data() + int64_t(i) * conv.out_c * oh * ow;
        for (int c = 0; c < conv.out_c; ++c) {
            T s = T(0);
            for (int64_t j = 0; j < int64_t(oh) * ow; ++j)
                s += dyi[int64_t(c) * oh * ow + j];
            gb[c] += s;
        }

        MapRM<T> DC(dcols.data(), conv.in_c * 9, oh * ow);
        DC.noalias() = W.transpose() * DY;
        col2im(dcols.data(), conv.in_c, h, w, conv.stride,
               dx.data() + int64_t(i) * conv.in_c * h * w, oh, ow);
    }
    return dx;
}

template <typename T>
Tensor<T> linear_forward(const Linear<T>& fc, const Tensor<T>& x) {
    if (x.rank() != 2 || x.dim(1) != fc.in_d)
        throw ShapeError("linear_forward: input " + x.shape_str() + " does not match in_d=" +
                         std::to_string(fc.in_d));
    int n = x.dim(0);
    Tensor<T> y({n, fc.out_d});
    CMapRM<T> W(fc.w.data(), fc.out_d, fc.in_d);
    CMapRM<T> X(x.data(), n, fc.in_d);
    MapRM<T> Y(y.data(), n, fc.out_d);
    Y.noalias() = X * W.transpose();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < fc.out_d; ++j)
            y.at(i, j) += fc.b[j];
    return y;
}

template <typename T>
Tensor<T> linear_backward(const Linear<T>& fc, const Tensor<T>& x, const Tensor<T>& dy,
                          Tensor<T>& gw, Tensor<T>& gb) {
    int n = x.dim(0);
    Tensor<T> dx({n, fc.in_d});
    CMapRM<T> W(fc.w.data(), fc.out_d, fc.in_d);
    CMapRM<T> X(x.data(), n, fc.in_d);
    CMapRM<T> DY(dy.data(), n, fc.out_d);
    MapRM<T> GW(gw.data(), fc.out_d, fc.in_d);
    MapRM<T> DX(dx.data(), n, fc.in_d);
    GW.noalias() += DY.transpose() * X;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < fc.out_d; ++j)
            gb[j] += dy.at(i, j);
    DX.noalias() = DY * W;
    return dx;
}

template <typename T>
void leaky_relu_inplace(Tensor<T>& x, T slope) {
    for (int64_t i = 0; i < x.numel(); ++i)
        if (x[i] < T(0)) x[i] *= slope;
}

// Derivative recovered from the output sign; slope < 1 keeps the sign of the
// pre-activation, so no mask needs caching. y == 0 maps to the x >= 0 branch,
// matching forward.
template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& y, const Tensor<T>& dy, T slope) {
    Tensor<T> dx(dy.dims());
    for (int64_t i = 0; i < dy.numel(); ++i)
        dx[i] = y[i] < T(0) ? dy[i] * slope : dy[i];
    return dx;
}

template <typename T>
void sigmoid_inplace(Tensor<T>& x) {
    for (int64_t i = 0; i < x.numel(); ++i)
        x[i] = T(1) / (T(1) + std::exp(-x[i]));
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy) {
    Tensor<T> dx(dy.dims());
    for (int64_t i = 0; i < dy.numel(); ++i)
        dx[i] = dy[i] * y[i] * (T(1) - y[i]);
    return dx;
}

template <typename T>
Tensor<T> upsample2x_forward(const Tensor<T>& x) {
    int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor<T> y({n, c, h * 2, w * 2});
    for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch)
            for (int yy = 0; yy < h * 2; ++yy)
                for (int xx = 0; xx < w * 2; ++xx)
                    y.at(i, ch, yy, xx) = x.at(i, ch, yy / 2, xx / 2);
    return y;
}

template <typename T>
Tensor<T> upsample2x_backward(const Tensor<T>& dy) {
    int n = dy.dim(0), c = dy.dim(1), h = dy.dim(2) / 2, w = dy.dim(3) / 2;
    Tensor<T> dx({n, c, h, w});
    for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch)
            for (int yy = 0; yy < dy.dim(2); ++yy)
                for (int xx = 0; xx < dy.dim(3); ++xx)
                    dx.at(i, ch, yy / 2, xx / 2) += dy.at(i, ch, yy, xx);
    return dx;
}

// (n, ca, h, w) ++ (n, cb, h, w) -> (n, ca + cb, h, w); a's channels first.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw ShapeError("concat_channels: " + a.shape_str() + " vs " + b.shape_str());
    int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
    Tensor<T> y({n, ca + cb, h, w});
    int64_t plane = int64_t(h) * w;
    for (int i = 0; i < n; ++i) {
        std::copy_n(a.data() + int64_t(i) * ca * plane, ca * plane,
                    y.data() + int64_t(i) * (ca + cb) * plane);
        std::copy_n(b.data() + int64_t(i) * cb * plane, cb * plane,
                    y.data() + int64_t(i) * (ca + cb) * plane + ca * plane);
    }
    return y;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& dy, int ca) {
    int n = dy.dim(0), c = dy.dim(1), h = dy.dim(2), w = dy.dim(3);
    int cb = c - ca;
    Tensor<T> da({n, ca, h, w});
    Tensor<T> db({n, cb, h, w});
    int64_t plane = int64_t(h) * w;
    for (int i = 0; i < n; ++i) {
        std::copy_n(dy.data() + int64_t(i) * c * plane, ca * plane,
                    da.data() + int64_t(i) * ca * plane);
        std::copy_n(dy.data() + int64_t(i) * c * plane + ca * plane, cb * plane,
                    db.data() + int64_t(i) * cb * plane);
    }
    return {std::move(da), std::move(db)};
}

// He-style normal init for layers followed by LeakyReLU: keeps forward
// variance flat, std = sqrt(2 / ((1 + slope^2) * fan_in)).
template <typename T>
void kaiming_fill(Tensor<T>& w, int64_t fan_in, double slope, RandomStream& rs) {
    double std = std::sqrt(2.0 / ((1.0 + slope * slope) * double(fan_in)));
    for (int64_t i = 0; i < w.numel(); ++i)
        w[i] = T(rs.normal() * std);
}

template <typename T>
Tensor<T> flatten2d(const Tensor<T>& x) {
    Tensor<T> y({x.dim(0), int(x.numel() / x.dim(0))});
    std::copy_n(x.data(), x.numel(), y.data());
    return y;
}

template <typename T>
Tensor<T> unflatten4d(const Tensor<T>& x, const std::vector<int>& dims) {
    Tensor<T> y(dims);
    std::copy_n(x.data(), x.numel(), y.data());
    return y;
}

} // namespace facetrace::nn

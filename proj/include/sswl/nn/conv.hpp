#pragma once

/// 2-D convolution and transposed convolution with explicit backward passes.
/// Both lower to im2col + GEMM; a transposed convolution is the data-gradient
/// of a convolution, so the two share the same patch geometry.

#include <span>

// Small products otherwise take a lazy path whose rounding depends on buffer alignment.
#ifndef EIGEN_GEMM_TO_COEFFBASED_THRESHOLD
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#endif
#include <Eigen/Core>

#include "sswl/tensor.hpp"

namespace sswl::nn {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <class T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

/// Square-kernel convolution geometry.
struct ConvGeom {
    int channels = 1;  // channels of the image the patches are taken from
    int kernel = 3;
    int stride = 1;
    int pad = 0;

    int out_size(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
    int patch_rows() const { return channels * kernel * kernel; }
};

/// col[(c*k + i)*k + j][oy*ow + ox] = img[c][oy*s + i - p][ox*s + j - p], zero outside.
template <class T>
void im2col(const T* img, int h, int w, const ConvGeom& g, T* col) {
    const int oh = g.out_size(h), ow = g.out_size(w);
    const std::size_t P = std::size_t(oh) * ow;
    for (int c = 0; c < g.channels; ++c)
        for (int i = 0; i < g.kernel; ++i)
            for (int j = 0; j < g.kernel; ++j) {
                T* row = col + (std::size_t(c * g.kernel + i) * g.kernel + j) * P;
                for (int oy = 0; oy < oh; ++oy) {
                    const int y = oy * g.stride + i - g.pad;
                    T* out = row + std::size_t(oy) * ow;
                    if (y < 0 || y >= h) {
                        std::fill(out, out + ow, T(0));
                        continue;
                    }
                    const T* src = img + (std::size_t(c) * h + y) * w;
                    if (g.stride == 1 && g.pad == 0) {
                        std::copy(src + j, src + j + ow, out);
                        continue;
                    }
                    for (int ox = 0; ox < ow; ++ox) {
                        const int x = ox * g.stride + j - g.pad;
                        out[ox] = (x >= 0 && x < w) ? src[x] : T(0);
                    }
                }
            }
}

/// Adjoint of im2col: scatters-adds patch columns back into img.
template <class T>
void col2im(const T* col, int h, int w, const ConvGeom& g, T* img) {
    const int oh = g.out_size(h), ow = g.out_size(w);
    const std::size_t P = std::size_t(oh) * ow;
    for (int c = 0; c < g.channels; ++c)
        for (int i = 0; i < g.kernel; ++i)
            for (int j = 0; j < g.kernel; ++j) {
                const T* row = col + (std::size_t(c * g.kernel + i) * g.kernel + j) * P;
                for (int oy = 0; oy < oh; ++oy) {
                    const int y = oy * g.stride + i - g.pad;
                    if (y < 0 || y >= h) continue;
                    T* dst = img + (std::size_t(c) * h + y) * w;
                    const T* in = row + std::size_t(oy) * ow;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int x = ox * g.stride + j - g.pad;
                        if (x >= 0 && x < w) dst[x] += in[ox];
                    }
                }
            }
}

/// y = conv(x, weight) + bias. weight is (cout, cin, k, k).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, std::span<const T> weight, std::span<const T> bias, int cout,
                 const ConvGeom& g) {
    if (x.c() != g.channels) throw ValidationError("conv2d: input channel mismatch");
    const int oh = g.out_size(x.h()), ow = g.out_size(x.w());
    if (oh < 1 || ow < 1) throw ValidationError("conv2d: input " + x.shape_string() + " smaller than kernel");
    const int K = g.patch_rows();
    const int P = oh * ow;
    Tensor<T> y(x.n(), cout, oh, ow);
    std::vector<T> col(std::size_t(K) * P);
    ConstMatMap<T> W(weight.data(), cout, K);
    ConstVecMap<T> b(bias.data(), cout);
    for (int n = 0; n < x.n(); ++n) {
        im2col(x.sample(n).data(), x.h(), x.w(), g, col.data());
        MatMap<T> Y(y.sample(n).data(), cout, P);
        Y.noalias() = W * ConstMatMap<T>(col.data(), K, P);
        Y.colwise() += b;
    }
    return y;
}

/// Accumulates weight/bias gradients into dweight/dbias; returns dL/dx when want_dx.
template <class T>
Tensor<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& dy, std::span<const T> weight, int cout,
                          const ConvGeom& g, std::span<T> dweight, std::span<T> dbias, bool want_dx = true) {
    const int K = g.patch_rows();
    const int P = dy.h() * dy.w();
    std::vector<T> col(std::size_t(K) * P);
    ConstMatMap<T> W(weight.data(), cout, K);
    MatMap<T> dW(dweight.data(), cout, K);
    VecMap<T> db(dbias.data(), cout);
    Tensor<T> dx;
    if (want_dx) dx = Tensor<T>(x.n(), x.c(), x.h(), x.w());
    for (int n = 0; n < x.n(); ++n) {
        ConstMatMap<T> dY(dy.sample(n).data(), cout, P);
        im2col(x.sample(n).data(), x.h(), x.w(), g, col.data());
        dW.noalias() += dY * ConstMatMap<T>(col.data(), K, P).transpose();
        for (int o = 0; o < cout; ++o) {
            T s = 0;
            for (int i = 0; i < P; ++i) s += dY(o, i);
            db(o) += s;
        }
        if (want_dx) {
            MatMap<T>(col.data(), K, P).noalias() = W.transpose() * dY;
            col2im(col.data(), x.h(), x.w(), g, dx.sample(n).data());
        }
    }
    return dx;
}

/// Stride-1, unpadded transposed convolution growing each side by k - 1.
/// weight is (cin, cout, k, k).
template <class T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, std::span<const T> weight, std::span<const T> bias, int cout,
                           int kernel) {
    const int cin = x.c();
    const int oh = x.h() + kernel - 1, ow = x.w() + kernel - 1;
    const ConvGeom g{cout, kernel, 1, 0};
    const int K = g.patch_rows();
    const int P = x.h() * x.w();
    Tensor<T> y(x.n(), cout, oh, ow);
    std::vector<T> col(std::size_t(K) * P);
    ConstMatMap<T> M(weight.data(), cin, K);
    for (int n = 0; n < x.n(); ++n) {
        MatMap<T>(col.data(), K, P).noalias() = M.transpose() * ConstMatMap<T>(x.sample(n).data(), cin, P);
        T* out = y.sample(n).data();
        col2im(col.data(), oh, ow, g, out);
        for (int c = 0; c < cout; ++c) {
            T* plane = out + std::size_t(c) * oh * ow;
            for (int i = 0; i < oh * ow; ++i) plane[i] += bias[c];
        }
    }
    return y;
}

template <class T>
Tensor<T> conv_transpose2d_backward(const Tensor<T>& x, const Tensor<T>& dy, std::span<const T> weight, int kernel,
                                    std::span<T> dweight, std::span<T> dbias, bool want_dx = true) {
    const int cin = x.c(), cout = dy.c();
    const ConvGeom g{cout, kernel, 1, 0};
    const int K = g.patch_rows();
    const int P = x.h() * x.w();
    std::vector<T> col(std::size_t(K) * P);
    ConstMatMap<T> M(weight.data(), cin, K);
    MatMap<T> dM(dweight.data(), cin, K);
    Tensor<T> dx;
    if (want_dx) dx = Tensor<T>(x.n(), cin, x.h(), x.w());
    for (int n = 0; n < x.n(); ++n) {
        im2col(dy.sample(n).data(), dy.h(), dy.w(), g, col.data());
        ConstMatMap<T> dcol(col.data(), K, P);
        ConstMatMap<T> X(x.sample(n).data(), cin, P);
        dM.noalias() += X * dcol.transpose();
        if (want_dx) MatMap<T>(dx.sample(n).data(), cin, P).noalias() = M * dcol;
        const T* g_out = dy.sample(n).data();
        const std::size_t plane = dy.plane();
        for (int c = 0; c < cout; ++c) {
            T s = 0;
            for (std::size_t i = 0; i < plane; ++i) s += g_out[c * plane + i];
            dbias[c] += s;
        }
    }
    return dx;
}

template <class T>
void relu_inplace(Tensor<T>& t) {
    for (auto& v : t.values()) v = v > T(0) ? v : T(0);
}

/// dx = dy where the rectified output is positive.
template <class T>
void relu_backward_inplace(Tensor<T>& grad, const Tensor<T>& rectified) {
    auto& g = grad.values();
    const auto& r = rectified.values();
    for (std::size_t i = 0; i < g.size(); ++i)
        if (!(r[i] > T(0))) g[i] = T(0);
}

}  // namespace sswl::nn

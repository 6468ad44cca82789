#pragma once

// Orthonormal 2x2 Haar transform between (C,H,W) and (4C,H/2,W/2).
// Coefficient channel layout: [low x C | vertical x C | horizontal x C |
// diagonal x C]. With the 1/2 scaling the transform matrix is orthogonal,
// so it preserves energy and its adjoint equals its inverse.

#include "irn/tensor.hpp"

namespace irn {

template <typename T>
struct HaarStackT {
    TensorT<T> coeffs;  // (4C, H/2, W/2)
    int channels = 0;   // C of the source image

    TensorT<T> low() const { return slice_channels(coeffs, 0, channels); }
    TensorT<T> high() const { return slice_channels(coeffs, channels, 4 * channels); }
};

using HaarStack = HaarStackT<float>;

namespace detail {

// per block [[a,b],[c,d]]:
//   LL = (a+b+c+d)/2   V = (a+b-c-d)/2   Hd = (a-b+c-d)/2   D = (a-b-c+d)/2
// and the inverse is the transpose of the same matrix.
template <typename T>
void haar_fwd_kernel(const T* in, T* out, int C, int H, int W) {
    const int Ho = H / 2, Wo = W / 2;
    const size_t iplane = static_cast<size_t>(H) * W;
    const size_t oplane = static_cast<size_t>(Ho) * Wo;
    for (int c = 0; c < C; ++c) {
        const T* ip = in + c * iplane;
        T* ll = out + c * oplane;
        T* v = out + (static_cast<size_t>(C) + c) * oplane;
        T* h = out + (static_cast<size_t>(2 * C) + c) * oplane;
        T* d = out + (static_cast<size_t>(3 * C) + c) * oplane;
        for (int y = 0; y < Ho; ++y) {
            const T* r0 = ip + static_cast<size_t>(2 * y) * W;
            const T* r1 = r0 + W;
            const size_t o = static_cast<size_t>(y) * Wo;
            for (int x = 0; x < Wo; ++x) {
                const T a = r0[2 * x], b = r0[2 * x + 1];
                const T cc = r1[2 * x], dd = r1[2 * x + 1];
                ll[o + x] = (a + b + cc + dd) * T(0.5);
                v[o + x] = (a + b - cc - dd) * T(0.5);
                h[o + x] = (a - b + cc - dd) * T(0.5);
                d[o + x] = (a - b - cc + dd) * T(0.5);
            }
        }
    }
}

template <typename T>
void haar_inv_kernel(const T* in, T* out, int C, int Ho, int Wo) {
    const int H = Ho * 2, W = Wo * 2;
    const size_t iplane = static_cast<size_t>(Ho) * Wo;
    const size_t oplane = static_cast<size_t>(H) * W;
    for (int c = 0; c < C; ++c) {
        const T* ll = in + c * iplane;
        const T* v = in + (static_cast<size_t>(C) + c) * iplane;
        const T* h = in + (static_cast<size_t>(2 * C) + c) * iplane;
        const T* d = in + (static_cast<size_t>(3 * C) + c) * iplane;
        T* op = out + c * oplane;
        for (int y = 0; y < Ho; ++y) {
            T* r0 = op + static_cast<size_t>(2 * y) * W;
            T* r1 = r0 + W;
            const size_t o = static_cast<size_t>(y) * Wo;
            for (int x = 0; x < Wo; ++x) {
                const T s = ll[o + x], vv = v[o + x], hh = h[o + x], dd = d[o + x];
                r0[2 * x] = (s + vv + hh + dd) * T(0.5);
                r0[2 * x + 1] = (s + vv - hh - dd) * T(0.5);
                r1[2 * x] = (s - vv + hh - dd) * T(0.5);
                r1[2 * x + 1] = (s - vv - hh + dd) * T(0.5);
            }
        }
    }
}

}  // namespace detail

template <typename T>
HaarStackT<T> haar_forward(const TensorT<T>& x) {
    detail::check_chw(x, "haar_forward");
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    if (H % 2 != 0 || W % 2 != 0)
        throw std::invalid_argument("haar_forward: extents must be even, got " +
                                    shape_str(x.shape()));
    TensorT<T> out = TensorT<T>::zeros({4 * C, H / 2, W / 2});
    detail::haar_fwd_kernel(x.data(), out.data(), C, H, W);
    if (detail::track<T>({&x})) {
        auto xn = x.handle();
        detail::attach(out, {x}, [xn, C, H, W](TensorNode<T>& self) {
            xn->ensure_grad();
            std::vector<T> gx(xn->grad.size());
            detail::haar_inv_kernel(self.grad.data(), gx.data(), C, H / 2, W / 2);
            for (size_t i = 0; i < gx.size(); ++i) xn->grad[i] += gx[i];
        });
    }
    return HaarStackT<T>{out, C};
}

template <typename T>
TensorT<T> haar_inverse(const TensorT<T>& coeffs) {
    detail::check_chw(coeffs, "haar_inverse");
    const int C4 = coeffs.dim(0), Ho = coeffs.dim(1), Wo = coeffs.dim(2);
    if (C4 % 4 != 0)
        throw std::invalid_argument("haar_inverse: channel count " + std::to_string(C4) +
                                    " not divisible by 4");
    const int C = C4 / 4;
    TensorT<T> out = TensorT<T>::zeros({C, Ho * 2, Wo * 2});
    detail::haar_inv_kernel(coeffs.data(), out.data(), C, Ho, Wo);
    if (detail::track<T>({&coeffs})) {
        auto cn = coeffs.handle();
        detail::attach(out, {coeffs}, [cn, C, Ho, Wo](TensorNode<T>& self) {
            cn->ensure_grad();
            std::vector<T> gc(cn->grad.size());
            detail::haar_fwd_kernel(self.grad.data(), gc.data(), C, Ho * 2, Wo * 2);
            for (size_t i = 0; i < gc.size(); ++i) cn->grad[i] += gc[i];
        });
    }
    return out;
}

template <typename T>
TensorT<T> haar_inverse(const HaarStackT<T>& s) {
    return haar_inverse(s.coeffs);
}

}  // namespace irn

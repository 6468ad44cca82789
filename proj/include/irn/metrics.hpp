#pragma once

// Reference scaler and fidelity metrics. Everything here is pure and runs
// on plain planes; accumulators are double regardless of the tensor type.

#include <cmath>
#include <vector>

#include "irn/tensor.hpp"

namespace irn {

// Cubic convolution kernel, a = -0.5.
inline double cubic_kernel(double x) {
    const double a = -0.5;
    x = std::fabs(x);
    if (x <= 1.0) return (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0;
    if (x < 2.0) return a * (x * x * x - 5.0 * x * x + 8.0 * x - 4.0);
    return 0.0;
}

namespace detail {

// One separable pass along the last dimension of a (C, rows, n_in) buffer
// laid out row-major; writes (C, rows, n_out).
inline void cubic_pass(const std::vector<double>& in, std::vector<double>& out, int planes,
                       int rows, int n_in, int n_out) {
    out.assign(static_cast<size_t>(planes) * rows * n_out, 0.0);
    const double step = static_cast<double>(n_in) / n_out;
    std::vector<int> idx(static_cast<size_t>(n_out) * 4);
    std::vector<double> wgt(static_cast<size_t>(n_out) * 4);
    for (int o = 0; o < n_out; ++o) {
        const double src = (o + 0.5) * step - 0.5;
        const int i0 = static_cast<int>(std::floor(src));
        const double t = src - i0;
        for (int k = 0; k < 4; ++k) {
            int ii = i0 - 1 + k;
            idx[o * 4 + k] = std::clamp(ii, 0, n_in - 1);
            wgt[o * 4 + k] = cubic_kernel(src - ii);
        }
    }
    for (int p = 0; p < planes; ++p)
        for (int r = 0; r < rows; ++r) {
            const double* src = in.data() + (static_cast<size_t>(p) * rows + r) * n_in;
            double* dst = out.data() + (static_cast<size_t>(p) * rows + r) * n_out;
            for (int o = 0; o < n_out; ++o) {
                double acc = 0.0;
                for (int k = 0; k < 4; ++k) acc += wgt[o * 4 + k] * src[idx[o * 4 + k]];
                dst[o] = acc;
            }
        }
}

}  // namespace detail

template <typename T>
TensorT<T> bicubic_resize(const TensorT<T>& img, int out_h, int out_w) {
    detail::check_chw(img, "bicubic_resize");
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("bicubic_resize: bad output extents");
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);

    std::vector<double> buf(img.numel());
    for (size_t i = 0; i < img.numel(); ++i) buf[i] = static_cast<double>(img.data()[i]);

    // horizontal, then vertical via transpose-pass-transpose
    std::vector<double> hpass;
    detail::cubic_pass(buf, hpass, C, H, W, out_w);

    std::vector<double> tr(static_cast<size_t>(C) * out_w * H);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < out_w; ++x)
                tr[(static_cast<size_t>(c) * out_w + x) * H + y] =
                    hpass[(static_cast<size_t>(c) * H + y) * out_w + x];

    std::vector<double> vpass;
    detail::cubic_pass(tr, vpass, C, out_w, H, out_h);

    TensorT<T> out = TensorT<T>::zeros({C, out_h, out_w});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < out_h; ++y)
            for (int x = 0; x < out_w; ++x)
                out.data()[(static_cast<size_t>(c) * out_h + y) * out_w + x] = static_cast<T>(
                    vpass[(static_cast<size_t>(c) * out_w + x) * out_h + y]);
    return out;
}

template <typename T>
TensorT<T> clamp01(const TensorT<T>& img) {
    TensorT<T> out = img.clone();
    for (auto& v : out.vec()) v = std::min(std::max(v, T(0)), T(1));
    return out;
}

template <typename T>
TensorT<T> crop_border(const TensorT<T>& img, int border) {
    detail::check_chw(img, "crop_border");
    if (border == 0) return img;
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    if (border < 0 || 2 * border >= H || 2 * border >= W)
        throw std::invalid_argument("crop_border: border too large for image");
    TensorT<T> out = TensorT<T>::zeros({C, H - 2 * border, W - 2 * border});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H - 2 * border; ++y)
            for (int x = 0; x < W - 2 * border; ++x)
                out.data()[(static_cast<size_t>(c) * (H - 2 * border) + y) * (W - 2 * border) + x] =
                    img.data()[(static_cast<size_t>(c) * H + (y + border)) * W + (x + border)];
    return out;
}

// Studio-swing BT.601 luma of an RGB image in [0,1].
template <typename T>
TensorT<T> to_luma(const TensorT<T>& img) {
    detail::check_chw(img, "to_luma");
    if (img.dim(0) != 3) throw std::invalid_argument("to_luma: expected a 3-channel image");
    const int H = img.dim(1), W = img.dim(2);
    const size_t plane = static_cast<size_t>(H) * W;
    TensorT<T> out = TensorT<T>::zeros({1, H, W});
    const T* r = img.data();
    const T* g = r + plane;
    const T* b = g + plane;
    T* y = out.data();
    for (size_t i = 0; i < plane; ++i)
        y[i] = static_cast<T>((65.481 * r[i] + 128.553 * g[i] + 24.966 * b[i] + 16.0) / 255.0);
    return out;
}

constexpr double kPsnrCap = 99.0;

// PSNR in dB over [0,1]-scaled planes; identical planes report the cap.
template <typename T>
double psnr(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("psnr: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    double mse = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - b.data()[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

// Mean local SSIM, 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
// dynamic range 1. Windows are evaluated only where they fit entirely.
template <typename T>
double ssim(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("ssim: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    detail::check_chw(a, "ssim");
    constexpr int kWin = 11;
    const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
    if (H < kWin || W < kWin)
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");

    double window[kWin];
    {
        const double sigma = 1.5;
        double sum = 0.0;
        for (int i = 0; i < kWin; ++i) {
            const double d = i - (kWin - 1) / 2.0;
            window[i] = std::exp(-d * d / (2.0 * sigma * sigma));
            sum += window[i];
        }
        for (double& w : window) w /= sum;
    }

    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const int Ho = H - kWin + 1, Wo = W - kWin + 1;
    const size_t plane = static_cast<size_t>(H) * W;

    // separable filtering of the five moment images
    auto filter = [&](const std::vector<double>& src, std::vector<double>& dst) {
        std::vector<double> tmp(static_cast<size_t>(H) * Wo);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < Wo; ++x) {
                double acc = 0.0;
                for (int k = 0; k < kWin; ++k) acc += window[k] * src[static_cast<size_t>(y) * W + x + k];
                tmp[static_cast<size_t>(y) * Wo + x] = acc;
            }
        dst.assign(static_cast<size_t>(Ho) * Wo, 0.0);
        for (int y = 0; y < Ho; ++y)
            for (int x = 0; x < Wo; ++x) {
                double acc = 0.0;
                for (int k = 0; k < kWin; ++k) acc += window[k] * tmp[static_cast<size_t>(y + k) * Wo + x];
                dst[static_cast<size_t>(y) * Wo + x] = acc;
            }
    };

    double total = 0.0;
    for (int c = 0; c < C; ++c) {
        std::vector<double> pa(plane), pb(plane), paa(plane), pbb(plane), pab(plane);
        for (size_t i = 0; i < plane; ++i) {
            const double va = a.data()[c * plane + i], vb = b.data()[c * plane + i];
            pa[i] = va;
            pb[i] = vb;
            paa[i] = va * va;
            pbb[i] = vb * vb;
            pab[i] = va * vb;
        }
        std::vector<double> mu_a, mu_b, m_aa, m_bb, m_ab;
        filter(pa, mu_a);
        filter(pb, mu_b);
        filter(paa, m_aa);
        filter(pbb, m_bb);
        filter(pab, m_ab);
        double acc = 0.0;
        for (size_t i = 0; i < mu_a.size(); ++i) {
            const double ma = mu_a[i], mb = mu_b[i];
            const double va = m_aa[i] - ma * ma;
            const double vb = m_bb[i] - mb * mb;
            const double cov = m_ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                   ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += acc / static_cast<double>(mu_a.size());
    }
    return total / C;
}

}  // namespace irn

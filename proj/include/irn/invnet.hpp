#pragma once

// Invertible coupling blocks and channel-splitting policies.
//
// A block updates the (low, high) channel groups as
//   y_l = x_l + phi(x_h)
//   y_h = x_h * exp(clampfn(rho(y_l))) + eta(y_l)
// with clampfn(t) = clamp * (2*sigmoid(t) - 1), which bounds the log-scale
// to [-clamp, clamp] and keeps the map numerically invertible. Subnets are
// three 3x3 convolutions with the last one zero-initialized, so a fresh
// block is the identity.

#include <optional>
#include <utility>
#include <vector>

#include "irn/optim.hpp"
#include "irn/tensor.hpp"
#include "irn/wavelet.hpp"

namespace irn {

enum class SplitMode { baseline, pre_split_alpha, post_split_alpha };

inline const char* to_string(SplitMode m) {
    switch (m) {
        case SplitMode::baseline: return "baseline";
        case SplitMode::pre_split_alpha: return "pre_split_alpha";
        case SplitMode::post_split_alpha: return "post_split_alpha";
    }
    return "?";
}

struct SplitSpec {
    SplitMode mode = SplitMode::baseline;
    bool alpha_avg_init = false;
    int low_channels = 0;
    int high_channels = 0;

    // Channel budget for a stack of 4C coefficients. Post-split runs the
    // blocks with the baseline budget; the alpha plane is carved out of the
    // latent afterwards by the model.
    static SplitSpec make(SplitMode mode, int C, bool alpha_avg = false) {
        SplitSpec s;
        s.mode = mode;
        s.alpha_avg_init = alpha_avg;
        if (mode == SplitMode::pre_split_alpha) {
            s.low_channels = C + 1;
            s.high_channels = 3 * C - 1;
        } else {
            s.low_channels = C;
            s.high_channels = 3 * C;
        }
        return s;
    }
};

template <typename T>
struct SplitOutputT {
    TensorT<T> x_l;
    TensorT<T> x_h;
    std::optional<int> removed_channel_index;  // index within the high group
};

using SplitOutput = SplitOutputT<float>;

template <typename T>
SplitOutputT<T> split_channels(const HaarStackT<T>& stack, const SplitSpec& spec) {
    if (spec.mode == SplitMode::post_split_alpha)
        throw std::invalid_argument(
            "split_channels: post_split_alpha is applied after the blocks, not at the stack split");
    const int C = stack.channels;
    if (stack.coeffs.dim(0) != 4 * C)
        throw std::invalid_argument("split_channels: stack must have 4C channels");
    if (spec.low_channels + spec.high_channels != 4 * C)
        throw std::invalid_argument("split_channels: spec channel counts do not sum to 4C");

    SplitOutputT<T> out;
    if (spec.mode == SplitMode::baseline) {
        out.x_l = slice_channels(stack.coeffs, 0, C);
        out.x_h = slice_channels(stack.coeffs, C, 4 * C);
        return out;
    }
    // pre-split alpha: lower branch is [low C | alpha], the first channel of
    // the high group is dropped to keep 4C total
    TensorT<T> alpha;
    if (spec.alpha_avg_init) {
        alpha = channel_mean(stack.high());
    } else {
        alpha = TensorT<T>::zeros({1, stack.coeffs.dim(1), stack.coeffs.dim(2)});
    }
    out.x_l = concat_channels<T>({stack.low(), alpha});
    out.x_h = slice_channels(stack.coeffs, C + 1, 4 * C);
    out.removed_channel_index = 0;
    return out;
}

// x_m = 3C * x_alpha - sum_i x_h^i, the deleted high-frequency channel
// reconstructed from the stored average.
template <typename T>
TensorT<T> recover_removed_channel(const TensorT<T>& x_alpha, const TensorT<T>& x_h_partial,
                                   int C) {
    detail::check_chw(x_alpha, "recover_removed_channel");
    detail::check_chw(x_h_partial, "recover_removed_channel");
    if (x_alpha.dim(0) != 1)
        throw std::invalid_argument("recover_removed_channel: alpha must be a single plane");
    if (x_h_partial.dim(0) != 3 * C - 1)
        throw std::invalid_argument("recover_removed_channel: expected " +
                                    std::to_string(3 * C - 1) + " high channels, got " +
                                    std::to_string(x_h_partial.dim(0)));
    TensorT<T> total = scale(x_alpha, static_cast<T>(3 * C));
    TensorT<T> partial_sum = scale(channel_mean(x_h_partial), static_cast<T>(3 * C - 1));
    return sub(total, partial_sum);
}

// ---- coupling subnet ----

template <typename T>
struct SubnetT {
    ParameterT<T> w1, b1, w2, b2, w3, b3;
    T slope = T(0.2);

    SubnetT() = default;

    SubnetT(const std::string& prefix, int in_ch, int out_ch, int hidden, Rng& rng) {
        auto he = [&rng](int cout, int cin, int k) {
            T std_dev = static_cast<T>(std::sqrt(2.0 / (static_cast<double>(cin) * k * k)));
            Rng& r = rng;
            return TensorT<T>::randn({cout, cin, k, k}, r, std_dev);
        };
        w1 = ParameterT<T>(prefix + ".w1", he(hidden, in_ch, 3));
        b1 = ParameterT<T>(prefix + ".b1", TensorT<T>::zeros({hidden}));
        w2 = ParameterT<T>(prefix + ".w2", he(hidden, hidden, 3));
        b2 = ParameterT<T>(prefix + ".b2", TensorT<T>::zeros({hidden}));
        // zero-initialized head: the block starts as the identity map
        w3 = ParameterT<T>(prefix + ".w3", TensorT<T>::zeros({out_ch, hidden, 3, 3}));
        b3 = ParameterT<T>(prefix + ".b3", TensorT<T>::zeros({out_ch}));
    }

    TensorT<T> forward(const TensorT<T>& x) const {
        auto h1 = leaky_relu(conv2d(x, w1.value, b1.value, 1), slope);
        auto h2 = leaky_relu(conv2d(h1, w2.value, b2.value, 1), slope);
        return conv2d(h2, w3.value, b3.value, 1);
    }

    void collect(std::vector<ParameterT<T>*>& out) {
        for (auto* p : {&w1, &b1, &w2, &b2, &w3, &b3}) out.push_back(p);
    }
};

template <typename T>
struct InvBlockT {
    SubnetT<T> phi;  // high -> low
    SubnetT<T> eta;  // low -> high
    SubnetT<T> rho;  // low -> high (log-scale)
    T clamp = T(1);

    InvBlockT() = default;

    InvBlockT(const std::string& prefix, int low_ch, int high_ch, int hidden, Rng& rng,
              T clamp_scale = T(1))
        : phi(prefix + ".phi", high_ch, low_ch, hidden, rng),
          eta(prefix + ".eta", low_ch, high_ch, hidden, rng),
          rho(prefix + ".rho", low_ch, high_ch, hidden, rng),
          clamp(clamp_scale) {}

    TensorT<T> clampfn(const TensorT<T>& t) const {
        return scale(add_scalar(scale(sigmoid(t), T(2)), T(-1)), clamp);
    }

    std::pair<TensorT<T>, TensorT<T>> forward(const TensorT<T>& x_l, const TensorT<T>& x_h) const {
        TensorT<T> y_l = add(x_l, phi.forward(x_h));
        TensorT<T> s = clampfn(rho.forward(y_l));
        TensorT<T> y_h = add(mul(x_h, irn::exp(s)), eta.forward(y_l));
        return {y_l, y_h};
    }

    std::pair<TensorT<T>, TensorT<T>> inverse(const TensorT<T>& y_l, const TensorT<T>& y_h) const {
        TensorT<T> s = clampfn(rho.forward(y_l));
        TensorT<T> x_h = mul(sub(y_h, eta.forward(y_l)), irn::exp(neg(s)));
        TensorT<T> x_l = sub(y_l, phi.forward(x_h));
        return {x_l, x_h};
    }

    void collect(std::vector<ParameterT<T>*>& out) {
        phi.collect(out);
        eta.collect(out);
        rho.collect(out);
    }
};

using InvBlock = InvBlockT<float>;

template <typename T>
std::pair<TensorT<T>, TensorT<T>> blocks_forward(const std::vector<InvBlockT<T>>& blocks,
                                                 TensorT<T> x_l, TensorT<T> x_h) {
    for (const auto& b : blocks) std::tie(x_l, x_h) = b.forward(x_l, x_h);
    return {x_l, x_h};
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> blocks_inverse(const std::vector<InvBlockT<T>>& blocks,
                                                 TensorT<T> y_l, TensorT<T> y_h) {
    for (auto it = blocks.rbegin(); it != blocks.rend(); ++it)
        std::tie(y_l, y_h) = it->inverse(y_l, y_h);
    return {y_l, y_h};
}

}  // namespace irn

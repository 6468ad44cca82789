#pragma once

// Latent compression for the metadata path: a small convolutional
// autoencoder squeezes the latent z down to a 4-channel code at a quarter
// of the spatial resolution, and an 8-bit uniform quantizer turns the code
// into a self-describing byte payload.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <vector>

#include "irn/errors.hpp"
#include "irn/optim.hpp"
#include "irn/tensor.hpp"

namespace irn {

struct AeConfig {
    int conv_layers = 4;  // 2 or 4
    bool pretrained = true;
    bool frozen_during_joint_training = false;
    int hidden_width = 64;

    void validate() const {
        if (conv_layers != 2 && conv_layers != 4)
            throw ConfigError("autoencoder: conv_layers must be 2 or 4, got " +
                              std::to_string(conv_layers));
        if (hidden_width < 1) throw ConfigError("autoencoder: hidden_width must be positive");
    }
};

constexpr int kCodeChannels = 4;

template <typename T>
struct LatentCodeT {
    TensorT<T> s;  // (4, h, w)
    int n = 1;     // number of downscaling stages the z came from
};

using LatentCode = LatentCodeT<float>;

// Stacks per-stage latents to the final (coarsest) resolution. Earlier-stage
// latents are rearranged space-to-depth, which is lossless, then everything
// is concatenated along channels.
template <typename T>
TensorT<T> gather_z(const std::vector<TensorT<T>>& stage_latents) {
    if (stage_latents.empty()) throw std::invalid_argument("gather_z: no stage latents");
    const int n = static_cast<int>(stage_latents.size());
    if (n == 1) return stage_latents[0];
    std::vector<TensorT<T>> aligned;
    aligned.reserve(stage_latents.size());
    for (int s = 0; s < n; ++s) {
        int factor = 1 << (n - 1 - s);
        aligned.push_back(factor == 1 ? stage_latents[s]
                                      : pixel_unshuffle(stage_latents[s], factor));
    }
    return concat_channels(aligned);
}

template <typename T>
class AutoencoderT {
public:
    AutoencoderT() = default;

    AutoencoderT(const AeConfig& cfg, int z_channels, Rng& rng) : cfg_(cfg), z_channels_(z_channels) {
        cfg_.validate();
        const int hid = cfg_.hidden_width;
        auto he = [&rng](const std::string& name, int cout, int cin) {
            T std_dev = static_cast<T>(std::sqrt(2.0 / (9.0 * cin)));
            return ParameterT<T>(name, TensorT<T>::randn({cout, cin, 3, 3}, rng, std_dev));
        };
        auto zb = [](const std::string& name, int cout) {
            return ParameterT<T>(name, TensorT<T>::zeros({cout}));
        };
        if (cfg_.conv_layers == 2) {
            // encoder: conv pool conv pool           decoder: up conv up conv
            enc_.push_back(he("ae.enc0.w", hid, z_channels));
            enc_b_.push_back(zb("ae.enc0.b", hid));
            enc_.push_back(he("ae.enc1.w", kCodeChannels, hid));
            enc_b_.push_back(zb("ae.enc1.b", kCodeChannels));
            dec_.push_back(he("ae.dec0.w", hid, kCodeChannels));
            dec_b_.push_back(zb("ae.dec0.b", hid));
            dec_.push_back(he("ae.dec1.w", z_channels, hid));
            dec_b_.push_back(zb("ae.dec1.b", z_channels));
        } else {
            // encoder: conv pool conv pool conv conv (cheap layers at the
            // coarse scales); decoder mirrors it
            enc_.push_back(he("ae.enc0.w", hid, z_channels));
            enc_b_.push_back(zb("ae.enc0.b", hid));
            enc_.push_back(he("ae.enc1.w", hid, hid));
            enc_b_.push_back(zb("ae.enc1.b", hid));
            enc_.push_back(he("ae.enc2.w", hid, hid));
            enc_b_.push_back(zb("ae.enc2.b", hid));
            enc_.push_back(he("ae.enc3.w", kCodeChannels, hid));
            enc_b_.push_back(zb("ae.enc3.b", kCodeChannels));
            dec_.push_back(he("ae.dec0.w", hid, kCodeChannels));
            dec_b_.push_back(zb("ae.dec0.b", hid));
            dec_.push_back(he("ae.dec1.w", hid, hid));
            dec_b_.push_back(zb("ae.dec1.b", hid));
            dec_.push_back(he("ae.dec2.w", hid, hid));
            dec_b_.push_back(zb("ae.dec2.b", hid));
            dec_.push_back(he("ae.dec3.w", z_channels, hid));
            dec_b_.push_back(zb("ae.dec3.b", z_channels));
        }
    }

    const AeConfig& config() const { return cfg_; }
    int z_channels() const { return z_channels_; }

    LatentCodeT<T> encode(const TensorT<T>& z, int n_stages = 1) const {
        detail::check_chw(z, "encode_z");
        if (z.dim(0) != z_channels_)
            throw std::invalid_argument("encode_z: expected " + std::to_string(z_channels_) +
                                        " channels, got " + std::to_string(z.dim(0)));
        if (z.dim(1) % 4 != 0 || z.dim(2) % 4 != 0)
            throw std::invalid_argument("encode_z: spatial extents must be divisible by 4, got " +
                                        shape_str(z.shape()));
        const T slope = T(0.2);
        TensorT<T> h = z;
        if (cfg_.conv_layers == 2) {
            h = maxpool2(leaky_relu(conv2d(h, enc_[0].value, enc_b_[0].value, 1), slope));
            h = maxpool2(conv2d(h, enc_[1].value, enc_b_[1].value, 1));
        } else {
            h = maxpool2(leaky_relu(conv2d(h, enc_[0].value, enc_b_[0].value, 1), slope));
            h = maxpool2(leaky_relu(conv2d(h, enc_[1].value, enc_b_[1].value, 1), slope));
            h = leaky_relu(conv2d(h, enc_[2].value, enc_b_[2].value, 1), slope);
            h = conv2d(h, enc_[3].value, enc_b_[3].value, 1);
        }
        return LatentCodeT<T>{h, n_stages};
    }

    TensorT<T> decode(const LatentCodeT<T>& code) const {
        detail::check_chw(code.s, "decode_code");
        if (code.s.dim(0) != kCodeChannels)
            throw std::invalid_argument("decode_code: code must have 4 channels");
        const T slope = T(0.2);
        TensorT<T> h = code.s;
        if (cfg_.conv_layers == 2) {
            h = leaky_relu(conv2d(upsample_nearest2(h), dec_[0].value, dec_b_[0].value, 1), slope);
            h = conv2d(upsample_nearest2(h), dec_[1].value, dec_b_[1].value, 1);
        } else {
            h = leaky_relu(conv2d(h, dec_[0].value, dec_b_[0].value, 1), slope);
            h = leaky_relu(conv2d(h, dec_[1].value, dec_b_[1].value, 1), slope);
            h = leaky_relu(conv2d(upsample_nearest2(h), dec_[2].value, dec_b_[2].value, 1), slope);
            h = conv2d(upsample_nearest2(h), dec_[3].value, dec_b_[3].value, 1);
        }
        return h;
    }

    void collect(std::vector<ParameterT<T>*>& out) {
        for (size_t i = 0; i < enc_.size(); ++i) {
            out.push_back(&enc_[i]);
            out.push_back(&enc_b_[i]);
        }
        for (size_t i = 0; i < dec_.size(); ++i) {
            out.push_back(&dec_[i]);
            out.push_back(&dec_b_[i]);
        }
    }

    // test hook: forces decode(zero code) == 0 even after training
    void zero_final_decoder_layer() {
        auto& w = dec_.back().value;
        std::fill(w.vec().begin(), w.vec().end(), T(0));
        auto& b = dec_b_.back().value;
        std::fill(b.vec().begin(), b.vec().end(), T(0));
    }

private:
    AeConfig cfg_;
    int z_channels_ = 0;
    std::vector<ParameterT<T>> enc_, enc_b_;
    std::vector<ParameterT<T>> dec_, dec_b_;
};

using Autoencoder = AutoencoderT<float>;

// ---- standalone pretraining on random z ----

struct PretrainStats {
    double mse_initial = 0.0;  // held-out reconstruction MSE before training
    double mse_final = 0.0;    // same set after training
    std::vector<double> loss_trace;
};

template <typename T>
PretrainStats pretrain_ae(AutoencoderT<T>& ae, const Shape& z_shape, int samples, int steps,
                          Rng& rng, const AdamConfig& adam = {}) {
    if (steps < 1) throw ConfigError("pretrain_ae: steps must be >= 1");
    if (samples < 1) throw ConfigError("pretrain_ae: samples must be >= 1");

    std::vector<ParameterT<T>*> params;
    ae.collect(params);

    std::vector<TensorT<T>> held_out;
    const int held = 4;
    for (int i = 0; i < held; ++i) held_out.push_back(TensorT<T>::randn(z_shape, rng));

    auto eval_mse = [&]() {
        NoGradGuard ng;
        double acc = 0.0;
        for (const auto& z : held_out) {
            auto rec = ae.decode(ae.encode(z));
            double mse = 0.0;
            for (size_t i = 0; i < z.numel(); ++i) {
                double d = static_cast<double>(rec.data()[i]) - z.data()[i];
                mse += d * d;
            }
            acc += mse / static_cast<double>(z.numel());
        }
        return acc / held;
    };

    PretrainStats stats;
    stats.mse_initial = eval_mse();
    stats.loss_trace.reserve(static_cast<size_t>(steps));

    std::vector<TensorT<T>> pool;
    pool.reserve(static_cast<size_t>(samples));
    for (int i = 0; i < samples; ++i) pool.push_back(TensorT<T>::randn(z_shape, rng));

    for (int it = 0; it < steps; ++it) {
        const TensorT<T>& z = pool[rng.uniform_int(samples)];
        auto rec = ae.decode(ae.encode(z));
        auto diff = sub(rec, z);
        auto loss = reduce_mean(mul(diff, diff));
        stats.loss_trace.push_back(static_cast<double>(loss.item()));
        backward(loss);
        adam_step(params, adam);
    }
    stats.mse_final = eval_mse();
    return stats;
}

// ---- 8-bit uniform quantization with a min/max header ----

struct QuantizedCode {
    std::vector<uint8_t> bytes;  // channel-major, row-major, 4*h*w entries
    float min = 0.0f;
    float max = 0.0f;
    int h = 0;
    int w = 0;
    int n = 1;

    bool operator==(const QuantizedCode& o) const {
        return bytes == o.bytes && min == o.min && max == o.max && h == o.h && w == o.w && n == o.n;
    }
};

template <typename T>
QuantizedCode quantize_code(const LatentCodeT<T>& code) {
    QuantizedCode q;
    q.h = code.s.dim(1);
    q.w = code.s.dim(2);
    q.n = code.n;
    const T* p = code.s.data();
    const size_t n = code.s.numel();
    T lo = p[0], hi = p[0];
    for (size_t i = 1; i < n; ++i) {
        lo = std::min(lo, p[i]);
        hi = std::max(hi, p[i]);
    }
    q.min = static_cast<float>(lo);
    q.max = static_cast<float>(hi);
    q.bytes.resize(n, 0);
    if (q.max > q.min) {
        const double inv = 256.0 / (static_cast<double>(q.max) - q.min);
        for (size_t i = 0; i < n; ++i) {
            int level = static_cast<int>((static_cast<double>(p[i]) - q.min) * inv);
            q.bytes[i] = static_cast<uint8_t>(std::clamp(level, 0, 255));
        }
    }
    return q;
}

template <typename T = float>
LatentCodeT<T> dequantize_code(const QuantizedCode& q) {
    if (q.h < 1 || q.w < 1) throw FormatError("quantized code: bad extents");
    const size_t n = static_cast<size_t>(kCodeChannels) * q.h * q.w;
    if (q.bytes.size() != n) throw FormatError("quantized code: payload length mismatch");
    LatentCodeT<T> code;
    code.n = q.n;
    code.s = TensorT<T>::zeros({kCodeChannels, q.h, q.w});
    T* p = code.s.data();
    if (q.max > q.min) {
        const double step = (static_cast<double>(q.max) - q.min) / 256.0;
        for (size_t i = 0; i < n; ++i)
            p[i] = static_cast<T>(q.min + (q.bytes[i] + 0.5) * step);
    } else {
        for (size_t i = 0; i < n; ++i) p[i] = static_cast<T>(q.min);
    }
    return code;
}

// Byte layout (big-endian): version, n, u32 h, u32 w, f32 min, f32 max,
// then 4*h*w payload bytes.
namespace detail {
inline void put_u32be(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}
inline uint32_t get_u32be(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | p[3];
}
inline void put_f32be(std::vector<uint8_t>& out, float f) {
    uint32_t v;
    static_assert(sizeof(v) == sizeof(f));
    std::memcpy(&v, &f, 4);
    put_u32be(out, v);
}
inline float get_f32be(const uint8_t* p) {
    uint32_t v = get_u32be(p);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}
}  // namespace detail

constexpr uint8_t kQuantizedCodeVersion = 1;

inline std::vector<uint8_t> serialize_code(const QuantizedCode& q) {
    std::vector<uint8_t> out;
    out.reserve(18 + q.bytes.size());
    out.push_back(kQuantizedCodeVersion);
    out.push_back(static_cast<uint8_t>(q.n));
    detail::put_u32be(out, static_cast<uint32_t>(q.h));
    detail::put_u32be(out, static_cast<uint32_t>(q.w));
    detail::put_f32be(out, q.min);
    detail::put_f32be(out, q.max);
    out.insert(out.end(), q.bytes.begin(), q.bytes.end());
    return out;
}

inline QuantizedCode parse_code(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 18) throw FormatError("quantized code: truncated header");
    if (bytes[0] != kQuantizedCodeVersion)
        throw FormatError("quantized code: unsupported version " + std::to_string(bytes[0]));
    QuantizedCode q;
    q.n = bytes[1];
    if (q.n < 1 || q.n > 2) throw FormatError("quantized code: bad stage count field");
    q.h = static_cast<int>(detail::get_u32be(bytes.data() + 2));
    q.w = static_cast<int>(detail::get_u32be(bytes.data() + 6));
    q.min = detail::get_f32be(bytes.data() + 10);
    q.max = detail::get_f32be(bytes.data() + 14);
    if (q.h < 1 || q.w < 1 || q.h > (1 << 24) || q.w > (1 << 24))
        throw FormatError("quantized code: bad extents field");
    const size_t expect = static_cast<size_t>(kCodeChannels) * q.h * q.w;
    if (bytes.size() != 18 + expect) throw FormatError("quantized code: payload length mismatch");
    q.bytes.assign(bytes.begin() + 18, bytes.end());
    return q;
}

}  // namespace irn

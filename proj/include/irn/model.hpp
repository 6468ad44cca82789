#pragma once

// The full rescaling pipeline: per stage, a Haar split feeds a stack of
// coupling blocks; the lower branch becomes the LR image and the upper
// branches are gathered into the latent z. Three variants differ in what
// happens to z:
//   baseline  z is dropped, upscaling runs with a zero latent
//   alpha     the lower branch carries one extra plane that is stored as
//             the alpha channel of an RGBA output
//   meta      z is compressed by the autoencoder and stored as metadata
//
// Scale 2 uses one stage, scale 4 uses two. In the alpha variant the first
// stage pre-splits [rgb-low | alpha] with the first high channel removed;
// the second stage treats the 4-plane lower branch as its input image, so
// the stored artifact is exactly RGBA at every scale. The removed channel
// is recovered at the end of the first stage's inverse.

#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "irn/errors.hpp"
#include "irn/invnet.hpp"
#include "irn/latent_codec.hpp"
#include "irn/optim.hpp"
#include "irn/tensor.hpp"
#include "irn/wavelet.hpp"

namespace irn {

enum class Variant { baseline, alpha, meta };

inline const char* to_string(Variant v) {
    switch (v) {
        case Variant::baseline: return "baseline";
        case Variant::alpha: return "alpha";
        case Variant::meta: return "meta";
    }
    return "?";
}

inline Variant variant_from_string(const std::string& s) {
    if (s == "baseline") return Variant::baseline;
    if (s == "alpha") return Variant::alpha;
    if (s == "meta") return Variant::meta;
    throw ConfigError("unknown variant '" + s + "' (expected baseline|alpha|meta)");
}

struct ModelConfig {
    int scale = 2;  // 2 or 4
    Variant variant = Variant::baseline;
    int blocks_per_stage = 8;
    int subnet_width = 32;
    float clamp = 1.0f;
    SplitMode split_mode = SplitMode::baseline;  // alpha variant: pre or post split
    bool alpha_avg_init = true;
    AeConfig ae;  // meaningful only for the meta variant

    int stages() const { return scale == 4 ? 2 : 1; }

    // Input extents must divide by this for the pipeline (and the AE, for
    // the meta variant) to produce integral shapes.
    int required_divisor() const { return 2 * scale * (variant == Variant::meta ? 2 : 1); }

    void validate() const {
        if (scale != 2 && scale != 4) throw ConfigError("scale must be 2 or 4");
        if (blocks_per_stage < 1) throw ConfigError("blocks_per_stage must be >= 1");
        if (subnet_width < 1) throw ConfigError("subnet_width must be >= 1");
        if (variant == Variant::alpha) {
            if (split_mode == SplitMode::baseline)
                throw ConfigError("alpha variant requires pre_split_alpha or post_split_alpha");
        } else if (split_mode != SplitMode::baseline) {
            throw ConfigError("split mode " + std::string(to_string(split_mode)) +
                              " only applies to the alpha variant");
        }
        if (variant == Variant::meta) ae.validate();
    }
};

template <typename T>
struct RescaleArtifactT {
    TensorT<T> lr_rgb;                 // (3, H/s, W/s), nominally in [0,1]
    std::optional<TensorT<T>> alpha;   // (1, H/s, W/s) in (0,1); alpha variant only
    std::optional<QuantizedCode> meta;  // meta variant only

    Variant variant() const {
        if (alpha && meta) throw MismatchError("artifact carries both alpha and metadata");
        if (alpha) return Variant::alpha;
        if (meta) return Variant::meta;
        return Variant::baseline;
    }
};

using RescaleArtifact = RescaleArtifactT<float>;

// Differentiable products of one downscale pass; used directly by training.
template <typename T>
struct ForwardPassT {
    TensorT<T> lr_rgb;   // unclamped
    TensorT<T> alpha;    // sigmoid-domain alpha plane, defined for alpha variant
    TensorT<T> z;        // gathered latent
    TensorT<T> code;     // AE code (meta)
    TensorT<T> z_hat;    // AE reconstruction of z (meta)
};

template <typename T>
class RescaleModelT {
public:
    static constexpr int kColorChannels = 3;
    static constexpr T kLogitEps = T(1e-6);
    // Fixed gain applied to the coefficient stack after the forward Haar and
    // removed before the inverse. The orthonormal transform leaves the low
    // band at twice the local mean; halving the stack puts the LR branch in
    // [0,1] where the guidance target and the 8-bit container live, and the
    // composition stays exactly invertible.
    static constexpr T kStackGain = T(0.5);

    RescaleModelT() = default;

    RescaleModelT(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        int in_ch = kColorChannels;
        for (int s = 0; s < cfg_.stages(); ++s) {
            SplitSpec spec = stage_split(s, in_ch);
            std::vector<InvBlockT<T>> blocks;
            blocks.reserve(static_cast<size_t>(cfg_.blocks_per_stage));
            for (int b = 0; b < cfg_.blocks_per_stage; ++b)
                blocks.emplace_back("stage" + std::to_string(s) + ".block" + std::to_string(b),
                                    spec.low_channels, spec.high_channels, cfg_.subnet_width, rng,
                                    static_cast<T>(cfg_.clamp));
            stages_.push_back(std::move(blocks));
            stage_specs_.push_back(spec);
            stage_in_ch_.push_back(in_ch);
            latent_ch_.push_back(spec.high_channels);
            in_ch = spec.low_channels;
        }
        if (cfg_.variant == Variant::meta)
            ae_ = AutoencoderT<T>(cfg_.ae, gathered_z_channels(), rng);
    }

    const ModelConfig& config() const { return cfg_; }

    int gathered_z_channels() const {
        int total = 0;
        const int n = cfg_.stages();
        for (int s = 0; s < n; ++s) {
            int f = 1 << (n - 1 - s);
            total += latent_ch_[s] * f * f;
        }
        return total;
    }

    Shape latent_shape(int lr_h, int lr_w) const { return {gathered_z_channels(), lr_h, lr_w}; }

    AutoencoderT<T>& autoencoder() {
        if (!ae_) throw MismatchError("model has no autoencoder (not a meta variant)");
        return *ae_;
    }

    // ---- differentiable pipeline ----

    ForwardPassT<T> forward_downscale(const TensorT<T>& hr) const {
        detail::check_chw(hr, "downscale");
        if (hr.dim(0) != kColorChannels)
            throw std::invalid_argument("downscale: expected a 3-channel image");
        const int div = cfg_.required_divisor();
        if (hr.dim(1) % div != 0 || hr.dim(2) % div != 0)
            throw std::invalid_argument("downscale: extents " + shape_str(hr.shape()) +
                                        " must be divisible by " + std::to_string(div));

        ForwardPassT<T> out;
        TensorT<T> x = hr;
        std::vector<TensorT<T>> latents;
        for (int s = 0; s < cfg_.stages(); ++s) {
            HaarStackT<T> stack = haar_forward(x);
            stack.coeffs = scale(stack.coeffs, kStackGain);
            SplitOutputT<T> split = split_channels(stack, stage_specs_[s]);
            auto [y_l, y_h] = blocks_forward(stages_[s], split.x_l, split.x_h);
            latents.push_back(y_h);
            x = y_l;
        }
        out.z = gather_z(latents);

        if (cfg_.variant == Variant::alpha && cfg_.split_mode == SplitMode::pre_split_alpha) {
            out.lr_rgb = slice_channels(x, 0, kColorChannels);
            out.alpha = sigmoid(slice_channels(x, kColorChannels, kColorChannels + 1));
        } else if (cfg_.variant == Variant::alpha) {
            // post-split ablation: the alpha plane is carved off the latent
            // after the blocks
            out.lr_rgb = x;
            out.alpha = sigmoid(slice_channels(out.z, 0, 1));
        } else {
            out.lr_rgb = x;
        }

        if (cfg_.variant == Variant::meta) {
            LatentCodeT<T> code = ae_->encode(out.z, cfg_.stages());
            out.code = code.s;
            out.z_hat = ae_->decode(code);
        }
        return out;
    }

    // Inverse pipeline from LR tensors. z_hat must have the gathered-z shape;
    // for the alpha variant `alpha` is the stored sigmoid-domain plane.
    TensorT<T> forward_upscale(const TensorT<T>& lr_rgb, const TensorT<T>& alpha,
                               const TensorT<T>& z_hat) const {
        TensorT<T> y_l;
        TensorT<T> z_eff = z_hat;

        if (cfg_.variant == Variant::alpha && cfg_.split_mode == SplitMode::pre_split_alpha) {
            if (!alpha.defined()) throw MismatchError("alpha variant needs an alpha plane");
            y_l = concat_channels<T>({lr_rgb, logit_clamped(alpha, kLogitEps)});
        } else if (cfg_.variant == Variant::alpha) {
            if (!alpha.defined()) throw MismatchError("alpha variant needs an alpha plane");
            // post-split: channel 0 of the gathered latent is restored from
            // the stored plane
            TensorT<T> a = logit_clamped(alpha, kLogitEps);
            z_eff = replace_first_channel(z_hat, a);
            y_l = lr_rgb;
        } else {
            y_l = lr_rgb;
        }
        std::vector<TensorT<T>> stage_latents = split_z(z_eff);

        for (int s = cfg_.stages() - 1; s >= 0; --s) {
            auto [x_l, x_h] = blocks_inverse(stages_[s], y_l, stage_latents[s]);
            TensorT<T> coeffs;
            if (stage_specs_[s].mode == SplitMode::pre_split_alpha) {
                const int C = stage_in_ch_[s];
                TensorT<T> low = slice_channels(x_l, 0, C);
                TensorT<T> a = slice_channels(x_l, C, C + 1);
                TensorT<T> x_m = recover_removed_channel(a, x_h, C);
                coeffs = concat_channels<T>({low, x_m, x_h});
            } else {
                coeffs = concat_channels<T>({x_l, x_h});
            }
            y_l = haar_inverse(scale(coeffs, T(1) / kStackGain));
        }
        return y_l;
    }

    // ---- inference wrappers ----

    struct DownscaleResult {
        RescaleArtifactT<T> artifact;
        TensorT<T> z;
    };

    DownscaleResult downscale(const TensorT<T>& hr) const {
        NoGradGuard ng;
        ForwardPassT<T> fw = forward_downscale(hr);
        DownscaleResult r;
        r.artifact.lr_rgb = fw.lr_rgb;
        r.z = fw.z;
        if (cfg_.variant == Variant::alpha) r.artifact.alpha = fw.alpha;
        if (cfg_.variant == Variant::meta)
            r.artifact.meta = quantize_code(LatentCodeT<T>{fw.code, cfg_.stages()});
        return r;
    }

    TensorT<T> upscale(const RescaleArtifactT<T>& artifact,
                       const TensorT<T>* z_override = nullptr) const {
        NoGradGuard ng;
        if (artifact.variant() != cfg_.variant)
            throw MismatchError(std::string("artifact variant '") + to_string(artifact.variant()) +
                                "' does not match model variant '" + to_string(cfg_.variant) + "'");
        const int lh = artifact.lr_rgb.dim(1), lw = artifact.lr_rgb.dim(2);
        TensorT<T> z_hat;
        if (z_override) {
            z_hat = *z_override;
        } else if (cfg_.variant == Variant::meta) {
            LatentCodeT<T> code = dequantize_code<T>(*artifact.meta);
            if (code.n != cfg_.stages())
                throw MismatchError("metadata code stage count does not match the model");
            z_hat = ae_->decode(code);
        } else {
            z_hat = TensorT<T>::zeros(latent_shape(lh, lw));
        }
        TensorT<T> alpha;
        if (artifact.alpha) alpha = remap_alpha_extremes(*artifact.alpha);
        return forward_upscale(artifact.lr_rgb, alpha, z_hat);
    }

    // ---- parameters / checkpoints ----

    std::vector<ParameterT<T>*> parameters() {
        std::vector<ParameterT<T>*> out;
        for (auto& blocks : stages_)
            for (auto& b : blocks) b.collect(out);
        if (ae_) ae_->collect(out);
        return out;
    }

    std::vector<ParameterT<T>*> network_parameters() {  // everything except the AE
        std::vector<ParameterT<T>*> out;
        for (auto& blocks : stages_)
            for (auto& b : blocks) b.collect(out);
        return out;
    }

    std::vector<ParameterT<T>*> ae_parameters() {
        std::vector<ParameterT<T>*> out;
        if (ae_) ae_->collect(out);
        return out;
    }

    void save(const std::string& path) {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw DataError("cannot open checkpoint for writing: " + path);
        f.write(kMagic, 8);
        ckpt::write_u32(f, 1);  // format version
        ckpt::write_u32(f, static_cast<uint32_t>(cfg_.scale));
        ckpt::write_u32(f, static_cast<uint32_t>(cfg_.variant));
        ckpt::write_u32(f, static_cast<uint32_t>(cfg_.blocks_per_stage));
        ckpt::write_u32(f, static_cast<uint32_t>(cfg_.subnet_width));
        ckpt::write_f32(f, cfg_.clamp);
        ckpt::write_u32(f, static_cast<uint32_t>(cfg_.split_mode));
        ckpt::write_u32(f, cfg_.alpha_avg_init ? 1 : 0);
        ckpt::write_u32(f, static_cast<uint32_t>(cfg_.ae.conv_layers));
        ckpt::write_u32(f, cfg_.ae.pretrained ? 1 : 0);
        ckpt::write_u32(f, cfg_.ae.frozen_during_joint_training ? 1 : 0);
        ckpt::write_u32(f, static_cast<uint32_t>(cfg_.ae.hidden_width));
        ckpt::save_params(f, parameters());
        if (!f) throw DataError("failed while writing checkpoint: " + path);
    }

    static RescaleModelT load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw DataError("cannot open checkpoint: " + path);
        char magic[8];
        f.read(magic, 8);
        if (!f || std::memcmp(magic, kMagic, 8) != 0)
            throw FormatError("checkpoint: bad magic in " + path);
        if (ckpt::read_u32(f) != 1) throw FormatError("checkpoint: unsupported format version");
        ModelConfig cfg;
        cfg.scale = static_cast<int>(ckpt::read_u32(f));
        cfg.variant = static_cast<Variant>(ckpt::read_u32(f));
        cfg.blocks_per_stage = static_cast<int>(ckpt::read_u32(f));
        cfg.subnet_width = static_cast<int>(ckpt::read_u32(f));
        cfg.clamp = ckpt::read_f32(f);
        cfg.split_mode = static_cast<SplitMode>(ckpt::read_u32(f));
        cfg.alpha_avg_init = ckpt::read_u32(f) != 0;
        cfg.ae.conv_layers = static_cast<int>(ckpt::read_u32(f));
        cfg.ae.pretrained = ckpt::read_u32(f) != 0;
        cfg.ae.frozen_during_joint_training = ckpt::read_u32(f) != 0;
        cfg.ae.hidden_width = static_cast<int>(ckpt::read_u32(f));
        if (!f) throw FormatError("checkpoint: truncated header in " + path);

        Rng rng(0);  // weights are overwritten below
        RescaleModelT model(cfg, rng);
        ckpt::load_params(f, model.parameters());
        return model;
    }

private:
    static constexpr const char kMagic[9] = "IRNCKPT1";

    SplitSpec stage_split(int stage, int in_ch) const {
        if (cfg_.variant == Variant::alpha && cfg_.split_mode == SplitMode::pre_split_alpha &&
            stage == 0)
            return SplitSpec::make(SplitMode::pre_split_alpha, in_ch, cfg_.alpha_avg_init);
        return SplitSpec::make(SplitMode::baseline, in_ch);
    }

    // Splits a gathered z back into per-stage latents at their native
    // resolutions (inverse of gather_z).
    std::vector<TensorT<T>> split_z(const TensorT<T>& z) const {
        const int n = cfg_.stages();
        if (z.dim(0) != gathered_z_channels())
            throw std::invalid_argument("latent has " + std::to_string(z.dim(0)) +
                                        " channels, expected " +
                                        std::to_string(gathered_z_channels()));
        std::vector<TensorT<T>> out;
        int off = 0;
        for (int s = 0; s < n; ++s) {
            int f = 1 << (n - 1 - s);
            int ch = latent_ch_[s] * f * f;
            TensorT<T> part = slice_channels(z, off, off + ch);
            out.push_back(f == 1 ? part : pixel_shuffle(part, f));
            off += ch;
        }
        return out;
    }

    static TensorT<T> replace_first_channel(const TensorT<T>& t, const TensorT<T>& plane) {
        return concat_channels<T>({plane, slice_channels(t, 1, t.dim(0))});
    }

    // Quantized alpha bytes 0 and 255 would hit the logit singularities; pull
    // them half a quantization step inward.
    static TensorT<T> remap_alpha_extremes(const TensorT<T>& a) {
        TensorT<T> out = a.clone();
        for (auto& v : out.vec()) {
            if (v <= T(0)) v = T(0.5 / 256.0);
            else if (v >= T(1)) v = T(255.5 / 256.0);
        }
        return out;
    }

    ModelConfig cfg_;
    std::vector<std::vector<InvBlockT<T>>> stages_;
    std::vector<SplitSpec> stage_specs_;
    std::vector<int> stage_in_ch_;
    std::vector<int> latent_ch_;
    std::optional<AutoencoderT<T>> ae_;
};

using RescaleModel = RescaleModelT<float>;

}  // namespace irn

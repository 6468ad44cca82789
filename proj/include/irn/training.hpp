#pragma once

// Joint optimization of the rescaling network (plus the autoencoder for the
// meta variant) under the four-part mixture loss
//   L = l1 * L_r + l2 * L_g + l3 * L_d + l4 * L_mse
// where L_r is the L1 reconstruction loss on the HR image, L_g is the L2
// guidance loss pulling the LR output toward a bicubic reference, L_d pulls
// the latent toward the zero vector used at inversion, and L_mse is the
// autoencoder reconstruction error. Patches are sampled and flipped with a
// seeded generator, so a (seed, config, data) triple pins the whole run.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "irn/errors.hpp"
#include "irn/metrics.hpp"
#include "irn/model.hpp"
#include "irn/optim.hpp"
#include "irn/tensor.hpp"

namespace irn {

struct LossWeights {
    double lambda1 = 1.0;  // HR reconstruction (L1)
    double lambda2 = 4.0;  // LR guidance (L2)
    double lambda3 = 1.0;  // latent toward zero
    double lambda4 = 1.0;  // AE reconstruction (meta only)

    void validate(Variant variant) const {
        if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || lambda4 < 0)
            throw ConfigError("loss weights must be non-negative");
        if (lambda1 + lambda2 + lambda3 + lambda4 <= 0)
            throw ConfigError("at least one loss weight must be positive");
        if (variant != Variant::meta && lambda4 != 0)
            throw ConfigError("lambda4 applies only to the meta variant");
    }

    static LossWeights defaults_for(int scale, Variant variant) {
        LossWeights w;
        w.lambda2 = static_cast<double>(scale) * scale;  // balances pixel counts
        if (variant != Variant::meta) w.lambda4 = 0.0;
        return w;
    }
};

struct TrainConfig {
    int iterations = 2000;
    int batch = 4;
    int patch_size = 64;
    double lr = 2e-4;
    int log_every = 1;
    uint64_t seed = 0;
    bool freeze_ae = false;

    void validate(const ModelConfig& mc) const {
        if (iterations < 1) throw ConfigError("iterations must be >= 1");
        if (batch < 1) throw ConfigError("batch must be >= 1");
        if (patch_size % mc.required_divisor() != 0)
            throw ConfigError("patch_size must be divisible by " +
                              std::to_string(mc.required_divisor()));
        if (log_every < 1) throw ConfigError("log_every must be >= 1");
    }
};

struct LossRow {
    int iteration = 0;
    double l_r = 0, l_g = 0, l_d = 0, l_mse = 0, total = 0;
};

// The bicubic reference the LR output is pulled toward.
template <typename T>
TensorT<T> guidance_target(const TensorT<T>& hr, int scale) {
    return bicubic_resize(hr, hr.dim(1) / scale, hr.dim(2) / scale);
}

template <typename T>
struct LossTerms {
    TensorT<T> l_r, l_g, l_d, l_mse, total;
};

template <typename T>
LossTerms<T> loss_total(const TensorT<T>& hr, const ForwardPassT<T>& fw, const TensorT<T>& recon,
                        const TensorT<T>& guidance_lr, const LossWeights& w) {
    if (recon.shape() != hr.shape())
        throw std::invalid_argument("loss: reconstruction shape " + shape_str(recon.shape()) +
                                    " does not match HR " + shape_str(hr.shape()));
    LossTerms<T> t;
    t.l_r = reduce_mean(irn::abs(sub(recon, hr)));
    auto gd = sub(fw.lr_rgb, guidance_lr);
    t.l_g = reduce_mean(mul(gd, gd));
    t.l_d = reduce_mean(mul(fw.z, fw.z));
    TensorT<T> total = scale(t.l_r, static_cast<T>(w.lambda1));
    total = add(total, scale(t.l_g, static_cast<T>(w.lambda2)));
    total = add(total, scale(t.l_d, static_cast<T>(w.lambda3)));
    if (fw.z_hat.defined()) {
        auto ae_diff = sub(fw.z_hat, fw.z);
        t.l_mse = reduce_mean(mul(ae_diff, ae_diff));
        total = add(total, scale(t.l_mse, static_cast<T>(w.lambda4)));
    } else {
        t.l_mse = TensorT<T>::scalar(T(0));
    }
    t.total = total;
    return t;
}

// ---- dataset ----

template <typename T>
struct DatasetT {
    std::vector<TensorT<T>> images;
    std::vector<std::string> names;
};

using Dataset = DatasetT<float>;

template <typename T>
TensorT<T> extract_patch(const TensorT<T>& img, int y0, int x0, int size, bool flip_h,
                         bool flip_v) {
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    (void)H;
    TensorT<T> out = TensorT<T>::zeros({C, size, size});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const int sy = y0 + (flip_v ? size - 1 - y : y);
                const int sx = x0 + (flip_h ? size - 1 - x : x);
                out.data()[(static_cast<size_t>(c) * size + y) * size + x] =
                    img.data()[(static_cast<size_t>(c) * img.dim(1) + sy) * W + sx];
            }
    return out;
}

// ---- training loop ----

struct TrainResult {
    std::vector<LossRow> trace;
};

template <typename T>
TrainResult train(RescaleModelT<T>& model, const DatasetT<T>& data, const TrainConfig& tc,
                  const LossWeights& w) {
    const ModelConfig& mc = model.config();
    tc.validate(mc);
    w.validate(mc.variant);
    if (data.images.empty()) throw ConfigError("training dataset is empty");
    for (const auto& img : data.images)
        if (img.dim(1) < tc.patch_size || img.dim(2) < tc.patch_size)
            throw ConfigError("training image smaller than patch_size " +
                              std::to_string(tc.patch_size));

    Rng rng(tc.seed);
    std::vector<ParameterT<T>*> params =
        tc.freeze_ae ? model.network_parameters() : model.parameters();

    AdamConfig adam;
    TrainResult result;
    result.trace.reserve(static_cast<size_t>(tc.iterations) / tc.log_every + 1);

    for (int it = 0; it < tc.iterations; ++it) {
        // piecewise-constant decay: halve at 50%, halve again at 75%
        adam.lr = tc.lr;
        if (it >= tc.iterations / 2) adam.lr *= 0.5;
        if (it >= tc.iterations * 3 / 4) adam.lr *= 0.5;

        LossRow row;
        row.iteration = it;
        for (int b = 0; b < tc.batch; ++b) {
            const TensorT<T>& img = data.images[rng.uniform_int(static_cast<int>(data.images.size()))];
            const int y0 = rng.uniform_int(img.dim(1) - tc.patch_size + 1);
            const int x0 = rng.uniform_int(img.dim(2) - tc.patch_size + 1);
            const bool fh = rng.uniform() < 0.5;
            const bool fv = rng.uniform() < 0.5;
            TensorT<T> hr = extract_patch(img, y0, x0, tc.patch_size, fh, fv);

            ForwardPassT<T> fw = model.forward_downscale(hr);
            TensorT<T> z_hat = fw.z_hat.defined()
                                   ? fw.z_hat
                                   : TensorT<T>::zeros(fw.z.shape());
            TensorT<T> recon = model.forward_upscale(fw.lr_rgb, fw.alpha, z_hat);
            TensorT<T> guide;
            {
                NoGradGuard ng;
                guide = guidance_target(hr, mc.scale);
            }
            LossTerms<T> lt = loss_total(hr, fw, recon, guide, w);

            row.l_r += static_cast<double>(lt.l_r.item()) / tc.batch;
            row.l_g += static_cast<double>(lt.l_g.item()) / tc.batch;
            row.l_d += static_cast<double>(lt.l_d.item()) / tc.batch;
            row.l_mse += static_cast<double>(lt.l_mse.item()) / tc.batch;
            row.total += static_cast<double>(lt.total.item()) / tc.batch;

            TensorT<T> step_loss = scale(lt.total, T(1) / static_cast<T>(tc.batch));
            backward(step_loss);
        }
        if (!std::isfinite(row.total))
            throw std::runtime_error("training diverged: non-finite loss at iteration " +
                                     std::to_string(it));
        adam_step(params, adam);
        if (it % tc.log_every == 0 || it == tc.iterations - 1) result.trace.push_back(row);
    }
    return result;
}

inline void write_loss_csv(const std::string& path, const std::vector<LossRow>& trace) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw DataError("cannot open loss csv for writing: " + path);
    std::fputs("iteration,L_r,L_g,L_d,L_mse,total\n", f);
    for (const auto& r : trace)
        std::fprintf(f, "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.iteration, r.l_r, r.l_g, r.l_d, r.l_mse,
                     r.total);
    std::fclose(f);
}

}  // namespace irn

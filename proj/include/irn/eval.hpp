#pragma once

// Dataset scoring: downscale, quantize exactly as the file container would,
// upscale, then PSNR/SSIM on the luma plane against the (cropped) original.
// The in-memory path and the through-files path share the same 8-bit
// rounding, so their scores agree bit for bit.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "irn/errors.hpp"
#include "irn/metrics.hpp"
#include "irn/model.hpp"
#include "irn/pngio.hpp"
#include "irn/training.hpp"

namespace irn {

template <typename T>
DatasetT<T> load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
    std::vector<std::string> paths;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png") paths.push_back(e.path().string());
    }
    std::sort(paths.begin(), paths.end());
    DatasetT<T> ds;
    for (const auto& p : paths) {
        try {
            ds.images.push_back(read_image<T>(p));
            ds.names.push_back(std::filesystem::path(p).filename().string());
        } catch (const std::exception& e) {
            std::cerr << "warning: skipping unreadable image " << p << ": " << e.what() << "\n";
        }
    }
    return ds;
}

// Applies the container's 8-bit rounding to a [0,1] plane.
template <typename T>
TensorT<T> quantize_plane(const TensorT<T>& t) {
    TensorT<T> out = t.clone();
    for (auto& v : out.vec()) v = static_cast<T>(to_byte(static_cast<float>(v)) / 255.0);
    return out;
}

template <typename T>
RescaleArtifactT<T> quantize_artifact(const RescaleArtifactT<T>& a) {
    RescaleArtifactT<T> q;
    q.lr_rgb = quantize_plane(a.lr_rgb);
    if (a.alpha) q.alpha = quantize_plane(*a.alpha);
    q.meta = a.meta;  // already byte-quantized
    return q;
}

// Crops an image so the pipeline divisibility constraint holds.
template <typename T>
TensorT<T> crop_to_divisor(const TensorT<T>& img, int divisor) {
    const int H = img.dim(1) / divisor * divisor;
    const int W = img.dim(2) / divisor * divisor;
    if (H < divisor || W < divisor)
        throw DataError("image too small for the pipeline (needs at least " +
                        std::to_string(divisor) + " pixels per side)");
    if (H == img.dim(1) && W == img.dim(2)) return img;
    TensorT<T> out = TensorT<T>::zeros({img.dim(0), H, W});
    for (int c = 0; c < img.dim(0); ++c)
        for (int y = 0; y < H; ++y)
            std::copy(img.data() + (static_cast<size_t>(c) * img.dim(1) + y) * img.dim(2),
                      img.data() + (static_cast<size_t>(c) * img.dim(1) + y) * img.dim(2) + W,
                      out.data() + (static_cast<size_t>(c) * H + y) * W);
    return out;
}

struct ImageScore {
    double psnr_db = 0.0;
    double ssim = 0.0;
};

template <typename T>
ImageScore score_planes(const TensorT<T>& recon, const TensorT<T>& reference, int crop) {
    TensorT<T> a = to_luma(clamp01(recon));
    TensorT<T> b = to_luma(reference);
    if (crop > 0) {
        a = crop_border(a, crop);
        b = crop_border(b, crop);
    }
    ImageScore s;
    s.psnr_db = psnr(a, b);
    s.ssim = ssim(a, b);
    return s;
}

// Full model pipeline with container quantization in the loop.
template <typename T>
ImageScore score_image(const RescaleModelT<T>& model, const TensorT<T>& hr_in, int crop_border_px) {
    NoGradGuard ng;
    TensorT<T> hr = crop_to_divisor(hr_in, model.config().required_divisor());
    auto down = model.downscale(hr);
    RescaleArtifactT<T> q = quantize_artifact(down.artifact);
    TensorT<T> recon = model.upscale(q);
    return score_planes(recon, hr, crop_border_px);
}

// Bicubic down/up reference method.
template <typename T>
ImageScore score_image_bicubic(const TensorT<T>& hr_in, int scale, int crop_border_px) {
    TensorT<T> hr = crop_to_divisor(hr_in, 2 * scale);
    TensorT<T> lr = quantize_plane(clamp01(bicubic_resize(hr, hr.dim(1) / scale, hr.dim(2) / scale)));
    TensorT<T> up = bicubic_resize(lr, hr.dim(1), hr.dim(2));
    return score_planes(up, hr, crop_border_px);
}

struct EvalReportRow {
    std::string dataset;
    std::string image;
    std::string method;
    int scale = 0;
    double psnr_db = 0.0;
    double ssim = 0.0;
};

inline void write_eval_csv(const std::string& path, const std::vector<EvalReportRow>& rows) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw DataError("cannot open report for writing: " + path);
    std::fputs("dataset,image,method,scale,psnr_db,ssim\n", f);
    for (const auto& r : rows)
        std::fprintf(f, "%s,%s,%s,%d,%.6f,%.6f\n", r.dataset.c_str(), r.image.c_str(),
                     r.method.c_str(), r.scale, r.psnr_db, r.ssim);
    std::fclose(f);
}

}  // namespace irn

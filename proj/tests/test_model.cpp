#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "gradcheck.hpp"
#include "irn/model.hpp"

using namespace irn;
using irn::testing::max_abs_diff;

namespace {

template <typename T>
void perturb_model(RescaleModelT<T>& m, uint64_t seed, T amount) {
    Rng rng(seed);
    for (auto* p : m.parameters())
        for (auto& v : p->value.vec()) v += static_cast<T>(rng.normal()) * amount;
}

Tensor random_image(Rng& rng, int h, int w) {
    Tensor img = Tensor::zeros({3, h, w});
    for (auto& v : img.vec()) v = static_cast<float>(rng.uniform());
    return img;
}

ModelConfig small_cfg(Variant v, int scale) {
    ModelConfig cfg;
    cfg.scale = scale;
    cfg.variant = v;
    cfg.blocks_per_stage = 4;
    cfg.subnet_width = 16;
    if (v == Variant::alpha) cfg.split_mode = SplitMode::pre_split_alpha;
    if (v == Variant::meta) cfg.ae.hidden_width = 16;
    return cfg;
}

}  // namespace

TEST_CASE("config validation", "[model]") {
    ModelConfig bad = small_cfg(Variant::baseline, 2);
    bad.scale = 3;
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);

    ModelConfig no_split = small_cfg(Variant::alpha, 2);
    no_split.split_mode = SplitMode::baseline;
    REQUIRE_THROWS_AS(no_split.validate(), ConfigError);

    ModelConfig stray_split = small_cfg(Variant::baseline, 2);
    stray_split.split_mode = SplitMode::pre_split_alpha;
    REQUIRE_THROWS_AS(stray_split.validate(), ConfigError);

    REQUIRE(small_cfg(Variant::meta, 2).required_divisor() == 8);
    REQUIRE(small_cfg(Variant::baseline, 2).required_divisor() == 4);
    REQUIRE(small_cfg(Variant::alpha, 4).required_divisor() == 8);
    REQUIRE(small_cfg(Variant::meta, 4).required_divisor() == 16);
}

TEST_CASE("baseline downscale shapes at scale 2", "[model]") {
    Rng rng(60);
    RescaleModel model(small_cfg(Variant::baseline, 2), rng);
    Tensor hr = random_image(rng, 128, 128);
    auto down = model.downscale(hr);
    REQUIRE(down.artifact.lr_rgb.shape() == Shape{3, 64, 64});
    REQUIRE(down.z.shape() == Shape{9, 64, 64});
    REQUIRE(down.artifact.variant() == Variant::baseline);
    REQUIRE_FALSE(down.artifact.alpha.has_value());
    REQUIRE_FALSE(down.artifact.meta.has_value());

    Tensor up = model.upscale(down.artifact);
    REQUIRE(up.shape() == Shape{3, 128, 128});

    REQUIRE_THROWS_AS(model.downscale(random_image(rng, 126, 128)), std::invalid_argument);
}

TEST_CASE("alpha variant artifact shapes and range", "[model]") {
    Rng rng(61);
    RescaleModel model(small_cfg(Variant::alpha, 4), rng);
    perturb_model(model, 7, 0.03f);
    Tensor hr = random_image(rng, 128, 128);
    auto down = model.downscale(hr);
    REQUIRE(down.artifact.lr_rgb.shape() == Shape{3, 32, 32});
    REQUIRE(down.artifact.alpha.has_value());
    REQUIRE(down.artifact.alpha->shape() == Shape{1, 32, 32});
    REQUIRE(down.artifact.variant() == Variant::alpha);
    for (float v : down.artifact.alpha->vec()) {
        REQUIRE(v > 0.0f);
        REQUIRE(v < 1.0f);
    }
    // latent: stage0 high (8 ch at 64) unshuffled + stage1 high (12 ch at 32)
    REQUIRE(down.z.shape() == Shape{44, 32, 32});

    Tensor up = model.upscale(down.artifact);
    REQUIRE(up.shape() == Shape{3, 128, 128});
}

TEST_CASE("meta variant encodes the latent into metadata", "[model]") {
    Rng rng(62);
    RescaleModel model(small_cfg(Variant::meta, 2), rng);
    Tensor hr = random_image(rng, 64, 64);
    auto down = model.downscale(hr);
    REQUIRE(down.artifact.meta.has_value());
    REQUIRE(down.artifact.variant() == Variant::meta);
    REQUIRE(down.artifact.meta->h == 8);  // z 32x32 compressed to 8x8
    REQUIRE(down.artifact.meta->w == 8);
    REQUIRE(down.z.shape() == Shape{9, 32, 32});
    Tensor up = model.upscale(down.artifact);
    REQUIRE(up.shape() == Shape{3, 64, 64});
}

TEST_CASE("true-latent roundtrip is near exact", "[model]") {
    Rng rng(63);
    RescaleModel model(small_cfg(Variant::baseline, 2), rng);
    perturb_model(model, 11, 0.05f);
    Tensor hr = random_image(rng, 64, 64);
    auto down = model.downscale(hr);
    Tensor recon = model.upscale(down.artifact, &down.z);
    REQUIRE(max_abs_diff(recon, hr) < 1e-3);
}

TEST_CASE("scale-4 true-latent roundtrip", "[model]") {
    Rng rng(64);
    ModelConfig cfg = small_cfg(Variant::baseline, 4);
    RescaleModel model(cfg, rng);
    perturb_model(model, 13, 0.05f);
    Tensor hr = random_image(rng, 64, 64);
    auto down = model.downscale(hr);
    REQUIRE(down.artifact.lr_rgb.shape() == Shape{3, 16, 16});
    REQUIRE(down.z.shape() == Shape{45, 16, 16});
    Tensor recon = model.upscale(down.artifact, &down.z);
    REQUIRE(max_abs_diff(recon, hr) < 5e-3);
}

TEST_CASE("alpha variant true-latent roundtrip", "[model]") {
    Rng rng(65);
    RescaleModel model(small_cfg(Variant::alpha, 2), rng);
    perturb_model(model, 17, 0.05f);
    Tensor hr = random_image(rng, 64, 64);
    auto down = model.downscale(hr);
    Tensor recon = model.upscale(down.artifact, &down.z);
    // the alpha plane passes through sigmoid/logit on top of the blocks
    REQUIRE(max_abs_diff(recon, hr) < 5e-3);
}

TEST_CASE("zero-latent inversion is deterministic", "[model]") {
    Rng rng(66);
    RescaleModel model(small_cfg(Variant::baseline, 2), rng);
    perturb_model(model, 19, 0.05f);
    Tensor hr = random_image(rng, 32, 32);
    auto down = model.downscale(hr);
    Tensor a = model.upscale(down.artifact);
    Tensor b = model.upscale(down.artifact);
    REQUIRE(a.vec() == b.vec());
}

TEST_CASE("post-split ablation mode", "[model]") {
    Rng rng(67);
    ModelConfig cfg = small_cfg(Variant::alpha, 2);
    cfg.split_mode = SplitMode::post_split_alpha;
    RescaleModel model(cfg, rng);
    perturb_model(model, 23, 0.03f);
    Tensor hr = random_image(rng, 32, 32);
    auto down = model.downscale(hr);
    REQUIRE(down.artifact.alpha.has_value());
    REQUIRE(down.artifact.lr_rgb.shape() == Shape{3, 16, 16});
    REQUIRE(down.z.shape() == Shape{9, 16, 16});
    Tensor up = model.upscale(down.artifact);
    REQUIRE(up.shape() == hr.shape());

    // with the true latent the roundtrip is still near exact
    Tensor recon = model.upscale(down.artifact, &down.z);
    REQUIRE(max_abs_diff(recon, hr) < 5e-3);
}

TEST_CASE("artifact and model variants must match", "[model]") {
    Rng rng(68);
    RescaleModel baseline(small_cfg(Variant::baseline, 2), rng);
    RescaleModel alpha(small_cfg(Variant::alpha, 2), rng);
    Tensor hr = random_image(rng, 32, 32);
    auto down = baseline.downscale(hr);
    REQUIRE_THROWS_AS(alpha.upscale(down.artifact), MismatchError);

    RescaleArtifact both;
    both.lr_rgb = Tensor::zeros({3, 4, 4});
    both.alpha = Tensor::zeros({1, 4, 4});
    both.meta = QuantizedCode{};
    REQUIRE_THROWS_AS(both.variant(), MismatchError);
}

TEST_CASE("checkpoint roundtrip is bit-exact", "[model]") {
    namespace fs = std::filesystem;
    Rng rng(69);
    ModelConfig cfg = small_cfg(Variant::meta, 2);
    RescaleModel model(cfg, rng);
    perturb_model(model, 29, 0.05f);
    const std::string path = (fs::temp_directory_path() / "irn_ckpt_test.bin").string();
    model.save(path);

    RescaleModel loaded = RescaleModel::load(path);
    auto pa = model.parameters();
    auto pb = loaded.parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i]->name == pb[i]->name);
        REQUIRE(pa[i]->value.vec() == pb[i]->value.vec());
    }

    // a second save produces identical bytes
    const std::string path2 = (fs::temp_directory_path() / "irn_ckpt_test2.bin").string();
    loaded.save(path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::vector<char> b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::vector<char> b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(b1 == b2);

    // and identical behavior
    Tensor hr = random_image(rng, 32, 32);
    auto d1 = model.downscale(hr);
    auto d2 = loaded.downscale(hr);
    REQUIRE(d1.artifact.lr_rgb.vec() == d2.artifact.lr_rgb.vec());

    fs::remove(path);
    fs::remove(path2);

    REQUIRE_THROWS_AS(RescaleModel::load("/nonexistent/ckpt.bin"), DataError);
}

TEST_CASE("corrupt checkpoints are rejected", "[model]") {
    namespace fs = std::filesystem;
    Rng rng(70);
    RescaleModel model(small_cfg(Variant::baseline, 2), rng);
    const std::string path = (fs::temp_directory_path() / "irn_ckpt_bad.bin").string();
    model.save(path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("JUNKJUNK", 8);
    }
    REQUIRE_THROWS_AS(RescaleModel::load(path), FormatError);
    fs::remove(path);
}

TEST_CASE("quantized alpha extremes stay clear of the logit poles", "[model]") {
    Rng rng(71);
    RescaleModel model(small_cfg(Variant::alpha, 2), rng);
    perturb_model(model, 31, 0.05f);
    RescaleArtifact a;
    a.lr_rgb = Tensor::full({3, 8, 8}, 0.5f);
    Tensor alpha = Tensor::zeros({1, 8, 8});
    for (size_t i = 0; i < alpha.numel(); ++i) alpha.data()[i] = (i % 2) ? 1.0f : 0.0f;
    a.alpha = alpha;
    Tensor up = model.upscale(a);
    up.assert_finite("upscale with saturated alpha");
}

#include <catch2/catch_amalgamated.hpp>

#include "gradcheck.hpp"
#include "irn/eval.hpp"
#include "irn/training.hpp"

using namespace irn;
using irn::testing::max_abs_diff;

namespace {

Tensor textured_image(Rng& rng, int h, int w) {
    Tensor img = Tensor::zeros({3, h, w});
    const double fx = rng.uniform(0.05, 0.3), fy = rng.uniform(0.05, 0.3);
    const double ph = rng.uniform(0, 6.28);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double v = 0.5 + 0.25 * std::sin(fx * x + fy * y + ph + c) +
                           0.15 * rng.normal() * 0.3;
                img.data()[(static_cast<size_t>(c) * h + y) * w + x] =
                    static_cast<float>(std::min(std::max(v, 0.0), 1.0));
            }
    return img;
}

DatasetT<float> toy_dataset(uint64_t seed, int count, int size) {
    Rng rng(seed);
    DatasetT<float> ds;
    for (int i = 0; i < count; ++i) {
        ds.images.push_back(textured_image(rng, size, size));
        ds.names.push_back("img" + std::to_string(i));
    }
    return ds;
}

ModelConfig tiny_cfg(Variant v) {
    ModelConfig cfg;
    cfg.scale = 2;
    cfg.variant = v;
    cfg.blocks_per_stage = 2;
    cfg.subnet_width = 8;
    if (v == Variant::alpha) cfg.split_mode = SplitMode::pre_split_alpha;
    if (v == Variant::meta) cfg.ae.hidden_width = 8;
    return cfg;
}

}  // namespace

TEST_CASE("loss weights validation", "[training]") {
    LossWeights w;
    w.lambda4 = 1.0;
    REQUIRE_THROWS_AS(w.validate(Variant::baseline), ConfigError);
    REQUIRE_NOTHROW(w.validate(Variant::meta));
    LossWeights zero;
    zero.lambda1 = zero.lambda2 = zero.lambda3 = zero.lambda4 = 0.0;
    REQUIRE_THROWS_AS(zero.validate(Variant::meta), ConfigError);
    LossWeights neg;
    neg.lambda1 = -1.0;
    REQUIRE_THROWS_AS(neg.validate(Variant::meta), ConfigError);

    REQUIRE(LossWeights::defaults_for(2, Variant::baseline).lambda2 == 4.0);
    REQUIRE(LossWeights::defaults_for(4, Variant::baseline).lambda2 == 16.0);
    REQUIRE(LossWeights::defaults_for(2, Variant::alpha).lambda4 == 0.0);
    REQUIRE(LossWeights::defaults_for(2, Variant::meta).lambda4 == 1.0);
}

TEST_CASE("perfect reconstruction and zero latent give zero loss", "[training]") {
    Rng rng(80);
    Tensor hr = Tensor::full({3, 8, 8}, 0.5f);
    ForwardPassT<float> fw;
    fw.lr_rgb = Tensor::full({3, 4, 4}, 0.5f);
    fw.z = Tensor::zeros({9, 4, 4});
    LossWeights w;
    w.lambda4 = 0.0;
    auto lt = loss_total(hr, fw, hr.clone(), Tensor::full({3, 4, 4}, 0.5f), w);
    REQUIRE(lt.total.item() == 0.0f);
    REQUIRE(lt.l_r.item() == 0.0f);
    REQUIRE(lt.l_g.item() == 0.0f);
    REQUIRE(lt.l_d.item() == 0.0f);
}

TEST_CASE("unit weight on the reconstruction term isolates it", "[training]") {
    Rng rng(81);
    Tensor hr = Tensor::zeros({3, 8, 8});
    for (auto& v : hr.vec()) v = static_cast<float>(rng.uniform());
    Tensor recon = Tensor::zeros({3, 8, 8});
    for (auto& v : recon.vec()) v = static_cast<float>(rng.uniform());
    ForwardPassT<float> fw;
    fw.lr_rgb = Tensor::full({3, 4, 4}, 0.9f);
    fw.z = Tensor::full({9, 4, 4}, 0.3f);
    LossWeights w;
    w.lambda1 = 1.0;
    w.lambda2 = w.lambda3 = w.lambda4 = 0.0;
    auto lt = loss_total(hr, fw, recon, Tensor::zeros({3, 4, 4}), w);
    REQUIRE(lt.total.item() == lt.l_r.item());

    // zero weights really do isolate the total from the other inputs
    ForwardPassT<float> fw2;
    fw2.lr_rgb = Tensor::full({3, 4, 4}, 0.1f);
    fw2.z = Tensor::full({9, 4, 4}, 5.0f);
    auto lt2 = loss_total(hr, fw2, recon, Tensor::full({3, 4, 4}, 0.7f), w);
    REQUIRE(lt2.total.item() == lt.total.item());

    REQUIRE_THROWS_AS(loss_total(hr, fw, Tensor::zeros({3, 4, 4}), Tensor::zeros({3, 4, 4}), w),
                      std::invalid_argument);
}

TEST_CASE("loss components are non-negative", "[training]") {
    Rng rng(82);
    Tensor hr = Tensor::zeros({3, 8, 8});
    for (auto& v : hr.vec()) v = static_cast<float>(rng.uniform());
    ForwardPassT<float> fw;
    fw.lr_rgb = Tensor::randn({3, 4, 4}, rng);
    fw.z = Tensor::randn({9, 4, 4}, rng);
    fw.z_hat = Tensor::randn({9, 4, 4}, rng);
    Tensor recon = Tensor::randn({3, 8, 8}, rng);
    auto lt = loss_total(hr, fw, recon, Tensor::zeros({3, 4, 4}), LossWeights{});
    REQUIRE(lt.l_r.item() >= 0.0f);
    REQUIRE(lt.l_g.item() >= 0.0f);
    REQUIRE(lt.l_d.item() >= 0.0f);
    REQUIRE(lt.l_mse.item() >= 0.0f);
}

TEST_CASE("guidance target is the bicubic path itself", "[training]") {
    Rng rng(83);
    Tensor hr = textured_image(rng, 16, 16);
    Tensor g = guidance_target(hr, 2);
    Tensor direct = bicubic_resize(hr, 8, 8);
    REQUIRE(g.vec() == direct.vec());

    Tensor c = Tensor::full({3, 8, 8}, 0.37f);
    Tensor gc = guidance_target(c, 2);
    for (float v : gc.vec()) REQUIRE(v == Catch::Approx(0.37f).margin(1e-6));
}

TEST_CASE("the total loss gradient reaches subnet weights", "[training]") {
    // finite differences through the whole tiny model in double precision
    Rng rng(84);
    ModelConfig cfg;
    cfg.scale = 2;
    cfg.variant = Variant::alpha;
    cfg.split_mode = SplitMode::pre_split_alpha;
    cfg.blocks_per_stage = 1;
    cfg.subnet_width = 4;
    RescaleModelT<double> model(cfg, rng);
    for (auto* p : model.parameters())
        for (auto& v : p->value.vec()) v += rng.normal() * 0.05;

    Rng img_rng(85);
    TensorT<double> hr = TensorT<double>::zeros({3, 8, 8});
    for (auto& v : hr.vec()) v = img_rng.uniform();
    TensorT<double> guide;
    {
        NoGradGuard ng;
        guide = guidance_target(hr, 2);
    }
    LossWeights w = LossWeights::defaults_for(2, Variant::alpha);

    auto functional = [&](TensorT<double>&) {
        ForwardPassT<double> fw = model.forward_downscale(hr);
        TensorT<double> zh = TensorT<double>::zeros(fw.z.shape());
        TensorT<double> recon = model.forward_upscale(fw.lr_rgb, fw.alpha, zh);
        return loss_total(hr, fw, recon, guide, w).total;
    };

    auto params = model.parameters();
    // probe a few parameters across the block: phi w3, rho w1, eta b3.
    // step 1e-5: the composite loss is piecewise smooth (leaky_relu, L1), so
    // a coarser step straddles slope changes; in double the quotient noise
    // at 1e-5 is still orders of magnitude below the tolerance
    for (size_t idx : {4ul, 12ul, 11ul}) {
        auto r = irn::testing::check_gradient(params[idx]->value, functional, 1e-5);
        INFO("param " << params[idx]->name << ": " << r.message);
        REQUIRE(r.ok);
    }
}

TEST_CASE("one training iteration moves parameters", "[training]") {
    auto ds = toy_dataset(86, 2, 16);
    Rng rng(87);
    RescaleModel model(tiny_cfg(Variant::baseline), rng);
    std::vector<float> before;
    for (auto* p : model.parameters())
        before.insert(before.end(), p->value.vec().begin(), p->value.vec().end());

    TrainConfig tc;
    tc.iterations = 1;
    tc.batch = 1;
    tc.patch_size = 8;
    tc.seed = 1;
    LossWeights w = LossWeights::defaults_for(2, Variant::baseline);
    TrainResult r = train(model, ds, tc, w);
    REQUIRE(r.trace.size() == 1);
    REQUIRE(r.trace[0].total > 0.0);

    std::vector<float> after;
    for (auto* p : model.parameters())
        after.insert(after.end(), p->value.vec().begin(), p->value.vec().end());
    REQUIRE(before != after);
}

TEST_CASE("training is deterministic under a fixed seed", "[training]") {
    auto ds = toy_dataset(88, 3, 16);
    TrainConfig tc;
    tc.iterations = 5;
    tc.batch = 2;
    tc.patch_size = 8;
    tc.seed = 42;
    LossWeights w = LossWeights::defaults_for(2, Variant::baseline);

    Rng r1(5), r2(5);
    RescaleModel m1(tiny_cfg(Variant::baseline), r1);
    RescaleModel m2(tiny_cfg(Variant::baseline), r2);
    TrainResult t1 = train(m1, ds, tc, w);
    TrainResult t2 = train(m2, ds, tc, w);
    REQUIRE(t1.trace.size() == t2.trace.size());
    for (size_t i = 0; i < t1.trace.size(); ++i)
        REQUIRE(t1.trace[i].total == t2.trace[i].total);  // bit-identical

    auto p1 = m1.parameters();
    auto p2 = m2.parameters();
    for (size_t i = 0; i < p1.size(); ++i) REQUIRE(p1[i]->value.vec() == p2[i]->value.vec());
}

TEST_CASE("frozen autoencoder parameters stay untouched", "[training]") {
    auto ds = toy_dataset(89, 2, 16);
    Rng rng(90);
    ModelConfig cfg = tiny_cfg(Variant::meta);
    cfg.ae.frozen_during_joint_training = true;
    RescaleModel model(cfg, rng);

    std::vector<float> ae_before;
    for (auto* p : model.ae_parameters())
        ae_before.insert(ae_before.end(), p->value.vec().begin(), p->value.vec().end());

    TrainConfig tc;
    tc.iterations = 3;
    tc.batch = 1;
    tc.patch_size = 16;
    tc.seed = 3;
    tc.freeze_ae = true;
    LossWeights w = LossWeights::defaults_for(2, Variant::meta);
    train(model, ds, tc, w);

    std::vector<float> ae_after;
    for (auto* p : model.ae_parameters())
        ae_after.insert(ae_after.end(), p->value.vec().begin(), p->value.vec().end());
    REQUIRE(ae_before == ae_after);

    // network parameters did move
    bool net_moved = false;
    Rng rng2(90);
    RescaleModel fresh(cfg, rng2);
    auto pa = model.network_parameters();
    auto pf = fresh.network_parameters();
    for (size_t i = 0; i < pa.size() && !net_moved; ++i)
        net_moved = pa[i]->value.vec() != pf[i]->value.vec();
    REQUIRE(net_moved);
}

TEST_CASE("training errors", "[training]") {
    Rng rng(91);
    RescaleModel model(tiny_cfg(Variant::baseline), rng);
    DatasetT<float> empty;
    TrainConfig tc;
    tc.iterations = 1;
    tc.patch_size = 8;
    LossWeights w = LossWeights::defaults_for(2, Variant::baseline);
    REQUIRE_THROWS_AS(train(model, empty, tc, w), ConfigError);

    auto small = toy_dataset(92, 1, 8);
    TrainConfig big_patch;
    big_patch.iterations = 1;
    big_patch.patch_size = 16;
    REQUIRE_THROWS_AS(train(model, small, big_patch, w), ConfigError);

    TrainConfig bad_patch;
    bad_patch.patch_size = 10;  // not divisible by 4
    REQUIRE_THROWS_AS(train(model, small, bad_patch, w), ConfigError);
}

TEST_CASE("short training run reduces the loss on a toy set", "[training]") {
    auto ds = toy_dataset(93, 4, 24);
    Rng rng(94);
    RescaleModel model(tiny_cfg(Variant::baseline), rng);
    TrainConfig tc;
    tc.iterations = 150;
    tc.batch = 2;
    tc.patch_size = 16;
    tc.seed = 7;
    tc.lr = 1e-3;
    LossWeights w = LossWeights::defaults_for(2, Variant::baseline);
    TrainResult r = train(model, ds, tc, w);
    double first = 0, last = 0;
    for (int i = 0; i < 30; ++i) {
        first += r.trace[i].total / 30;
        last += r.trace[r.trace.size() - 1 - i].total / 30;
    }
    REQUIRE(last < first);
}

TEST_CASE("loss csv is written with one row per logged iteration", "[training]") {
    namespace fs = std::filesystem;
    std::vector<LossRow> trace = {{0, 1, 2, 3, 4, 10}, {1, 0.5, 1, 1.5, 2, 5}};
    const std::string path = (fs::temp_directory_path() / "irn_loss_test.csv").string();
    write_loss_csv(path, trace);
    std::ifstream f(path);
    std::string line;
    std::getline(f, line);
    REQUIRE(line == "iteration,L_r,L_g,L_d,L_mse,total");
    int rows = 0;
    while (std::getline(f, line))
        if (!line.empty()) ++rows;
    REQUIRE(rows == 2);
    fs::remove(path);
}

TEST_CASE("in-memory scoring equals the through-file pipeline", "[training]") {
    Rng rng(95);
    RescaleModel model(tiny_cfg(Variant::alpha), rng);
    Rng img_rng(96);
    Tensor hr = textured_image(img_rng, 32, 32);

    ImageScore mem = score_image(model, hr, 0);

    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "irn_parity.png").string();
    auto down = model.downscale(hr);
    write_artifact(down.artifact, path);
    RescaleArtifact loaded = read_artifact(path);
    Tensor recon = model.upscale(loaded);
    ImageScore file = score_planes(recon, hr, 0);
    fs::remove(path);

    REQUIRE(mem.psnr_db == file.psnr_db);
    REQUIRE(mem.ssim == file.ssim);
}

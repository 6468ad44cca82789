// Command-line front end: training, autoencoder pretraining, rescaling and
// evaluation, all driven by a JSON config with flag overrides.
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration error,
// 3 data error, 4 variant/file mismatch.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "irn/irn.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace irn;

namespace {

struct RunConfig {
    uint64_t seed = 0;
    ModelConfig model;
    TrainConfig train;
    LossWeights loss;
    bool loss_given = false;
    // pretraining of the autoencoder on synthetic z
    int pretrain_samples = 8;
    int pretrain_steps = 2000;
    int pretrain_z = 64;  // synthetic z spatial extent
    // paths
    std::string data_dir, val_dir, checkpoint, loss_csv, ae_checkpoint;
};

void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                    const std::string& where) {
    for (const auto& [key, _] : obj.items())
        if (!allowed.count(key))
            throw ConfigError("unknown key '" + key + "' in " + where);
}

RunConfig parse_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config: " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }

    RunConfig rc;
    reject_unknown(j, {"seed", "model", "train", "loss", "pretrain", "paths"}, path);
    rc.seed = j.value("seed", 0ull);

    if (j.contains("model")) {
        const json& m = j["model"];
        reject_unknown(m, {"scale", "variant", "blocks_per_stage", "subnet_width", "clamp",
                           "split", "ae"},
                       "model");
        rc.model.scale = m.value("scale", 2);
        rc.model.variant = variant_from_string(m.value("variant", "baseline"));
        rc.model.blocks_per_stage = m.value("blocks_per_stage", 8);
        rc.model.subnet_width = m.value("subnet_width", 32);
        rc.model.clamp = m.value("clamp", 1.0f);
        if (rc.model.variant == Variant::alpha) rc.model.split_mode = SplitMode::pre_split_alpha;
        if (m.contains("split")) {
            const json& s = m["split"];
            reject_unknown(s, {"mode", "alpha_avg_init"}, "model.split");
            const std::string mode = s.value("mode", "pre_split_alpha");
            if (mode == "pre_split_alpha") rc.model.split_mode = SplitMode::pre_split_alpha;
            else if (mode == "post_split_alpha") rc.model.split_mode = SplitMode::post_split_alpha;
            else if (mode == "baseline") rc.model.split_mode = SplitMode::baseline;
            else throw ConfigError("unknown split mode '" + mode + "'");
            rc.model.alpha_avg_init = s.value("alpha_avg_init", true);
        }
        if (m.contains("ae")) {
            const json& a = m["ae"];
            reject_unknown(a, {"conv_layers", "pretrained", "frozen", "hidden_width"}, "model.ae");
            rc.model.ae.conv_layers = a.value("conv_layers", 4);
            rc.model.ae.pretrained = a.value("pretrained", true);
            rc.model.ae.frozen_during_joint_training = a.value("frozen", false);
            rc.model.ae.hidden_width = a.value("hidden_width", 64);
        }
    }

    if (j.contains("train")) {
        const json& t = j["train"];
        reject_unknown(t, {"iterations", "batch", "patch_size", "lr", "log_every"}, "train");
        rc.train.iterations = t.value("iterations", 2000);
        rc.train.batch = t.value("batch", 4);
        rc.train.patch_size = t.value("patch_size", 64);
        rc.train.lr = t.value("lr", 2e-4);
        rc.train.log_every = t.value("log_every", 1);
    }

    if (j.contains("loss")) {
        const json& l = j["loss"];
        reject_unknown(l, {"lambda1", "lambda2", "lambda3", "lambda4"}, "loss");
        rc.loss.lambda1 = l.value("lambda1", 1.0);
        rc.loss.lambda2 = l.value("lambda2", 4.0);
        rc.loss.lambda3 = l.value("lambda3", 1.0);
        rc.loss.lambda4 = l.value("lambda4", 1.0);
        rc.loss_given = true;
    }

    if (j.contains("pretrain")) {
        const json& p = j["pretrain"];
        reject_unknown(p, {"samples", "steps", "z_size"}, "pretrain");
        rc.pretrain_samples = p.value("samples", 8);
        rc.pretrain_steps = p.value("steps", 2000);
        rc.pretrain_z = p.value("z_size", 64);
    }

    if (j.contains("paths")) {
        const json& p = j["paths"];
        reject_unknown(p, {"data_dir", "val_dir", "checkpoint", "loss_csv", "ae_checkpoint"},
                       "paths");
        rc.data_dir = p.value("data_dir", "");
        rc.val_dir = p.value("val_dir", "");
        rc.checkpoint = p.value("checkpoint", "");
        rc.loss_csv = p.value("loss_csv", "");
        rc.ae_checkpoint = p.value("ae_checkpoint", "");
    }
    return rc;
}

// latent channel count of the gathered z for a 3-channel input
int meta_z_channels(int scale) {
    const int n = scale == 4 ? 2 : 1;
    return 3 * ((1 << (2 * n)) - 1);  // 3*(4^n - 1)
}

constexpr char kAeMagic[9] = "IRNAECK1";

void save_ae_checkpoint(const std::string& path, Autoencoder& ae) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for writing: " + path);
    f.write(kAeMagic, 8);
    ckpt::write_u32(f, 1);
    ckpt::write_u32(f, static_cast<uint32_t>(ae.config().conv_layers));
    ckpt::write_u32(f, static_cast<uint32_t>(ae.config().hidden_width));
    ckpt::write_u32(f, static_cast<uint32_t>(ae.z_channels()));
    std::vector<Parameter*> params;
    ae.collect(params);
    ckpt::save_params(f, params);
    if (!f) throw DataError("failed while writing: " + path);
}

void load_ae_checkpoint(const std::string& path, Autoencoder& ae) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open autoencoder checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kAeMagic, 8) != 0)
        throw FormatError("autoencoder checkpoint: bad magic in " + path);
    if (ckpt::read_u32(f) != 1)
        throw FormatError("autoencoder checkpoint: unsupported version");
    const int layers = static_cast<int>(ckpt::read_u32(f));
    const int width = static_cast<int>(ckpt::read_u32(f));
    const int zch = static_cast<int>(ckpt::read_u32(f));
    if (layers != ae.config().conv_layers || width != ae.config().hidden_width ||
        zch != ae.z_channels())
        throw MismatchError("autoencoder checkpoint does not match the model configuration");
    std::vector<Parameter*> params;
    ae.collect(params);
    ckpt::load_params(f, params);
}

int cmd_train(const RunConfig& rc) {
    if (rc.data_dir.empty()) throw ConfigError("paths.data_dir is required for train");
    if (rc.checkpoint.empty()) throw ConfigError("paths.checkpoint is required for train");
    if (!fs::is_directory(rc.data_dir)) throw DataError("data directory not found: " + rc.data_dir);

    Dataset data = load_dataset<float>(rc.data_dir);
    if (data.images.empty()) throw DataError("no usable images in " + rc.data_dir);

    Rng init_rng(rc.seed);
    RescaleModel model(rc.model, init_rng);

    if (rc.model.variant == Variant::meta && rc.model.ae.pretrained) {
        if (!rc.ae_checkpoint.empty() && fs::exists(rc.ae_checkpoint)) {
            load_ae_checkpoint(rc.ae_checkpoint, model.autoencoder());
            std::cout << "loaded pretrained autoencoder from " << rc.ae_checkpoint << "\n";
        } else {
            std::cout << "pretraining autoencoder (" << rc.pretrain_steps << " steps)...\n";
            Rng pre_rng(rc.seed + 1);
            Shape zs = {model.gathered_z_channels(), rc.train.patch_size / rc.model.scale,
                        rc.train.patch_size / rc.model.scale};
            auto stats = pretrain_ae(model.autoencoder(), zs, rc.pretrain_samples,
                                     rc.pretrain_steps, pre_rng);
            std::printf("autoencoder mse: %.6f -> %.6f\n", stats.mse_initial, stats.mse_final);
        }
    }

    TrainConfig tc = rc.train;
    tc.seed = rc.seed;
    tc.freeze_ae = rc.model.variant == Variant::meta && rc.model.ae.frozen_during_joint_training;
    LossWeights w = rc.loss_given ? rc.loss
                                  : LossWeights::defaults_for(rc.model.scale, rc.model.variant);

    TrainResult result = train(model, data, tc, w);
    model.save(rc.checkpoint);
    if (!rc.loss_csv.empty()) write_loss_csv(rc.loss_csv, result.trace);
    std::printf("trained %d iterations, final loss %.6f, checkpoint %s\n", tc.iterations,
                result.trace.empty() ? 0.0 : result.trace.back().total, rc.checkpoint.c_str());
    return 0;
}

int cmd_pretrain_ae(const RunConfig& rc) {
    if (rc.model.variant != Variant::meta)
        throw ConfigError("pretrain-ae requires model.variant = meta");
    if (rc.ae_checkpoint.empty()) throw ConfigError("paths.ae_checkpoint is required");
    rc.model.ae.validate();
    Rng rng(rc.seed);
    Autoencoder ae(rc.model.ae, meta_z_channels(rc.model.scale), rng);
    Shape zs = {ae.z_channels(), rc.pretrain_z, rc.pretrain_z};
    Rng pre_rng(rc.seed + 1);
    auto stats = pretrain_ae(ae, zs, rc.pretrain_samples, rc.pretrain_steps, pre_rng);
    save_ae_checkpoint(rc.ae_checkpoint, ae);
    std::printf("pretrained autoencoder: mse %.6f -> %.6f, saved %s\n", stats.mse_initial,
                stats.mse_final, rc.ae_checkpoint.c_str());
    return 0;
}

int cmd_downscale(const std::string& ckpt_path, const std::string& in_path,
                  const std::string& out_path, const std::string& variant_flag) {
    RescaleModel model = RescaleModel::load(ckpt_path);
    if (!variant_flag.empty() &&
        variant_from_string(variant_flag) != model.config().variant)
        throw MismatchError("checkpoint variant is '" +
                            std::string(to_string(model.config().variant)) +
                            "', flag requested '" + variant_flag + "'");
    Tensor hr = read_image(in_path);
    const int div = model.config().required_divisor();
    if (hr.dim(1) % div != 0 || hr.dim(2) % div != 0)
        throw DataError("input extents " + std::to_string(hr.dim(2)) + "x" +
                        std::to_string(hr.dim(1)) + " are not divisible by " +
                        std::to_string(div) + "; crop the image first");
    auto down = model.downscale(hr);
    write_artifact(down.artifact, out_path);
    std::printf("wrote %s (%dx%d, %s)\n", out_path.c_str(), down.artifact.lr_rgb.dim(2),
                down.artifact.lr_rgb.dim(1), to_string(down.artifact.variant()));
    return 0;
}

int cmd_upscale(const std::string& ckpt_path, const std::string& in_path,
                const std::string& out_path) {
    RescaleModel model = RescaleModel::load(ckpt_path);
    RescaleArtifact artifact = read_artifact(in_path);
    if (artifact.variant() != model.config().variant)
        throw MismatchError("artifact in " + in_path + " is '" +
                            std::string(to_string(artifact.variant())) +
                            "' but the checkpoint is '" +
                            std::string(to_string(model.config().variant)) + "'");
    Tensor hr = clamp01(model.upscale(artifact));
    write_artifact(RescaleArtifact{hr, std::nullopt, std::nullopt}, out_path);
    std::printf("wrote %s (%dx%d)\n", out_path.c_str(), hr.dim(2), hr.dim(1));
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& report_path, const std::string& method, int scale_flag,
             int crop_border_px) {
    if (!fs::is_directory(data_dir)) throw DataError("dataset directory not found: " + data_dir);
    Dataset data = load_dataset<float>(data_dir);
    if (data.images.empty()) throw DataError("no usable images in " + data_dir);

    std::optional<RescaleModel> model;
    int scale = scale_flag;
    if (method == "model") {
        model.emplace(RescaleModel::load(ckpt_path));
        scale = model->config().scale;
    } else if (method != "bicubic") {
        throw ConfigError("unknown eval method '" + method + "' (expected model|bicubic)");
    } else if (scale != 2 && scale != 4) {
        throw ConfigError("--scale 2|4 is required for the bicubic method");
    }

    const std::string dataset_name = fs::path(data_dir).filename().string();
    std::vector<EvalReportRow> rows;
    double sum_psnr = 0, sum_ssim = 0;
    for (size_t i = 0; i < data.images.size(); ++i) {
        ImageScore s;
        try {
            s = model ? score_image(*model, data.images[i], crop_border_px)
                      : score_image_bicubic(data.images[i], scale, crop_border_px);
        } catch (const DataError& e) {
            std::cerr << "warning: skipping " << data.names[i] << ": " << e.what() << "\n";
            continue;
        }
        rows.push_back({dataset_name, data.names[i], method, scale, s.psnr_db, s.ssim});
        sum_psnr += s.psnr_db;
        sum_ssim += s.ssim;
    }
    if (rows.empty()) throw DataError("no image in " + data_dir + " could be scored");
    write_eval_csv(report_path, rows);
    std::printf("%s | %s | x%d | images %zu | mean PSNR %.4f dB | mean SSIM %.5f\n",
                dataset_name.c_str(), method.c_str(), scale, rows.size(),
                sum_psnr / rows.size(), sum_ssim / rows.size());
    return 0;
}

int cmd_roundtrip(const std::string& ckpt_path, const std::string& in_path,
                  const std::string& out_dir, int crop_border_px) {
    RescaleModel model = RescaleModel::load(ckpt_path);
    Tensor hr = crop_to_divisor(read_image(in_path), model.config().required_divisor());
    fs::create_directories(out_dir);
    const std::string stem = fs::path(in_path).stem().string();
    const std::string lr_path = (fs::path(out_dir) / (stem + "_lr.png")).string();
    const std::string hr_path = (fs::path(out_dir) / (stem + "_restored.png")).string();

    auto down = model.downscale(hr);
    write_artifact(down.artifact, lr_path);
    RescaleArtifact loaded = read_artifact(lr_path);
    Tensor recon = clamp01(model.upscale(loaded));
    write_artifact(RescaleArtifact{recon, std::nullopt, std::nullopt}, hr_path);

    ImageScore s = score_planes(recon, hr, crop_border_px);
    std::printf("%s -> %s -> %s | PSNR %.4f dB | SSIM %.5f\n", in_path.c_str(), lr_path.c_str(),
                hr_path.c_str(), s.psnr_db, s.ssim);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"invertible image rescaling with stored high-frequency latents"};
    app.require_subcommand(1);

    std::string config_path, checkpoint, in_path, out_path, data_dir, report_path;
    std::string variant_flag, method = "model";
    int scale_flag = 0, crop_border_px = 0;
    std::optional<uint64_t> seed_flag;
    std::optional<std::string> variant_override, scale_override;

    auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
    train_cmd->add_option("--config", config_path, "JSON run config")->required();
    train_cmd->add_option("--seed", seed_flag, "override config seed");
    train_cmd->add_option("--scale", scale_override, "override model scale");
    train_cmd->add_option("--variant", variant_override, "override model variant");

    auto* pre_cmd = app.add_subcommand("pretrain-ae", "pretrain the latent autoencoder");
    pre_cmd->add_option("--config", config_path, "JSON run config")->required();
    pre_cmd->add_option("--seed", seed_flag, "override config seed");

    auto* down_cmd = app.add_subcommand("downscale", "downscale an image with a checkpoint");
    down_cmd->add_option("--checkpoint", checkpoint)->required();
    down_cmd->add_option("--in", in_path)->required();
    down_cmd->add_option("--out", out_path)->required();
    down_cmd->add_option("--variant", variant_flag, "expected checkpoint variant");

    auto* up_cmd = app.add_subcommand("upscale", "restore an HR image from an artifact");
    up_cmd->add_option("--checkpoint", checkpoint)->required();
    up_cmd->add_option("--in", in_path)->required();
    up_cmd->add_option("--out", out_path)->required();

    auto* eval_cmd = app.add_subcommand("eval", "score a dataset directory");
    eval_cmd->add_option("--checkpoint", checkpoint);
    eval_cmd->add_option("--data", data_dir)->required();
    eval_cmd->add_option("--report", report_path)->required();
    eval_cmd->add_option("--method", method, "model|bicubic");
    eval_cmd->add_option("--scale", scale_flag, "scale for the bicubic method");
    eval_cmd->add_option("--crop-border", crop_border_px, "crop N border pixels before metrics");

    auto* rt_cmd = app.add_subcommand("roundtrip", "downscale then upscale one image");
    rt_cmd->add_option("--checkpoint", checkpoint)->required();
    rt_cmd->add_option("--in", in_path)->required();
    rt_cmd->add_option("--out-dir", out_path)->required();
    rt_cmd->add_option("--crop-border", crop_border_px);

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed() || pre_cmd->parsed()) {
            RunConfig rc = parse_config(config_path);
            if (seed_flag) rc.seed = *seed_flag;
            if (scale_override) rc.model.scale = std::stoi(*scale_override);
            if (variant_override) rc.model.variant = variant_from_string(*variant_override);
            rc.model.validate();
            return train_cmd->parsed() ? cmd_train(rc) : cmd_pretrain_ae(rc);
        }
        if (down_cmd->parsed()) return cmd_downscale(checkpoint, in_path, out_path, variant_flag);
        if (up_cmd->parsed()) return cmd_upscale(checkpoint, in_path, out_path);
        if (eval_cmd->parsed()) {
            if (method == "model" && checkpoint.empty())
                throw ConfigError("--checkpoint is required for the model method");
            return cmd_eval(checkpoint, data_dir, report_path, method, scale_flag, crop_border_px);
        }
        if (rt_cmd->parsed()) return cmd_roundtrip(checkpoint, in_path, out_path, crop_border_px);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const MismatchError& e) {
        std::cerr << "mismatch: " << e.what() << "\n";
        return 4;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

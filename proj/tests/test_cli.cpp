#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "irn/irn.hpp"

using namespace irn;
namespace fs = std::filesystem;

namespace {

const std::string kCli = IRN_CLI_PATH;

int run(const std::string& args) {
    const std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

struct Sandbox {
    fs::path dir;
    Sandbox() {
        dir = fs::temp_directory_path() / ("irn_cli_" + std::to_string(::getpid()));
        fs::create_directories(dir);
    }
    ~Sandbox() { fs::remove_all(dir); }
    std::string path(const std::string& name) const { return (dir / name).string(); }
};

void write_toy_images(const fs::path& dir, uint64_t seed, int count, int size) {
    fs::create_directories(dir);
    Rng rng(seed);
    for (int i = 0; i < count; ++i) {
        Tensor img = Tensor::zeros({3, size, size});
        const double fx = rng.uniform(0.1, 0.4), fy = rng.uniform(0.1, 0.4);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    double v = 0.5 + 0.3 * std::sin(fx * x + c) * std::cos(fy * y);
                    img.data()[(static_cast<size_t>(c) * size + y) * size + x] =
                        static_cast<float>(v);
                }
        write_artifact(RescaleArtifact{img, std::nullopt, std::nullopt},
                       (dir / ("img" + std::to_string(i) + ".png")).string());
    }
}

void write_config(const std::string& path, const std::string& variant, const std::string& data_dir,
                  const std::string& checkpoint, const std::string& loss_csv, int iterations = 4) {
    std::ofstream f(path);
    f << R"({
  "seed": 7,
  "model": {
    "scale": 2, "variant": ")"
      << variant << R"(", "blocks_per_stage": 2, "subnet_width": 8)";
    if (variant == "meta") f << R"(, "ae": {"conv_layers": 2, "hidden_width": 8})";
    f << R"(
  },
  "train": {"iterations": )"
      << iterations << R"(, "batch": 1, "patch_size": 16, "lr": 0.0002, "log_every": 1},
  "pretrain": {"samples": 2, "steps": 3, "z_size": 8},
  "paths": {"data_dir": ")"
      << data_dir << R"(", "checkpoint": ")" << checkpoint << R"(", "loss_csv": ")" << loss_csv
      << R"("}
})";
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("cli train, rescale and eval flows", "[cli]") {
    Sandbox sb;
    write_toy_images(sb.dir / "data", 1, 3, 32);

    const std::string cfg = sb.path("run.json");
    const std::string ckpt = sb.path("model.ckpt");
    const std::string csv = sb.path("loss.csv");
    write_config(cfg, "alpha", sb.path("data"), ckpt, csv);

    SECTION("train writes a checkpoint and a loss trace, deterministically") {
        REQUIRE(run("train --config " + cfg) == 0);
        REQUIRE(fs::exists(ckpt));
        REQUIRE(fs::exists(csv));
        auto first = slurp(ckpt);
        auto first_csv = slurp(csv);

        REQUIRE(run("train --config " + cfg) == 0);
        REQUIRE(slurp(ckpt) == first);
        REQUIRE(slurp(csv) == first_csv);
    }

    SECTION("downscale emits RGBA for the alpha variant and upscale restores") {
        REQUIRE(run("train --config " + cfg) == 0);
        const std::string lr = sb.path("lr.png");
        const std::string hr = sb.path("restored.png");
        REQUIRE(run("downscale --checkpoint " + ckpt + " --in " + sb.path("data/img0.png") +
                    " --out " + lr) == 0);
        PngImage img = png_read_file(lr);
        REQUIRE(img.channels == 4);
        REQUIRE(img.width == 16);
        REQUIRE(img.height == 16);

        REQUIRE(run("upscale --checkpoint " + ckpt + " --in " + lr + " --out " + hr) == 0);
        PngImage out = png_read_file(hr);
        REQUIRE(out.width == 32);
        REQUIRE(out.channels == 3);

        // variant flag mismatch
        REQUIRE(run("downscale --checkpoint " + ckpt + " --in " + sb.path("data/img0.png") +
                    " --out " + lr + " --variant meta") == 4);
    }

    SECTION("eval scores every image and writes the report") {
        REQUIRE(run("train --config " + cfg) == 0);
        const std::string report = sb.path("report.csv");
        REQUIRE(run("eval --checkpoint " + ckpt + " --data " + sb.path("data") + " --report " +
                    report) == 0);
        std::ifstream f(report);
        std::string line;
        std::getline(f, line);
        REQUIRE(line == "dataset,image,method,scale,psnr_db,ssim");
        int rows = 0;
        while (std::getline(f, line))
            if (!line.empty()) ++rows;
        REQUIRE(rows == 3);

        // deterministic reports
        auto bytes = slurp(report);
        REQUIRE(run("eval --checkpoint " + ckpt + " --data " + sb.path("data") + " --report " +
                    report) == 0);
        REQUIRE(slurp(report) == bytes);
    }

    SECTION("roundtrip command") {
        REQUIRE(run("train --config " + cfg) == 0);
        REQUIRE(run("roundtrip --checkpoint " + ckpt + " --in " + sb.path("data/img1.png") +
                    " --out-dir " + sb.path("rt")) == 0);
        REQUIRE(fs::exists(sb.path("rt/img1_lr.png")));
        REQUIRE(fs::exists(sb.path("rt/img1_restored.png")));
    }
}

TEST_CASE("cli meta variant carries the latent chunk", "[cli]") {
    Sandbox sb;
    write_toy_images(sb.dir / "data", 2, 2, 32);
    const std::string cfg = sb.path("run.json");
    const std::string ckpt = sb.path("meta.ckpt");
    write_config(cfg, "meta", sb.path("data"), ckpt, sb.path("loss.csv"));
    REQUIRE(run("train --config " + cfg) == 0);

    const std::string lr = sb.path("lr_meta.png");
    REQUIRE(run("downscale --checkpoint " + ckpt + " --in " + sb.path("data/img0.png") +
                " --out " + lr) == 0);
    PngImage img = png_read_file(lr);
    REQUIRE(img.channels == 3);
    REQUIRE(img.find_text(kLatentChunkKeyword) != nullptr);

    // upscaling a plain RGB png (no chunk) under a meta checkpoint is a mismatch
    REQUIRE(run("upscale --checkpoint " + ckpt + " --in " + sb.path("data/img0.png") + " --out " +
                sb.path("x.png")) == 4);

    // and the real artifact restores fine
    REQUIRE(run("upscale --checkpoint " + ckpt + " --in " + lr + " --out " + sb.path("y.png")) ==
            0);
}

TEST_CASE("cli pretrain-ae writes a reusable autoencoder checkpoint", "[cli]") {
    Sandbox sb;
    write_toy_images(sb.dir / "data", 3, 2, 32);
    const std::string cfg = sb.path("run.json");
    const std::string ckpt = sb.path("meta.ckpt");
    std::ofstream f(cfg);
    f << R"({
  "seed": 9,
  "model": {"scale": 2, "variant": "meta", "blocks_per_stage": 2, "subnet_width": 8,
            "ae": {"conv_layers": 2, "hidden_width": 8}},
  "train": {"iterations": 3, "batch": 1, "patch_size": 16},
  "pretrain": {"samples": 2, "steps": 4, "z_size": 8},
  "paths": {"data_dir": ")"
      << sb.path("data") << R"(", "checkpoint": ")" << ckpt << R"(", "ae_checkpoint": ")"
      << sb.path("ae.ckpt") << R"("}
})";
    f.close();
    REQUIRE(run("pretrain-ae --config " + cfg) == 0);
    REQUIRE(fs::exists(sb.path("ae.ckpt")));
    REQUIRE(run("train --config " + cfg) == 0);
}

TEST_CASE("cli error codes", "[cli]") {
    Sandbox sb;
    const std::string cfg = sb.path("bad.json");

    SECTION("missing data directory is a data error") {
        write_config(cfg, "baseline", sb.path("nope"), sb.path("m.ckpt"), sb.path("l.csv"));
        REQUIRE(run("train --config " + cfg) == 3);
    }

    SECTION("unknown config keys are rejected") {
        std::ofstream f(cfg);
        f << R"({"seed": 1, "bogus_key": true})";
        f.close();
        REQUIRE(run("train --config " + cfg) == 2);
    }

    SECTION("unparseable config") {
        std::ofstream f(cfg);
        f << "{ not json";
        f.close();
        REQUIRE(run("train --config " + cfg) == 2);
    }

    SECTION("missing config file") {
        REQUIRE(run("train --config " + sb.path("missing.json")) == 2);
    }

    SECTION("eval on an empty directory is a data error") {
        fs::create_directories(sb.dir / "empty");
        write_toy_images(sb.dir / "data", 4, 1, 32);
        write_config(cfg, "baseline", sb.path("data"), sb.path("m.ckpt"), sb.path("l.csv"), 2);
        REQUIRE(run("train --config " + cfg) == 0);
        REQUIRE(run("eval --checkpoint " + sb.path("m.ckpt") + " --data " + sb.path("empty") +
                    " --report " + sb.path("r.csv")) == 3);
    }

    SECTION("bicubic eval method needs no checkpoint") {
        write_toy_images(sb.dir / "data", 5, 2, 32);
        REQUIRE(run("eval --data " + sb.path("data") + " --report " + sb.path("r.csv") +
                    " --method bicubic --scale 2") == 0);
        REQUIRE(run("eval --data " + sb.path("data") + " --report " + sb.path("r.csv") +
                    " --method bicubic") == 2);  // missing scale
    }
}

// Command-line front end: gen-data, pretrain, train, harmonize, evaluate, cam.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>

#include "rgan/error.hpp"
#include "rgan/pipeline.hpp"

namespace {

rgan::RunConfig config_or_default(const std::string& path) {
    return path.empty() ? rgan::RunConfig{} : rgan::load_config(path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"RadiomicGAN CT kernel harmonization"};
    app.require_subcommand(1);

    std::string config_path;
    auto add_config = [&](CLI::App* cmd) { cmd->add_option("--config", config_path, "key = value run configuration"); };

    rgan::GenDataOptions gen;
    std::string gen_out;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate synthetic phantom pairs and a manifest");
    gen_cmd->add_option("--out", gen_out, "output directory")->required();
    gen_cmd->add_option("--count", gen.count, "number of phantoms");
    gen_cmd->add_option("--size", gen.size, "image size in pixels");
    gen_cmd->add_option("--seed", gen.seed, "generation seed");
    gen_cmd->add_option("--nonstandard", gen.nonstandard, "br40, bl57 or both");
    add_config(gen_cmd);

    std::string data_dir, out_path, encoder_path, model_path, in_path, target_path, report_path, mode = "full";
    auto* pre_cmd = app.add_subcommand("pretrain", "Train the surrogate kernel-classifier encoder");
    pre_cmd->add_option("--data", data_dir, "dataset directory")->required();
    pre_cmd->add_option("--out", out_path, "encoder checkpoint")->required();
    add_config(pre_cmd);

    auto* train_cmd = app.add_subcommand("train", "Train RadiomicGAN");
    train_cmd->add_option("--data", data_dir, "dataset directory")->required();
    train_cmd->add_option("--encoder", encoder_path, "encoder checkpoint")->required();
    train_cmd->add_option("--out", out_path, "model checkpoint")->required();
    train_cmd->add_option("--mode", mode, "fixed, dynamic or full");
    add_config(train_cmd);

    auto* harm_cmd = app.add_subcommand("harmonize", "Harmonize one image");
    harm_cmd->add_option("--model", model_path, "model checkpoint")->required();
    harm_cmd->add_option("--in", in_path, "input image")->required();
    harm_cmd->add_option("--out", out_path, "output image")->required();
    add_config(harm_cmd);

    auto* eval_cmd = app.add_subcommand("evaluate", "Reproducibility report on the test split");
    eval_cmd->add_option("--model", model_path, "model checkpoint")->required();
    eval_cmd->add_option("--data", data_dir, "dataset directory")->required();
    eval_cmd->add_option("--report", report_path, "report CSV")->required();
    add_config(eval_cmd);

    auto* cam_cmd = app.add_subcommand("cam", "Grad-CAM of the discriminator");
    cam_cmd->add_option("--model", model_path, "model checkpoint")->required();
    cam_cmd->add_option("--in", in_path, "non-standard image")->required();
    cam_cmd->add_option("--target", target_path, "candidate standard image")->required();
    cam_cmd->add_option("--out", out_path, "CAM image")->required();
    add_config(cam_cmd);

    CLI11_PARSE(app, argc, argv);

    try {
        const rgan::RunConfig cfg = config_or_default(config_path);
        if (gen_cmd->parsed()) {
            if (!config_path.empty()) gen.kernels = cfg.kernels;
            gen.out = gen_out;
            rgan::cmd_gen_data(gen, std::cerr);
        } else if (pre_cmd->parsed()) {
            const auto result = rgan::cmd_pretrain(data_dir, out_path, cfg, std::cerr);
            std::printf("val_accuracy %.6f epochs %d\n", result.val_accuracy, result.epochs);
        } else if (train_cmd->parsed()) {
            rgan::cmd_train(data_dir, encoder_path, out_path, rgan::parse_mode(mode), cfg, std::cerr);
        } else if (harm_cmd->parsed()) {
            rgan::cmd_harmonize(model_path, in_path, out_path, cfg.train.full_window());
        } else if (eval_cmd->parsed()) {
            rgan::cmd_evaluate(model_path, data_dir, report_path, cfg, std::cerr);
        } else if (cam_cmd->parsed()) {
            rgan::cmd_cam(model_path, in_path, target_path, out_path, cfg.train.full_window());
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

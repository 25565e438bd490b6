#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "rgan/error.hpp"
#include "rgan/pipeline.hpp"

namespace rgan {

namespace {

std::filesystem::path manifest_of(const std::filesystem::path& data_dir) { return data_dir / "manifest.csv"; }

void check_divisible(const CtImage& img, const std::filesystem::path& path) {
    if (img.width % 16 != 0 || img.height % 16 != 0) {
        throw ConfigError(path.string() + ": image size " + std::to_string(img.width) + "x" +
                          std::to_string(img.height) + " is not divisible by 16");
    }
}

void ensure_parent(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
}

}  // namespace

std::size_t cmd_gen_data(const GenDataOptions& opt, std::ostream& log) {
    const auto kernels = nonstandard_kernels(opt.nonstandard);
    if (opt.count < 1) throw ConfigError("gen-data: count must be >= 1");
    if (opt.size < 32 || opt.size % 2 != 0) throw ConfigError("gen-data: size must be even and >= 32");
    std::error_code ec;
    std::filesystem::create_directories(opt.out / "images", ec);
    if (ec) throw FormatError("cannot create " + (opt.out / "images").string() + ": " + ec.message());

    std::vector<ManifestRow> rows;
    for (int i = 0; i < opt.count; ++i) {
        const auto id = static_cast<std::uint64_t>(i);
        const CtImage raw = generate_phantom(derive_seed(opt.seed, "phantom", id), opt.size);
        const std::uint64_t noise_seed = derive_seed(opt.seed, "kernel_noise", id);
        std::vector<KernelTag> tags{KernelTag::kBL64};
        tags.insert(tags.end(), kernels.begin(), kernels.end());
        for (KernelTag tag : tags) {
            CtImage img = apply_kernel(raw, tag, noise_seed, opt.kernels);
            img.phantom_id = id;
            char name[64];
            std::snprintf(name, sizeof name, "images/p%05d_%s.pgm", i, std::string(kernel_name(tag)).c_str());
            write_image(img, opt.out / name);
            rows.push_back({name, tag, id});
        }
    }
    write_manifest(manifest_of(opt.out), rows);
    log << "wrote " << rows.size() << " images and " << manifest_of(opt.out).string() << '\n';
    return rows.size();
}

PretrainResult cmd_pretrain(const std::filesystem::path& data_dir, const std::filesystem::path& out,
                            const RunConfig& cfg, std::ostream& log) {
    const DatasetSplits splits = build_dataset(manifest_of(data_dir), cfg.splits);
    PretrainResult result = pretrain_encoder(splits.train, splits.val, cfg.arch, cfg.pretrain, &log);
    ensure_parent(out);
    save_checkpoint(result.encoder, {result.epochs, "pretrain", cfg.pretrain.seed}, out);
    return result;
}

std::filesystem::path train_log_path(const std::filesystem::path& model_path) {
    std::filesystem::path p = model_path;
    return p.replace_extension(".log.csv");
}

TrainResult cmd_train(const std::filesystem::path& data_dir, const std::filesystem::path& encoder_path,
                      const std::filesystem::path& out, TrainMode mode, const RunConfig& cfg, std::ostream& log) {
    const ModelBundle encoder = load_checkpoint(encoder_path, ModelKind::kEncoder).model;
    Architecture arch = parse_architecture_id(encoder.architecture_id);
    arch.conditional_d = cfg.arch.conditional_d;
    TrainConfig tc = cfg.train;
    tc.mode = mode;
    const DatasetSplits splits = build_dataset(manifest_of(data_dir), cfg.splits, cfg.train_kernel);
    log << "training " << mode_name(mode) << " on " << splits.train.pairs.size() << " pairs, validating on "
        << splits.val.pairs.size() << '\n';
    TrainResult result = train(tc, splits.train, splits.val, encoder, arch, &log);
    ensure_parent(out);
    save_checkpoint(result.model.bundle, {result.state.epoch, std::string(mode_name(mode)), tc.seed}, out);
    write_train_log(train_log_path(out), result.state.log);
    return result;
}

void cmd_harmonize(const std::filesystem::path& model_path, const std::filesystem::path& in,
                   const std::filesystem::path& out, const HuWindow& full) {
    const ModelBundle gan = load_checkpoint(model_path, ModelKind::kGan).model;
    const CtImage img = read_image(in);
    check_divisible(img, in);
    ensure_parent(out);
    write_image(harmonize(gan, img, full), out);
}

std::vector<NamedReport> cmd_evaluate(const std::filesystem::path& model_path, const std::filesystem::path& data_dir,
                                      const std::filesystem::path& report_path, const RunConfig& cfg,
                                      std::ostream& log) {
    const ModelBundle gan = load_checkpoint(model_path, ModelKind::kGan).model;
    const DatasetSplits splits = build_dataset(manifest_of(data_dir), cfg.splits, cfg.train_kernel);
    const auto& test = splits.test.pairs;
    if (test.empty()) throw ConfigError("evaluate: the test split is empty");

    std::vector<CtImage> harmonized;
    harmonized.reserve(test.size());
    for (const ImagePair& p : test) {
        check_divisible(p.x, data_dir);
        harmonized.push_back(harmonize(gan, p.x, cfg.train.full_window()));
    }
    std::vector<CandidatePair> input_pairs, harmonized_pairs;
    for (std::size_t i = 0; i < test.size(); ++i) {
        input_pairs.push_back({&test[i].x, &test[i].y});
        harmonized_pairs.push_back({&harmonized[i], &test[i].y});
    }
    FeatureConfig fc;
    fc.hu_min = cfg.train.hu_min;
    fc.hu_max = cfg.train.hu_max;
    std::vector<NamedReport> reports;
    reports.push_back({"input", reproducibility_report(input_pairs, fc)});
    reports.push_back({"harmonized", reproducibility_report(harmonized_pairs, fc)});

    ensure_parent(report_path);
    std::ofstream out(report_path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + report_path.string() + " for writing");
    write_report_csv(out, reports);
    for (const NamedReport& r : reports) {
        log << r.condition << ": psnr " << r.report.mean_psnr << " ssim " << r.report.mean_ssim << " reproducible";
        for (const RangeResult& range : r.report.ranges) {
            log << ' ' << (range.present ? std::to_string(range.reproducible_count) : std::string("NA"));
        }
        log << '\n';
    }
    return reports;
}

void cmd_cam(const std::filesystem::path& model_path, const std::filesystem::path& in,
             const std::filesystem::path& target, const std::filesystem::path& out, const HuWindow& full) {
    const ModelBundle gan = load_checkpoint(model_path, ModelKind::kGan).model;
    const CtImage x = read_image(in);
    const CtImage y = read_image(target);
    check_divisible(x, in);
    if (x.width != y.width || x.height != y.height) throw ConfigError("cam: input and target sizes differ");
    const Cam cam = grad_cam(gan, clip_normalize(x, full), clip_normalize(y, full)).front();
    std::vector<std::uint16_t> values(cam.values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        values[i] = static_cast<std::uint16_t>(std::lround(std::clamp(cam.values[i], 0.0f, 1.0f) * 65535.0));
    }
    ensure_parent(out);
    write_pgm16(out, cam.width, cam.height, values);
}

}  // namespace rgan

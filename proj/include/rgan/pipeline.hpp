#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rgan/dwt.hpp"
#include "rgan/networks.hpp"
#include "rgan/phantom.hpp"
#include "rgan/radiomics.hpp"

namespace rgan {

// ---- run configuration ---------------------------------------------------------

struct RunConfig {
    TrainConfig train;
    PretrainConfig pretrain;
    Architecture arch;
    int image_size = 64;
    int count = 100;
    std::uint64_t data_seed = 1;
    std::string nonstandard = "both";        // kernels written by gen-data: br40, bl57 or both
    KernelTag train_kernel = KernelTag::kBR40;  // non-standard kernel paired with BL64 for train/evaluate
    SplitRatios splits;
    KernelSimParams kernels;
    std::filesystem::path data_dir = "data";
    std::filesystem::path out_dir = "runs";
};

/// Flat `key = value` lines with `#` comments. Unknown keys and bad values raise ConfigError with the line number.
RunConfig parse_config(std::istream& in, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);

/// Every key with its current value, in parse_config syntax.
std::string format_config(const RunConfig& cfg);

/// Non-standard kernels selected by a gen-data `nonstandard` value.
std::vector<KernelTag> nonstandard_kernels(const std::string& which);

// ---- checkpoints ---------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
    int epoch = 0;
    std::string mode;
    std::uint64_t seed = 0;

    friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct Checkpoint {
    ModelBundle model;
    CheckpointMeta meta;
};

enum class ModelKind { kEncoder, kGan };

void save_checkpoint(const ModelBundle& model, const CheckpointMeta& meta, const std::filesystem::path& path);

/// Validates magic, version, completeness and shapes against the architecture id.
/// With `expected`, also refuses a checkpoint of the other model kind.
Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<ModelKind> expected = std::nullopt);

// ---- commands ------------------------------------------------------------------

struct GenDataOptions {
    std::filesystem::path out;
    int count = 10;
    int size = 64;
    std::uint64_t seed = 1;
    std::string nonstandard = "both";
    KernelSimParams kernels;
};

/// Writes BL64 plus the selected non-standard images for every phantom, and manifest.csv. Returns the image count.
std::size_t cmd_gen_data(const GenDataOptions& opt, std::ostream& log);

PretrainResult cmd_pretrain(const std::filesystem::path& data_dir, const std::filesystem::path& out,
                            const RunConfig& cfg, std::ostream& log);

/// Path of the per-epoch training log written next to a model checkpoint: model.ckpt -> model.log.csv.
std::filesystem::path train_log_path(const std::filesystem::path& model_path);

/// Trains in `mode`, writes the model checkpoint and its training log.
TrainResult cmd_train(const std::filesystem::path& data_dir, const std::filesystem::path& encoder_path,
                      const std::filesystem::path& out, TrainMode mode, const RunConfig& cfg, std::ostream& log);

void cmd_harmonize(const std::filesystem::path& model_path, const std::filesystem::path& in,
                   const std::filesystem::path& out, const HuWindow& full = kFullWindow);

/// Input-vs-standard and harmonized-vs-standard reports over the test split, written side by side.
std::vector<NamedReport> cmd_evaluate(const std::filesystem::path& model_path, const std::filesystem::path& data_dir,
                                      const std::filesystem::path& report_path, const RunConfig& cfg,
                                      std::ostream& log);

/// Grad-CAM of the discriminator judging `target` as the standard version of `in`, scaled to 16 bits.
void cmd_cam(const std::filesystem::path& model_path, const std::filesystem::path& in,
             const std::filesystem::path& target, const std::filesystem::path& out,
             const HuWindow& full = kFullWindow);

}  // namespace rgan

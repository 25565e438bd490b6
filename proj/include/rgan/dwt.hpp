#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "rgan/networks.hpp"
#include "rgan/phantom.hpp"
#include "rgan/rng.hpp"
#include "rgan/tensor.hpp"
#include "rgan/window.hpp"

namespace rgan {

enum class TrainMode { kFixed, kDynamic, kFull };
enum class Phase { kFixedGrowing, kDynamicSelection, kDone };

std::string_view mode_name(TrainMode mode);
TrainMode parse_mode(std::string_view name);
std::string_view phase_name(Phase phase);

struct TrainConfig {
    float lr = 1e-4f;
    float beta1 = 0.5f;
    float beta2 = 0.999f;
    float lambda_l1 = 100.0f;
    int batch_size = 4;
    double th_acc = 0.8;
    int th_eta = 3;
    double th_fail = 0.5;
    HuWindow window_start{-1024, -769};
    int window_step = 256;
    int hu_min = kPhantomHuMin;
    int hu_max = kPhantomHuMax;
    int max_epochs = 30;
    int subset_size = 16;
    int subset_repeats = 4;
    TrainMode mode = TrainMode::kFull;
    std::uint64_t seed = 1;

    HuWindow full_window() const { return {hu_min, hu_max}; }
    /// Throws ConfigError naming the first out-of-domain field.
    void validate() const;
};

struct EpochRecord {
    int epoch = 0;
    Phase phase = Phase::kFixedGrowing;
    HuWindow window;
    double d_loss = 0.0;
    double g_loss = 0.0;
    double l1_loss = 0.0;
    double val_acc = 0.0;
};

struct TrainState {
    int epoch = 0;
    Phase phase = Phase::kFixedGrowing;
    HuWindow window;
    int epoch_in_stage = 0;
    std::vector<EpochRecord> log;
};

// ---- fixed growing ----------------------------------------------------------

struct FixedStep {
    enum class Kind { kUnchanged, kAdvanced, kPhaseComplete };
    Kind kind = Kind::kUnchanged;
    HuWindow window;
};

/// Grows hi by window_step (clamped to hu_max) once val_acc > th_acc or epoch_in_stage >= th_eta.
/// At hi == hu_max the same trigger completes the phase instead.
FixedStep next_fixed_window(const HuWindow& current, double val_acc, int epoch_in_stage, const TrainConfig& cfg);

// ---- dynamic selection ------------------------------------------------------

/// HU values of `source` at pixels whose CAM value exceeds th_fail, with values seen only once removed.
std::vector<int> hot_values(const CtImage& source, const Cam& cam, double th_fail);

/// [min, max] of the merged lists intersected with [hu_min, hu_max]; nullopt when empty or degenerate.
std::optional<HuWindow> window_from_hot_values(std::span<const std::vector<int>> lists, const TrainConfig& cfg);

struct DynamicSelectionState {
    std::vector<std::uint64_t> subset;        // phantom ids of P, all repeats
    std::vector<Cam> cams;                    // C
    std::vector<std::vector<int>> per_image;  // W_i after the frequency rule
    std::vector<int> merged;                  // W
};

/// Recomputes the window from Grad-CAM hot-spots of the current discriminator on synthesized subsets.
std::optional<HuWindow> dynamic_window(const ModelBundle& gan, const Dataset& train, const HuWindow& current,
                                       const TrainConfig& cfg, CounterRng& rng,
                                       DynamicSelectionState* trace = nullptr);

// ---- adversarial training ---------------------------------------------------

/// Fraction of patch outputs with sigmoid(logit) > 0.5.
double fooling_rate(std::span<const Tensor> logit_maps);

/// Generator fooling rate of D(x, G(x)) on the window-normalized validation set.
double validation_accuracy(const ModelBundle& gan, const Dataset& val, const HuWindow& w, int batch_size = 8);

struct GanModel {
    ModelBundle bundle;
    OptimState g_state;
    OptimState d_state;
};

struct StepLosses {
    double d_loss = 0.0;
    double g_loss = 0.0;
    double l1_loss = 0.0;
};

/// One discriminator update followed by one generator update on a window-normalized batch.
StepLosses train_step(GanModel& model, const Tensor& x_norm, const Tensor& y_norm, const TrainConfig& cfg);

struct EpochStats {
    double d_loss = 0.0;
    double g_loss = 0.0;
    double l1_loss = 0.0;
    int batches = 0;
};

/// One pass over the shuffled training pairs; the shuffle is derived from (cfg.seed, epoch).
EpochStats train_epoch(GanModel& model, const Dataset& train, const HuWindow& w, const TrainConfig& cfg, int epoch);

/// Mean L1 between G(x) and y on a dataset (window-normalized); no parameter updates.
double mean_l1(const ModelBundle& gan, const Dataset& data, const HuWindow& w, int batch_size = 8);

/// The work done per epoch, separated from the window schedule so the schedule can run against stubs.
class EpochRunner {
public:
    virtual ~EpochRunner() = default;
    virtual EpochStats run_epoch(int epoch, const HuWindow& w) = 0;
    virtual double validate(const HuWindow& w) = 0;
    virtual std::optional<HuWindow> select_window(int epoch, const HuWindow& current) = 0;
};

/// The window schedule for the configured mode; runs exactly cfg.max_epochs epochs.
TrainState run_schedule(const TrainConfig& cfg, EpochRunner& runner, std::ostream* progress = nullptr);

struct TrainResult {
    GanModel model;
    TrainState state;
};

TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set, const ModelBundle& encoder,
                  const Architecture& arch, std::ostream* progress = nullptr);

/// Full-window normalization, generator, and denormalization; the result is tagged SYN_BL64.
CtImage harmonize(const ModelBundle& gan, const CtImage& img, const HuWindow& full = kFullWindow);

void write_train_log(const std::filesystem::path& path, std::span<const EpochRecord> log);

}  // namespace rgan

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>

#include "rgan/dwt.hpp"
#include "rgan/error.hpp"

namespace rgan {

namespace {

std::vector<const CtImage*> batch_of(const Dataset& data, std::span<const std::size_t> order, std::size_t start,
                                     std::size_t end, bool standard) {
    std::vector<const CtImage*> out;
    for (std::size_t i = start; i < end; ++i) {
        const ImagePair& pair = data.pairs[order[i]];
        out.push_back(standard ? &pair.y : &pair.x);
    }
    return out;
}

std::vector<std::size_t> identity_order(std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    return order;
}

/// The real per-epoch work: adversarial updates, validation, Grad-CAM window selection.
class GanEpochRunner final : public EpochRunner {
public:
    GanEpochRunner(GanModel& model, const Dataset& train, const Dataset& val, const TrainConfig& cfg)
        : model_(model), train_(train), val_(val), cfg_(cfg) {}

    EpochStats run_epoch(int epoch, const HuWindow& w) override { return train_epoch(model_, train_, w, cfg_, epoch); }

    double validate(const HuWindow& w) override { return validation_accuracy(model_.bundle, val_, w); }

    std::optional<HuWindow> select_window(int epoch, const HuWindow& current) override {
        CounterRng rng(derive_seed(cfg_.seed, "dynamic_subset", static_cast<std::uint64_t>(epoch)));
        return dynamic_window(model_.bundle, train_, current, cfg_, rng);
    }

private:
    GanModel& model_;
    const Dataset& train_;
    const Dataset& val_;
    const TrainConfig& cfg_;
};

}  // namespace

double fooling_rate(std::span<const Tensor> logit_maps) {
    std::size_t fooled = 0, total = 0;
    for (const Tensor& map : logit_maps) {
        // sigmoid(z) > 0.5 exactly when z > 0
        for (float z : map.data()) fooled += z > 0.0f ? 1 : 0;
        total += map.numel();
    }
    if (total == 0) throw ConfigError("fooling_rate: no discriminator outputs");
    return static_cast<double>(fooled) / static_cast<double>(total);
}

double validation_accuracy(const ModelBundle& gan, const Dataset& val, const HuWindow& w, int batch_size) {
    if (val.pairs.empty()) throw ConfigError("validation_accuracy: empty validation set");
    NoGradGuard no_grad;
    const auto order = identity_order(val.pairs.size());
    std::vector<Tensor> maps;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
        const Tensor x = clip_normalize_batch(batch_of(val, order, start, end, false), w);
        const Tensor fake = generator_forward(gan, x).image;
        maps.push_back(discriminator_forward(gan, x, fake).logits);
    }
    return fooling_rate(maps);
}

double mean_l1(const ModelBundle& gan, const Dataset& data, const HuWindow& w, int batch_size) {
    if (data.pairs.empty()) throw ConfigError("mean_l1: empty dataset");
    NoGradGuard no_grad;
    const auto order = identity_order(data.pairs.size());
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
        const Tensor x = clip_normalize_batch(batch_of(data, order, start, end, false), w);
        const Tensor y = clip_normalize_batch(batch_of(data, order, start, end, true), w);
        total += loss(Loss::kL1Mean, generator_forward(gan, x).image, y).item() * static_cast<double>(end - start);
    }
    return total / static_cast<double>(data.pairs.size());
}

StepLosses train_step(GanModel& model, const Tensor& x_norm, const Tensor& y_norm, const TrainConfig& cfg) {
    ModelBundle& m = model.bundle;
    auto g_params = m.group("G.");
    auto d_params = m.group("D.");

    const Tensor fake = generator_forward(m, x_norm).image;

    // discriminator: real pairs -> 1, synthesized pairs -> 0
    const Tensor real_logits = discriminator_forward(m, x_norm, y_norm).logits;
    const Tensor fake_logits = discriminator_forward(m, x_norm, fake.detach()).logits;
    const Tensor d_loss = add(loss(Loss::kBceWithLogits, real_logits, Tensor::full(real_logits.shape(), 1.0f)),
                              loss(Loss::kBceWithLogits, fake_logits, Tensor::full(fake_logits.shape(), 0.0f)));
    backward(d_loss);
    adam_step(d_params, model.d_state, {cfg.lr, cfg.beta1, cfg.beta2, 1e-8f});

    // generator: fool the updated, constant discriminator, plus weighted L1 to the standard image
    const Tensor judged = discriminator_forward(m.constants(), x_norm, fake).logits;
    const Tensor adversarial = loss(Loss::kBceWithLogits, judged, Tensor::full(judged.shape(), 1.0f));
    const Tensor l1 = loss(Loss::kL1Mean, fake, y_norm);
    const Tensor g_loss = add(adversarial, affine(l1, cfg.lambda_l1, 0.0f));
    backward(g_loss);
    adam_step(g_params, model.g_state, {cfg.lr, cfg.beta1, cfg.beta2, 1e-8f});

    return {d_loss.item(), g_loss.item(), l1.item()};
}

EpochStats train_epoch(GanModel& model, const Dataset& train, const HuWindow& w, const TrainConfig& cfg, int epoch) {
    if (train.pairs.empty()) throw ConfigError("train_epoch: empty training set");
    auto order = identity_order(train.pairs.size());
    CounterRng rng(derive_seed(cfg.seed, "epoch_shuffle", static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    EpochStats stats;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
        const Tensor x = clip_normalize_batch(batch_of(train, order, start, end, false), w);
        const Tensor y = clip_normalize_batch(batch_of(train, order, start, end, true), w);
        StepLosses step;
        try {
            step = train_step(model, x, y, cfg);
        } catch (const NumericError& e) {
            throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(stats.batches) +
                               " (window " + to_string(w) + "): " + e.what());
        }
        stats.d_loss += step.d_loss;
        stats.g_loss += step.g_loss;
        stats.l1_loss += step.l1_loss;
        ++stats.batches;
    }
    stats.d_loss /= stats.batches;
    stats.g_loss /= stats.batches;
    stats.l1_loss /= stats.batches;
    return stats;
}

TrainState run_schedule(const TrainConfig& cfg, EpochRunner& runner, std::ostream* progress) {
    cfg.validate();
    TrainState state;
    const bool dynamic_only = cfg.mode == TrainMode::kDynamic;
    state.phase = dynamic_only ? Phase::kDynamicSelection : Phase::kFixedGrowing;
    state.window = dynamic_only ? cfg.full_window() : cfg.window_start;
    bool schedule_saturated = false;  // fixed mode after the window reached hu_max

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        state.epoch = epoch;
        const EpochStats stats = runner.run_epoch(epoch, state.window);
        const double acc = runner.validate(state.window);
        ++state.epoch_in_stage;
        state.log.push_back({epoch, state.phase, state.window, stats.d_loss, stats.g_loss, stats.l1_loss, acc});
        if (progress) {
            *progress << "epoch " << epoch << ' ' << phase_name(state.phase) << " window " << to_string(state.window)
                      << " d_loss " << stats.d_loss << " g_loss " << stats.g_loss << " l1 " << stats.l1_loss
                      << " val_acc " << acc << std::endl;
        }

        if (state.phase == Phase::kFixedGrowing) {
            if (schedule_saturated) continue;
            const FixedStep step = next_fixed_window(state.window, acc, state.epoch_in_stage, cfg);
            if (step.kind == FixedStep::Kind::kAdvanced) {
                state.window = step.window;
                state.epoch_in_stage = 0;
            } else if (step.kind == FixedStep::Kind::kPhaseComplete) {
                state.epoch_in_stage = 0;
                if (cfg.mode == TrainMode::kFixed) {
                    schedule_saturated = true;
                } else {
                    state.phase = Phase::kDynamicSelection;
                    if (auto w = runner.select_window(epoch, state.window)) state.window = *w;
                }
            }
        } else {
            if (auto w = runner.select_window(epoch, state.window)) state.window = *w;
        }
    }
    state.phase = Phase::kDone;
    return state;
}

TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set, const ModelBundle& encoder,
                  const Architecture& arch, std::ostream* progress) {
    cfg.validate();
    if (train_set.pairs.empty()) throw ConfigError("train: empty training set");
    if (val_set.pairs.empty()) throw ConfigError("train: empty validation set");
    TrainResult result;
    result.model.bundle = make_gan(arch, encoder, derive_seed(cfg.seed, "gan_init"));
    GanEpochRunner runner(result.model, train_set, val_set, cfg);
    result.state = run_schedule(cfg, runner, progress);
    return result;
}

CtImage harmonize(const ModelBundle& gan, const CtImage& img, const HuWindow& full) {
    NoGradGuard no_grad;
    const Tensor x = clip_normalize(img, full);
    const Tensor y = generator_forward(gan, x).image;
    CtImage out = denormalize(y, full, img);
    out.kernel = KernelTag::kSynBL64;
    return out;
}

void write_train_log(const std::filesystem::path& path, std::span<const EpochRecord> log) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    out << "epoch,phase,window_lo,window_hi,d_loss,g_loss,val_acc\n";
    char buf[256];
    for (const EpochRecord& r : log) {
        std::snprintf(buf, sizeof buf, "%d,%s,%d,%d,%.9g,%.9g,%.9g\n", r.epoch, std::string(phase_name(r.phase)).c_str(),
                      r.window.lo, r.window.hi, r.d_loss, r.g_loss, r.val_acc);
        out << buf;
    }
    if (!out) throw FormatError("failed writing " + path.string());
}

}  // namespace rgan

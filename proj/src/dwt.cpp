#include "rgan/dwt.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "rgan/error.hpp"

namespace rgan {

std::string_view mode_name(TrainMode mode) {
    switch (mode) {
        case TrainMode::kFixed: return "fixed";
        case TrainMode::kDynamic: return "dynamic";
        case TrainMode::kFull: return "full";
    }
    return "full";
}

TrainMode parse_mode(std::string_view name) {
    if (name == "fixed") return TrainMode::kFixed;
    if (name == "dynamic") return TrainMode::kDynamic;
    if (name == "full") return TrainMode::kFull;
    throw ConfigError("invalid training mode '" + std::string(name) + "' (expected fixed, dynamic or full)");
}

std::string_view phase_name(Phase phase) {
    switch (phase) {
        case Phase::kFixedGrowing: return "fixed_growing";
        case Phase::kDynamicSelection: return "dynamic_selection";
        case Phase::kDone: return "done";
    }
    return "done";
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("invalid training config: " + what); };
    if (!(lr > 0.0f)) fail("lr must be positive");
    if (!(beta1 >= 0.0f && beta1 < 1.0f) || !(beta2 >= 0.0f && beta2 < 1.0f)) fail("betas must lie in [0, 1)");
    if (lambda_l1 < 0.0f) fail("lambda_l1 must be non-negative");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (th_eta < 1) fail("th_eta must be >= 1");
    if (!(th_fail >= 0.0 && th_fail <= 1.0)) fail("th_fail must lie in [0, 1]");
    if (hu_min < kPhantomHuMin || hu_max > kPhantomHuMax || hu_min >= hu_max) {
        fail("hu range must satisfy -1024 <= hu_min < hu_max <= 1000");
    }
    if (window_start.lo < hu_min || window_start.hi > hu_max || window_start.lo >= window_start.hi) {
        fail("window_start must lie inside [hu_min, hu_max] with lo < hi");
    }
    if (window_step < 1) fail("window_step must be >= 1");
    if (max_epochs < 1) fail("max_epochs must be >= 1");
    if (subset_size < 1 || subset_repeats < 1) fail("subset_size and subset_repeats must be >= 1");
}

FixedStep next_fixed_window(const HuWindow& current, double val_acc, int epoch_in_stage, const TrainConfig& cfg) {
    const bool trigger = val_acc > cfg.th_acc || epoch_in_stage >= cfg.th_eta;
    if (!trigger) return {FixedStep::Kind::kUnchanged, current};
    if (current.hi >= cfg.hu_max) return {FixedStep::Kind::kPhaseComplete, current};
    return {FixedStep::Kind::kAdvanced, {current.lo, std::min(current.hi + cfg.window_step, cfg.hu_max)}};
}

std::vector<int> hot_values(const CtImage& source, const Cam& cam, double th_fail) {
    if (cam.width != source.width || cam.height != source.height) {
        throw ConfigError("CAM size does not match the source image");
    }
    std::map<int, int> counts;
    for (std::size_t i = 0; i < cam.values.size(); ++i) {
        if (cam.values[i] > th_fail) ++counts[source.pixels[i]];
    }
    std::vector<int> out;
    for (const auto& [value, count] : counts) {
        // a value seen once is treated as noise
        if (count >= 2) out.insert(out.end(), count, value);
    }
    return out;
}

std::optional<HuWindow> window_from_hot_values(std::span<const std::vector<int>> lists, const TrainConfig& cfg) {
    bool any = false;
    int lo = 0, hi = 0;
    for (const auto& list : lists) {
        for (int v : list) {
            lo = any ? std::min(lo, v) : v;
            hi = any ? std::max(hi, v) : v;
            any = true;
        }
    }
    if (!any) return std::nullopt;
    lo = std::max(lo, cfg.hu_min);
    hi = std::min(hi, cfg.hu_max);
    if (lo >= hi) return std::nullopt;
    return HuWindow{lo, hi};
}

std::optional<HuWindow> dynamic_window(const ModelBundle& gan, const Dataset& train, const HuWindow& current,
                                       const TrainConfig& cfg, CounterRng& rng, DynamicSelectionState* trace) {
    if (train.pairs.empty()) return std::nullopt;
    const ModelBundle frozen = gan.constants();
    const std::size_t subset = std::min<std::size_t>(cfg.subset_size, train.pairs.size());
    std::vector<std::vector<int>> lists;
    for (int repeat = 0; repeat < cfg.subset_repeats; ++repeat) {
        std::vector<std::size_t> order(train.pairs.size());
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = 0; i < subset; ++i) std::swap(order[i], order[i + rng.below(order.size() - i)]);

        for (std::size_t start = 0; start < subset; start += cfg.batch_size) {
            const std::size_t end = std::min(subset, start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<const CtImage*> sources;
            for (std::size_t i = start; i < end; ++i) sources.push_back(&train.pairs[order[i]].x);
            const Tensor x_norm = clip_normalize_batch(sources, current);
            Tensor synthesized;
            {
                NoGradGuard no_grad;
                synthesized = generator_forward(frozen, x_norm).image;
            }
            const auto cams = grad_cam(frozen, x_norm, synthesized);
            for (std::size_t i = 0; i < cams.size(); ++i) {
                lists.push_back(hot_values(*sources[i], cams[i], cfg.th_fail));
                if (trace) {
                    trace->subset.push_back(sources[i]->phantom_id);
                    trace->cams.push_back(cams[i]);
                    trace->per_image.push_back(lists.back());
                    trace->merged.insert(trace->merged.end(), lists.back().begin(), lists.back().end());
                }
            }
        }
    }
    return window_from_hot_values(lists, cfg);
}

}  // namespace rgan

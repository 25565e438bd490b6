#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "rgan/error.hpp"
#include "rgan/phantom.hpp"
#include "rgan/rng.hpp"

namespace rgan {

std::vector<Split> assign_splits(const std::vector<std::uint64_t>& phantom_ids, const SplitRatios& ratios) {
    const double total = ratios.train + ratios.val + ratios.test;
    if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 || total <= 0) {
        throw ConfigError("split ratios must be non-negative with a positive sum");
    }
    const auto n = static_cast<double>(phantom_ids.size());
    const auto n_train = static_cast<std::size_t>(std::llround(n * ratios.train / total));
    const auto n_val = std::min(phantom_ids.size() - std::min(n_train, phantom_ids.size()),
                                static_cast<std::size_t>(std::llround(n * ratios.val / total)));

    std::vector<std::size_t> order(phantom_ids.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto ha = mix64(phantom_ids[a]);
        const auto hb = mix64(phantom_ids[b]);
        return ha != hb ? ha < hb : phantom_ids[a] < phantom_ids[b];
    });
    std::vector<Split> splits(phantom_ids.size(), Split::kTest);
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        if (rank < n_train) {
            splits[order[rank]] = Split::kTrain;
        } else if (rank < n_train + n_val) {
            splits[order[rank]] = Split::kVal;
        }
    }
    return splits;
}

DatasetSplits build_dataset(const std::filesystem::path& manifest_path, const SplitRatios& ratios,
                            KernelFilter nonstandard) {
    const auto rows = read_manifest(manifest_path);
    const auto base_dir = manifest_path.parent_path();

    struct PhantomImages {
        std::optional<CtImage> standard;
        std::map<KernelTag, CtImage> others;
    };
    std::map<std::uint64_t, PhantomImages> by_phantom;
    for (const ManifestRow& row : rows) {
        if (row.kernel == KernelTag::kRaw || row.kernel == KernelTag::kSynBL64) continue;
        auto& entry = by_phantom[row.phantom_id];
        const bool duplicate = is_standard(row.kernel) ? entry.standard.has_value() : entry.others.count(row.kernel) > 0;
        if (duplicate) {
            throw FormatError("duplicate image for phantom_id " + std::to_string(row.phantom_id) + " kernel " +
                              std::string(kernel_name(row.kernel)));
        }
        if (nonstandard && !is_standard(row.kernel) && row.kernel != *nonstandard) continue;
        CtImage img = read_image(base_dir / row.path);
        img.kernel = row.kernel;
        img.phantom_id = row.phantom_id;
        if (is_standard(row.kernel)) {
            entry.standard = std::move(img);
        } else {
            entry.others.emplace(row.kernel, std::move(img));
        }
    }

    std::vector<std::uint64_t> ids;
    for (const auto& [id, entry] : by_phantom) {
        if (!entry.standard) {
            throw FormatError("phantom_id " + std::to_string(id) + " has non-standard images but no BL64 image");
        }
        for (const auto& [tag, img] : entry.others) {
            if (img.width != entry.standard->width || img.height != entry.standard->height) {
                throw FormatError("phantom_id " + std::to_string(id) + ": pair dimensions differ");
            }
        }
        ids.push_back(id);
    }

    const auto splits = assign_splits(ids, ratios);
    DatasetSplits out;
    out.train.split = Split::kTrain;
    out.val.split = Split::kVal;
    out.test.split = Split::kTest;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto& entry = by_phantom[ids[i]];
        Dataset& target = splits[i] == Split::kTrain ? out.train : splits[i] == Split::kVal ? out.val : out.test;
        for (const auto& [tag, img] : entry.others) target.pairs.push_back({img, *entry.standard});
    }
    return out;
}

}  // namespace rgan

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rgan {

inline constexpr int kHuStorageMin = -1024;
inline constexpr int kHuStorageMax = 3071;
inline constexpr int kHuOffset = 1024;
inline constexpr int kPhantomHuMin = -1024;
inline constexpr int kPhantomHuMax = 1000;

enum class KernelTag { kBL64, kBL57, kBR40, kRaw, kSynBL64 };

std::string_view kernel_name(KernelTag tag);
KernelTag parse_kernel(std::string_view name);
inline bool is_standard(KernelTag tag) { return tag == KernelTag::kBL64; }

/// 2D CT slice in Hounsfield units, row-major.
struct CtImage {
    int width = 0;
    int height = 0;
    std::vector<int> pixels;
    KernelTag kernel = KernelTag::kRaw;
    std::uint64_t phantom_id = 0;
    std::uint64_t seed = 0;

    int at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
    std::size_t size() const { return pixels.size(); }

    friend bool operator==(const CtImage&, const CtImage&) = default;
};

/// Blur/noise parameters for each simulated reconstruction kernel.
struct KernelSimParams {
    double bl64_blur = 0.8;
    double bl64_noise = 5.0;
    double br40_blur = 1.8;
    double br40_noise = 5.0;
    double bl57_unsharp_amount = 0.8;
    double bl57_unsharp_sigma = 1.2;
    double bl57_noise = 8.0;
};

/// Deterministic RAW phantom: air, soft-tissue ellipses, a textured lung region, bone.
CtImage generate_phantom(std::uint64_t seed, int size);

/// Simulates reconstruction with the given kernel on a RAW phantom.
CtImage apply_kernel(const CtImage& base, KernelTag kernel, std::uint64_t noise_seed,
                     const KernelSimParams& params = {});

/// Separable Gaussian blur with replicated borders.
std::vector<double> gaussian_blur(const std::vector<double>& values, int width, int height, double sigma);

// ---- file I/O ---------------------------------------------------------------

/// 16-bit binary PGM, stored value = HU + 1024, metadata in header comments.
void write_image(const CtImage& img, const std::filesystem::path& path);
CtImage read_image(const std::filesystem::path& path);

/// Raw 16-bit PGM without HU offset or metadata (used for CAM output).
void write_pgm16(const std::filesystem::path& path, int width, int height, const std::vector<std::uint16_t>& values);

struct ManifestRow {
    std::string path;  // relative to the manifest
    KernelTag kernel;
    std::uint64_t phantom_id;
};

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

// ---- datasets ---------------------------------------------------------------

struct ImagePair {
    CtImage x;  // non-standard
    CtImage y;  // standard (BL64)
};

enum class Split { kTrain, kVal, kTest };

struct Dataset {
    std::vector<ImagePair> pairs;
    Split split = Split::kTrain;
};

struct SplitRatios {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

struct DatasetSplits {
    Dataset train;
    Dataset val;
    Dataset test;
};

/// Which non-standard kernels form pairs; std::nullopt keeps all of them.
using KernelFilter = std::optional<KernelTag>;

/// Pairs images by phantom_id and assigns whole phantoms to splits, ordered by a hash of the id.
DatasetSplits build_dataset(const std::filesystem::path& manifest_path, const SplitRatios& ratios,
                            KernelFilter nonstandard = std::nullopt);

/// Split assignment of phantom ids: the same ids and ratios always give the same result.
std::vector<Split> assign_splits(const std::vector<std::uint64_t>& phantom_ids, const SplitRatios& ratios);

}  // namespace rgan

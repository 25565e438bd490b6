#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "rgan/phantom.hpp"
#include "rgan/tensor.hpp"
#include "rgan/window.hpp"

namespace rgan {

/// Named parameters plus the architecture they belong to.
struct ModelBundle {
    std::string architecture_id;
    std::map<std::string, Tensor> params;
    std::set<std::string> frozen;

    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);

    /// Parameters whose names start with `prefix`, in name order.
    std::vector<Tensor> group(const std::string& prefix) const;
    /// Same storage with every gradient link dropped; forward passes through it never touch parameter grads.
    ModelBundle constants() const;
};

/// Channel widths of the encoder groups; the generator mirrors them in its decoder.
struct Architecture {
    std::vector<int> widths{32, 64, 128, 256};
    bool conditional_d = true;

    int blocks() const { return static_cast<int>(widths.size()); }
};

std::string encoder_architecture_id(const Architecture& arch);
std::string gan_architecture_id(const Architecture& arch);
/// Parses either id form back into an Architecture; throws ConfigError on unknown ids.
Architecture parse_architecture_id(const std::string& id);

/// Expected parameter shapes for an architecture id.
std::map<std::string, Shape> expected_shapes(const std::string& architecture_id);

inline constexpr int kKernelClasses = 3;
int kernel_class(KernelTag tag);

/// VGG-style classifier: the frozen encoder groups plus a linear head. He-initialized.
ModelBundle make_encoder(const Architecture& arch, std::uint64_t seed);

/// Generator + discriminator. Encoder convs are copied from `encoder` and frozen;
/// every other parameter is drawn from N(0, 0.02) (norm scales start at 1, biases at 0).
ModelBundle make_gan(const Architecture& arch, const ModelBundle& encoder, std::uint64_t seed);

// ---- forward passes ---------------------------------------------------------

/// Output of encoder group b (1-based) given its input: conv-relu-conv-relu.
Tensor encoder_group(const ModelBundle& m, const std::string& prefix, int group, const Tensor& input);

/// Classifier logits N×3.
Tensor classifier_forward(const ModelBundle& encoder, const Tensor& x_norm);

struct GeneratorOutput {
    Tensor image;                // N×1×H×W in (0, 1)
    std::vector<Tensor> skips;  // one per block, finest first
};

GeneratorOutput generator_forward(const ModelBundle& g, const Tensor& x_norm);

struct DiscriminatorOutput {
    Tensor logits;    // N×1×h×w
    Tensor features;  // activations of the 256-channel layer
};

DiscriminatorOutput discriminator_forward(const ModelBundle& d, const Tensor& x_norm, const Tensor& cand_norm);
/// The last conv of D applied to the 256-channel activations.
Tensor discriminator_head(const ModelBundle& d, const Tensor& features);

// ---- Grad-CAM ---------------------------------------------------------------

struct Cam {
    int width = 0;
    int height = 0;
    std::vector<float> values;  // in [0, 1]
    std::uint64_t phantom_id = 0;

    float at(int row, int col) const { return values[static_cast<std::size_t>(row) * width + col]; }
};

/// One CAM per sample of the batch. Parameters of D are treated as constants.
std::vector<Cam> grad_cam(const ModelBundle& d, const Tensor& x_norm, const Tensor& cand_norm);

/// ReLU(Σ_k α_k A_k) with α_k the spatial mean of the gradient, nearest-upsampled to out_h×out_w
/// and scaled by its maximum (all zeros when the maximum is 0). `activations`/`grads` are C×h×w.
Cam cam_from_activations(std::span<const float> activations, std::span<const float> grads, int channels, int h, int w,
                         int out_h, int out_w);

// ---- surrogate encoder pre-training ----------------------------------------

struct PretrainConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    int batch_size = 8;
    int max_epochs = 12;
    double min_accuracy = 0.90;
    std::uint64_t seed = 7;
};

struct PretrainResult {
    ModelBundle encoder;
    double initial_val_accuracy = 0.0;
    double val_accuracy = 0.0;
    int epochs = 0;
};

/// Labelled images for kernel classification (each distinct image of the pairs once).
struct KernelSample {
    const CtImage* image;
    int label;
};
std::vector<KernelSample> kernel_samples(const Dataset& data);

double classifier_accuracy(const ModelBundle& encoder, std::span<const KernelSample> samples, int batch_size = 16);

/// Trains the kernel classifier until the validation accuracy reaches cfg.min_accuracy.
/// Throws TrainingError with the achieved accuracy otherwise.
PretrainResult pretrain_encoder(const Dataset& train, const Dataset& val, const Architecture& arch,
                                const PretrainConfig& cfg, std::ostream* progress = nullptr);

}  // namespace rgan

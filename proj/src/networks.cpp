#include "rgan/networks.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "rgan/error.hpp"
#include "rgan/rng.hpp"

namespace rgan {

namespace {

constexpr float kGanInitStd = 0.02f;
constexpr std::array<int, 3> kDiscWidths{64, 128, 256};

std::string widths_tag(const std::vector<int>& widths) {
    std::string tag = "w";
    for (std::size_t i = 0; i < widths.size(); ++i) {
        if (i) tag += '-';
        tag += std::to_string(widths[i]);
    }
    return tag;
}

std::string group_name(const std::string& prefix, int group) { return prefix + ".g" + std::to_string(group); }

void add_conv_shapes(std::map<std::string, Shape>& shapes, const std::string& name, int out, int in, int k) {
    shapes[name + ".weight"] = {out, in, k, k};
    shapes[name + ".bias"] = {out};
}

void add_norm_shapes(std::map<std::string, Shape>& shapes, const std::string& name, int channels) {
    shapes[name + ".gamma"] = {channels};
    shapes[name + ".beta"] = {channels};
}

void add_encoder_shapes(std::map<std::string, Shape>& shapes, const std::string& prefix, const Architecture& arch) {
    int in = 1;
    for (int b = 1; b <= arch.blocks(); ++b) {
        const int w = arch.widths[b - 1];
        add_conv_shapes(shapes, group_name(prefix, b) + ".conv1", w, in, 3);
        add_conv_shapes(shapes, group_name(prefix, b) + ".conv2", w, w, 3);
        in = w;
    }
}

Tensor conv(const ModelBundle& m, const std::string& name, const Tensor& x, int stride, int padding) {
    return conv2d(x, m.at(name + ".weight"), m.at(name + ".bias"), stride, padding);
}

Tensor norm(const ModelBundle& m, const std::string& name, const Tensor& x) {
    return instance_norm(x, m.at(name + ".gamma"), m.at(name + ".beta"));
}

Tensor random_tensor(const Shape& shape, double stddev, std::uint64_t key) {
    CounterRng rng(key);
    std::vector<float> values(shape_numel(shape));
    for (float& v : values) v = static_cast<float>(stddev * rng.normal());
    return Tensor::from(shape, std::move(values));
}

bool ends_with(const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

// ---- bundle -----------------------------------------------------------------

const Tensor& ModelBundle::at(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("model '" + architecture_id + "' has no parameter '" + name + "'");
    return it->second;
}

Tensor& ModelBundle::at(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("model '" + architecture_id + "' has no parameter '" + name + "'");
    return it->second;
}

std::vector<Tensor> ModelBundle::group(const std::string& prefix) const {
    std::vector<Tensor> out;
    for (const auto& [name, t] : params) {
        if (name.rfind(prefix, 0) == 0) out.push_back(t);
    }
    return out;
}

ModelBundle ModelBundle::constants() const {
    ModelBundle out;
    out.architecture_id = architecture_id;
    out.frozen = frozen;
    for (const auto& [name, t] : params) out.params.emplace(name, t.detach());
    return out;
}

// ---- architecture ids -------------------------------------------------------

std::string encoder_architecture_id(const Architecture& arch) { return "vgg-encoder/" + widths_tag(arch.widths); }

std::string gan_architecture_id(const Architecture& arch) {
    return "radiomicgan/" + widths_tag(arch.widths) + (arch.conditional_d ? "/cond" : "/uncond");
}

Architecture parse_architecture_id(const std::string& id) {
    std::vector<std::string> parts;
    std::stringstream ss(id);
    std::string part;
    while (std::getline(ss, part, '/')) parts.push_back(part);
    const bool encoder = parts.size() == 2 && parts[0] == "vgg-encoder";
    const bool gan = parts.size() == 3 && parts[0] == "radiomicgan" && (parts[2] == "cond" || parts[2] == "uncond");
    if ((!encoder && !gan) || parts[1].size() < 2 || parts[1][0] != 'w') {
        throw ConfigError("unknown architecture id '" + id + "'");
    }
    Architecture arch;
    arch.widths.clear();
    std::stringstream ws(parts[1].substr(1));
    std::string width;
    while (std::getline(ws, width, '-')) {
        try {
            arch.widths.push_back(std::stoi(width));
        } catch (const std::exception&) {
            throw ConfigError("unknown architecture id '" + id + "'");
        }
        if (arch.widths.back() <= 0) throw ConfigError("unknown architecture id '" + id + "'");
    }
    if (arch.widths.empty()) throw ConfigError("unknown architecture id '" + id + "'");
    arch.conditional_d = !gan || parts[2] == "cond";
    return arch;
}

std::map<std::string, Shape> expected_shapes(const std::string& architecture_id) {
    const Architecture arch = parse_architecture_id(architecture_id);
    std::map<std::string, Shape> shapes;
    const int last = arch.widths.back();
    if (architecture_id.rfind("vgg-encoder/", 0) == 0) {
        add_encoder_shapes(shapes, "enc", arch);
        shapes["head.weight"] = {kKernelClasses, last};
        shapes["head.bias"] = {kKernelClasses};
        return shapes;
    }
    const int blocks = arch.blocks();
    add_encoder_shapes(shapes, "G.enc", arch);
    for (int b = 1; b <= blocks; ++b) {
        add_conv_shapes(shapes, group_name("G.filter", b), arch.widths[b - 1], arch.widths[b - 1], 3);
    }
    add_conv_shapes(shapes, "G.bottleneck", last, last, 3);
    int in = last;
    for (int stage = 1; stage <= blocks; ++stage) {
        const int w = arch.widths[blocks - stage];
        const std::string s = "G.dec.s" + std::to_string(stage);
        add_conv_shapes(shapes, s + ".up", w, in, 3);
        add_norm_shapes(shapes, s + ".up_norm", w);
        add_conv_shapes(shapes, s + ".fuse", w, 2 * w, 3);
        add_norm_shapes(shapes, s + ".fuse_norm", w);
        in = w;
    }
    add_conv_shapes(shapes, "G.out", 1, arch.widths.front(), 1);

    add_conv_shapes(shapes, "D.c1", kDiscWidths[0], arch.conditional_d ? 2 : 1, 4);
    add_conv_shapes(shapes, "D.c2", kDiscWidths[1], kDiscWidths[0], 4);
    add_norm_shapes(shapes, "D.n2", kDiscWidths[1]);
    add_conv_shapes(shapes, "D.c3", kDiscWidths[2], kDiscWidths[1], 4);
    add_norm_shapes(shapes, "D.n3", kDiscWidths[2]);
    add_conv_shapes(shapes, "D.c4", 1, kDiscWidths[2], 4);
    return shapes;
}

int kernel_class(KernelTag tag) {
    switch (tag) {
        case KernelTag::kBL64: return 0;
        case KernelTag::kBR40: return 1;
        case KernelTag::kBL57: return 2;
        default: throw ConfigError("no classifier label for kernel " + std::string(kernel_name(tag)));
    }
}

ModelBundle make_encoder(const Architecture& arch, std::uint64_t seed) {
    ModelBundle m;
    m.architecture_id = encoder_architecture_id(arch);
    for (const auto& [name, shape] : expected_shapes(m.architecture_id)) {
        Tensor t;
        if (ends_with(name, ".bias")) {
            t = Tensor::zeros(shape);
        } else {
            const std::size_t fan_in = shape_numel(shape) / static_cast<std::size_t>(shape[0]);
            t = random_tensor(shape, std::sqrt(2.0 / static_cast<double>(fan_in)), derive_seed(seed, name));
        }
        t.set_requires_grad(true);
        m.params.emplace(name, std::move(t));
    }
    return m;
}

ModelBundle make_gan(const Architecture& arch, const ModelBundle& encoder, std::uint64_t seed) {
    if (encoder.architecture_id != encoder_architecture_id(arch)) {
        throw ConfigError("encoder architecture '" + encoder.architecture_id + "' does not match '" +
                          encoder_architecture_id(arch) + "'");
    }
    ModelBundle m;
    m.architecture_id = gan_architecture_id(arch);
    for (const auto& [name, shape] : expected_shapes(m.architecture_id)) {
        Tensor t;
        if (name.rfind("G.enc.", 0) == 0) {
            const Tensor& source = encoder.at(name.substr(2));
            if (source.shape() != shape) throw ConfigError("encoder parameter shape mismatch for " + name);
            t = source.clone();
            t.set_requires_grad(false);
            m.frozen.insert(name);
        } else {
            if (ends_with(name, ".bias") || ends_with(name, ".beta")) {
                t = Tensor::zeros(shape);
            } else if (ends_with(name, ".gamma")) {
                t = Tensor::full(shape, 1.0f);
            } else {
                t = random_tensor(shape, kGanInitStd, derive_seed(seed, name));
            }
            t.set_requires_grad(true);
        }
        m.params.emplace(name, std::move(t));
    }
    return m;
}

// ---- forward passes ---------------------------------------------------------

Tensor encoder_group(const ModelBundle& m, const std::string& prefix, int group, const Tensor& input) {
    const std::string g = group_name(prefix, group);
    return relu(conv(m, g + ".conv2", relu(conv(m, g + ".conv1", input, 1, 1)), 1, 1));
}

Tensor classifier_forward(const ModelBundle& encoder, const Tensor& x_norm) {
    const Architecture arch = parse_architecture_id(encoder.architecture_id);
    Tensor h = x_norm;
    for (int b = 1; b <= arch.blocks(); ++b) {
        if (b > 1) h = maxpool2(h);
        h = encoder_group(encoder, "enc", b, h);
    }
    return linear(global_avg_pool(h), encoder.at("head.weight"), encoder.at("head.bias"));
}

GeneratorOutput generator_forward(const ModelBundle& g, const Tensor& x_norm) {
    const Architecture arch = parse_architecture_id(g.architecture_id);
    if (x_norm.shape().size() != 4 || x_norm.dim(1) != 1) {
        throw ConfigError("generator expects N×1×H×W input, got " + shape_str(x_norm.shape()));
    }
    const int multiple = 1 << arch.blocks();
    if (x_norm.dim(2) % multiple != 0 || x_norm.dim(3) % multiple != 0) {
        throw ConfigError("generator input " + std::to_string(x_norm.dim(2)) + "x" + std::to_string(x_norm.dim(3)) +
                          " is not divisible by " + std::to_string(multiple));
    }

    GeneratorOutput out;
    Tensor h = x_norm;
    for (int b = 1; b <= arch.blocks(); ++b) {
        const Tensor features = encoder_group(g, "G.enc", b, h);
        out.skips.push_back(relu(conv(g, group_name("G.filter", b), features, 1, 1)));
        h = maxpool2(features);
    }
    Tensor d = relu(conv(g, "G.bottleneck", h, 1, 1));
    for (int stage = 1; stage <= arch.blocks(); ++stage) {
        const std::string s = "G.dec.s" + std::to_string(stage);
        d = relu(norm(g, s + ".up_norm", conv(g, s + ".up", upsample_nearest2(d), 1, 1)));
        d = concat_channels(d, out.skips[arch.blocks() - stage]);
        d = relu(norm(g, s + ".fuse_norm", conv(g, s + ".fuse", d, 1, 1)));
    }
    out.image = sigmoid(conv(g, "G.out", d, 1, 0));
    return out;
}

DiscriminatorOutput discriminator_forward(const ModelBundle& d, const Tensor& x_norm, const Tensor& cand_norm) {
    if (x_norm.shape() != cand_norm.shape()) {
        throw ConfigError("discriminator inputs differ in shape: " + shape_str(x_norm.shape()) + " vs " +
                          shape_str(cand_norm.shape()));
    }
    const bool conditional = d.at("D.c1.weight").dim(1) == 2;
    const Tensor input = conditional ? concat_channels(x_norm, cand_norm) : cand_norm;
    Tensor h = leaky_relu(conv(d, "D.c1", input, 2, 1));
    h = leaky_relu(norm(d, "D.n2", conv(d, "D.c2", h, 2, 1)));
    h = leaky_relu(norm(d, "D.n3", conv(d, "D.c3", h, 1, 1)));
    DiscriminatorOutput out;
    out.features = h;
    out.logits = discriminator_head(d, h);
    return out;
}

Tensor discriminator_head(const ModelBundle& d, const Tensor& features) { return conv(d, "D.c4", features, 1, 1); }

// ---- Grad-CAM ---------------------------------------------------------------

Cam cam_from_activations(std::span<const float> activations, std::span<const float> grads, int channels, int h, int w,
                         int out_h, int out_w) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    if (activations.size() != plane * channels || grads.size() != activations.size()) {
        throw ConfigError("cam_from_activations: buffer sizes do not match C×h×w");
    }
    std::vector<double> raw(plane, 0.0);
    for (int k = 0; k < channels; ++k) {
        const float* a = activations.data() + k * plane;
        const float* g = grads.data() + k * plane;
        double alpha = 0.0;
        for (std::size_t i = 0; i < plane; ++i) alpha += g[i];
        alpha /= static_cast<double>(plane);
        for (std::size_t i = 0; i < plane; ++i) raw[i] += alpha * a[i];
    }
    double peak = 0.0;
    for (double& v : raw) {
        v = std::max(v, 0.0);
        peak = std::max(peak, v);
    }
    Cam cam;
    cam.width = out_w;
    cam.height = out_h;
    cam.values.assign(static_cast<std::size_t>(out_h) * out_w, 0.0f);
    if (peak <= 0.0) return cam;
    for (int r = 0; r < out_h; ++r) {
        const int sr = static_cast<int>(static_cast<long>(r) * h / out_h);
        for (int c = 0; c < out_w; ++c) {
            const int sc = static_cast<int>(static_cast<long>(c) * w / out_w);
            cam.values[static_cast<std::size_t>(r) * out_w + c] =
                static_cast<float>(raw[static_cast<std::size_t>(sr) * w + sc] / peak);
        }
    }
    return cam;
}

std::vector<Cam> grad_cam(const ModelBundle& d, const Tensor& x_norm, const Tensor& cand_norm) {
    const ModelBundle frozen_d = d.constants();
    Tensor features;
    {
        NoGradGuard no_grad;
        features = discriminator_forward(frozen_d, x_norm.detach(), cand_norm.detach()).features;
    }
    Tensor leaf = features.detach();
    leaf.set_requires_grad(true);
    const Tensor logits = discriminator_head(frozen_d, leaf);
    // per-sample non-standard score: mean over the patch map of 1 - sigmoid(logit)
    const int map_size = logits.dim(2) * logits.dim(3);
    const Tensor score = sum(affine(sigmoid(logits), -1.0f / map_size, 1.0f / map_size));
    backward(score);

    const int n = leaf.dim(0), channels = leaf.dim(1), h = leaf.dim(2), w = leaf.dim(3);
    const std::size_t per_sample = static_cast<std::size_t>(channels) * h * w;
    const std::vector<float> zeros(leaf.has_grad() ? 0 : leaf.numel(), 0.0f);
    const std::span<const float> grads = leaf.has_grad() ? leaf.grad() : std::span<const float>(zeros);
    std::vector<Cam> cams;
    for (int s = 0; s < n; ++s) {
        cams.push_back(cam_from_activations(leaf.data().subspan(s * per_sample, per_sample),
                                            grads.subspan(s * per_sample, per_sample), channels, h, w,
                                            x_norm.dim(2), x_norm.dim(3)));
    }
    return cams;
}

// ---- pre-training -----------------------------------------------------------

std::vector<KernelSample> kernel_samples(const Dataset& data) {
    std::vector<KernelSample> out;
    std::set<std::pair<std::uint64_t, KernelTag>> seen;
    for (const ImagePair& pair : data.pairs) {
        for (const CtImage* img : {&pair.y, &pair.x}) {
            if (seen.insert({img->phantom_id, img->kernel}).second) out.push_back({img, kernel_class(img->kernel)});
        }
    }
    return out;
}

double classifier_accuracy(const ModelBundle& encoder, std::span<const KernelSample> samples, int batch_size) {
    if (samples.empty()) throw ConfigError("classifier_accuracy: no samples");
    NoGradGuard no_grad;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        const std::size_t end = std::min(samples.size(), start + batch_size);
        std::vector<const CtImage*> images;
        for (std::size_t i = start; i < end; ++i) images.push_back(samples[i].image);
        const Tensor logits = classifier_forward(encoder, clip_normalize_batch(images, kFullWindow));
        const auto z = logits.data();
        for (std::size_t i = start; i < end; ++i) {
            const float* row = z.data() + (i - start) * kKernelClasses;
            const int predicted = static_cast<int>(std::max_element(row, row + kKernelClasses) - row);
            if (predicted == samples[i].label) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

PretrainResult pretrain_encoder(const Dataset& train, const Dataset& val, const Architecture& arch,
                                const PretrainConfig& cfg, std::ostream* progress) {
    const auto train_samples = kernel_samples(train);
    const auto val_samples = kernel_samples(val);
    for (const auto* samples : {&train_samples, &val_samples}) {
        std::set<int> labels;
        for (const KernelSample& s : *samples) labels.insert(s.label);
        if (labels.size() != kKernelClasses) {
            throw ConfigError("encoder pre-training needs BL64, BR40 and BL57 images in both train and val splits");
        }
    }

    PretrainResult result;
    result.encoder = make_encoder(arch, derive_seed(cfg.seed, "encoder_init"));
    result.initial_val_accuracy = classifier_accuracy(result.encoder, val_samples);
    result.val_accuracy = result.initial_val_accuracy;

    auto params = result.encoder.group("");
    OptimState state;
    const AdamConfig adam{cfg.lr, cfg.beta1, 0.999f, 1e-8f};
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::vector<std::size_t> order(train_samples.size());
        std::iota(order.begin(), order.end(), 0);
        CounterRng rng(derive_seed(cfg.seed, "pretrain_shuffle", static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<const CtImage*> images;
            std::vector<int> labels;
            for (std::size_t i = start; i < end; ++i) {
                images.push_back(train_samples[order[i]].image);
                labels.push_back(train_samples[order[i]].label);
            }
            const Tensor logits = classifier_forward(result.encoder, clip_normalize_batch(images, kFullWindow));
            const Tensor ce = cross_entropy(logits, labels);
            backward(ce);
            adam_step(params, state, adam);
            loss_sum += ce.item();
            ++batches;
        }
        result.epochs = epoch;
        result.val_accuracy = classifier_accuracy(result.encoder, val_samples);
        if (progress) {
            *progress << "pretrain epoch " << epoch << " loss " << loss_sum / std::max(batches, 1) << " val_acc "
                      << result.val_accuracy << '\n';
        }
        if (result.val_accuracy >= cfg.min_accuracy) break;
    }
    if (result.val_accuracy < cfg.min_accuracy) {
        throw TrainingError("encoder pre-training reached validation accuracy " + std::to_string(result.val_accuracy) +
                            " after " + std::to_string(result.epochs) + " epochs; required " +
                            std::to_string(cfg.min_accuracy));
    }
    for (auto& [name, t] : result.encoder.params) t.set_requires_grad(false);
    return result;
}

}  // namespace rgan

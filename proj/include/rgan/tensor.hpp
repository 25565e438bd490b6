#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rgan {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::shared_ptr<std::vector<float>> data;
    std::vector<float> grad;  // empty until the first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
    const char* op = "leaf";

    /// Gradient buffer, zero-filled on first use.
    float* grad_buffer();
};

}  // namespace detail

/// Handle to a float32 array that may participate in a reverse-mode gradient graph.
/// Copies are shallow; detach() shares storage but drops the graph.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<float> data();
    std::span<const float> data() const;
    float item() const;

    bool requires_grad() const;
    void set_requires_grad(bool on);
    bool has_grad() const;
    std::span<const float> grad() const;
    std::span<float> mutable_grad();
    void zero_grad();

    /// Same storage, no graph, no gradient.
    Tensor detach() const;
    /// Deep copy of the values.
    Tensor clone() const;

    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

/// Disables graph construction on this thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_mode_enabled();

// ---- operators --------------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding);

enum class Resize { kMaxPool2, kUpsampleNearest2 };
Tensor pool_resize(const Tensor& input, Resize mode);
inline Tensor maxpool2(const Tensor& input) { return pool_resize(input, Resize::kMaxPool2); }
inline Tensor upsample_nearest2(const Tensor& input) { return pool_resize(input, Resize::kUpsampleNearest2); }

enum class Activation { kRelu, kLeakyRelu, kSigmoid };
inline constexpr float kLeakySlope = 0.2f;
Tensor activation(const Tensor& input, Activation kind);
inline Tensor relu(const Tensor& x) { return activation(x, Activation::kRelu); }
inline Tensor leaky_relu(const Tensor& x) { return activation(x, Activation::kLeakyRelu); }
inline Tensor sigmoid(const Tensor& x) { return activation(x, Activation::kSigmoid); }

/// Per-(sample, channel) normalization over H×W with learned per-channel scale and shift.
Tensor instance_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);

Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// scale * x + shift, elementwise.
Tensor affine(const Tensor& x, float scale, float shift);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// N×C×H×W → N×C.
Tensor global_avg_pool(const Tensor& input);
/// input N×F, weight O×F, bias O → N×O.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);
/// Mean softmax cross-entropy of N×K logits against integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

enum class Loss { kBceWithLogits, kL1Mean };
Tensor loss(Loss kind, const Tensor& prediction, const Tensor& target);

/// Populates gradients of every reachable tensor that requires them.
void backward(const Tensor& loss);

// ---- optimizer --------------------------------------------------------------

struct AdamConfig {
    float lr = 1e-4f;
    float beta1 = 0.5f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

struct OptimState {
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
    std::int64_t t = 0;
};

/// Bias-corrected Adam update on every parameter with requires_grad; zeroes gradients afterwards.
/// Parameters without requires_grad are left untouched.
void adam_step(std::span<Tensor> params, OptimState& state, const AdamConfig& cfg);

}  // namespace rgan

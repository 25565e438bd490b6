#include "rgan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <Eigen/Core>

#include "rgan/error.hpp"

namespace rgan {

using detail::Node;

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

thread_local bool g_grad_mode = true;

void check_finite(std::span<const float> values, const char* op, const char* what) {
    for (float v : values) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite ") + what + " in op '" + op + "'");
        }
    }
}

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
    if (!g_grad_mode) return false;
    for (const Tensor* t : inputs) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

/// Creates the output node; attaches the graph only when some input requires grad.
Tensor make_result(Shape shape, std::vector<float> values, std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> backward_fn, const char* op) {
    check_finite(values, op, "forward value");
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::make_shared<std::vector<float>>(std::move(values));
    node->op = op;
    if (any_requires_grad(inputs)) {
        node->requires_grad = true;
        for (const Tensor* t : inputs) {
            if (t->defined()) node->parents.push_back(t->node());
        }
        node->backward = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (!t.defined()) throw ConfigError(std::string(op) + ": undefined tensor");
    if (t.shape().size() != rank) {
        throw ConfigError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                          shape_str(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
    }
}

/// Gradient sink for a parent, or nullptr when the parent does not want one.
float* sink(const Tensor& t) {
    if (!t.defined() || !t.requires_grad()) return nullptr;
    return t.node()->grad_buffer();
}

/// Valid output-column range [lo, hi) for kernel column j; outside it the source is padding.
inline void valid_range(int out_w, int width, int stride, int pad, int j, int& lo, int& hi) {
    lo = 0;
    while (lo < out_w && lo * stride - pad + j < 0) ++lo;
    hi = out_w;
    while (hi > lo && (hi - 1) * stride - pad + j >= width) --hi;
}

void im2col(const float* in, int channels, int height, int width, int kh, int kw, int stride, int pad, int out_h,
            int out_w, float* col) {
    const int plane = out_h * out_w;
    for (int c = 0; c < channels; ++c) {
        const float* src = in + static_cast<std::size_t>(c) * height * width;
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j) {
                float* row = col + static_cast<std::size_t>((c * kh + i) * kw + j) * plane;
                int lo, hi;
                valid_range(out_w, width, stride, pad, j, lo, hi);
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - pad + i;
                    float* dst = row + oy * out_w;
                    if (iy < 0 || iy >= height) {
                        std::fill(dst, dst + out_w, 0.0f);
                        continue;
                    }
                    const float* line = src + static_cast<std::size_t>(iy) * width - pad + j;
                    std::fill(dst, dst + lo, 0.0f);
                    if (stride == 1) {
                        std::copy(line + lo, line + hi, dst + lo);
                    } else {
                        for (int ox = lo; ox < hi; ++ox) dst[ox] = line[ox * stride];
                    }
                    std::fill(dst + hi, dst + out_w, 0.0f);
                }
            }
        }
    }
}

void col2im_add(const float* col, int channels, int height, int width, int kh, int kw, int stride, int pad,
                int out_h, int out_w, float* out) {
    const int plane = out_h * out_w;
    for (int c = 0; c < channels; ++c) {
        float* dst = out + static_cast<std::size_t>(c) * height * width;
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j) {
                const float* row = col + static_cast<std::size_t>((c * kh + i) * kw + j) * plane;
                int lo, hi;
                valid_range(out_w, width, stride, pad, j, lo, hi);
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - pad + i;
                    if (iy < 0 || iy >= height) continue;
                    float* line = dst + static_cast<std::size_t>(iy) * width - pad + j;
                    const float* src = row + oy * out_w;
                    if (stride == 1) {
                        for (int ox = lo; ox < hi; ++ox) line[ox] += src[ox];
                    } else {
                        for (int ox = lo; ox < hi; ++ox) line[ox * stride] += src[ox];
                    }
                }
            }
        }
    }
}

float stable_sigmoid(float z) {
    float y;
    if (z >= 0.0f) {
        y = 1.0f / (1.0f + std::exp(-z));
    } else {
        const float e = std::exp(z);
        y = e / (1.0f + e);
    }
    // keep strictly inside (0, 1) so downstream logs and the generator range contract hold
    return std::clamp(y, std::numeric_limits<float>::denorm_min(), std::nextafter(1.0f, 0.0f));
}

}  // namespace

// ---- shapes and tensor handle -----------------------------------------------

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ConfigError("non-positive dimension in shape " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

float* Node::grad_buffer() {
    if (grad.empty()) grad.assign(data->size(), 0.0f);
    return grad.data();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0f, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<float>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
    if (values.size() != shape_numel(shape)) {
        throw ConfigError("data length " + std::to_string(values.size()) + " does not match shape " +
                          shape_str(shape));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::make_shared<std::vector<float>>(std::move(values));
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(float value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }
int Tensor::dim(std::size_t axis) const { return node_->shape.at(axis); }
std::size_t Tensor::numel() const { return node_->data->size(); }
std::span<float> Tensor::data() { return *node_->data; }
std::span<const float> Tensor::data() const { return *node_->data; }

float Tensor::item() const {
    if (numel() != 1) throw ConfigError("item() on tensor of shape " + shape_str(shape()));
    return (*node_->data)[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (!on) node_->grad.clear();
}

bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const float> Tensor::grad() const { return node_->grad; }
std::span<float> Tensor::mutable_grad() { return {node_->grad_buffer(), numel()}; }

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

Tensor Tensor::detach() const {
    auto node = std::make_shared<Node>();
    node->shape = node_->shape;
    node->data = node_->data;
    return Tensor(std::move(node));
}

Tensor Tensor::clone() const {
    return from(node_->shape, *node_->data, false);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }
bool grad_mode_enabled() { return g_grad_mode; }

// ---- convolution ------------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding) {
    require_rank(input, 4, "conv2d input");
    require_rank(weight, 4, "conv2d weight");
    require_rank(bias, 1, "conv2d bias");
    if (stride <= 0 || padding < 0) throw ConfigError("conv2d: stride must be positive and padding non-negative");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int k = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(1) != c) {
        throw ConfigError("conv2d: input has " + std::to_string(c) + " channels but weight " +
                          shape_str(weight.shape()) + " expects " + std::to_string(weight.dim(1)));
    }
    if (bias.dim(0) != k) {
        throw ConfigError("conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(k) +
                          " output channels");
    }
    if (kh > h + 2 * padding || kw > w + 2 * padding) {
        throw ConfigError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                          " larger than padded input " + std::to_string(h + 2 * padding) + "x" +
                          std::to_string(w + 2 * padding));
    }
    const int out_h = (h + 2 * padding - kh) / stride + 1;
    const int out_w = (w + 2 * padding - kw) / stride + 1;
    const int patch = c * kh * kw;
    const int plane = out_h * out_w;
    const bool direct = kh == 1 && kw == 1 && stride == 1 && padding == 0;

    const float* in_ptr = input.data().data();
    const float* w_ptr = weight.data().data();
    const float* b_ptr = bias.data().data();
    const std::size_t col_size = static_cast<std::size_t>(patch) * plane;
    std::vector<float> out(static_cast<std::size_t>(n) * k * plane);
    // recomputing columns in the backward pass is cheaper than keeping them resident
    std::vector<float> col(direct ? 0 : col_size);
    ConstMatMap wm(w_ptr, k, patch);
    for (int s = 0; s < n; ++s) {
        const float* src = in_ptr + static_cast<std::size_t>(s) * c * h * w;
        const float* col_ptr = src;
        if (!direct) {
            im2col(src, c, h, w, kh, kw, stride, padding, out_h, out_w, col.data());
            col_ptr = col.data();
        }
        MatMap om(out.data() + static_cast<std::size_t>(s) * k * plane, k, plane);
        om.noalias() = wm * ConstMatMap(col_ptr, patch, plane);
        for (int o = 0; o < k; ++o) om.row(o).array() += b_ptr[o];
    }

    auto backward_fn = [=](Node& self) {
        const float* g_out = self.grad.data();
        float* g_in = sink(input);
        float* g_w = sink(weight);
        float* g_b = sink(bias);
        ConstMatMap wmat(weight.data().data(), k, patch);

        // stride-1 input gradient as a gather convolution with the flipped, transposed kernel
        const int back_pad = kh - 1 - padding;
        const bool gather = g_in && !direct && stride == 1 && kh == kw && back_pad >= 0;
        std::vector<float> flipped;
        std::vector<float> scratch;
        if (gather) {
            flipped.resize(static_cast<std::size_t>(c) * k * kh * kw);
            const auto wv = weight.data();
            for (int o = 0; o < k; ++o)
                for (int ch = 0; ch < c; ++ch)
                    for (int i = 0; i < kh; ++i)
                        for (int j = 0; j < kw; ++j)
                            flipped[((static_cast<std::size_t>(ch) * k + o) * kh + (kh - 1 - i)) * kw + (kw - 1 - j)] =
                                wv[((static_cast<std::size_t>(o) * c + ch) * kh + i) * kw + j];
            scratch.resize(static_cast<std::size_t>(k) * kh * kw * h * w);
        } else if (g_in && !direct) {
            scratch.resize(col_size);
        }
        std::vector<float> wcol(g_w && !direct ? col_size : 0);

        for (int s = 0; s < n; ++s) {
            ConstMatMap dout(g_out + static_cast<std::size_t>(s) * k * plane, k, plane);
            if (g_b) {
                // plain loop: Eigen's vectorized sum depends on the buffer's address
                for (int o = 0; o < k; ++o) {
                    const float* row = g_out + (static_cast<std::size_t>(s) * k + o) * plane;
                    float acc = 0.0f;
                    for (int i = 0; i < plane; ++i) acc += row[i];
                    g_b[o] += acc;
                }
            }
            const float* src = input.data().data() + static_cast<std::size_t>(s) * c * h * w;
            if (g_w) {
                const float* col_ptr = src;
                if (!direct) {
                    im2col(src, c, h, w, kh, kw, stride, padding, out_h, out_w, wcol.data());
                    col_ptr = wcol.data();
                }
                MatMap gw(g_w, k, patch);
                gw.noalias() += dout * ConstMatMap(col_ptr, patch, plane).transpose();
            }
            if (g_in) {
                float* dst = g_in + static_cast<std::size_t>(s) * c * h * w;
                if (direct) {
                    MatMap gi(dst, patch, plane);
                    gi.noalias() += wmat.transpose() * dout;
                } else if (gather) {
                    const int back_patch = k * kh * kw;
                    im2col(g_out + static_cast<std::size_t>(s) * k * plane, k, out_h, out_w, kh, kw, 1, back_pad, h,
                           w, scratch.data());
                    MatMap gi(dst, c, h * w);
                    gi.noalias() += ConstMatMap(flipped.data(), c, back_patch) *
                                    ConstMatMap(scratch.data(), back_patch, h * w);
                } else {
                    MatMap dc(scratch.data(), patch, plane);
                    dc.noalias() = wmat.transpose() * dout;
                    col2im_add(scratch.data(), c, h, w, kh, kw, stride, padding, out_h, out_w, dst);
                }
            }
        }
    };
    return make_result({n, k, out_h, out_w}, std::move(out), {&input, &weight, &bias}, std::move(backward_fn),
                       "conv2d");
}

// ---- resampling -------------------------------------------------------------

Tensor pool_resize(const Tensor& input, Resize mode) {
    require_rank(input, 4, "pool_resize");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const auto in = input.data();
    if (mode == Resize::kMaxPool2) {
        if (h % 2 != 0 || w % 2 != 0) {
            throw ConfigError("maxpool2 requires even spatial dims, got " + shape_str(input.shape()));
        }
        const int oh = h / 2, ow = w / 2;
        std::vector<float> out(static_cast<std::size_t>(n) * c * oh * ow);
        std::vector<std::uint32_t> arg(out.size());
        std::size_t idx = 0;
        for (int plane = 0; plane < n * c; ++plane) {
            const std::size_t base = static_cast<std::size_t>(plane) * h * w;
            for (int y = 0; y < oh; ++y) {
                for (int x = 0; x < ow; ++x, ++idx) {
                    std::size_t best = base + static_cast<std::size_t>(2 * y) * w + 2 * x;
                    for (int dy = 0; dy < 2; ++dy) {
                        for (int dx = 0; dx < 2; ++dx) {
                            const std::size_t at = base + static_cast<std::size_t>(2 * y + dy) * w + 2 * x + dx;
                            if (in[at] > in[best]) best = at;
                        }
                    }
                    out[idx] = in[best];
                    arg[idx] = static_cast<std::uint32_t>(best);
                }
            }
        }
        auto backward_fn = [input, arg = std::move(arg)](Node& self) {
            float* g = sink(input);
            for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[i];
        };
        return make_result({n, c, oh, ow}, std::move(out), {&input}, std::move(backward_fn), "maxpool2");
    }

    const int oh = h * 2, ow = w * 2;
    std::vector<float> out(static_cast<std::size_t>(n) * c * oh * ow);
    for (int plane = 0; plane < n * c; ++plane) {
        const float* src = in.data() + static_cast<std::size_t>(plane) * h * w;
        float* dst = out.data() + static_cast<std::size_t>(plane) * oh * ow;
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) dst[y * ow + x] = src[(y / 2) * w + x / 2];
        }
    }
    auto backward_fn = [input, n, c, h, w](Node& self) {
        float* g = sink(input);
        const int oh2 = h * 2, ow2 = w * 2;
        for (int plane = 0; plane < n * c; ++plane) {
            const float* src = self.grad.data() + static_cast<std::size_t>(plane) * oh2 * ow2;
            float* dst = g + static_cast<std::size_t>(plane) * h * w;
            for (int y = 0; y < oh2; ++y) {
                for (int x = 0; x < ow2; ++x) dst[(y / 2) * w + x / 2] += src[y * ow2 + x];
            }
        }
    };
    return make_result({n, c, oh, ow}, std::move(out), {&input}, std::move(backward_fn), "upsample_nearest2");
}

// ---- elementwise ------------------------------------------------------------

Tensor activation(const Tensor& input, Activation kind) {
    if (!input.defined()) throw ConfigError("activation: undefined tensor");
    const auto in = input.data();
    std::vector<float> out(in.size());
    switch (kind) {
        case Activation::kRelu:
            for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0f ? in[i] : 0.0f;
            break;
        case Activation::kLeakyRelu:
            for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0f ? in[i] : kLeakySlope * in[i];
            break;
        case Activation::kSigmoid:
            for (std::size_t i = 0; i < in.size(); ++i) out[i] = stable_sigmoid(in[i]);
            break;
    }
    auto backward_fn = [input, kind](Node& self) {
        float* g = sink(input);
        const auto x = input.data();
        const auto& y = *self.data;
        for (std::size_t i = 0; i < x.size(); ++i) {
            float d = 0.0f;
            switch (kind) {
                case Activation::kRelu: d = x[i] > 0.0f ? 1.0f : 0.0f; break;
                case Activation::kLeakyRelu: d = x[i] > 0.0f ? 1.0f : kLeakySlope; break;
                case Activation::kSigmoid: d = y[i] * (1.0f - y[i]); break;
            }
            g[i] += d * self.grad[i];
        }
    };
    const char* name = kind == Activation::kRelu ? "relu" : kind == Activation::kLeakyRelu ? "leaky_relu" : "sigmoid";
    return make_result(input.shape(), std::move(out), {&input}, std::move(backward_fn), name);
}

Tensor instance_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, float eps) {
    require_rank(input, 4, "instance_norm");
    const int n = input.dim(0), c = input.dim(1);
    const int hw = input.dim(2) * input.dim(3);
    if (gamma.numel() != static_cast<std::size_t>(c) || beta.numel() != static_cast<std::size_t>(c)) {
        throw ConfigError("instance_norm: scale/shift must have " + std::to_string(c) + " entries");
    }
    const auto in = input.data();
    const auto gm = gamma.data();
    const auto bt = beta.data();
    std::vector<float> out(in.size());
    std::vector<float> xhat(in.size());
    std::vector<float> inv_std(static_cast<std::size_t>(n) * c);
    for (int plane = 0; plane < n * c; ++plane) {
        const int ch = plane % c;
        const std::size_t base = static_cast<std::size_t>(plane) * hw;
        double s = 0.0;
        for (int i = 0; i < hw; ++i) s += in[base + i];
        const double mu = s / hw;
        double ss = 0.0;
        for (int i = 0; i < hw; ++i) {
            const double d = in[base + i] - mu;
            ss += d * d;
        }
        const double inv = 1.0 / std::sqrt(ss / hw + eps);
        inv_std[plane] = static_cast<float>(inv);
        for (int i = 0; i < hw; ++i) {
            const float xh = static_cast<float>((in[base + i] - mu) * inv);
            xhat[base + i] = xh;
            out[base + i] = gm[ch] * xh + bt[ch];
        }
    }
    auto backward_fn = [input, gamma, beta, n, c, hw, xhat = std::move(xhat),
                        inv_std = std::move(inv_std)](Node& self) {
        float* g_in = sink(input);
        float* g_gamma = sink(gamma);
        float* g_beta = sink(beta);
        const auto gm2 = gamma.data();
        for (int plane = 0; plane < n * c; ++plane) {
            const int ch = plane % c;
            const std::size_t base = static_cast<std::size_t>(plane) * hw;
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (int i = 0; i < hw; ++i) {
                sum_dy += self.grad[base + i];
                sum_dy_xhat += static_cast<double>(self.grad[base + i]) * xhat[base + i];
            }
            if (g_gamma) g_gamma[ch] += static_cast<float>(sum_dy_xhat);
            if (g_beta) g_beta[ch] += static_cast<float>(sum_dy);
            if (g_in) {
                const double scale = gm2[ch] * static_cast<double>(inv_std[plane]) / hw;
                for (int i = 0; i < hw; ++i) {
                    const double v = hw * static_cast<double>(self.grad[base + i]) - sum_dy -
                                     xhat[base + i] * sum_dy_xhat;
                    g_in[base + i] += static_cast<float>(scale * v);
                }
            }
        }
    };
    return make_result(input.shape(), std::move(out), {&input, &gamma, &beta}, std::move(backward_fn),
                       "instance_norm");
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require_rank(a, 4, "concat_channels");
    require_rank(b, 4, "concat_channels");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
        throw ConfigError("concat_channels: incompatible shapes " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()));
    }
    const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    const std::size_t hw = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
    std::vector<float> out(static_cast<std::size_t>(n) * (ca + cb) * hw);
    const auto da = a.data();
    const auto db = b.data();
    for (int s = 0; s < n; ++s) {
        float* dst = out.data() + s * (ca + cb) * hw;
        std::copy_n(da.data() + s * ca * hw, ca * hw, dst);
        std::copy_n(db.data() + s * cb * hw, cb * hw, dst + ca * hw);
    }
    auto backward_fn = [a, b, n, ca, cb, hw](Node& self) {
        float* ga = sink(a);
        float* gb = sink(b);
        for (int s = 0; s < n; ++s) {
            const float* src = self.grad.data() + s * (ca + cb) * hw;
            if (ga) {
                for (std::size_t i = 0; i < ca * hw; ++i) ga[s * ca * hw + i] += src[i];
            }
            if (gb) {
                for (std::size_t i = 0; i < cb * hw; ++i) gb[s * cb * hw + i] += src[ca * hw + i];
            }
        }
    };
    return make_result({n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {&a, &b}, std::move(backward_fn),
                       "concat_channels");
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    const auto da = a.data();
    const auto db = b.data();
    std::vector<float> out(da.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
    auto backward_fn = [a, b](Node& self) {
        for (const Tensor* t : {&a, &b}) {
            if (float* g = sink(*t)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
            }
        }
    };
    return make_result(a.shape(), std::move(out), {&a, &b}, std::move(backward_fn), "add");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    const auto da = a.data();
    const auto db = b.data();
    std::vector<float> out(da.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
    auto backward_fn = [a, b](Node& self) {
        const auto xa = a.data();
        const auto xb = b.data();
        float* ga = sink(a);
        float* gb = sink(b);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (ga) ga[i] += self.grad[i] * xb[i];
            if (gb) gb[i] += self.grad[i] * xa[i];
        }
    };
    return make_result(a.shape(), std::move(out), {&a, &b}, std::move(backward_fn), "mul");
}

Tensor affine(const Tensor& x, float scale, float shift) {
    const auto dx = x.data();
    std::vector<float> out(dx.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * dx[i] + shift;
    auto backward_fn = [x, scale](Node& self) {
        float* g = sink(x);
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += scale * self.grad[i];
    };
    return make_result(x.shape(), std::move(out), {&x}, std::move(backward_fn), "affine");
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (float v : x.data()) s += v;
    auto backward_fn = [x](Node& self) {
        float* g = sink(x);
        const float up = self.grad[0];
        for (std::size_t i = 0; i < x.numel(); ++i) g[i] += up;
    };
    return make_result({1}, {static_cast<float>(s)}, {&x}, std::move(backward_fn), "sum");
}

Tensor mean(const Tensor& x) {
    double s = 0.0;
    for (float v : x.data()) s += v;
    const double count = static_cast<double>(x.numel());
    auto backward_fn = [x, count](Node& self) {
        float* g = sink(x);
        const float up = static_cast<float>(self.grad[0] / count);
        for (std::size_t i = 0; i < x.numel(); ++i) g[i] += up;
    };
    return make_result({1}, {static_cast<float>(s / count)}, {&x}, std::move(backward_fn), "mean");
}

// ---- classifier head --------------------------------------------------------

Tensor global_avg_pool(const Tensor& input) {
    require_rank(input, 4, "global_avg_pool");
    const int n = input.dim(0), c = input.dim(1);
    const int hw = input.dim(2) * input.dim(3);
    const auto in = input.data();
    std::vector<float> out(static_cast<std::size_t>(n) * c);
    for (int plane = 0; plane < n * c; ++plane) {
        double s = 0.0;
        for (int i = 0; i < hw; ++i) s += in[static_cast<std::size_t>(plane) * hw + i];
        out[plane] = static_cast<float>(s / hw);
    }
    auto backward_fn = [input, n, c, hw](Node& self) {
        float* g = sink(input);
        for (int plane = 0; plane < n * c; ++plane) {
            const float up = self.grad[plane] / static_cast<float>(hw);
            for (int i = 0; i < hw; ++i) g[static_cast<std::size_t>(plane) * hw + i] += up;
        }
    };
    return make_result({n, c}, std::move(out), {&input}, std::move(backward_fn), "global_avg_pool");
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    require_rank(input, 2, "linear input");
    require_rank(weight, 2, "linear weight");
    const int n = input.dim(0), f = input.dim(1), o = weight.dim(0);
    if (weight.dim(1) != f || bias.numel() != static_cast<std::size_t>(o)) {
        throw ConfigError("linear: weight " + shape_str(weight.shape()) + " incompatible with input " +
                          shape_str(input.shape()));
    }
    const auto x = input.data();
    const auto wt = weight.data();
    const auto b = bias.data();
    std::vector<float> out(static_cast<std::size_t>(n) * o);
    for (int s = 0; s < n; ++s) {
        for (int r = 0; r < o; ++r) {
            double acc = b[r];
            for (int i = 0; i < f; ++i) acc += static_cast<double>(x[s * f + i]) * wt[r * f + i];
            out[s * o + r] = static_cast<float>(acc);
        }
    }
    auto backward_fn = [input, weight, bias, n, f, o](Node& self) {
        float* gx = sink(input);
        float* gw = sink(weight);
        float* gb = sink(bias);
        const auto xv = input.data();
        const auto wv = weight.data();
        for (int s = 0; s < n; ++s) {
            for (int r = 0; r < o; ++r) {
                const float up = self.grad[s * o + r];
                if (gb) gb[r] += up;
                for (int i = 0; i < f; ++i) {
                    if (gw) gw[r * f + i] += up * xv[s * f + i];
                    if (gx) gx[s * f + i] += up * wv[r * f + i];
                }
            }
        }
    };
    return make_result({n, o}, std::move(out), {&input, &weight, &bias}, std::move(backward_fn), "linear");
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
    require_rank(logits, 2, "cross_entropy");
    const int n = logits.dim(0), k = logits.dim(1);
    if (labels.size() != static_cast<std::size_t>(n)) throw ConfigError("cross_entropy: label count mismatch");
    const auto z = logits.data();
    std::vector<float> probs(z.size());
    double total = 0.0;
    for (int s = 0; s < n; ++s) {
        if (labels[s] < 0 || labels[s] >= k) throw ConfigError("cross_entropy: label out of range");
        const float* row = z.data() + s * k;
        const float zmax = *std::max_element(row, row + k);
        double denom = 0.0;
        for (int j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j] - zmax));
        for (int j = 0; j < k; ++j) probs[s * k + j] = static_cast<float>(std::exp(row[j] - zmax) / denom);
        total += -(row[labels[s]] - zmax - std::log(denom));
    }
    std::vector<int> lab(labels.begin(), labels.end());
    auto backward_fn = [logits, probs = std::move(probs), lab = std::move(lab), n, k](Node& self) {
        float* g = sink(logits);
        const float up = self.grad[0] / static_cast<float>(n);
        for (int s = 0; s < n; ++s) {
            for (int j = 0; j < k; ++j) {
                const float onehot = j == lab[s] ? 1.0f : 0.0f;
                g[s * k + j] += up * (probs[s * k + j] - onehot);
            }
        }
    };
    return make_result({1}, {static_cast<float>(total / n)}, {&logits}, std::move(backward_fn), "cross_entropy");
}

// ---- losses -----------------------------------------------------------------

Tensor loss(Loss kind, const Tensor& prediction, const Tensor& target) {
    require_same_shape(prediction, target, "loss");
    const auto p = prediction.data();
    const auto t = target.data();
    const double count = static_cast<double>(p.size());
    double total = 0.0;
    if (kind == Loss::kBceWithLogits) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double z = p[i];
            total += std::max(z, 0.0) - z * t[i] + std::log1p(std::exp(-std::abs(z)));
        }
        auto backward_fn = [prediction, target, count](Node& self) {
            const double up = self.grad[0] / count;
            float* gp = sink(prediction);
            float* gt = sink(target);
            const auto pv = prediction.data();
            const auto tv = target.data();
            for (std::size_t i = 0; i < pv.size(); ++i) {
                if (gp) gp[i] += static_cast<float>(up * (stable_sigmoid(pv[i]) - tv[i]));
                if (gt) gt[i] += static_cast<float>(-up * pv[i]);
            }
        };
        return make_result({1}, {static_cast<float>(total / count)}, {&prediction, &target}, std::move(backward_fn),
                           "bce_with_logits");
    }
    for (std::size_t i = 0; i < p.size(); ++i) total += std::abs(static_cast<double>(p[i]) - t[i]);
    auto backward_fn = [prediction, target, count](Node& self) {
        const double up = self.grad[0] / count;
        float* gp = sink(prediction);
        float* gt = sink(target);
        const auto pv = prediction.data();
        const auto tv = target.data();
        for (std::size_t i = 0; i < pv.size(); ++i) {
            const float d = pv[i] - tv[i];
            const double sgn = d > 0.0f ? 1.0 : (d < 0.0f ? -1.0 : 0.0);
            if (gp) gp[i] += static_cast<float>(up * sgn);
            if (gt) gt[i] -= static_cast<float>(up * sgn);
        }
    };
    return make_result({1}, {static_cast<float>(total / count)}, {&prediction, &target}, std::move(backward_fn),
                       "l1_mean");
}

// ---- reverse pass -----------------------------------------------------------

void backward(const Tensor& loss_value) {
    if (!loss_value.defined() || loss_value.numel() != 1) {
        throw ConfigError("backward() requires a scalar loss");
    }
    if (!loss_value.requires_grad()) return;

    // post-order DFS; reversed it is a valid topological order from the loss
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss_value.node().get(), 0}};
    seen.insert(loss_value.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && !seen.count(parent)) {
                seen.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss_value.node()->grad_buffer()[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (!node->backward) continue;
        if (node->grad.empty()) continue;
        check_finite(node->grad, node->op, "gradient");
        node->backward(*node);
    }
    for (Node* node : order) {
        if (!node->backward && !node->grad.empty()) check_finite(node->grad, node->op, "gradient");
    }
}

// ---- optimizer --------------------------------------------------------------

void adam_step(std::span<Tensor> params, OptimState& state, const AdamConfig& cfg) {
    if (state.t == 0 && state.m.empty()) {
        for (const Tensor& p : params) {
            state.m.emplace_back(p.numel(), 0.0f);
            state.v.emplace_back(p.numel(), 0.0f);
        }
    }
    if (state.m.size() != params.size()) throw ConfigError("adam_step: optimizer state does not match parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].requires_grad() && !params[i].has_grad()) {
            throw ConfigError("adam_step: missing gradient on trainable parameter #" + std::to_string(i) + " " +
                              shape_str(params[i].shape()));
        }
    }
    ++state.t;
    const double bias1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(state.t));
    const double bias2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(state.t));
    const float step = static_cast<float>(cfg.lr / bias1);
    const float inv_bias2 = static_cast<float>(1.0 / bias2);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        if (!p.requires_grad()) continue;
        auto values = p.data();
        auto grads = p.mutable_grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != values.size()) throw ConfigError("adam_step: moment buffer shape mismatch");
        for (std::size_t j = 0; j < values.size(); ++j) {
            const float g = grads[j];
            m[j] = cfg.beta1 * m[j] + (1.0f - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0f - cfg.beta2) * g * g;
            values[j] -= step * m[j] / (std::sqrt(v[j] * inv_bias2) + cfg.eps);
        }
        check_finite(values, "adam_step", "parameter");
        p.zero_grad();
    }
}

}  // namespace rgan

#pragma once
// Naive double-precision re-implementations of the tensor ops and the generator,
// used as finite-difference oracles for the float32 autograd engine.

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "rgan/networks.hpp"
#include "rgan/rng.hpp"
#include "rgan/tensor.hpp"

namespace rgan::ref {

/// While set, piecewise ops append their branch decisions here; two evaluations with different traces
/// straddle a point where the function is not differentiable.
inline thread_local std::vector<std::uint8_t>* kink_trace = nullptr;

inline void trace_branch(std::uint8_t branch) {
    if (kink_trace) kink_trace->push_back(branch);
}

struct DTensor {
    Shape shape;
    std::vector<double> v;

    int dim(std::size_t i) const { return shape[i]; }
    double& at4(int n, int c, int h, int w) {
        return v[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    double at4(int n, int c, int h, int w) const {
        return v[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
};

inline DTensor zeros(const Shape& s) { return {s, std::vector<double>(shape_numel(s), 0.0)}; }

inline DTensor to_double(const Tensor& t) {
    DTensor d{t.shape(), {}};
    for (float f : t.data()) d.v.push_back(f);
    return d;
}

inline DTensor conv2d(const DTensor& x, const DTensor& w, const DTensor& b, int stride, int pad) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int o = w.dim(0), k = w.dim(2);
    const int oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
    DTensor y = zeros({n, o, oh, ow});
    for (int s = 0; s < n; ++s)
        for (int oc = 0; oc < o; ++oc)
            for (int r = 0; r < oh; ++r)
                for (int q = 0; q < ow; ++q) {
                    double acc = b.v[oc];
                    for (int ic = 0; ic < c; ++ic)
                        for (int kr = 0; kr < k; ++kr)
                            for (int kc = 0; kc < k; ++kc) {
                                const int ir = r * stride - pad + kr, iq = q * stride - pad + kc;
                                if (ir < 0 || ir >= h || iq < 0 || iq >= wd) continue;
                                acc += x.at4(s, ic, ir, iq) * w.at4(oc, ic, kr, kc);
                            }
                    y.at4(s, oc, r, q) = acc;
                }
    return y;
}

inline DTensor maxpool2(const DTensor& x) {
    DTensor y = zeros({x.dim(0), x.dim(1), x.dim(2) / 2, x.dim(3) / 2});
    for (int s = 0; s < x.dim(0); ++s)
        for (int c = 0; c < x.dim(1); ++c)
            for (int r = 0; r < y.dim(2); ++r)
                for (int q = 0; q < y.dim(3); ++q) {
                    const double cell[4] = {x.at4(s, c, 2 * r, 2 * q), x.at4(s, c, 2 * r, 2 * q + 1),
                                            x.at4(s, c, 2 * r + 1, 2 * q), x.at4(s, c, 2 * r + 1, 2 * q + 1)};
                    const auto arg = static_cast<std::uint8_t>(std::max_element(cell, cell + 4) - cell);
                    trace_branch(arg);
                    y.at4(s, c, r, q) = cell[arg];
                }
    return y;
}

inline DTensor upsample2(const DTensor& x) {
    DTensor y = zeros({x.dim(0), x.dim(1), x.dim(2) * 2, x.dim(3) * 2});
    for (int s = 0; s < y.dim(0); ++s)
        for (int c = 0; c < y.dim(1); ++c)
            for (int r = 0; r < y.dim(2); ++r)
                for (int q = 0; q < y.dim(3); ++q) y.at4(s, c, r, q) = x.at4(s, c, r / 2, q / 2);
    return y;
}

inline DTensor map(const DTensor& x, const std::function<double(double)>& f) {
    DTensor y = x;
    for (double& e : y.v) e = f(e);
    return y;
}

inline DTensor relu(const DTensor& x) {
    return map(x, [](double e) {
        trace_branch(e > 0);
        return e > 0 ? e : 0.0;
    });
}
inline DTensor leaky_relu(const DTensor& x) {
    return map(x, [](double e) {
        trace_branch(e > 0);
        return e > 0 ? e : 0.2 * e;
    });
}
inline DTensor sigmoid(const DTensor& x) { return map(x, [](double e) { return 1.0 / (1.0 + std::exp(-e)); }); }

inline DTensor instance_norm(const DTensor& x, const DTensor& gamma, const DTensor& beta, double eps = 1e-5) {
    DTensor y = x;
    const int hw = x.dim(2) * x.dim(3);
    for (int s = 0; s < x.dim(0); ++s)
        for (int c = 0; c < x.dim(1); ++c) {
            const std::size_t base = (static_cast<std::size_t>(s) * x.dim(1) + c) * hw;
            double mean = 0.0, var = 0.0;
            for (int i = 0; i < hw; ++i) mean += x.v[base + i];
            mean /= hw;
            for (int i = 0; i < hw; ++i) var += (x.v[base + i] - mean) * (x.v[base + i] - mean);
            var /= hw;
            for (int i = 0; i < hw; ++i) {
                y.v[base + i] = (x.v[base + i] - mean) / std::sqrt(var + eps) * gamma.v[c] + beta.v[c];
            }
        }
    return y;
}

inline DTensor concat(const DTensor& a, const DTensor& b) {
    DTensor y = zeros({a.dim(0), a.dim(1) + b.dim(1), a.dim(2), a.dim(3)});
    for (int s = 0; s < y.dim(0); ++s)
        for (int c = 0; c < y.dim(1); ++c)
            for (int r = 0; r < y.dim(2); ++r)
                for (int q = 0; q < y.dim(3); ++q)
                    y.at4(s, c, r, q) = c < a.dim(1) ? a.at4(s, c, r, q) : b.at4(s, c - a.dim(1), r, q);
    return y;
}

inline DTensor global_avg_pool(const DTensor& x) {
    DTensor y = zeros({x.dim(0), x.dim(1)});
    const int hw = x.dim(2) * x.dim(3);
    for (int s = 0; s < x.dim(0); ++s)
        for (int c = 0; c < x.dim(1); ++c) {
            double acc = 0.0;
            for (int i = 0; i < hw; ++i) acc += x.v[(static_cast<std::size_t>(s) * x.dim(1) + c) * hw + i];
            y.v[static_cast<std::size_t>(s) * x.dim(1) + c] = acc / hw;
        }
    return y;
}

inline DTensor linear(const DTensor& x, const DTensor& w, const DTensor& b) {
    const int n = x.dim(0), f = x.dim(1), o = w.dim(0);
    DTensor y = zeros({n, o});
    for (int s = 0; s < n; ++s)
        for (int j = 0; j < o; ++j) {
            double acc = b.v[j];
            for (int i = 0; i < f; ++i) acc += x.v[s * f + i] * w.v[j * f + i];
            y.v[s * o + j] = acc;
        }
    return y;
}

inline double cross_entropy(const DTensor& logits, const std::vector<int>& labels) {
    const int n = logits.dim(0), k = logits.dim(1);
    double total = 0.0;
    for (int s = 0; s < n; ++s) {
        double m = logits.v[s * k];
        for (int j = 1; j < k; ++j) m = std::max(m, logits.v[s * k + j]);
        double z = 0.0;
        for (int j = 0; j < k; ++j) z += std::exp(logits.v[s * k + j] - m);
        total += m + std::log(z) - logits.v[s * k + labels[s]];
    }
    return total / n;
}

inline double bce_with_logits(const DTensor& z, const DTensor& t) {
    double total = 0.0;
    for (std::size_t i = 0; i < z.v.size(); ++i) {
        const double x = z.v[i];
        total += std::max(x, 0.0) - x * t.v[i] + std::log1p(std::exp(-std::abs(x)));
    }
    return total / static_cast<double>(z.v.size());
}

inline double l1_mean(const DTensor& a, const DTensor& b) {
    double total = 0.0;
    for (std::size_t i = 0; i < a.v.size(); ++i) {
        trace_branch(a.v[i] > b.v[i]);
        total += std::abs(a.v[i] - b.v[i]);
    }
    return total / static_cast<double>(a.v.size());
}

using Params = std::map<std::string, DTensor>;

inline Params to_double(const ModelBundle& m) {
    Params p;
    for (const auto& [name, t] : m.params) p.emplace(name, to_double(t));
    return p;
}

inline DTensor conv(const Params& p, const std::string& name, const DTensor& x, int stride, int pad) {
    return conv2d(x, p.at(name + ".weight"), p.at(name + ".bias"), stride, pad);
}

inline DTensor norm(const Params& p, const std::string& name, const DTensor& x) {
    return instance_norm(x, p.at(name + ".gamma"), p.at(name + ".beta"));
}

/// The generator of networks.cpp written out with plain loops.
inline DTensor generator(const Params& p, const DTensor& x, int blocks) {
    std::vector<DTensor> skips;
    DTensor h = x;
    for (int b = 1; b <= blocks; ++b) {
        const std::string g = "G.enc.g" + std::to_string(b);
        const DTensor f = relu(conv(p, g + ".conv2", relu(conv(p, g + ".conv1", h, 1, 1)), 1, 1));
        skips.push_back(relu(conv(p, "G.filter.g" + std::to_string(b), f, 1, 1)));
        h = maxpool2(f);
    }
    DTensor d = relu(conv(p, "G.bottleneck", h, 1, 1));
    for (int stage = 1; stage <= blocks; ++stage) {
        const std::string s = "G.dec.s" + std::to_string(stage);
        d = relu(norm(p, s + ".up_norm", conv(p, s + ".up", upsample2(d), 1, 1)));
        d = concat(d, skips[blocks - stage]);
        d = relu(norm(p, s + ".fuse_norm", conv(p, s + ".fuse", d, 1, 1)));
    }
    return sigmoid(conv(p, "G.out", d, 1, 0));
}

// ---- gradient checking -----------------------------------------------------------

inline std::vector<float> random_values(std::size_t n, std::uint64_t seed, double scale = 1.0) {
    CounterRng rng(seed);
    std::vector<float> out(n);
    for (float& v : out) v = static_cast<float>(scale * rng.normal());
    return out;
}

/// Values bounded away from 0 by `gap`, so ReLU-like kinks stay out of the finite-difference stencil.
inline std::vector<float> random_off_zero(std::size_t n, std::uint64_t seed, double gap = 0.05) {
    CounterRng rng(seed);
    std::vector<float> out(n);
    for (float& v : out) {
        const double u = rng.uniform();
        const double mag = gap + rng.uniform();
        v = static_cast<float>(u < 0.5 ? -mag : mag);
    }
    return out;
}

struct GradCheckResult {
    std::size_t checked = 0;
    std::size_t failures = 0;
    std::size_t skipped_at_kink = 0;
    double worst_rel = 0.0;
    std::string worst_where;

    // at most 1% of the elements may be excluded for straddling a kink
    bool ok() const { return failures == 0 && checked > 0 && skipped_at_kink * 100 <= checked; }
};

inline constexpr double kFdEpsilon = 1e-3;
inline constexpr double kGradRelTol = 1e-2;
inline constexpr double kGradAbsTol = 1e-4;

/// Passes when the error is within 1e-2 relative or 1e-4 absolute, whichever is looser.
inline bool grad_close(double analytic, double numeric, double& rel) {
    const double err = std::abs(analytic - numeric);
    rel = err / std::max({std::abs(analytic), std::abs(numeric), kGradAbsTol / kGradRelTol});
    return err <= std::max(kGradRelTol * std::max(std::abs(analytic), std::abs(numeric)), kGradAbsTol);
}

/// Analytic gradients of L = Σ w ⊙ f(inputs) from the float engine against central differences of the
/// double-precision `oracle` (which must return the same L).
inline GradCheckResult check_gradients(std::vector<Tensor> inputs,
                                       const std::function<Tensor(const std::vector<Tensor>&)>& forward,
                                       const std::function<double(const std::vector<DTensor>&)>& oracle,
                                       const std::vector<std::string>& labels, double eps = kFdEpsilon) {
    for (Tensor& t : inputs) t.set_requires_grad(true);
    const Tensor out = forward(inputs);
    backward(out);
    std::vector<DTensor> d;
    for (const Tensor& t : inputs) d.push_back(to_double(t));

    GradCheckResult res;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const auto grad = inputs[k].has_grad() ? std::vector<float>(inputs[k].grad().begin(), inputs[k].grad().end())
                                               : std::vector<float>(inputs[k].numel(), 0.0f);
        for (std::size_t i = 0; i < d[k].v.size(); ++i) {
            const double saved = d[k].v[i];
            std::vector<std::uint8_t> trace_up, trace_down;
            d[k].v[i] = saved + eps;
            kink_trace = &trace_up;
            const double up = oracle(d);
            d[k].v[i] = saved - eps;
            kink_trace = &trace_down;
            const double down = oracle(d);
            kink_trace = nullptr;
            d[k].v[i] = saved;
            ++res.checked;
            if (trace_up != trace_down) {
                ++res.skipped_at_kink;
                continue;
            }
            const double numeric = (up - down) / (2.0 * eps);
            double rel = 0.0;
            if (!grad_close(grad[i], numeric, rel)) ++res.failures;
            if (rel > res.worst_rel) {
                res.worst_rel = rel;
                res.worst_where = labels[k] + "[" + std::to_string(i) + "] analytic " + std::to_string(grad[i]) +
                                  " numeric " + std::to_string(numeric);
            }
        }
    }
    return res;
}

/// Σ w ⊙ y in double.
inline double weighted_sum(const DTensor& y, const std::vector<float>& w) {
    double acc = 0.0;
    for (std::size_t i = 0; i < y.v.size(); ++i) acc += y.v[i] * w[i];
    return acc;
}

/// Σ w ⊙ y in the float engine.
inline Tensor weighted_sum(const Tensor& y, const std::vector<float>& w) {
    return sum(mul(y, Tensor::from(y.shape(), w)));
}

}  // namespace rgan::ref

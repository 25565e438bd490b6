#pragma once
// Finite-difference checks for every differentiable op and for a small two-block generator.

#include <string>
#include <vector>

#include "oracle.hpp"
#include "rgan/networks.hpp"

namespace rgan::ref {

struct NamedCheck {
    std::string name;
    GradCheckResult result;
};

inline Tensor tensor_of(const Shape& s, std::vector<float> v) { return Tensor::from(s, std::move(v)); }

inline NamedCheck conv_check(const std::string& name, Shape xs, Shape ws, int stride, int pad, std::uint64_t seed) {
    const Tensor x = tensor_of(xs, random_values(shape_numel(xs), seed));
    const Tensor w = tensor_of(ws, random_values(shape_numel(ws), seed + 1, 0.5));
    const Tensor b = tensor_of({ws[0]}, random_values(ws[0], seed + 2, 0.5));
    const int oh = (xs[2] + 2 * pad - ws[2]) / stride + 1, ow = (xs[3] + 2 * pad - ws[3]) / stride + 1;
    const auto proj = random_values(static_cast<std::size_t>(xs[0]) * ws[0] * oh * ow, seed + 3);
    return {name, check_gradients(
                      {x, w, b},
                      [&](const std::vector<Tensor>& in) {
                          return weighted_sum(conv2d(in[0], in[1], in[2], stride, pad), proj);
                      },
                      [&](const std::vector<DTensor>& in) {
                          return weighted_sum(conv2d(in[0], in[1], in[2], stride, pad), proj);
                      },
                      {"input", "weight", "bias"})};
}

template <typename F, typename G>
NamedCheck unary_check(const std::string& name, Shape xs, std::vector<float> x_values, std::size_t out_numel,
                       F engine, G oracle, std::uint64_t seed) {
    const Tensor x = tensor_of(xs, std::move(x_values));
    const auto proj = random_values(out_numel, seed);
    return {name, check_gradients(
                      {x}, [&](const std::vector<Tensor>& in) { return weighted_sum(engine(in[0]), proj); },
                      [&](const std::vector<DTensor>& in) { return weighted_sum(oracle(in[0]), proj); }, {"input"})};
}

/// Distinct values in every 2×2 pooling cell, separated by more than the finite-difference step.
inline std::vector<float> pool_friendly(std::size_t n, std::uint64_t seed) {
    std::vector<float> v(n);
    CounterRng rng(seed);
    for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<float>(0.05 * static_cast<double>(i) + 0.01 * rng.uniform());
    for (std::size_t i = n; i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
    return v;
}

inline std::vector<NamedCheck> op_gradient_checks() {
    std::vector<NamedCheck> out;
    out.push_back(conv_check("conv2d 3x3 stride 1 pad 1", {2, 3, 5, 6}, {4, 3, 3, 3}, 1, 1, 11));
    out.push_back(conv_check("conv2d 4x4 stride 2 pad 1", {2, 2, 8, 8}, {3, 2, 4, 4}, 2, 1, 21));
    out.push_back(conv_check("conv2d 4x4 stride 1 pad 1", {1, 2, 6, 5}, {2, 2, 4, 4}, 1, 1, 31));
    out.push_back(conv_check("conv2d 1x1 stride 1 pad 0", {2, 3, 4, 4}, {2, 3, 1, 1}, 1, 0, 41));

    out.push_back(unary_check(
        "maxpool2", {2, 2, 4, 6}, pool_friendly(96, 51), 24, [](const Tensor& x) { return maxpool2(x); },
        [](const DTensor& x) { return maxpool2(x); }, 52));
    out.push_back(unary_check(
        "upsample_nearest2", {1, 2, 3, 3}, random_values(18, 61), 72,
        [](const Tensor& x) { return upsample_nearest2(x); }, [](const DTensor& x) { return upsample2(x); }, 62));
    out.push_back(unary_check(
        "relu", {1, 1, 4, 5}, random_off_zero(20, 71), 20, [](const Tensor& x) { return relu(x); },
        [](const DTensor& x) { return relu(x); }, 72));
    out.push_back(unary_check(
        "leaky_relu", {1, 1, 4, 5}, random_off_zero(20, 81), 20, [](const Tensor& x) { return leaky_relu(x); },
        [](const DTensor& x) { return leaky_relu(x); }, 82));
    out.push_back(unary_check(
        "sigmoid", {1, 1, 4, 5}, random_values(20, 91, 2.0), 20, [](const Tensor& x) { return sigmoid(x); },
        [](const DTensor& x) { return sigmoid(x); }, 92));
    out.push_back(unary_check(
        "global_avg_pool", {2, 3, 3, 4}, random_values(72, 101), 6,
        [](const Tensor& x) { return global_avg_pool(x); }, [](const DTensor& x) { return global_avg_pool(x); }, 102));
    out.push_back(unary_check(
        "affine", {1, 2, 3, 3}, random_values(18, 111), 18, [](const Tensor& x) { return affine(x, -1.5f, 0.25f); },
        [](const DTensor& x) { return map(x, [](double e) { return -1.5 * e + 0.25; }); }, 112));

    {
        const Tensor x = tensor_of({2, 3, 4, 4}, random_values(96, 121));
        const Tensor g = tensor_of({3}, random_values(3, 122));
        const Tensor b = tensor_of({3}, random_values(3, 123));
        const auto proj = random_values(96, 124);
        out.push_back({"instance_norm", check_gradients(
                                            {x, g, b},
                                            [&](const std::vector<Tensor>& in) {
                                                return weighted_sum(instance_norm(in[0], in[1], in[2]), proj);
                                            },
                                            [&](const std::vector<DTensor>& in) {
                                                return weighted_sum(instance_norm(in[0], in[1], in[2]), proj);
                                            },
                                            {"input", "gamma", "beta"})});
    }
    {
        const Tensor a = tensor_of({2, 2, 3, 3}, random_values(36, 131));
        const Tensor b = tensor_of({2, 3, 3, 3}, random_values(54, 132));
        const auto proj = random_values(90, 133);
        out.push_back({"concat_channels",
                       check_gradients(
                           {a, b},
                           [&](const std::vector<Tensor>& in) { return weighted_sum(concat_channels(in[0], in[1]), proj); },
                           [&](const std::vector<DTensor>& in) { return weighted_sum(concat(in[0], in[1]), proj); },
                           {"a", "b"})});
    }
    for (const bool multiply : {false, true}) {
        const Tensor a = tensor_of({1, 2, 3, 3}, random_values(18, 141));
        const Tensor b = tensor_of({1, 2, 3, 3}, random_values(18, 142));
        const auto proj = random_values(18, 143);
        out.push_back({multiply ? "mul" : "add",
                       check_gradients(
                           {a, b},
                           [&](const std::vector<Tensor>& in) {
                               return weighted_sum(multiply ? mul(in[0], in[1]) : add(in[0], in[1]), proj);
                           },
                           [&](const std::vector<DTensor>& in) {
                               DTensor y = in[0];
                               for (std::size_t i = 0; i < y.v.size(); ++i) {
                                   y.v[i] = multiply ? in[0].v[i] * in[1].v[i] : in[0].v[i] + in[1].v[i];
                               }
                               return weighted_sum(y, proj);
                           },
                           {"a", "b"})});
    }
    for (const bool average : {false, true}) {
        const Tensor x = tensor_of({2, 3, 2}, random_values(12, 151));
        out.push_back({average ? "mean" : "sum",
                       check_gradients(
                           {x},
                           [&](const std::vector<Tensor>& in) {
                               return affine(average ? mean(in[0]) : sum(in[0]), 3.0f, 0.0f);
                           },
                           [&](const std::vector<DTensor>& in) {
                               double s = 0.0;
                               for (double e : in[0].v) s += e;
                               return 3.0 * (average ? s / static_cast<double>(in[0].v.size()) : s);
                           },
                           {"input"})});
    }
    {
        const Tensor x = tensor_of({3, 4}, random_values(12, 161));
        const Tensor w = tensor_of({2, 4}, random_values(8, 162));
        const Tensor b = tensor_of({2}, random_values(2, 163));
        const auto proj = random_values(6, 164);
        out.push_back({"linear", check_gradients(
                                     {x, w, b},
                                     [&](const std::vector<Tensor>& in) {
                                         return weighted_sum(linear(in[0], in[1], in[2]), proj);
                                     },
                                     [&](const std::vector<DTensor>& in) {
                                         return weighted_sum(linear(in[0], in[1], in[2]), proj);
                                     },
                                     {"input", "weight", "bias"})});
    }
    {
        const Tensor z = tensor_of({4, 3}, random_values(12, 171, 2.0));
        const std::vector<int> labels{0, 2, 1, 2};
        out.push_back({"cross_entropy",
                       check_gradients(
                           {z}, [&](const std::vector<Tensor>& in) { return cross_entropy(in[0], labels); },
                           [&](const std::vector<DTensor>& in) { return cross_entropy(in[0], labels); }, {"logits"})});
    }
    {
        const Tensor z = tensor_of({1, 1, 3, 4}, random_values(12, 181, 2.0));
        std::vector<float> t(12);
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = i % 3 == 0 ? 1.0f : 0.0f;
        const Tensor target = tensor_of({1, 1, 3, 4}, t);
        out.push_back({"bce_with_logits",
                       check_gradients(
                           {z}, [&](const std::vector<Tensor>& in) { return loss(Loss::kBceWithLogits, in[0], target); },
                           [&](const std::vector<DTensor>& in) { return bce_with_logits(in[0], to_double(target)); },
                           {"logits"})});
    }
    {
        const auto pv = random_values(12, 191);
        auto tv = random_values(12, 192);
        // keep |p − t| away from the kink at 0
        for (std::size_t i = 0; i < tv.size(); ++i) {
            if (std::abs(pv[i] - tv[i]) < 0.05f) tv[i] = pv[i] + 0.3f;
        }
        const Tensor p = tensor_of({1, 1, 3, 4}, pv);
        const Tensor target = tensor_of({1, 1, 3, 4}, tv);
        out.push_back({"l1_mean", check_gradients(
                                      {p}, [&](const std::vector<Tensor>& in) { return loss(Loss::kL1Mean, in[0], target); },
                                      [&](const std::vector<DTensor>& in) { return l1_mean(in[0], to_double(target)); },
                                      {"prediction"})});
    }
    return out;
}

/// End-to-end check of an 8×8, two-block generator (widths 2 and 3): input and every parameter.
inline NamedCheck generator_gradient_check(double eps = kFdEpsilon) {
    Architecture arch;
    arch.widths = {2, 3};
    ModelBundle gan = make_gan(arch, make_encoder(arch, 5), 6);
    // larger weights than the GAN init so every activation is well away from numerical noise
    std::uint64_t k = 0;
    std::vector<std::string> names;
    std::vector<Tensor> inputs{tensor_of({1, 1, 8, 8}, random_values(64, 200))};
    std::vector<std::string> labels{"x"};
    for (auto& [name, t] : gan.params) {
        if (name.rfind("G.", 0) != 0) continue;
        auto values = random_values(t.numel(), 300 + k++, 0.6);
        if (name.find("gamma") != std::string::npos) {
            for (float& v : values) v = 1.0f + 0.3f * v;
        }
        t = tensor_of(t.shape(), values);
        names.push_back(name);
        inputs.push_back(t);
        labels.push_back(name);
    }
    const auto proj = random_values(64, 400);
    auto bind = [&](const std::vector<Tensor>& in) {
        ModelBundle m = gan;
        for (std::size_t i = 0; i < names.size(); ++i) m.params[names[i]] = in[i + 1];
        return m;
    };
    return {"generator 8x8 two-block end to end",
            check_gradients(
                inputs,
                [&](const std::vector<Tensor>& in) { return weighted_sum(generator_forward(bind(in), in[0]).image, proj); },
                [&](const std::vector<DTensor>& in) {
                    Params p;
                    for (std::size_t i = 0; i < names.size(); ++i) p.emplace(names[i], in[i + 1]);
                    return weighted_sum(generator(p, in[0], 2), proj);
                },
                labels, eps)};
}

}  // namespace rgan::ref

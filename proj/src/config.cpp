#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>

#include "rgan/error.hpp"
#include "rgan/pipeline.hpp"

namespace rgan {

namespace {

struct Field {
    const char* key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename T>
T parse_number(const std::string& text) {
    T value{};
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end) throw ConfigError("'" + text + "' is not a valid number");
    return value;
}

bool parse_bool(const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError("'" + text + "' is not a boolean (true/false)");
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_widths(const std::vector<int>& widths) {
    std::string out;
    for (std::size_t i = 0; i < widths.size(); ++i) out += (i ? "," : "") + std::to_string(widths[i]);
    return out;
}

std::vector<int> parse_widths(const std::string& text) {
    std::vector<int> widths;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) widths.push_back(parse_number<int>(item));
    if (widths.empty()) throw ConfigError("widths must list at least one channel count");
    for (int w : widths) {
        if (w < 1) throw ConfigError("widths must be positive");
    }
    return widths;
}

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return "";
    return s.substr(first, s.find_last_not_of(" \t\r") - first + 1);
}

#define RGAN_NUM(key, member, type)                                                                \
    Field {                                                                                        \
        key, [](RunConfig& c, const std::string& v) { c.member = parse_number<type>(v); },         \
            [](const RunConfig& c) { return fmt_double(static_cast<double>(c.member)); }           \
    }
#define RGAN_INT(key, member, type)                                                                \
    Field {                                                                                        \
        key, [](RunConfig& c, const std::string& v) { c.member = parse_number<type>(v); },         \
            [](const RunConfig& c) { return std::to_string(c.member); }                            \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        RGAN_NUM("lr", train.lr, float),
        RGAN_NUM("beta1", train.beta1, float),
        RGAN_NUM("beta2", train.beta2, float),
        RGAN_NUM("lambda_l1", train.lambda_l1, float),
        RGAN_INT("batch_size", train.batch_size, int),
        RGAN_NUM("th_acc", train.th_acc, double),
        RGAN_INT("th_eta", train.th_eta, int),
        RGAN_NUM("th_fail", train.th_fail, double),
        RGAN_INT("window_start_lo", train.window_start.lo, int),
        RGAN_INT("window_start_hi", train.window_start.hi, int),
        RGAN_INT("window_step", train.window_step, int),
        RGAN_INT("hu_min", train.hu_min, int),
        RGAN_INT("hu_max", train.hu_max, int),
        RGAN_INT("max_epochs", train.max_epochs, int),
        RGAN_INT("subset_size", train.subset_size, int),
        RGAN_INT("subset_repeats", train.subset_repeats, int),
        {"mode", [](RunConfig& c, const std::string& v) { c.train.mode = parse_mode(v); },
         [](const RunConfig& c) { return std::string(mode_name(c.train.mode)); }},
        RGAN_INT("seed", train.seed, std::uint64_t),
        RGAN_NUM("pretrain_lr", pretrain.lr, float),
        RGAN_NUM("pretrain_beta1", pretrain.beta1, float),
        RGAN_INT("pretrain_batch_size", pretrain.batch_size, int),
        RGAN_INT("pretrain_max_epochs", pretrain.max_epochs, int),
        RGAN_NUM("pretrain_min_acc", pretrain.min_accuracy, double),
        RGAN_INT("pretrain_seed", pretrain.seed, std::uint64_t),
        {"widths", [](RunConfig& c, const std::string& v) { c.arch.widths = parse_widths(v); },
         [](const RunConfig& c) { return fmt_widths(c.arch.widths); }},
        {"conditional_d", [](RunConfig& c, const std::string& v) { c.arch.conditional_d = parse_bool(v); },
         [](const RunConfig& c) { return std::string(c.arch.conditional_d ? "true" : "false"); }},
        RGAN_INT("image_size", image_size, int),
        RGAN_INT("count", count, int),
        RGAN_INT("data_seed", data_seed, std::uint64_t),
        {"nonstandard",
         [](RunConfig& c, const std::string& v) {
             nonstandard_kernels(v);
             c.nonstandard = v;
         },
         [](const RunConfig& c) { return c.nonstandard; }},
        {"train_kernel",
         [](RunConfig& c, const std::string& v) {
             const KernelTag tag = parse_kernel(v);
             if (tag != KernelTag::kBR40 && tag != KernelTag::kBL57) {
                 throw ConfigError("train_kernel must be BR40 or BL57");
             }
             c.train_kernel = tag;
         },
         [](const RunConfig& c) { return std::string(kernel_name(c.train_kernel)); }},
        RGAN_NUM("split_train", splits.train, double),
        RGAN_NUM("split_val", splits.val, double),
        RGAN_NUM("split_test", splits.test, double),
        RGAN_NUM("bl64_blur", kernels.bl64_blur, double),
        RGAN_NUM("bl64_noise", kernels.bl64_noise, double),
        RGAN_NUM("br40_blur", kernels.br40_blur, double),
        RGAN_NUM("br40_noise", kernels.br40_noise, double),
        RGAN_NUM("bl57_unsharp_amount", kernels.bl57_unsharp_amount, double),
        RGAN_NUM("bl57_unsharp_sigma", kernels.bl57_unsharp_sigma, double),
        RGAN_NUM("bl57_noise", kernels.bl57_noise, double),
        {"data_dir", [](RunConfig& c, const std::string& v) { c.data_dir = v; },
         [](const RunConfig& c) { return c.data_dir.string(); }},
        {"out_dir", [](RunConfig& c, const std::string& v) { c.out_dir = v; },
         [](const RunConfig& c) { return c.out_dir.string(); }},
    };
    return table;
}

#undef RGAN_NUM
#undef RGAN_INT

void validate(const RunConfig& c) {
    c.train.validate();
    if (c.image_size < 32 || c.image_size % 16 != 0) throw ConfigError("image_size must be a multiple of 16, >= 32");
    if (c.count < 1) throw ConfigError("count must be >= 1");
    if (c.splits.train < 0 || c.splits.val < 0 || c.splits.test < 0 ||
        c.splits.train + c.splits.val + c.splits.test <= 0) {
        throw ConfigError("split ratios must be non-negative with a positive sum");
    }
    if (!(c.pretrain.lr > 0.0f) || c.pretrain.batch_size < 1 || c.pretrain.max_epochs < 1) {
        throw ConfigError("pretrain_lr, pretrain_batch_size and pretrain_max_epochs must be positive");
    }
}

}  // namespace

std::vector<KernelTag> nonstandard_kernels(const std::string& which) {
    if (which == "br40") return {KernelTag::kBR40};
    if (which == "bl57") return {KernelTag::kBL57};
    if (which == "both") return {KernelTag::kBR40, KernelTag::kBL57};
    throw ConfigError("invalid non-standard kernel '" + which + "' (expected br40, bl57 or both)");
}

RunConfig parse_config(std::istream& in, const std::string& source) {
    RunConfig cfg;
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        const auto hash = line.find('#');
        const std::string content = trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (content.empty()) continue;
        const auto where = source + ":" + std::to_string(number) + ": ";
        const auto eq = content.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
        const std::string key = trim(content.substr(0, eq));
        const std::string value = trim(content.substr(eq + 1));
        const auto& table = fields();
        const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.key; });
        if (it == table.end()) throw ConfigError(where + "unknown key '" + key + "'");
        try {
            it->set(cfg, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + key + ": " + e.what());
        }
    }
    try {
        validate(cfg);
    } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
    }
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    return parse_config(in, path.string());
}

std::string format_config(const RunConfig& cfg) {
    std::string out;
    for (const Field& f : fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
    return out;
}

}  // namespace rgan

#include <cstring>
#include <fstream>
#include <sstream>

#include "rgan/error.hpp"
#include "rgan/pipeline.hpp"

namespace rgan {

namespace {

constexpr char kMagic[4] = {'R', 'G', 'A', 'N'};

class Writer {
public:
    template <typename T>
    void put(T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void put_bytes(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
    void put_float(float f) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, sizeof bits);
        put(bits);
    }
    const std::vector<char>& bytes() const { return bytes_; }

private:
    std::vector<char> bytes_;
};

class Reader {
public:
    Reader(std::vector<char> bytes, std::string source) : bytes_(std::move(bytes)), source_(std::move(source)) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            v |= static_cast<T>(static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i));
        }
        pos_ += sizeof(T);
        return v;
    }
    std::string get_bytes(std::size_t n) {
        need(n);
        std::string s(bytes_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    float get_float() {
        const auto bits = get<std::uint32_t>();
        float f;
        std::memcpy(&f, &bits, sizeof f);
        return f;
    }
    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) {
            throw FormatError("checkpoint " + source_ + " is truncated at byte " + std::to_string(pos_));
        }
    }

    std::vector<char> bytes_;
    std::string source_;
    std::size_t pos_ = 0;
};

std::string meta_text(const CheckpointMeta& meta) {
    return "epoch=" + std::to_string(meta.epoch) + "\nmode=" + meta.mode + "\nseed=" + std::to_string(meta.seed) +
           "\n";
}

CheckpointMeta parse_meta(const std::string& text, const std::string& source) {
    CheckpointMeta meta;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("checkpoint " + source + ": bad metadata line '" + line + "'");
        const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        try {
            if (key == "epoch") meta.epoch = std::stoi(value);
            else if (key == "mode") meta.mode = value;
            else if (key == "seed") meta.seed = std::stoull(value);
        } catch (const std::exception&) {
            throw FormatError("checkpoint " + source + ": bad metadata value '" + line + "'");
        }
    }
    return meta;
}

}  // namespace

void save_checkpoint(const ModelBundle& model, const CheckpointMeta& meta, const std::filesystem::path& path) {
    Writer w;
    w.put_bytes(std::string(kMagic, 4));
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint16_t>(static_cast<std::uint16_t>(model.architecture_id.size()));
    w.put_bytes(model.architecture_id);
    const std::string meta_str = meta_text(meta);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(meta_str.size()));
    w.put_bytes(meta_str);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(model.params.size()));
    for (const auto& [name, t] : model.params) {
        w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
        w.put_bytes(name);
        w.put<std::uint8_t>(model.frozen.count(name) ? 1 : 0);
        w.put<std::uint8_t>(static_cast<std::uint8_t>(t.shape().size()));
        for (int d : t.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
        for (float f : t.data()) w.put_float(f);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw FormatError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<ModelKind> expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + path.string());
    const std::string source = path.string();
    Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}), source);

    if (r.get_bytes(4) != std::string(kMagic, 4)) throw FormatError("checkpoint " + source + ": bad magic");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint " + source + ": version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    }
    Checkpoint ckpt;
    ckpt.model.architecture_id = r.get_bytes(r.get<std::uint16_t>());
    ckpt.meta = parse_meta(r.get_bytes(r.get<std::uint32_t>()), source);

    const Architecture arch = parse_architecture_id(ckpt.model.architecture_id);
    const bool is_encoder = ckpt.model.architecture_id == encoder_architecture_id(arch);
    if (expected && (*expected == ModelKind::kEncoder) != is_encoder) {
        throw ConfigError("checkpoint " + source + " has architecture_id '" + ckpt.model.architecture_id +
                          "', expected " + (*expected == ModelKind::kEncoder ? "an encoder" : "a RadiomicGAN model"));
    }
    const auto shapes = expected_shapes(ckpt.model.architecture_id);

    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.get_bytes(r.get<std::uint16_t>());
        const bool frozen = r.get<std::uint8_t>() != 0;
        Shape shape(r.get<std::uint8_t>());
        for (int& d : shape) d = static_cast<int>(r.get<std::uint32_t>());
        const auto it = shapes.find(name);
        if (it == shapes.end()) throw FormatError("checkpoint " + source + ": unexpected tensor '" + name + "'");
        if (it->second != shape) {
            throw FormatError("checkpoint " + source + ": tensor '" + name + "' has shape " + shape_str(shape) +
                              ", architecture expects " + shape_str(it->second));
        }
        if (ckpt.model.params.count(name)) throw FormatError("checkpoint " + source + ": duplicate tensor '" + name + "'");
        std::vector<float> values(shape_numel(shape));
        for (float& v : values) v = r.get_float();
        // frozen tensors stay constant; everything else is trainable again after loading
        ckpt.model.params.emplace(name, Tensor::from(shape, std::move(values), !frozen));
        if (frozen) ckpt.model.frozen.insert(name);
    }
    if (!r.at_end()) throw FormatError("checkpoint " + source + ": trailing bytes after the last tensor");
    for (const auto& [name, shape] : shapes) {
        if (!ckpt.model.params.count(name)) throw FormatError("checkpoint " + source + ": missing tensor '" + name + "'");
    }
    return ckpt;
}

}  // namespace rgan

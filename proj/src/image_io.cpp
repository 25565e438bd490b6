#include <algorithm>
#include <cctype>
#include <fstream>
#include <iterator>
#include <sstream>

#include "rgan/error.hpp"
#include "rgan/phantom.hpp"

namespace rgan {

namespace {

struct PgmHeader {
    int width = 0;
    int height = 0;
    int maxval = 0;
    std::vector<std::string> comments;
};

/// Reads the next whitespace-delimited token, collecting '#' comment lines on the way.
std::string next_token(std::istream& in, std::vector<std::string>& comments) {
    std::string token;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            std::string line;
            std::getline(in, line);
            comments.push_back(line);
            continue;
        }
        if (std::isspace(ch)) {
            if (!token.empty()) return token;
            continue;
        }
        token.push_back(static_cast<char>(ch));
    }
    return token;
}

int parse_positive(const std::string& token, const char* what, const std::filesystem::path& path) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(token, &used);
        if (used == token.size() && v > 0) return v;
    } catch (const std::exception&) {
    }
    throw FormatError("malformed PGM header in " + path.string() + ": bad " + what + " '" + token + "'");
}

PgmHeader read_header(std::istream& in, const std::filesystem::path& path) {
    PgmHeader header;
    std::string magic = next_token(in, header.comments);
    if (magic != "P5") throw FormatError("malformed PGM header in " + path.string() + ": magic '" + magic + "'");
    header.width = parse_positive(next_token(in, header.comments), "width", path);
    header.height = parse_positive(next_token(in, header.comments), "height", path);
    header.maxval = parse_positive(next_token(in, header.comments), "maxval", path);
    if (header.maxval > 65535) throw FormatError("malformed PGM header in " + path.string() + ": maxval > 65535");
    return header;
}

std::string trim(std::string s) {
    auto not_space = [](unsigned char ch) { return !std::isspace(ch); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

void write_samples(std::ostream& out, const std::vector<std::uint16_t>& values) {
    std::vector<char> bytes(values.size() * 2);
    for (std::size_t i = 0; i < values.size(); ++i) {
        bytes[2 * i] = static_cast<char>(values[i] >> 8);
        bytes[2 * i + 1] = static_cast<char>(values[i] & 0xFF);
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::ofstream open_for_write(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    return out;
}

}  // namespace

void write_image(const CtImage& img, const std::filesystem::path& path) {
    if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height) {
        throw FormatError("image pixel count does not match its dimensions");
    }
    std::vector<std::uint16_t> stored(img.pixels.size());
    for (std::size_t i = 0; i < stored.size(); ++i) {
        const int hu = img.pixels[i];
        if (hu < kHuStorageMin || hu > kHuStorageMax) {
            throw FormatError("pixel value " + std::to_string(hu) + " HU outside the storable range [-1024, 3071]");
        }
        stored[i] = static_cast<std::uint16_t>(hu + kHuOffset);
    }
    auto out = open_for_write(path);
    out << "P5\n"
        << "# kernel_tag=" << kernel_name(img.kernel) << "\n"
        << "# phantom_id=" << img.phantom_id << "\n"
        << "# seed=" << img.seed << "\n"
        << img.width << ' ' << img.height << "\n65535\n";
    write_samples(out, stored);
    if (!out) throw FormatError("failed writing " + path.string());
}

CtImage read_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    const PgmHeader header = read_header(in, path);
    if (header.maxval < 256) throw FormatError(path.string() + " is not a 16-bit PGM");

    CtImage img;
    img.width = header.width;
    img.height = header.height;
    for (const std::string& raw : header.comments) {
        const std::string line = trim(raw);
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            if (key == "kernel_tag") img.kernel = parse_kernel(value);
            if (key == "phantom_id") img.phantom_id = std::stoull(value);
            if (key == "seed") img.seed = std::stoull(value);
        } catch (const std::exception& e) {
            throw FormatError("malformed metadata '" + line + "' in " + path.string());
        }
    }

    const std::size_t count = static_cast<std::size_t>(img.width) * img.height;
    std::vector<unsigned char> bytes(count * 2);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(in.gcount()) != bytes.size()) {
        throw FormatError("truncated pixel data in " + path.string());
    }
    img.pixels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const int stored = (bytes[2 * i] << 8) | bytes[2 * i + 1];
        if (stored > kHuStorageMax + kHuOffset) {
            throw FormatError("stored value " + std::to_string(stored) + " exceeds 4095 in " + path.string());
        }
        img.pixels[i] = stored - kHuOffset;
    }
    return img;
}

void write_pgm16(const std::filesystem::path& path, int width, int height, const std::vector<std::uint16_t>& values) {
    if (values.size() != static_cast<std::size_t>(width) * height) {
        throw FormatError("write_pgm16: value count does not match dimensions");
    }
    auto out = open_for_write(path);
    out << "P5\n" << width << ' ' << height << "\n65535\n";
    write_samples(out, values);
    if (!out) throw FormatError("failed writing " + path.string());
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows) {
    auto out = open_for_write(path);
    out << "path,kernel_tag,phantom_id\n";
    for (const ManifestRow& row : rows) {
        out << row.path << ',' << kernel_name(row.kernel) << ',' << row.phantom_id << '\n';
    }
    if (!out) throw FormatError("failed writing " + path.string());
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open manifest " + path.string());
    std::string line;
    if (!std::getline(in, line) || trim(line) != "path,kernel_tag,phantom_id") {
        throw FormatError("manifest " + path.string() + " must start with header 'path,kernel_tag,phantom_id'");
    }
    std::vector<ManifestRow> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(trim(field));
        if (fields.size() != 3) {
            throw FormatError("manifest line " + std::to_string(line_no) + ": expected 3 fields");
        }
        try {
            rows.push_back({fields[0], parse_kernel(fields[1]), std::stoull(fields[2])});
        } catch (const std::exception& e) {
            throw FormatError("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return rows;
}

}  // namespace rgan

#include "sail/imageio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

namespace sail {

static_assert(std::endian::native == std::endian::little, "f64 payloads are little-endian");

namespace {

void write_pgm_body(std::string& out, const std::vector<int>& pixels, int width) {
    for (size_t i = 0; i < pixels.size(); ++i) {
        out += std::to_string(pixels[i]);
        out += (i % static_cast<size_t>(width) == static_cast<size_t>(width) - 1) ? '\n' : ' ';
    }
}

void write_pgm(const std::string& path, const std::vector<int>& pixels, int height, int width,
               int maxval, const std::string& comment) {
    if (pixels.size() != static_cast<size_t>(height) * width)
        throw ShapeError("write_pgm: pixel count mismatch");
    std::string out = "P2\n";
    if (!comment.empty()) out += "# " + comment + "\n";
    out += std::to_string(width) + " " + std::to_string(height) + "\n" +
           std::to_string(maxval) + "\n";
    write_pgm_body(out, pixels, width);
    write_text_file(path, out);
}

}  // namespace

void write_pgm16(const std::string& path, const std::vector<double>& values, int height,
                 int width, const std::string& comment) {
    std::vector<int> pixels(values.size());
    for (size_t i = 0; i < values.size(); ++i) {
        double q = std::round(std::clamp(values[i], 0.0, 1.0) * 65535.0);
        pixels[i] = static_cast<int>(q);
    }
    write_pgm(path, pixels, height, width, 65535, comment);
}

void write_pgm_labels(const std::string& path, const std::vector<int>& labels, int height,
                      int width, int maxval, const std::string& comment) {
    for (int v : labels)
        if (v < 0 || v > maxval)
            throw ConfigError("write_pgm_labels: label " + std::to_string(v) +
                              " outside [0," + std::to_string(maxval) + "]");
    write_pgm(path, labels, height, width, maxval, comment);
}

PgmImage read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArtifactError("read_pgm: cannot open '" + path + "'");
    std::string token;
    auto next = [&]() -> std::string {
        while (in >> token) {
            if (token[0] == '#') {
                std::string rest;
                std::getline(in, rest);
                continue;
            }
            return token;
        }
        throw ArtifactError("read_pgm: truncated header in '" + path + "'");
    };
    if (next() != "P2") throw ArtifactError("read_pgm: not an ASCII PGM: '" + path + "'");
    PgmImage img;
    img.width = std::stoi(next());
    img.height = std::stoi(next());
    img.maxval = std::stoi(next());
    if (img.width <= 0 || img.height <= 0 || img.maxval <= 0)
        throw ArtifactError("read_pgm: bad dimensions in '" + path + "'");
    size_t n = static_cast<size_t>(img.width) * static_cast<size_t>(img.height);
    img.pixels.reserve(n);
    for (size_t i = 0; i < n; ++i) img.pixels.push_back(std::stoi(next()));
    return img;
}

void write_f64(const std::string& path, const std::vector<double>& values) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ArtifactError("write_f64: cannot open '" + path + "'");
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!out) throw ArtifactError("write_f64: write failed for '" + path + "'");
}

std::vector<double> read_f64(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw ArtifactError("read_f64: cannot open '" + path + "'");
    auto bytes = static_cast<size_t>(in.tellg());
    if (bytes % sizeof(double) != 0)
        throw ArtifactError("read_f64: size of '" + path + "' is not a multiple of 8");
    std::vector<double> values(bytes / sizeof(double));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw ArtifactError("read_f64: read failed for '" + path + "'");
    return values;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);  // binary: keep '\n' as-is
    if (!out) throw ArtifactError("write_text_file: cannot open '" + path + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw ArtifactError("write_text_file: write failed for '" + path + "'");
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArtifactError("read_text_file: cannot open '" + path + "'");
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::string csv_join(const std::vector<std::string>& fields) {
    std::string out;
    for (size_t i = 0; i < fields.size(); ++i) {
        if (i) out += ',';
        out += fields[i];
    }
    return out;
}

std::vector<std::string> csv_split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

}  // namespace sail

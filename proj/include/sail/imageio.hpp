#pragma once

#include <string>
#include <vector>

#include "sail/common.hpp"

namespace sail {

// ASCII PGM (P2). Values are quantized from [0,1] to [0,maxval]; the optional
// comment is emitted as a '#' line after the magic.
void write_pgm16(const std::string& path, const std::vector<double>& values, int height,
                 int width, const std::string& comment = "");
// Raw integer PGM for label masks; maxval = largest legal label.
void write_pgm_labels(const std::string& path, const std::vector<int>& labels, int height,
                      int width, int maxval, const std::string& comment = "");

struct PgmImage {
    int height = 0;
    int width = 0;
    int maxval = 0;
    std::vector<int> pixels;
};
PgmImage read_pgm(const std::string& path);

// Raw little-endian f64 payload, no header.
void write_f64(const std::string& path, const std::vector<double>& values);
std::vector<double> read_f64(const std::string& path);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

// One CSV line, '\n'-terminated by the caller via join of rows.
std::string csv_join(const std::vector<std::string>& fields);
// Splits one line on commas (no quoting; fields never contain commas here).
std::vector<std::string> csv_split(const std::string& line);

}  // namespace sail

#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sail/model.hpp"
#include "sail/training.hpp"

namespace sail {

// Binary model snapshot: "SAILCKPT" magic, u32 format version, length-prefixed
// config JSON, ordered parameter table (name, dims, f64 little-endian payload),
// optional optimizer state, trailing CRC32 of all prior bytes.
struct CheckpointData {
    uint32_t version = 1;
    std::string config_json;
    std::vector<std::pair<std::string, Shape>> shapes;  // save order
    std::map<std::string, std::vector<double>> values;
    bool has_optimizer = false;
    int64_t opt_step = 0;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> opt_state;
};

CheckpointData snapshot(const SailModel& model, const std::string& config_json,
                        const AdamW* opt = nullptr);

void save_checkpoint(const std::string& path, const CheckpointData& data);

// Throws ArtifactError on missing file, bad magic/version, truncation, or CRC
// mismatch.
CheckpointData load_checkpoint(const std::string& path);

// Copies every stored parameter into the model; the parameter sets and shapes
// must match exactly (ConfigError otherwise).
void load_into_model(const CheckpointData& data, SailModel& model);

}  // namespace sail

#pragma once

#include <string>

#include "sail/attribution.hpp"
#include "sail/model.hpp"
#include "sail/synth.hpp"
#include "sail/training.hpp"

namespace sail {

struct DataConfig {
    SynthConfig scene;
    int n_train = 400;
    int n_val = 100;
    int n_test = 100;

    void validate() const;
    bool operator==(const DataConfig&) const = default;
};

struct XaiConfig {
    CamMethod method = CamMethod::gradcam;
    std::string layer_id = "fusion";
    int steps = 100;

    void validate() const;
    bool operator==(const XaiConfig&) const = default;
};

struct PathsConfig {
    std::string seg_checkpoint;  // finetune input; empty -> <out>/seg_best.ckpt
    std::string checkpoint;      // explain/evaluate input; empty -> <out>/cls_best.ckpt
    std::string maps_dir;        // evaluate input; empty -> <out>/maps

    bool operator==(const PathsConfig&) const = default;
};

// One JSON document drives every command. The training shuffle seed is not a
// separate key: it always equals the top-level master seed.
struct RunConfig {
    uint64_t seed = 0;
    std::string out = "out";
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
    XaiConfig xai;
    PathsConfig paths;

    // Fills fusion defaults and cross-checks model vs data dimensions.
    void validate_and_fill();
    bool operator==(const RunConfig&) const = default;
};

// Strict parse: unknown keys anywhere in the document are rejected, missing
// keys take defaults.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

// Serializes with every field materialized; parse(dump(c)) == c.
std::string dump_run_config(const RunConfig& cfg);

// Only what model reconstruction needs ({seed, model, data, train}); keeps
// checkpoints byte-identical across runs that differ in output paths alone.
std::string dump_checkpoint_config(const RunConfig& cfg);

// FNV-1a over the canonical {model, data, seed} dump; identifies the artifact
// lineage independently of training-stage settings.
uint64_t config_core_hash(const RunConfig& cfg);
std::string config_core_hash_hex(const RunConfig& cfg);

std::string train_stage_to_string(TrainStage s);
TrainStage train_stage_from_string(const std::string& s);

}  // namespace sail

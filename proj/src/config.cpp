#include "sail/config.hpp"

#include <fstream>
#include <initializer_list>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace sail {

using nlohmann::json;

void DataConfig::validate() const {
    if (n_train < 1 || n_val < 1 || n_test < 1)
        throw ConfigError("data: split sizes must be >= 1");
}

void XaiConfig::validate() const {
    if (steps < 2) throw ConfigError("xai: steps must be >= 2");
    if (layer_id.empty()) throw ConfigError("xai: layer_id must be non-empty");
}

std::string train_stage_to_string(TrainStage s) {
    return s == TrainStage::segmentation ? "segmentation" : "classification";
}

TrainStage train_stage_from_string(const std::string& s) {
    if (s == "segmentation") return TrainStage::segmentation;
    if (s == "classification") return TrainStage::classification;
    throw ConfigError("unknown training stage '" + s + "'");
}

void RunConfig::validate_and_fill() {
    model.validate_and_fill();
    train.validate();
    data.validate();
    xai.validate();
    if (model.input_h != data.scene.height || model.input_w != data.scene.width)
        throw ConfigError("config: model input " + std::to_string(model.input_h) + "x" +
                          std::to_string(model.input_w) + " does not match data " +
                          std::to_string(data.scene.height) + "x" +
                          std::to_string(data.scene.width));
    if (model.num_seg_classes != data.scene.layers + 1)
        throw ConfigError("config: num_seg_classes must be data.layers + 1");
    train.seed = seed;
}

namespace {

void check_keys(const json& j, const std::string& section,
                std::initializer_list<const char*> allowed) {
    if (!j.is_object())
        throw ConfigError("config: '" + section + "' must be a JSON object");
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* k : allowed)
            if (item.key() == k) {
                known = true;
                break;
            }
        if (!known)
            throw ConfigError("config: unknown key '" + item.key() + "' in " + section);
    }
}

template <typename T>
void get_if_present(const json& j, const std::string& section, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        j.at(key).get_to(out);
    } catch (const json::exception& e) {
        throw ConfigError("config: bad value for '" + section + "." + key + "': " + e.what());
    }
}

void get_string_enum(const json& j, const std::string& section, const char* key,
                     std::string& out) {
    get_if_present(j, section, key, out);
}

void parse_model(const json& j, ModelConfig& m) {
    check_keys(j, "model",
               {"input_h", "input_w", "base_channels", "enc_blocks", "dec_blocks",
                "num_seg_classes", "num_cls_classes", "fusion_h", "fusion_w", "fusion_c",
                "head_variant"});
    get_if_present(j, "model", "input_h", m.input_h);
    get_if_present(j, "model", "input_w", m.input_w);
    get_if_present(j, "model", "base_channels", m.base_channels);
    get_if_present(j, "model", "enc_blocks", m.enc_blocks);
    get_if_present(j, "model", "dec_blocks", m.dec_blocks);
    get_if_present(j, "model", "num_seg_classes", m.num_seg_classes);
    get_if_present(j, "model", "num_cls_classes", m.num_cls_classes);
    get_if_present(j, "model", "fusion_h", m.fusion_h);
    get_if_present(j, "model", "fusion_w", m.fusion_w);
    get_if_present(j, "model", "fusion_c", m.fusion_c);
    std::string variant = head_variant_to_string(m.head_variant);
    get_string_enum(j, "model", "head_variant", variant);
    m.head_variant = head_variant_from_string(variant);
}

void parse_train(const json& j, TrainConfig& t) {
    check_keys(j, "train",
               {"epochs", "lr_peak", "weight_decay", "warmup_epochs", "batch_size",
                "lambda_ce", "stage"});
    get_if_present(j, "train", "epochs", t.epochs);
    get_if_present(j, "train", "lr_peak", t.lr_peak);
    get_if_present(j, "train", "weight_decay", t.weight_decay);
    get_if_present(j, "train", "warmup_epochs", t.warmup_epochs);
    get_if_present(j, "train", "batch_size", t.batch_size);
    get_if_present(j, "train", "lambda_ce", t.lambda_ce);
    std::string stage = train_stage_to_string(t.stage);
    get_string_enum(j, "train", "stage", stage);
    t.stage = train_stage_from_string(stage);
}

void parse_data(const json& j, DataConfig& d) {
    check_keys(j, "data",
               {"height", "width", "layers", "noise_sigma", "boundary_wobble", "n_train",
                "n_val", "n_test"});
    get_if_present(j, "data", "height", d.scene.height);
    get_if_present(j, "data", "width", d.scene.width);
    get_if_present(j, "data", "layers", d.scene.layers);
    get_if_present(j, "data", "noise_sigma", d.scene.noise_sigma);
    get_if_present(j, "data", "boundary_wobble", d.scene.boundary_wobble);
    get_if_present(j, "data", "n_train", d.n_train);
    get_if_present(j, "data", "n_val", d.n_val);
    get_if_present(j, "data", "n_test", d.n_test);
}

void parse_xai(const json& j, XaiConfig& x) {
    check_keys(j, "xai", {"method", "layer_id", "steps"});
    std::string method = cam_method_to_string(x.method);
    get_string_enum(j, "xai", "method", method);
    x.method = cam_method_from_string(method);
    get_if_present(j, "xai", "layer_id", x.layer_id);
    get_if_present(j, "xai", "steps", x.steps);
}

void parse_paths(const json& j, PathsConfig& p) {
    check_keys(j, "paths", {"seg_checkpoint", "checkpoint", "maps_dir"});
    get_if_present(j, "paths", "seg_checkpoint", p.seg_checkpoint);
    get_if_present(j, "paths", "checkpoint", p.checkpoint);
    get_if_present(j, "paths", "maps_dir", p.maps_dir);
}

json model_to_json(const ModelConfig& m) {
    return {{"input_h", m.input_h},
            {"input_w", m.input_w},
            {"base_channels", m.base_channels},
            {"enc_blocks", m.enc_blocks},
            {"dec_blocks", m.dec_blocks},
            {"num_seg_classes", m.num_seg_classes},
            {"num_cls_classes", m.num_cls_classes},
            {"fusion_h", m.fusion_h},
            {"fusion_w", m.fusion_w},
            {"fusion_c", m.fusion_c},
            {"head_variant", head_variant_to_string(m.head_variant)}};
}

json data_to_json(const DataConfig& d) {
    return {{"height", d.scene.height},
            {"width", d.scene.width},
            {"layers", d.scene.layers},
            {"noise_sigma", d.scene.noise_sigma},
            {"boundary_wobble", d.scene.boundary_wobble},
            {"n_train", d.n_train},
            {"n_val", d.n_val},
            {"n_test", d.n_test}};
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: JSON parse error: ") + e.what());
    }
    check_keys(j, "top level", {"seed", "out", "model", "train", "data", "xai", "paths"});
    RunConfig cfg;
    get_if_present(j, "top level", "seed", cfg.seed);
    get_if_present(j, "top level", "out", cfg.out);
    if (j.contains("model")) parse_model(j.at("model"), cfg.model);
    if (j.contains("train")) parse_train(j.at("train"), cfg.train);
    if (j.contains("data")) parse_data(j.at("data"), cfg.data);
    if (j.contains("xai")) parse_xai(j.at("xai"), cfg.xai);
    if (j.contains("paths")) parse_paths(j.at("paths"), cfg.paths);
    cfg.train.seed = cfg.seed;
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_run_config(text);
}

std::string dump_run_config(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["out"] = cfg.out;
    j["model"] = model_to_json(cfg.model);
    json t;
    t["epochs"] = cfg.train.epochs;
    t["lr_peak"] = cfg.train.lr_peak;
    t["weight_decay"] = cfg.train.weight_decay;
    t["warmup_epochs"] = cfg.train.warmup_epochs;
    t["batch_size"] = cfg.train.batch_size;
    t["lambda_ce"] = cfg.train.lambda_ce;
    t["stage"] = train_stage_to_string(cfg.train.stage);
    j["train"] = t;
    j["data"] = data_to_json(cfg.data);
    j["xai"] = {{"method", cam_method_to_string(cfg.xai.method)},
                {"layer_id", cfg.xai.layer_id},
                {"steps", cfg.xai.steps}};
    j["paths"] = {{"seg_checkpoint", cfg.paths.seg_checkpoint},
                  {"checkpoint", cfg.paths.checkpoint},
                  {"maps_dir", cfg.paths.maps_dir}};
    return j.dump(2) + "\n";
}

std::string dump_checkpoint_config(const RunConfig& cfg) {
    json full = json::parse(dump_run_config(cfg));
    json j;
    for (const char* k : {"seed", "model", "data", "train"}) j[k] = full.at(k);
    return j.dump(2) + "\n";
}

uint64_t config_core_hash(const RunConfig& cfg) {
    json j;
    j["model"] = model_to_json(cfg.model);
    j["data"] = data_to_json(cfg.data);
    j["seed"] = cfg.seed;
    return fnv1a64(j.dump());
}

std::string config_core_hash_hex(const RunConfig& cfg) {
    std::ostringstream ss;
    ss << std::hex << std::setw(16) << std::setfill('0') << config_core_hash(cfg);
    return ss.str();
}

}  // namespace sail

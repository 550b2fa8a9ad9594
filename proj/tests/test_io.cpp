#include <cmath>
#include <cstdio>
#include <filesystem>
#include <unistd.h>
#include <string>
#include <vector>

#include "doctest.h"
#include "sail/checkpoint.hpp"
#include "sail/config.hpp"
#include "sail/imageio.hpp"

using namespace sail;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("sail_io_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

ModelConfig io_config(HeadVariant v = HeadVariant::gated) {
    ModelConfig cfg;
    cfg.input_h = 32;
    cfg.input_w = 32;
    cfg.base_channels = 4;
    cfg.enc_blocks = 2;
    cfg.dec_blocks = 2;
    cfg.num_seg_classes = 9;
    cfg.num_cls_classes = 2;
    cfg.fusion_h = 8;
    cfg.fusion_w = 8;
    cfg.head_variant = v;
    return cfg;
}

}  // namespace

TEST_CASE("checkpoint round-trips bit for bit") {
    TempDir dir;
    SailModel model(io_config(), 5);
    const std::string cfg_json = "{\"seed\": 5}\n";

    CheckpointData out = snapshot(model, cfg_json);
    save_checkpoint(dir.file("m.ckpt"), out);
    CheckpointData in = load_checkpoint(dir.file("m.ckpt"));

    CHECK(in.version == 1);
    CHECK(in.config_json == cfg_json);
    CHECK(in.shapes == out.shapes);  // save order preserved
    REQUIRE(in.values.size() == out.values.size());
    for (const auto& [name, vals] : out.values) CHECK(in.values.at(name) == vals);
    CHECK(!in.has_optimizer);

    SailModel other(io_config(), 99);
    load_into_model(in, other);
    for (const auto& [name, t] : model.parameters()) CHECK(other.param(name).vec() == t.vec());
}

TEST_CASE("checkpoint carries optimizer state") {
    TempDir dir;
    SailModel model(io_config(), 6);
    AdamW opt;
    auto params = trainable_params(model, TrainStage::segmentation);
    for (auto& [name, t] : params) {
        double* g = t.grad();
        for (int64_t i = 0; i < t.numel(); ++i) g[i] = 0.01 * static_cast<double>(i % 7);
    }
    opt.step(params, 1e-3, 0.01);
    for (auto& [name, t] : params) t.grad()[0] = 0.5;
    opt.step(params, 1e-3, 0.01);

    CheckpointData out = snapshot(model, "{}", &opt);
    save_checkpoint(dir.file("o.ckpt"), out);
    CheckpointData in = load_checkpoint(dir.file("o.ckpt"));

    REQUIRE(in.has_optimizer);
    CHECK(in.opt_step == 2);
    REQUIRE(in.opt_state.size() == opt.moments().size());
    for (const auto& [name, mv] : opt.moments()) {
        CHECK(in.opt_state.at(name).first == mv.first);
        CHECK(in.opt_state.at(name).second == mv.second);
    }

    // restoring reproduces the optimizer's forward trajectory
    AdamW resumed;
    resumed.restore(in.opt_step, in.opt_state);
    CHECK(resumed.step_count() == opt.step_count());
}

TEST_CASE("checkpoint rejects damaged files") {
    TempDir dir;
    SailModel model(io_config(), 7);
    save_checkpoint(dir.file("c.ckpt"), snapshot(model, "{}"));
    std::string bytes = read_text_file(dir.file("c.ckpt"));
    REQUIRE(bytes.size() > 64);

    // flipped payload byte breaks the trailing CRC
    std::string flipped = bytes;
    flipped[bytes.size() / 2] = static_cast<char>(flipped[bytes.size() / 2] ^ 0x40);
    write_text_file(dir.file("flip.ckpt"), flipped);
    CHECK_THROWS_AS(load_checkpoint(dir.file("flip.ckpt")), ArtifactError);

    write_text_file(dir.file("trunc.ckpt"), bytes.substr(0, bytes.size() - 7));
    CHECK_THROWS_AS(load_checkpoint(dir.file("trunc.ckpt")), ArtifactError);

    write_text_file(dir.file("tiny.ckpt"), bytes.substr(0, 6));
    CHECK_THROWS_AS(load_checkpoint(dir.file("tiny.ckpt")), ArtifactError);

    std::string magic = bytes;
    magic[0] = 'X';
    write_text_file(dir.file("magic.ckpt"), magic);
    CHECK_THROWS_AS(load_checkpoint(dir.file("magic.ckpt")), ArtifactError);

    std::string version = bytes;
    version[8] = 9;  // unsupported format version
    write_text_file(dir.file("ver.ckpt"), version);
    CHECK_THROWS_AS(load_checkpoint(dir.file("ver.ckpt")), ArtifactError);

    CHECK_THROWS_AS(load_checkpoint(dir.file("absent.ckpt")), ArtifactError);

    // trailing junk after the CRC is corruption too
    write_text_file(dir.file("tail.ckpt"), bytes + "xx");
    CHECK_THROWS_AS(load_checkpoint(dir.file("tail.ckpt")), ArtifactError);
}

TEST_CASE("load_into_model demands an exact parameter match") {
    TempDir dir;
    SailModel gated(io_config(), 8);
    CheckpointData data = snapshot(gated, "{}");

    SailModel enc_only(io_config(HeadVariant::enc_only), 8);
    CHECK_THROWS_AS(load_into_model(data, enc_only), ConfigError);  // extra fusion params

    ModelConfig wide = io_config();
    wide.base_channels = 8;
    SailModel big(wide, 8);
    CHECK_THROWS_AS(load_into_model(data, big), ConfigError);  // shape mismatch

    CheckpointData enc_data = snapshot(enc_only, "{}");
    SailModel gated2(io_config(), 1);
    CHECK_THROWS_AS(load_into_model(enc_data, gated2), ConfigError);  // missing params
}

TEST_CASE("pgm files quantize, annotate, and read back") {
    TempDir dir;
    std::vector<double> vals{0.0, 1.0, 0.5, -0.2, 1.7, 0.25};
    write_pgm16(dir.file("a.pgm"), vals, 2, 3, "config_core_hash=deadbeef");

    PgmImage img = read_pgm(dir.file("a.pgm"));
    CHECK(img.height == 2);
    CHECK(img.width == 3);
    CHECK(img.maxval == 65535);
    // clamp to [0,1], then round(v * 65535)
    CHECK(img.pixels == std::vector<int>{0, 65535, 32768, 0, 65535, 16384});

    std::string text = read_text_file(dir.file("a.pgm"));
    CHECK(text.find("# config_core_hash=deadbeef\n") != std::string::npos);
    CHECK(text.rfind("P2\n", 0) == 0);

    std::vector<int> labels{0, 3, 1, 2};
    write_pgm_labels(dir.file("m.pgm"), labels, 2, 2, 3);
    PgmImage mask = read_pgm(dir.file("m.pgm"));
    CHECK(mask.maxval == 3);
    CHECK(mask.pixels == labels);

    CHECK_THROWS_AS(write_pgm_labels(dir.file("bad.pgm"), {0, 5}, 1, 2, 3), ConfigError);
    CHECK_THROWS_AS(write_pgm16(dir.file("bad.pgm"), vals, 2, 2, ""), ShapeError);

    write_text_file(dir.file("not.pgm"), "P5\n2 2\n255\n....");
    CHECK_THROWS_AS(read_pgm(dir.file("not.pgm")), ArtifactError);
    CHECK_THROWS_AS(read_pgm(dir.file("missing.pgm")), ArtifactError);
}

TEST_CASE("raw f64 payloads round-trip exactly") {
    TempDir dir;
    std::vector<double> vals{0.0, -0.0, 1.0, -1.5e-308, 1.7976931348623157e308,
                             3.141592653589793, -42.5};
    write_f64(dir.file("v.f64"), vals);
    std::vector<double> back = read_f64(dir.file("v.f64"));
    REQUIRE(back.size() == vals.size());
    for (size_t i = 0; i < vals.size(); ++i) {
        CHECK(back[i] == vals[i]);
        CHECK(std::signbit(back[i]) == std::signbit(vals[i]));
    }

    write_f64(dir.file("empty.f64"), {});
    CHECK(read_f64(dir.file("empty.f64")).empty());

    write_text_file(dir.file("odd.f64"), "0123456789ab$");  // 13 bytes
    CHECK_THROWS_AS(read_f64(dir.file("odd.f64")), ArtifactError);
    CHECK_THROWS_AS(read_f64(dir.file("nope.f64")), ArtifactError);
}

TEST_CASE("csv helpers split what they join") {
    std::vector<std::string> fields{"epoch", "0.5", "enc.0;enc.1", ""};
    CHECK(csv_split(csv_join(fields)) == fields);
    CHECK(csv_join({"a", "b"}) == "a,b");
    CHECK(csv_split("1,2,3") == std::vector<std::string>{"1", "2", "3"});
    CHECK(csv_split("solo") == std::vector<std::string>{"solo"});
}

TEST_CASE("run config parses strictly and round-trips") {
    RunConfig cfg = parse_run_config("{}");
    CHECK(cfg.seed == 0);
    CHECK(cfg.out == "out");
    CHECK(cfg.model.base_channels == 8);
    CHECK(cfg.train.stage == TrainStage::segmentation);
    CHECK(cfg.xai.method == CamMethod::gradcam);

    // the master seed doubles as the training shuffle seed
    RunConfig seeded = parse_run_config("{\"seed\": 7}");
    CHECK(seeded.seed == 7);
    CHECK(seeded.train.seed == 7);

    RunConfig full = parse_run_config(R"({
        "seed": 11,
        "out": "runs/x",
        "model": {"input_h": 64, "input_w": 64, "base_channels": 4, "enc_blocks": 2,
                   "dec_blocks": 2, "num_seg_classes": 5, "num_cls_classes": 3,
                   "fusion_h": 16, "fusion_w": 16, "fusion_c": 12,
                   "head_variant": "multiply"},
        "train": {"epochs": 9, "lr_peak": 0.001, "weight_decay": 0.1, "warmup_epochs": 2,
                   "batch_size": 8, "lambda_ce": 0.5, "stage": "classification"},
        "data": {"height": 64, "width": 64, "layers": 4, "noise_sigma": 0.01,
                  "boundary_wobble": 0.5, "n_train": 40, "n_val": 10, "n_test": 10},
        "xai": {"method": "hirescam", "layer_id": "dec.2", "steps": 25},
        "paths": {"seg_checkpoint": "a.ckpt", "checkpoint": "b.ckpt", "maps_dir": "maps"}
    })");
    CHECK(full.model.head_variant == HeadVariant::multiply);
    CHECK(full.train.stage == TrainStage::classification);
    CHECK(full.train.seed == 11);
    CHECK(full.data.scene.layers == 4);
    CHECK(full.xai.method == CamMethod::hirescam);
    CHECK(full.paths.maps_dir == "maps");

    CHECK(parse_run_config(dump_run_config(full)) == full);
    CHECK(parse_run_config(dump_run_config(cfg)) == cfg);

    CHECK_THROWS_AS(parse_run_config("{\"sede\": 1}"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("{\"model\": {\"depth\": 3}}"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("{\"train\": {\"seed\": 1}}"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("{\"train\": {\"stage\": \"warmup\"}}"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("{\"data\": {\"scene\": {}}}"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("{\"xai\": {\"method\": \"lime\"}}"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("{\"seed\": \"abc\"}"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("{\"model\": {\"base_channels\": \"wide\"}}"),
                    ConfigError);
    CHECK_THROWS_AS(parse_run_config("not json"), ConfigError);
}

TEST_CASE("validate_and_fill cross-checks the model against the data") {
    RunConfig cfg = parse_run_config("{}");
    CHECK(cfg.model.fusion_h == 0);
    cfg.validate_and_fill();
    CHECK(cfg.model.fusion_h == 4);  // derived for 32px input
    CHECK(cfg.model.fusion_w == 4);

    RunConfig bad = parse_run_config("{\"data\": {\"height\": 64, \"width\": 64}}");
    CHECK_THROWS_AS(bad.validate_and_fill(), ConfigError);  // 32px model, 64px scenes

    RunConfig wrong = parse_run_config("{\"data\": {\"layers\": 4}}");
    CHECK_THROWS_AS(wrong.validate_and_fill(), ConfigError);  // 9 seg classes vs 5
}

TEST_CASE("config core hash tracks lineage, not training detail") {
    RunConfig a = parse_run_config("{}");
    RunConfig b = parse_run_config("{\"train\": {\"epochs\": 99}, \"out\": \"elsewhere\"}");
    CHECK(config_core_hash(a) == config_core_hash(b));
    CHECK(config_core_hash_hex(a) == config_core_hash_hex(b));

    RunConfig c = parse_run_config("{\"seed\": 1}");
    CHECK(config_core_hash(a) != config_core_hash(c));
    RunConfig d = parse_run_config("{\"model\": {\"base_channels\": 16}}");
    CHECK(config_core_hash(a) != config_core_hash(d));
    RunConfig e = parse_run_config("{\"data\": {\"n_test\": 7}}");
    CHECK(config_core_hash(a) != config_core_hash(e));

    CHECK(config_core_hash_hex(a).size() == 16);

    // checkpoint-embedded config ignores output paths but keeps train settings
    RunConfig f = parse_run_config("{\"out\": \"other\", \"xai\": {\"steps\": 3}}");
    CHECK(dump_checkpoint_config(a) == dump_checkpoint_config(f));
    CHECK(dump_checkpoint_config(a) != dump_checkpoint_config(b));  // epochs differ

    RunConfig g = parse_run_config(dump_checkpoint_config(a));
    CHECK(g.model == a.model);
    CHECK(g.data == a.data);
    CHECK(g.seed == a.seed);
}

TEST_CASE("train stage names round-trip") {
    CHECK(train_stage_to_string(TrainStage::segmentation) == "segmentation");
    CHECK(train_stage_to_string(TrainStage::classification) == "classification");
    CHECK(train_stage_from_string("segmentation") == TrainStage::segmentation);
    CHECK(train_stage_from_string("classification") == TrainStage::classification);
    CHECK_THROWS_AS(train_stage_from_string("deploy"), ConfigError);
}

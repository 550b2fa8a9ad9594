#include "sail/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "json.hpp"
#include "sail/checkpoint.hpp"
#include "sail/imageio.hpp"
#include "sail/metrics.hpp"

namespace sail {

using nlohmann::json;

namespace {

void ensure_dir(const std::string& path) { std::filesystem::create_directories(path); }

Dataset build_dataset(const RunConfig& cfg) {
    return make_dataset(cfg.data.n_train, cfg.data.n_val, cfg.data.n_test, cfg.data.scene,
                        cfg.seed);
}

std::string hash_comment(const RunConfig& cfg) {
    return "config_core_hash=" + config_core_hash_hex(cfg);
}

std::string seg_ckpt_path(const RunConfig& cfg) {
    return cfg.paths.seg_checkpoint.empty() ? cfg.out + "/seg_best.ckpt"
                                            : cfg.paths.seg_checkpoint;
}

std::string cls_ckpt_path(const RunConfig& cfg) {
    return cfg.paths.checkpoint.empty() ? cfg.out + "/cls_best.ckpt" : cfg.paths.checkpoint;
}

std::string maps_dir_path(const RunConfig& cfg) {
    return cfg.paths.maps_dir.empty() ? cfg.out + "/maps" : cfg.paths.maps_dir;
}

// Reconstructs the checkpointed model from its embedded config.
SailModel model_from_checkpoint(const CheckpointData& ck) {
    RunConfig ck_cfg = parse_run_config(ck.config_json);
    ck_cfg.validate_and_fill();
    SailModel model(ck_cfg.model, ck_cfg.seed);
    load_into_model(ck, model);
    return model;
}

std::vector<int> labels_of(const std::vector<SyntheticScene>& scenes) {
    std::vector<int> out;
    out.reserve(scenes.size());
    for (const auto& s : scenes) out.push_back(s.label);
    return out;
}

// Probability of class k on a batch of flat images, chunked to bound memory.
BatchPredictor make_predictor(SailModel& model, int k) {
    return [&model, k](const std::vector<std::vector<double>>& frames) {
        const ModelConfig& c = model.config();
        const int K = c.num_cls_classes;
        const size_t chunk = 32;
        std::vector<double> out;
        out.reserve(frames.size());
        for (size_t s = 0; s < frames.size(); s += chunk) {
            size_t e = std::min(frames.size(), s + chunk);
            int B = static_cast<int>(e - s);
            Tensor batch = Tensor::zeros({B, 1, c.input_h, c.input_w});
            double* dst = batch.data();
            size_t plane = static_cast<size_t>(c.input_h) * c.input_w;
            for (size_t b = 0; b < static_cast<size_t>(B); ++b) {
                if (frames[s + b].size() != plane)
                    throw ShapeError("predictor: frame size mismatch");
                std::copy(frames[s + b].begin(), frames[s + b].end(), dst + b * plane);
            }
            Tensor probs = model.classify_forward(batch).probs;
            for (int b = 0; b < B; ++b)
                out.push_back(probs.data()[static_cast<int64_t>(b) * K + k]);
        }
        return out;
    };
}

void write_pretrain_log(const std::string& path, const RunConfig& cfg,
                        const std::vector<EpochLog>& log) {
    std::string csv = "# " + hash_comment(cfg) + "\nepoch,lr,loss,dice,iou\n";
    for (const auto& e : log)
        csv += csv_join({std::to_string(e.epoch), fmt_g(e.lr), fmt_g(e.loss), fmt_g(e.dice),
                         fmt_g(e.iou)}) +
               "\n";
    write_text_file(path, csv);
}

void write_finetune_log(const std::string& path, const RunConfig& cfg,
                        const std::vector<EpochLog>& log) {
    std::string csv = "# " + hash_comment(cfg) + "\nepoch,lr,loss,f1,auroc,kappa,alpha\n";
    for (const auto& e : log)
        csv += csv_join({std::to_string(e.epoch), fmt_g(e.lr), fmt_g(e.loss), fmt_g(e.f1),
                         fmt_g(e.auroc), fmt_g(e.kappa),
                         std::isnan(e.alpha) ? std::string("n/a") : fmt_g(e.alpha)}) +
               "\n";
    write_text_file(path, csv);
}

struct SampleExplanation {
    int predicted = 0;
    double probability = 0.0;
    AttributionMap map;
};

// CAM for every scene at the configured layer, parallel across samples with
// per-sample model clones; results ordered by index.
std::vector<SampleExplanation> explain_scenes(const SailModel& model,
                                              const std::vector<SyntheticScene>& scenes,
                                              const XaiConfig& xai) {
    std::vector<SampleExplanation> out(scenes.size());
    parallel_for(static_cast<int64_t>(scenes.size()), [&](int64_t i) {
        SailModel m = model.clone();
        const SyntheticScene& scene = scenes[static_cast<size_t>(i)];
        Tensor img = scene.to_tensor();
        Tensor probs = m.classify_forward(img).probs;
        int K = m.config().num_cls_classes;
        int pred = 0;
        for (int k = 1; k < K; ++k)
            if (probs.data()[k] > probs.data()[pred]) pred = k;
        SampleExplanation& r = out[static_cast<size_t>(i)];
        r.predicted = pred;
        r.probability = probs.data()[pred];
        r.map = compute_cam(m, img, pred, xai.layer_id, xai.method);
    });
    return out;
}

struct XaiAggregate {
    double rma_mean = 0.0;
    double rra_mean = 0.0;
    double zero_fraction = 0.0;
};

XaiAggregate aggregate_xai(const std::vector<SampleExplanation>& expl,
                           const std::vector<SyntheticScene>& scenes) {
    XaiAggregate agg;
    for (size_t i = 0; i < expl.size(); ++i) {
        agg.rma_mean += rma(expl[i].map, scenes[i].mask);
        agg.rra_mean += rra(expl[i].map, scenes[i].mask);
        if (expl[i].map.zero_map) agg.zero_fraction += 1.0;
    }
    double n = static_cast<double>(expl.size());
    agg.rma_mean /= n;
    agg.rra_mean /= n;
    agg.zero_fraction /= n;
    return agg;
}

void check_layer_id(const SailModel& model, const std::string& layer_id) {
    auto ids = model.feature_ids();
    if (std::find(ids.begin(), ids.end(), layer_id) != ids.end()) return;
    std::string valid;
    for (const auto& id : ids) valid += (valid.empty() ? "" : ", ") + id;
    throw ConfigError("unknown layer id '" + layer_id + "' (valid: " + valid + ")");
}

struct Moments {
    double mean = 0.0;
    double stddev = 0.0;
};

Moments moments_of(const std::vector<double>& xs) {
    Moments m;
    if (xs.empty()) return m;
    for (double x : xs) m.mean += x;
    m.mean /= static_cast<double>(xs.size());
    for (double x : xs) m.stddev += (x - m.mean) * (x - m.mean);
    m.stddev = std::sqrt(m.stddev / static_cast<double>(xs.size()));
    return m;
}

json moments_json(const std::vector<double>& xs) {
    Moments m = moments_of(xs);
    return {{"mean", m.mean}, {"std", m.stddev}};
}

}  // namespace

void run_pretrain(RunConfig cfg) {
    cfg.validate_and_fill();
    if (cfg.train.stage != TrainStage::segmentation)
        throw ConfigError("pretrain requires train.stage == \"segmentation\"");
    ensure_dir(cfg.out);
    write_text_file(cfg.out + "/pretrain_config.json", dump_run_config(cfg));

    Dataset data = build_dataset(cfg);
    SailModel model(cfg.model, cfg.seed);
    TrainResult res = pretrain_segmentation(model, data, cfg.train);

    write_pretrain_log(cfg.out + "/pretrain_log.csv", cfg, res.log);
    save_checkpoint(cfg.out + "/seg_best.ckpt",
                    snapshot(res.best_model, dump_checkpoint_config(cfg)));
}

void run_finetune(RunConfig cfg, bool from_scratch) {
    cfg.validate_and_fill();
    if (cfg.train.stage != TrainStage::classification)
        throw ConfigError("finetune requires train.stage == \"classification\"");
    ensure_dir(cfg.out);
    write_text_file(cfg.out + "/finetune_config.json", dump_run_config(cfg));

    Dataset data = build_dataset(cfg);
    SailModel model(cfg.model, cfg.seed);
    if (!from_scratch) {
        SailModel seg_model = model_from_checkpoint(load_checkpoint(seg_ckpt_path(cfg)));
        transfer_backbone(model, seg_model);
    }
    TrainResult res = finetune_classification(model, data, cfg.train);

    write_finetune_log(cfg.out + "/finetune_log.csv", cfg, res.log);
    save_checkpoint(cfg.out + "/cls_best.ckpt",
                    snapshot(res.best_model, dump_checkpoint_config(cfg)));
}

void run_explain(RunConfig cfg) {
    cfg.validate_and_fill();
    SailModel model = model_from_checkpoint(load_checkpoint(cls_ckpt_path(cfg)));
    check_layer_id(model, cfg.xai.layer_id);

    Dataset data = build_dataset(cfg);
    std::vector<SampleExplanation> expl = explain_scenes(model, data.test, cfg.xai);

    std::string dir = maps_dir_path(cfg);
    ensure_dir(dir);
    std::string index = "# " + hash_comment(cfg) + "\nsample,predicted_class,probability,zero_map\n";
    for (size_t i = 0; i < expl.size(); ++i) {
        const auto& r = expl[i];
        write_pgm16(dir + "/map_" + std::to_string(i) + ".pgm", r.map.values, r.map.height,
                    r.map.width, hash_comment(cfg));
        write_f64(dir + "/map_" + std::to_string(i) + ".f64", r.map.values);
        index += csv_join({std::to_string(i), std::to_string(r.predicted),
                           fmt_g(r.probability), r.map.zero_map ? "1" : "0"}) +
                 "\n";
    }
    write_text_file(dir + "/index.csv", index);

    json meta;
    meta["config_core_hash"] = config_core_hash_hex(cfg);
    meta["method"] = cam_method_to_string(cfg.xai.method);
    meta["layer_id"] = cfg.xai.layer_id;
    meta["steps"] = cfg.xai.steps;
    meta["count"] = expl.size();
    meta["height"] = cfg.model.input_h;
    meta["width"] = cfg.model.input_w;
    write_text_file(dir + "/maps_meta.json", meta.dump(2) + "\n");
}

void run_evaluate(RunConfig cfg, bool force) {
    cfg.validate_and_fill();
    std::string dir = maps_dir_path(cfg);

    json meta;
    try {
        meta = json::parse(read_text_file(dir + "/maps_meta.json"));
    } catch (const json::exception& e) {
        throw ArtifactError("evaluate: corrupt maps_meta.json: " + std::string(e.what()));
    }
    std::string stored_hash = meta.at("config_core_hash").get<std::string>();
    if (stored_hash != config_core_hash_hex(cfg) && !force)
        throw ConfigError("evaluate: maps were produced under config hash " + stored_hash +
                          ", current is " + config_core_hash_hex(cfg) +
                          " (pass --force to override)");

    Dataset data = build_dataset(cfg);
    size_t count = meta.at("count").get<size_t>();
    if (count != data.test.size())
        throw ConfigError("evaluate: " + std::to_string(count) + " maps vs " +
                          std::to_string(data.test.size()) + " test scenes");

    SailModel model = model_from_checkpoint(load_checkpoint(cls_ckpt_path(cfg)));
    CamMethod method = cam_method_from_string(meta.at("method").get<std::string>());
    std::string layer_id = meta.at("layer_id").get<std::string>();

    // index.csv rows: sample,predicted_class,probability,zero_map
    std::vector<int> preds(count);
    std::vector<bool> zero_flags(count);
    {
        std::stringstream ss(read_text_file(dir + "/index.csv"));
        std::string line;
        size_t rows = 0;
        while (std::getline(ss, line)) {
            if (line.empty() || line[0] == '#' || line.rfind("sample,", 0) == 0) continue;
            auto f = csv_split(line);
            if (f.size() != 4) throw ArtifactError("evaluate: malformed index.csv row");
            size_t i = static_cast<size_t>(std::stoul(f[0]));
            if (i >= count) throw ArtifactError("evaluate: index.csv sample out of range");
            preds[i] = std::stoi(f[1]);
            zero_flags[i] = f[3] == "1";
            ++rows;
        }
        if (rows != count) throw ArtifactError("evaluate: index.csv row count mismatch");
    }

    const int H = cfg.model.input_h, W = cfg.model.input_w;
    std::vector<AttributionMap> maps(count);
    for (size_t i = 0; i < count; ++i) {
        AttributionMap& A = maps[i];
        A.values = read_f64(dir + "/map_" + std::to_string(i) + ".f64");
        if (A.values.size() != static_cast<size_t>(H) * W)
            throw ArtifactError("evaluate: map_" + std::to_string(i) + ".f64 has wrong size");
        A.height = H;
        A.width = W;
        A.target_class = preds[i];
        A.method = method;
        A.layer_id = layer_id;
        A.zero_map = zero_flags[i];
    }

    const int L = cfg.data.scene.layers;
    struct Row {
        double rma = 0.0, rra = 0.0, del_auc = 0.0, ins_auc = 0.0, top3_ratio = 0.0;
        std::array<int, 3> top3_layers{};
        std::vector<double> normalized;
    };
    std::vector<Row> rows(count);
    parallel_for(static_cast<int64_t>(count), [&](int64_t ii) {
        size_t i = static_cast<size_t>(ii);
        SailModel m = model.clone();
        const SyntheticScene& scene = data.test[i];
        Row& r = rows[i];
        r.rma = rma(maps[i], scene.mask);
        r.rra = rra(maps[i], scene.mask);
        LayerRelevance rel = layer_relevance(maps[i], scene.mask);
        r.normalized = rel.normalized;
        Top3 t3 = top3(rel.mass);
        r.top3_layers = t3.layers;
        r.top3_ratio = t3.ratio;
        BatchPredictor predict = make_predictor(m, preds[i]);
        r.del_auc = deletion_curve(predict, scene.image, H, W, maps[i], cfg.xai.steps).auc;
        r.ins_auc = insertion_curve(predict, scene.image, H, W, maps[i], cfg.xai.steps).auc;
    });

    std::string header = "sample,rma,rra,deletion_auc,insertion_auc,top3_layers,top3_ratio";
    for (int l = 1; l <= L; ++l) header += ",m_norm_" + std::to_string(l);
    std::string csv = "# " + hash_comment(cfg) + "\n" + header + "\n";
    for (size_t i = 0; i < count; ++i) {
        const Row& r = rows[i];
        std::vector<std::string> f = {std::to_string(i),       fmt_g(r.rma),
                                      fmt_g(r.rra),            fmt_g(r.del_auc),
                                      fmt_g(r.ins_auc),        std::to_string(r.top3_layers[0]) +
                                                                   ";" +
                                                                   std::to_string(r.top3_layers[1]) +
                                                                   ";" +
                                                                   std::to_string(r.top3_layers[2]),
                                      fmt_g(r.top3_ratio)};
        for (int l = 0; l < L; ++l) f.push_back(fmt_g(r.normalized[static_cast<size_t>(l)]));
        csv += csv_join(f) + "\n";
    }
    ensure_dir(cfg.out);
    write_text_file(cfg.out + "/metrics.csv", csv);

    auto col = [&](auto getter) {
        std::vector<double> xs(count);
        for (size_t i = 0; i < count; ++i) xs[i] = getter(rows[i]);
        return xs;
    };
    std::vector<std::array<int, 3>> sets;
    sets.reserve(count);
    for (const auto& r : rows) sets.push_back(r.top3_layers);
    Top3Frequency freq = top3_frequency(sets);

    ClsMetrics cm = classification_metrics(
        predict_probs(model, data.test, cfg.train.batch_size), labels_of(data.test));

    json summary;
    summary["config_core_hash"] = config_core_hash_hex(cfg);
    summary["count"] = count;
    summary["rma"] = moments_json(col([](const Row& r) { return r.rma; }));
    summary["rra"] = moments_json(col([](const Row& r) { return r.rra; }));
    summary["deletion_auc"] = moments_json(col([](const Row& r) { return r.del_auc; }));
    summary["insertion_auc"] = moments_json(col([](const Row& r) { return r.ins_auc; }));
    summary["top3_ratio"] = moments_json(col([](const Row& r) { return r.top3_ratio; }));
    summary["top3_frequency"] = {{"modal", freq.modal}, {"frequency", freq.frequency}};
    summary["classification"] = {{"auroc", cm.auroc},         {"auprc", cm.auprc},
                                 {"accuracy", cm.accuracy},   {"precision", cm.precision},
                                 {"recall", cm.recall},       {"f1", cm.f1},
                                 {"kappa", cm.kappa}};
    write_text_file(cfg.out + "/summary.json", summary.dump(2) + "\n");
}

void run_ablate_heads(RunConfig cfg) {
    cfg.validate_and_fill();
    ensure_dir(cfg.out);
    Dataset data = build_dataset(cfg);

    TrainConfig seg_cfg = cfg.train;
    seg_cfg.stage = TrainStage::segmentation;
    SailModel seg_model(cfg.model, cfg.seed);
    TrainResult seg_res = pretrain_segmentation(seg_model, data, seg_cfg);

    std::vector<int> test_labels = labels_of(data.test);
    std::string csv = "# " + hash_comment(cfg) +
                      "\nvariant,accuracy,auroc,auprc,f1,kappa,rma,rra,alpha\n";
    for (HeadVariant v :
         {HeadVariant::gated, HeadVariant::enc_only, HeadVariant::dec_only, HeadVariant::merge,
          HeadVariant::multiply, HeadVariant::ch_multiply}) {
        ModelConfig mc = cfg.model;
        mc.head_variant = v;
        SailModel m(mc, cfg.seed);
        transfer_backbone(m, seg_res.best_model);
        TrainConfig cls_cfg = cfg.train;
        cls_cfg.stage = TrainStage::classification;
        TrainResult res = finetune_classification(m, data, cls_cfg);

        ClsMetrics cm = classification_metrics(
            predict_probs(res.best_model, data.test, cfg.train.batch_size), test_labels);
        std::vector<SampleExplanation> expl =
            explain_scenes(res.best_model, data.test, cfg.xai);
        XaiAggregate agg = aggregate_xai(expl, data.test);
        auto alpha = res.best_model.gate_alpha();
        csv += csv_join({head_variant_to_string(v), fmt_g(cm.accuracy), fmt_g(cm.auroc),
                         fmt_g(cm.auprc), fmt_g(cm.f1), fmt_g(cm.kappa), fmt_g(agg.rma_mean),
                         fmt_g(agg.rra_mean), alpha ? fmt_g(*alpha) : std::string("n/a")}) +
               "\n";
    }
    write_text_file(cfg.out + "/ablate_heads.csv", csv);
}

void run_ablate_layers(RunConfig cfg) {
    cfg.validate_and_fill();
    ensure_dir(cfg.out);
    Dataset data = build_dataset(cfg);

    TrainConfig seg_cfg = cfg.train;
    seg_cfg.stage = TrainStage::segmentation;
    SailModel seg_model(cfg.model, cfg.seed);
    TrainResult seg_res = pretrain_segmentation(seg_model, data, seg_cfg);

    SailModel m(cfg.model, cfg.seed);
    transfer_backbone(m, seg_res.best_model);
    TrainConfig cls_cfg = cfg.train;
    cls_cfg.stage = TrainStage::classification;
    TrainResult res = finetune_classification(m, data, cls_cfg);

    std::string csv = "# " + hash_comment(cfg) + "\nlayer_id,rma,rra,zero_map_fraction\n";
    for (const std::string& id : res.best_model.feature_ids()) {
        XaiConfig xai = cfg.xai;
        xai.layer_id = id;
        std::vector<SampleExplanation> expl = explain_scenes(res.best_model, data.test, xai);
        XaiAggregate agg = aggregate_xai(expl, data.test);
        csv += csv_join({id, fmt_g(agg.rma_mean), fmt_g(agg.rra_mean),
                         fmt_g(agg.zero_fraction)}) +
               "\n";
    }
    write_text_file(cfg.out + "/ablate_layers.csv", csv);
}

void run_gen_data(RunConfig cfg) {
    cfg.validate_and_fill();
    Dataset data = build_dataset(cfg);
    const int L = cfg.data.scene.layers;
    auto dump_split = [&](const std::string& name, const std::vector<SyntheticScene>& scenes) {
        std::string dir = cfg.out + "/data/" + name;
        ensure_dir(dir);
        std::string labels = "# " + hash_comment(cfg) + "\nsample,label,seed\n";
        for (size_t i = 0; i < scenes.size(); ++i) {
            const SyntheticScene& s = scenes[i];
            write_pgm16(dir + "/img_" + std::to_string(i) + ".pgm", s.image,
                        cfg.data.scene.height, cfg.data.scene.width, hash_comment(cfg));
            write_pgm_labels(dir + "/mask_" + std::to_string(i) + ".pgm", s.mask.labels,
                             cfg.data.scene.height, cfg.data.scene.width, L,
                             hash_comment(cfg));
            labels += csv_join({std::to_string(i), std::to_string(s.label),
                                std::to_string(s.seed)}) +
                      "\n";
        }
        write_text_file(dir + "/labels.csv", labels);
    };
    dump_split("train", data.train);
    dump_split("val", data.val);
    dump_split("test", data.test);
}

}  // namespace sail

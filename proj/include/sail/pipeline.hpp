#pragma once

#include "sail/config.hpp"

namespace sail {

// Each command throws on failure (ConfigError, NumericError, ArtifactError,
// ...); the CLI maps exception types to exit codes.

// Stage I: writes <out>/seg_best.ckpt, pretrain_log.csv, pretrain_config.json.
void run_pretrain(RunConfig cfg);
// Stage II: writes <out>/cls_best.ckpt, finetune_log.csv, finetune_config.json.
void run_finetune(RunConfig cfg, bool from_scratch);
// Per-test-scene CAM maps: map_<i>.pgm + map_<i>.f64 + index.csv + maps_meta.json.
void run_explain(RunConfig cfg);
// XAI + classification metrics over precomputed maps: metrics.csv + summary.json.
void run_evaluate(RunConfig cfg, bool force);
// Both stages for every head variant: ablate_heads.csv.
void run_ablate_heads(RunConfig cfg);
// Both stages once, then every registry layer id: ablate_layers.csv.
void run_ablate_layers(RunConfig cfg);
// Dataset export: per split img_<i>.pgm, mask_<i>.pgm, labels.csv.
void run_gen_data(RunConfig cfg);

}  // namespace sail

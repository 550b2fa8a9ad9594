#pragma once

#include <cstdint>
#include <vector>

#include "sail/mask.hpp"
#include "sail/tensor.hpp"

namespace sail {

struct SynthConfig {
    int height = 32;
    int width = 32;
    int layers = 8;                 // L tissue layers + background
    double noise_sigma = 0.05;      // multiplicative speckle std
    double boundary_wobble = 1.5;   // sinusoidal boundary shift amplitude, px

    bool operator==(const SynthConfig&) const = default;
};

struct SyntheticScene {
    std::vector<double> image;      // H*W row-major, values in [0,1]
    LayerMask mask;
    int label = 0;                  // 0 = clean, 1 = lesion
    std::vector<int> lesion_region; // flat pixel indices, empty for class 0
    uint64_t seed = 0;

    Tensor to_tensor() const;       // [1,1,H,W]
};

// The lesion is always injected into this tissue layer (1-based).
int lesion_layer(const SynthConfig& cfg);

// Deterministic layered scene: L horizontal bands between the top/bottom
// background margins, shared sinusoidal boundary wobble, golden-ratio layer
// intensities, multiplicative speckle; class 1 adds a dark elliptic lesion
// clipped to the lesion layer.
SyntheticScene generate_scene(uint64_t seed, const SynthConfig& cfg, int class_k);

struct Dataset {
    std::vector<SyntheticScene> train, val, test;
};

// Disjoint per-split seed ranges, classes alternating 0,1,0,1,... per split.
Dataset make_dataset(int n_train, int n_val, int n_test, const SynthConfig& cfg,
                     uint64_t seed);

// Assemble [B,1,H,W] batch from the given scene indices.
Tensor make_batch(const std::vector<SyntheticScene>& scenes, const std::vector<int>& idx);

}  // namespace sail

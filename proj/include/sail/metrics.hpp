#pragma once

#include <array>
#include <functional>
#include <vector>

#include "sail/attribution.hpp"
#include "sail/mask.hpp"

namespace sail {

// Relevance mass accuracy: fraction of attribution mass inside the tissue set
// G = {label >= 1}. Zero total mass falls back to the uniform value |G|/|Omega|.
double rma(const AttributionMap& A, const LayerMask& mask);

// Relevance rank accuracy: |top-K pixels of A intersected with G| / K, K = |G|.
// Ties broken by ascending row-major index.
double rra(const AttributionMap& A, const LayerMask& mask);

struct LayerRelevance {
    std::vector<double> mass;        // index l-1 holds m(l), l = 1..L
    std::vector<double> normalized;  // m(l) / sum; zeros when total mass is 0
};
// Background (label 0) excluded from mass and normalization.
LayerRelevance layer_relevance(const AttributionMap& A, const LayerMask& mask);

struct Top3 {
    std::array<int, 3> layers{};  // 1-based, by descending mass, ties -> lower id
    double ratio = 0.0;
};
// Input: per-layer masses (index 0 = layer 1). Zero total mass -> uniform 3/L.
Top3 top3(const std::vector<double>& mass);

struct Top3Frequency {
    std::array<int, 3> modal{};  // sorted ascending
    double frequency = 0.0;
};
// Frequency of the modal unordered top-3 set; modal ties break lexicographically.
Top3Frequency top3_frequency(const std::vector<std::array<int, 3>>& sets);

struct ClsMetrics {
    double auroc = 0.0;
    double auprc = 0.0;
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double kappa = 0.0;
};
// probs: one row of K class probabilities per sample. Binary (K = 2) uses the
// positive class; K > 2 macro-averages one-vs-rest. Predictions by argmax.
ClsMetrics classification_metrics(const std::vector<std::vector<double>>& probs,
                                  const std::vector<int>& labels);

// Maps a batch of flat images to the probability of one fixed class.
using BatchPredictor =
    std::function<std::vector<double>(const std::vector<std::vector<double>>&)>;

struct PerturbationCurve {
    std::vector<double> probs;  // steps+1 points
    double auc = 0.0;
    bool rowmajor_fallback = false;  // zero map -> row-major ordering used
};

// Pixel ordering induced by an attribution map: descending value, then
// ascending row-major index; identity order when the zero-map flag is set.
std::vector<int> attribution_order(const AttributionMap& A);

// Perturb pixels of `image` in `order`: deletion sets them to 0 starting from
// the original; insertion reveals them starting from a Gaussian-blurred copy
// (sigma = H/45, 3-sigma truncation). steps+1 curve points, trapezoidal AUC
// over fraction in [0,1].
PerturbationCurve perturbation_curve(const BatchPredictor& predict,
                                     const std::vector<double>& image, int H, int W,
                                     const std::vector<int>& order, int steps,
                                     bool deletion);

PerturbationCurve deletion_curve(const BatchPredictor& predict,
                                 const std::vector<double>& image, int H, int W,
                                 const AttributionMap& A, int steps);
PerturbationCurve insertion_curve(const BatchPredictor& predict,
                                  const std::vector<double>& image, int H, int W,
                                  const AttributionMap& A, int steps);

// Separable Gaussian blur, kernel truncated at 3 sigma and renormalized at
// image borders.
std::vector<double> gaussian_blur(const std::vector<double>& image, int H, int W,
                                  double sigma);

}  // namespace sail

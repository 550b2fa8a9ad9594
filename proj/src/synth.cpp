#include "sail/synth.hpp"

#include <algorithm>
#include <cmath>

namespace sail {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kGolden = 0.618033988749895;
constexpr double kBackgroundIntensity = 0.08;
constexpr double kLesionIntensity = 0.02;
constexpr double kTopMargin = 0.2;     // mean top margin; tissue height is fixed 0.6H
constexpr double kBottomMargin = 0.8;
constexpr double kMarginJitter = 0.1;  // per-scene vertical offset amplitude, fraction of H

double golden_intensity(int layer) {
    double f = kGolden * layer;
    return 0.25 + 0.65 * (f - std::floor(f));
}

// Golden-ratio intensities, permuted so the lesion layer is the brightest
// band: the dark lesion then has maximal contrast against its own layer
// rather than against a neighbour.
double layer_intensity(int layer, int layers) {
    const int les = (layers + 1) / 2;
    int brightest = 1;
    for (int l = 2; l <= layers; ++l)
        if (golden_intensity(l) > golden_intensity(brightest)) brightest = l;
    if (layer == les) return golden_intensity(brightest);
    if (layer == brightest) return golden_intensity(les);
    return golden_intensity(layer);
}

}  // namespace

Tensor SyntheticScene::to_tensor() const {
    return Tensor::from_data({1, 1, mask.height, mask.width}, image);
}

int lesion_layer(const SynthConfig& cfg) { return (cfg.layers + 1) / 2; }

SyntheticScene generate_scene(uint64_t seed, const SynthConfig& cfg, int class_k) {
    const int H = cfg.height, W = cfg.width, L = cfg.layers;
    if (L < 4) throw ConfigError("synth: need at least 4 layers");
    if (H < 32) throw ConfigError("synth: height must be >= 32");
    if (class_k < 0 || class_k > 1) throw ConfigError("synth: class must be 0 or 1");
    const double band_h = (kBottomMargin - kTopMargin) * H / L;
    if (band_h < 2.0)
        throw ConfigError("synth: bands thinner than 2 px at " + std::to_string(L) + " layers");

    Rng rng(seed);
    // Fixed draw order keeps class-0 and class-1 scenes identical outside the
    // lesion region: margin offset, wobble, lesion geometry (always drawn),
    // then noise. The vertical offset decorrelates absolute row position from
    // layer identity, so models cannot bind class evidence to fixed rows.
    const double band_top = (kTopMargin + kMarginJitter * (2.0 * rng.uniform() - 1.0)) * H;
    const double cycles = 1.0 + rng.below(2);            // 1 or 2 periods
    const double phase = rng.uniform() * 2.0 * kPi;
    const double lesion_cx = (0.25 + 0.5 * rng.uniform()) * W;
    const double lesion_rx = (0.12 + 0.08 * rng.uniform()) * W;
    const double lesion_ry = 0.45 * band_h;
    const int les_layer = lesion_layer(cfg);

    SyntheticScene s;
    s.seed = seed;
    s.label = class_k;
    s.mask = LayerMask(H, W, L);
    s.image.assign(static_cast<size_t>(H) * W, 0.0);

    std::vector<double> shift(W);
    for (int c = 0; c < W; ++c)
        shift[c] = cfg.boundary_wobble *
                   std::sin(2.0 * kPi * cycles * (c + 0.5) / W + phase);

    // labels + base intensities
    std::vector<double> base(static_cast<size_t>(H) * W, kBackgroundIntensity);
    for (int c = 0; c < W; ++c) {
        for (int r = 0; r < H; ++r) {
            double y = r + 0.5 - shift[c];
            double rel = (y - band_top) / band_h;
            if (rel >= 0.0 && rel < L) {
                int l = static_cast<int>(rel) + 1;
                s.mask.at(r, c) = l;
                base[static_cast<size_t>(r) * W + c] = layer_intensity(l, L);
            }
        }
    }

    // lesion: dark ellipse centered mid-band in the lesion layer, clipped to it
    if (class_k == 1) {
        double lesion_cy = band_top + (les_layer - 0.5) * band_h;
        for (int r = 0; r < H; ++r) {
            for (int c = 0; c < W; ++c) {
                if (s.mask.at(r, c) != les_layer) continue;
                double dy = (r + 0.5 - shift[c] - lesion_cy) / lesion_ry;
                double dx = (c + 0.5 - lesion_cx) / lesion_rx;
                if (dx * dx + dy * dy <= 1.0) {
                    int p = r * W + c;
                    base[static_cast<size_t>(p)] = kLesionIntensity;
                    s.lesion_region.push_back(p);
                }
            }
        }
    }

    // multiplicative speckle, one draw per pixel in row-major order
    for (size_t p = 0; p < base.size(); ++p) {
        double v = base[p] * (1.0 + cfg.noise_sigma * rng.normal());
        s.image[p] = std::clamp(v, 0.0, 1.0);
    }
    return s;
}

Dataset make_dataset(int n_train, int n_val, int n_test, const SynthConfig& cfg,
                     uint64_t seed) {
    if (n_train < 1 || n_val < 1 || n_test < 1)
        throw ConfigError("synth: split sizes must be >= 1");
    Dataset d;
    auto fill = [&](std::vector<SyntheticScene>& out, int n, uint64_t offset) {
        out.reserve(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i)
            out.push_back(generate_scene(seed + offset + static_cast<uint64_t>(i), cfg, i % 2));
    };
    fill(d.train, n_train, 0);
    fill(d.val, n_val, static_cast<uint64_t>(n_train));
    fill(d.test, n_test, static_cast<uint64_t>(n_train) + static_cast<uint64_t>(n_val));
    return d;
}

Tensor make_batch(const std::vector<SyntheticScene>& scenes, const std::vector<int>& idx) {
    if (idx.empty()) throw ConfigError("make_batch: empty index list");
    const auto& first = scenes.at(static_cast<size_t>(idx[0]));
    int H = first.mask.height, W = first.mask.width;
    Tensor t = Tensor::zeros({static_cast<int>(idx.size()), 1, H, W});
    for (size_t b = 0; b < idx.size(); ++b) {
        const auto& sc = scenes.at(static_cast<size_t>(idx[b]));
        std::copy(sc.image.begin(), sc.image.end(),
                  t.data() + static_cast<int64_t>(b) * H * W);
    }
    return t;
}

}  // namespace sail

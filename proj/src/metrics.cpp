#include "sail/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace sail {

namespace {

void require_same_dims(const AttributionMap& A, const LayerMask& mask, const char* who) {
    if (A.height != mask.height || A.width != mask.width)
        throw ShapeError(std::string(who) + ": map is " + std::to_string(A.height) + "x" +
                         std::to_string(A.width) + " but mask is " +
                         std::to_string(mask.height) + "x" + std::to_string(mask.width));
}

}  // namespace

double rma(const AttributionMap& A, const LayerMask& mask) {
    require_same_dims(A, mask, "rma");
    double tissue = 0.0, total = 0.0;
    for (size_t p = 0; p < A.values.size(); ++p) {
        total += A.values[p];
        if (mask.labels[p] >= 1) tissue += A.values[p];
    }
    if (total == 0.0)
        return static_cast<double>(mask.tissue_pixels().size()) /
               static_cast<double>(mask.labels.size());
    return tissue / total;
}

double rra(const AttributionMap& A, const LayerMask& mask) {
    require_same_dims(A, mask, "rra");
    int64_t K = static_cast<int64_t>(mask.tissue_pixels().size());
    if (K == 0) throw Error("rra: mask has no tissue pixels");
    std::vector<int> idx(A.values.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + K, idx.end(), [&](int a, int b) {
        if (A.values[static_cast<size_t>(a)] != A.values[static_cast<size_t>(b)])
            return A.values[static_cast<size_t>(a)] > A.values[static_cast<size_t>(b)];
        return a < b;
    });
    int64_t hit = 0;
    for (int64_t i = 0; i < K; ++i)
        if (mask.labels[static_cast<size_t>(idx[static_cast<size_t>(i)])] >= 1) ++hit;
    return static_cast<double>(hit) / static_cast<double>(K);
}

LayerRelevance layer_relevance(const AttributionMap& A, const LayerMask& mask) {
    require_same_dims(A, mask, "layer_relevance");
    if (mask.tissue_pixels().empty()) throw Error("layer_relevance: all-background mask");
    LayerRelevance out;
    out.mass.assign(static_cast<size_t>(mask.layer_count), 0.0);
    for (size_t p = 0; p < A.values.size(); ++p) {
        int l = mask.labels[p];
        if (l >= 1) out.mass[static_cast<size_t>(l - 1)] += A.values[p];
    }
    double total = std::accumulate(out.mass.begin(), out.mass.end(), 0.0);
    out.normalized.assign(out.mass.size(), 0.0);
    if (total > 0.0)
        for (size_t l = 0; l < out.mass.size(); ++l) out.normalized[l] = out.mass[l] / total;
    return out;
}

Top3 top3(const std::vector<double>& mass) {
    int L = static_cast<int>(mass.size());
    if (L < 3) throw Error("top3: need at least 3 layers, got " + std::to_string(L));
    std::vector<int> idx(mass.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + 3, idx.end(), [&](int a, int b) {
        if (mass[static_cast<size_t>(a)] != mass[static_cast<size_t>(b)])
            return mass[static_cast<size_t>(a)] > mass[static_cast<size_t>(b)];
        return a < b;
    });
    Top3 out;
    double top = 0.0;
    for (int i = 0; i < 3; ++i) {
        out.layers[static_cast<size_t>(i)] = idx[static_cast<size_t>(i)] + 1;
        top += mass[static_cast<size_t>(idx[static_cast<size_t>(i)])];
    }
    double total = std::accumulate(mass.begin(), mass.end(), 0.0);
    out.ratio = total > 0.0 ? top / total : 3.0 / L;
    return out;
}

Top3Frequency top3_frequency(const std::vector<std::array<int, 3>>& sets) {
    if (sets.empty()) throw Error("top3_frequency: empty sample list");
    std::map<std::array<int, 3>, int> counts;
    for (auto s : sets) {
        std::sort(s.begin(), s.end());
        ++counts[s];
    }
    Top3Frequency out;
    int best = 0;
    for (const auto& [set, n] : counts)
        if (n > best) {  // map order gives the lexicographic tie-break
            best = n;
            out.modal = set;
        }
    out.frequency = static_cast<double>(best) / static_cast<double>(sets.size());
    return out;
}

namespace {

// Tie-corrected Mann-Whitney AUROC via average ranks.
double rank_auroc(const std::vector<double>& scores, const std::vector<char>& pos) {
    int64_t P = std::count(pos.begin(), pos.end(), 1);
    int64_t N = static_cast<int64_t>(pos.size()) - P;
    if (P == 0 || N == 0) throw Error("auroc: labels contain a single class");
    std::vector<int> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        return scores[static_cast<size_t>(a)] < scores[static_cast<size_t>(b)];
    });
    double pos_rank_sum = 0.0;
    size_t i = 0;
    while (i < idx.size()) {
        size_t j = i;
        while (j < idx.size() &&
               scores[static_cast<size_t>(idx[j])] == scores[static_cast<size_t>(idx[i])])
            ++j;
        double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based average
        for (size_t t = i; t < j; ++t)
            if (pos[static_cast<size_t>(idx[t])]) pos_rank_sum += avg_rank;
        i = j;
    }
    double U = pos_rank_sum - 0.5 * static_cast<double>(P) * static_cast<double>(P + 1);
    return U / (static_cast<double>(P) * static_cast<double>(N));
}

// Step-wise average precision, ties grouped per distinct threshold.
double average_precision(const std::vector<double>& scores, const std::vector<char>& pos) {
    int64_t P = std::count(pos.begin(), pos.end(), 1);
    if (P == 0) throw Error("auprc: no positive labels");
    std::vector<int> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    });
    double ap = 0.0, prev_recall = 0.0;
    int64_t tp = 0, seen = 0;
    size_t i = 0;
    while (i < idx.size()) {
        size_t j = i;
        while (j < idx.size() &&
               scores[static_cast<size_t>(idx[j])] == scores[static_cast<size_t>(idx[i])]) {
            if (pos[static_cast<size_t>(idx[j])]) ++tp;
            ++seen;
            ++j;
        }
        double recall = static_cast<double>(tp) / static_cast<double>(P);
        double precision = static_cast<double>(tp) / static_cast<double>(seen);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

struct Prf {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

Prf prf_for_class(const std::vector<int>& preds, const std::vector<int>& labels, int k) {
    int64_t tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
        bool p = preds[i] == k, t = labels[i] == k;
        if (p && t) ++tp;
        else if (p) ++fp;
        else if (t) ++fn;
    }
    Prf out;
    if (tp + fp > 0) out.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    if (tp + fn > 0) out.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    if (out.precision + out.recall > 0.0)
        out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
    return out;
}

}  // namespace

ClsMetrics classification_metrics(const std::vector<std::vector<double>>& probs,
                                  const std::vector<int>& labels) {
    if (probs.empty() || probs.size() != labels.size())
        throw Error("classification_metrics: probs/labels size mismatch");
    int K = static_cast<int>(probs[0].size());
    if (K < 2) throw Error("classification_metrics: need at least 2 classes");
    size_t n = probs.size();
    std::vector<int> preds(n);
    for (size_t i = 0; i < n; ++i) {
        if (static_cast<int>(probs[i].size()) != K)
            throw ShapeError("classification_metrics: ragged probability rows");
        if (labels[i] < 0 || labels[i] >= K)
            throw Error("classification_metrics: label out of range");
        int arg = 0;
        for (int k = 1; k < K; ++k)
            if (probs[i][static_cast<size_t>(k)] > probs[i][static_cast<size_t>(arg)]) arg = k;
        preds[i] = arg;
    }

    ClsMetrics m;
    int64_t correct = 0;
    for (size_t i = 0; i < n; ++i)
        if (preds[i] == labels[i]) ++correct;
    m.accuracy = static_cast<double>(correct) / static_cast<double>(n);

    auto ovr = [&](int k) {
        std::vector<double> s(n);
        std::vector<char> pos(n);
        for (size_t i = 0; i < n; ++i) {
            s[i] = probs[i][static_cast<size_t>(k)];
            pos[i] = labels[i] == k ? 1 : 0;
        }
        return std::make_pair(std::move(s), std::move(pos));
    };

    if (K == 2) {
        auto [s, pos] = ovr(1);
        m.auroc = rank_auroc(s, pos);
        m.auprc = average_precision(s, pos);
        Prf p = prf_for_class(preds, labels, 1);
        m.precision = p.precision;
        m.recall = p.recall;
        m.f1 = p.f1;
    } else {
        int counted = 0;
        for (int k = 0; k < K; ++k) {
            int64_t pk = std::count(labels.begin(), labels.end(), k);
            if (pk == 0 || pk == static_cast<int64_t>(n)) continue;
            auto [s, pos] = ovr(k);
            m.auroc += rank_auroc(s, pos);
            m.auprc += average_precision(s, pos);
            Prf p = prf_for_class(preds, labels, k);
            m.precision += p.precision;
            m.recall += p.recall;
            m.f1 += p.f1;
            ++counted;
        }
        if (counted == 0) throw Error("classification_metrics: labels contain a single class");
        m.auroc /= counted;
        m.auprc /= counted;
        m.precision /= counted;
        m.recall /= counted;
        m.f1 /= counted;
    }

    std::vector<int64_t> row(static_cast<size_t>(K), 0), col(static_cast<size_t>(K), 0);
    for (size_t i = 0; i < n; ++i) {
        ++row[static_cast<size_t>(labels[i])];
        ++col[static_cast<size_t>(preds[i])];
    }
    double pe = 0.0;
    for (int k = 0; k < K; ++k)
        pe += static_cast<double>(row[static_cast<size_t>(k)]) *
              static_cast<double>(col[static_cast<size_t>(k)]) /
              (static_cast<double>(n) * static_cast<double>(n));
    m.kappa = pe < 1.0 ? (m.accuracy - pe) / (1.0 - pe) : 0.0;
    return m;
}

std::vector<int> attribution_order(const AttributionMap& A) {
    std::vector<int> idx(A.values.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (A.zero_map) return idx;
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        return A.values[static_cast<size_t>(a)] > A.values[static_cast<size_t>(b)];
    });
    return idx;
}

PerturbationCurve perturbation_curve(const BatchPredictor& predict,
                                     const std::vector<double>& image, int H, int W,
                                     const std::vector<int>& order, int steps,
                                     bool deletion) {
    const size_t N = static_cast<size_t>(H) * static_cast<size_t>(W);
    if (image.size() != N) throw ShapeError("perturbation_curve: image size mismatch");
    if (order.size() != N) throw ShapeError("perturbation_curve: order size mismatch");
    if (steps < 2) throw Error("perturbation_curve: steps must be >= 2");

    std::vector<double> baseline;
    if (deletion)
        baseline.assign(N, 0.0);
    else
        baseline = gaussian_blur(image, H, W, static_cast<double>(H) / 45.0);

    // Step s perturbs/reveals the first floor(s*N/steps) pixels in order.
    std::vector<std::vector<double>> frames;
    frames.reserve(static_cast<size_t>(steps) + 1);
    std::vector<double> cur = deletion ? image : baseline;
    size_t applied = 0;
    for (int s = 0; s <= steps; ++s) {
        size_t count = static_cast<size_t>(static_cast<int64_t>(s) *
                                           static_cast<int64_t>(N) / steps);
        for (; applied < count; ++applied) {
            size_t p = static_cast<size_t>(order[applied]);
            cur[p] = deletion ? baseline[p] : image[p];
        }
        frames.push_back(cur);
    }

    PerturbationCurve out;
    out.probs = predict(frames);
    if (out.probs.size() != static_cast<size_t>(steps) + 1)
        throw Error("perturbation_curve: predictor returned wrong point count");
    for (int s = 0; s < steps; ++s)
        out.auc += 0.5 *
                   (out.probs[static_cast<size_t>(s)] + out.probs[static_cast<size_t>(s) + 1]) /
                   steps;
    return out;
}

PerturbationCurve deletion_curve(const BatchPredictor& predict,
                                 const std::vector<double>& image, int H, int W,
                                 const AttributionMap& A, int steps) {
    PerturbationCurve out =
        perturbation_curve(predict, image, H, W, attribution_order(A), steps, true);
    out.rowmajor_fallback = A.zero_map;
    return out;
}

PerturbationCurve insertion_curve(const BatchPredictor& predict,
                                  const std::vector<double>& image, int H, int W,
                                  const AttributionMap& A, int steps) {
    PerturbationCurve out =
        perturbation_curve(predict, image, H, W, attribution_order(A), steps, false);
    out.rowmajor_fallback = A.zero_map;
    return out;
}

std::vector<double> gaussian_blur(const std::vector<double>& image, int H, int W,
                                  double sigma) {
    if (image.size() != static_cast<size_t>(H) * static_cast<size_t>(W))
        throw ShapeError("gaussian_blur: image size mismatch");
    if (sigma <= 0.0) return image;
    int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<size_t>(2 * r + 1));
    for (int d = -r; d <= r; ++d)
        kernel[static_cast<size_t>(d + r)] =
            std::exp(-0.5 * static_cast<double>(d) * static_cast<double>(d) / (sigma * sigma));

    // Separable pass with border renormalization over in-bounds taps.
    auto pass = [&](const std::vector<double>& src, int outer, int inner, int64_t outer_stride,
                    int64_t inner_stride) {
        std::vector<double> dst(src.size());
        for (int o = 0; o < outer; ++o)
            for (int i = 0; i < inner; ++i) {
                double acc = 0.0, wsum = 0.0;
                int lo = std::max(0, i - r), hi = std::min(inner - 1, i + r);
                for (int t = lo; t <= hi; ++t) {
                    double w = kernel[static_cast<size_t>(t - i + r)];
                    acc += w * src[static_cast<size_t>(o * outer_stride + t * inner_stride)];
                    wsum += w;
                }
                dst[static_cast<size_t>(o * outer_stride + i * inner_stride)] = acc / wsum;
            }
        return dst;
    };
    std::vector<double> tmp = pass(image, H, W, W, 1);  // horizontal
    return pass(tmp, W, H, 1, W);                       // vertical
}

}  // namespace sail

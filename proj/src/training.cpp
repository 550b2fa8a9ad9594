#include "sail/training.hpp"

#include <algorithm>
#include <cmath>

#include "sail/metrics.hpp"

namespace sail {

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (warmup_epochs < 0 || warmup_epochs >= epochs)
        throw ConfigError("train: warmup_epochs must be in [0, epochs)");
    if (lr_peak <= 0.0) throw ConfigError("train: lr_peak must be > 0");
    if (lambda_ce < 0.0) throw ConfigError("train: lambda_ce must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
}

double lr_at(int epoch, const TrainConfig& cfg) {
    cfg.validate();
    if (epoch < 0 || epoch >= cfg.epochs) throw Error("lr_at: epoch out of range");
    if (epoch < cfg.warmup_epochs)
        return cfg.lr_peak * static_cast<double>(epoch) / cfg.warmup_epochs;
    double t = static_cast<double>(epoch - cfg.warmup_epochs) /
               static_cast<double>(cfg.epochs - cfg.warmup_epochs);
    return cfg.lr_peak * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

Tensor seg_loss(const Tensor& pred_probs, const std::vector<LayerMask>& targets,
                double lambda_ce) {
    Tensor dice = dice_loss(pred_probs, targets);
    if (lambda_ce == 0.0) return dice;
    return add(dice, scale(pixel_nll(pred_probs, targets), lambda_ce));
}

void AdamW::step(const std::vector<std::pair<std::string, Tensor>>& params, double lr,
                 double weight_decay) {
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (const auto& [name, t] : params) {
        if (!t.has_grad())
            throw Error("adamw_step: parameter '" + name + "' has no gradient");
        auto& [m, v] = state_[name];
        const size_t n = static_cast<size_t>(t.numel());
        if (m.empty()) {
            m.assign(n, 0.0);
            v.assign(n, 0.0);
        } else if (m.size() != n) {
            throw ShapeError("adamw_step: moment size mismatch for '" + name + "'");
        }
        Tensor theta = t;  // cheap handle copy for mutable access
        double* p = theta.data();
        const double* g = t.grad_vec().data();
        for (size_t i = 0; i < n; ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            double m_hat = m[i] / bc1;
            double v_hat = v[i] / bc2;
            p[i] -= lr * weight_decay * p[i];
            p[i] -= lr * m_hat / (std::sqrt(v_hat) + eps_);
        }
        t.zero_grad();
    }
}

std::vector<std::pair<std::string, Tensor>> trainable_params(const SailModel& model,
                                                             TrainStage stage) {
    std::vector<std::string> prefixes =
        stage == TrainStage::segmentation
            ? std::vector<std::string>{"enc.", "dec.", "seg."}
            : std::vector<std::string>{"enc.", "dec.", "fusion.", "head."};
    // enc_only ignores the decoder output entirely, so its parameters receive
    // no gradient during classification; keep them out of the optimizer.
    if (stage == TrainStage::classification &&
        model.config().head_variant == HeadVariant::enc_only)
        prefixes = {"enc.", "fusion.", "head."};
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& [name, t] : model.parameters())
        for (const auto& p : prefixes)
            if (name.rfind(p, 0) == 0) {
                out.emplace_back(name, t);
                break;
            }
    return out;
}

void transfer_backbone(SailModel& dst, const SailModel& src) {
    for (const auto& [name, t] : src.parameters()) {
        bool backbone = name.rfind("enc.", 0) == 0 || name.rfind("dec.", 0) == 0 ||
                        name.rfind("seg.", 0) == 0;
        if (!backbone) continue;
        Tensor d = dst.param(name);
        if (d.shape() != t.shape())
            throw ConfigError("transfer_backbone: shape mismatch for '" + name + "'");
        d.vec() = t.vec();
    }
}

namespace {

std::vector<LayerMask> gather_masks(const std::vector<SyntheticScene>& scenes,
                                    const std::vector<int>& idx) {
    std::vector<LayerMask> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(scenes.at(static_cast<size_t>(i)).mask);
    return out;
}

std::vector<std::vector<int>> make_batches(int n, int batch_size, Rng& rng) {
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    rng.shuffle(idx);
    std::vector<std::vector<int>> batches;
    for (int s = 0; s < n; s += batch_size) {
        int e = std::min(n, s + batch_size);
        batches.emplace_back(idx.begin() + s, idx.begin() + e);
    }
    return batches;
}

}  // namespace

SegScores evaluate_segmentation(SailModel& model, const std::vector<SyntheticScene>& scenes,
                                int batch_size) {
    int C = model.config().num_seg_classes;
    std::vector<double> inter(static_cast<size_t>(C), 0.0), pred(static_cast<size_t>(C), 0.0),
        truth(static_cast<size_t>(C), 0.0);
    int n = static_cast<int>(scenes.size());
    for (int s = 0; s < n; s += batch_size) {
        std::vector<int> idx;
        for (int i = s; i < std::min(n, s + batch_size); ++i) idx.push_back(i);
        Tensor probs = model.segment_forward(make_batch(scenes, idx));
        for (size_t b = 0; b < idx.size(); ++b) {
            LayerMask pm = argmax_mask(probs, static_cast<int>(b));
            const LayerMask& tm = scenes[static_cast<size_t>(idx[b])].mask;
            for (size_t p = 0; p < pm.labels.size(); ++p) {
                int pc = pm.labels[p], tc = tm.labels[p];
                pred[static_cast<size_t>(pc)] += 1.0;
                truth[static_cast<size_t>(tc)] += 1.0;
                if (pc == tc) inter[static_cast<size_t>(pc)] += 1.0;
            }
        }
    }
    SegScores out;
    int counted = 0;
    for (int c = 0; c < C; ++c) {
        double u = pred[static_cast<size_t>(c)] + truth[static_cast<size_t>(c)];
        if (u == 0.0) continue;  // class absent from both prediction and truth
        ++counted;
        out.dice += 2.0 * inter[static_cast<size_t>(c)] / u;
        out.iou += inter[static_cast<size_t>(c)] / (u - inter[static_cast<size_t>(c)]);
    }
    if (counted > 0) {
        out.dice /= counted;
        out.iou /= counted;
    }
    return out;
}

std::vector<std::vector<double>> predict_probs(SailModel& model,
                                               const std::vector<SyntheticScene>& scenes,
                                               int batch_size) {
    int K = model.config().num_cls_classes;
    std::vector<std::vector<double>> out;
    out.reserve(scenes.size());
    int n = static_cast<int>(scenes.size());
    for (int s = 0; s < n; s += batch_size) {
        std::vector<int> idx;
        for (int i = s; i < std::min(n, s + batch_size); ++i) idx.push_back(i);
        Tensor probs = model.classify_forward(make_batch(scenes, idx)).probs;
        for (size_t b = 0; b < idx.size(); ++b) {
            std::vector<double> row(static_cast<size_t>(K));
            for (int k = 0; k < K; ++k) row[static_cast<size_t>(k)] =
                probs.data()[static_cast<int64_t>(b) * K + k];
            out.push_back(std::move(row));
        }
    }
    return out;
}

TrainResult pretrain_segmentation(SailModel& model, const Dataset& data,
                                  const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.stage != TrainStage::segmentation)
        throw ConfigError("pretrain_segmentation: cfg.stage must be segmentation");
    AdamW opt;
    auto trainables = trainable_params(model, TrainStage::segmentation);
    TrainResult res{model.clone()};
    double best_dice = -1.0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double lr = lr_at(epoch, cfg);
        Rng shuffle_rng(mix_seed(cfg.seed, static_cast<uint64_t>(epoch)));
        double loss_sum = 0.0;
        int64_t loss_n = 0;
        for (const auto& batch : make_batches(static_cast<int>(data.train.size()),
                                              cfg.batch_size, shuffle_rng)) {
            Tape tape;
            Tensor probs = model.segment_forward(make_batch(data.train, batch));
            Tensor loss = seg_loss(probs, gather_masks(data.train, batch), cfg.lambda_ce);
            double lv = loss.value();
            if (!std::isfinite(lv))
                throw NumericError("pretrain: non-finite loss at epoch " +
                                   std::to_string(epoch));
            loss_sum += lv * static_cast<double>(batch.size());
            loss_n += static_cast<int64_t>(batch.size());
            backward(loss);
            opt.step(trainables, lr, cfg.weight_decay);
        }
        SegScores val = evaluate_segmentation(model, data.val, cfg.batch_size);
        EpochLog log;
        log.epoch = epoch;
        log.lr = lr;
        log.loss = loss_sum / static_cast<double>(loss_n);
        log.dice = val.dice;
        log.iou = val.iou;
        res.log.push_back(log);
        if (val.dice > best_dice) {
            best_dice = val.dice;
            res.best_model = model.clone();
            res.best_epoch = epoch;
        }
    }
    return res;
}

TrainResult finetune_classification(SailModel& model, const Dataset& data,
                                    const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.stage != TrainStage::classification)
        throw ConfigError("finetune_classification: cfg.stage must be classification");
    AdamW opt;
    auto trainables = trainable_params(model, TrainStage::classification);
    TrainResult res{model.clone()};
    double best_f1 = -1.0, best_auroc = -1.0, best_kappa = -1.0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double lr = lr_at(epoch, cfg);
        Rng shuffle_rng(mix_seed(cfg.seed, static_cast<uint64_t>(epoch)));
        double loss_sum = 0.0;
        int64_t loss_n = 0;
        for (const auto& batch : make_batches(static_cast<int>(data.train.size()),
                                              cfg.batch_size, shuffle_rng)) {
            std::vector<int> labels;
            for (int i : batch) labels.push_back(data.train[static_cast<size_t>(i)].label);
            Tape tape;
            auto out = model.classify_forward(make_batch(data.train, batch));
            Tensor loss = cross_entropy(out.logits, labels);
            double lv = loss.value();
            if (!std::isfinite(lv))
                throw NumericError("finetune: non-finite loss at epoch " +
                                   std::to_string(epoch));
            loss_sum += lv * static_cast<double>(batch.size());
            loss_n += static_cast<int64_t>(batch.size());
            backward(loss);
            opt.step(trainables, lr, cfg.weight_decay);
        }
        std::vector<int> val_labels;
        for (const auto& s : data.val) val_labels.push_back(s.label);
        ClsMetrics m = classification_metrics(predict_probs(model, data.val, cfg.batch_size),
                                              val_labels);
        EpochLog log;
        log.epoch = epoch;
        log.lr = lr;
        log.loss = loss_sum / static_cast<double>(loss_n);
        log.f1 = m.f1;
        log.auroc = m.auroc;
        log.kappa = m.kappa;
        if (auto a = model.gate_alpha()) log.alpha = *a;
        res.log.push_back(log);
        bool better = m.f1 > best_f1 ||
                      (m.f1 == best_f1 && m.auroc > best_auroc) ||
                      (m.f1 == best_f1 && m.auroc == best_auroc && m.kappa > best_kappa);
        if (better) {
            best_f1 = m.f1;
            best_auroc = m.auroc;
            best_kappa = m.kappa;
            res.best_model = model.clone();
            res.best_epoch = epoch;
        }
    }
    return res;
}

}  // namespace sail

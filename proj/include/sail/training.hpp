#pragma once

#include <limits>
#include <map>
#include <string>
#include <vector>

#include "sail/model.hpp"
#include "sail/synth.hpp"

namespace sail {

enum class TrainStage { segmentation, classification };

struct TrainConfig {
    int epochs = 50;
    double lr_peak = 5e-4;
    double weight_decay = 0.05;
    int warmup_epochs = 10;
    int batch_size = 16;
    double lambda_ce = 1.0;
    uint64_t seed = 0;
    TrainStage stage = TrainStage::segmentation;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

// Linear warmup 0 -> lr_peak over warmup_epochs, then cosine decay to 0.
double lr_at(int epoch, const TrainConfig& cfg);

// dice_loss + lambda_ce * per-pixel cross-entropy
Tensor seg_loss(const Tensor& pred_probs, const std::vector<LayerMask>& targets,
                double lambda_ce);

class AdamW {
public:
    AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // Decoupled decay + bias-corrected Adam; zeroes gradients afterwards.
    void step(const std::vector<std::pair<std::string, Tensor>>& params, double lr,
              double weight_decay);

    int64_t step_count() const { return step_; }
    const std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>&
    moments() const { return state_; }
    void restore(int64_t step,
                 std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> st) {
        step_ = step;
        state_ = std::move(st);
    }

private:
    double beta1_, beta2_, eps_;
    int64_t step_ = 0;
    // name -> (m, v)
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> state_;
};

struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
    // stage I
    double dice = 0.0;
    double iou = 0.0;
    // stage II
    double f1 = 0.0;
    double auroc = 0.0;
    double kappa = 0.0;
    double alpha = std::numeric_limits<double>::quiet_NaN();  // NaN = not applicable
};

struct TrainResult {
    SailModel best_model;
    int best_epoch = -1;
    std::vector<EpochLog> log;
};

// Parameters the optimizer updates in each stage (by name prefix):
// segmentation: enc./dec./seg. ; classification: enc./dec./fusion./head.
std::vector<std::pair<std::string, Tensor>> trainable_params(const SailModel& model,
                                                             TrainStage stage);

// Copies enc./dec./seg. parameter values from src into dst (Stage I -> II).
void transfer_backbone(SailModel& dst, const SailModel& src);

// Macro-averaged hard Dice/IoU of argmax predictions over a scene list,
// aggregating per-class pixel counts across the whole list.
struct SegScores {
    double dice = 0.0;
    double iou = 0.0;
};
SegScores evaluate_segmentation(SailModel& model, const std::vector<SyntheticScene>& scenes,
                                int batch_size = 16);

// Class probabilities, one row per scene.
std::vector<std::vector<double>> predict_probs(SailModel& model,
                                               const std::vector<SyntheticScene>& scenes,
                                               int batch_size = 16);

TrainResult pretrain_segmentation(SailModel& model, const Dataset& data,
                                  const TrainConfig& cfg);
TrainResult finetune_classification(SailModel& model, const Dataset& data,
                                    const TrainConfig& cfg);

}  // namespace sail

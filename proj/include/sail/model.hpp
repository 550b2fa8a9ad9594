#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sail/ops.hpp"
#include "sail/tensor.hpp"

namespace sail {

enum class HeadVariant { gated, enc_only, dec_only, merge, multiply, ch_multiply };

HeadVariant head_variant_from_string(const std::string& s);
std::string head_variant_to_string(HeadVariant v);

struct ModelConfig {
    int input_h = 32;
    int input_w = 32;
    int base_channels = 8;
    int enc_blocks = 4;
    int dec_blocks = 4;       // plus stem = dec_blocks+1 decoder stages 0..dec_blocks
    int num_seg_classes = 9;  // L+1
    int num_cls_classes = 2;  // K
    int fusion_h = 0;         // 0 = derive from input size
    int fusion_w = 0;
    int fusion_c = 8;
    HeadVariant head_variant = HeadVariant::gated;

    // Reference fusion size is 32 at 224-px inputs; smaller inputs scale
    // proportionally, rounded to the nearest power of two.
    static int scaled_fusion_extent(int input_extent);

    void validate_and_fill();  // applies fusion defaults, checks invariants
    bool operator==(const ModelConfig&) const = default;
};

// U-Net-style encoder/decoder with a segmentation head, a selectable fusion
// head over the deepest encoder and final decoder features, and a named
// registry exposing every internal feature map of the latest forward pass.
class SailModel {
public:
    SailModel(ModelConfig cfg, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }

    // --- parameters ---
    const std::vector<std::string>& param_names() const { return order_; }
    Tensor param(const std::string& name) const;
    bool has_param(const std::string& name) const { return params_.count(name) != 0; }
    std::vector<std::pair<std::string, Tensor>> parameters() const;
    void zero_grad() const;
    int64_t param_count() const;

    // Deep copy: fresh storage for every parameter, empty registry.
    SailModel clone() const;
    // Switch fusion path; required parameters must already exist.
    void set_head_variant(HeadVariant v);

    // --- forward passes ---
    // returns e_0..e_{enc_blocks}; registers "enc.i" = e_{i+1}
    std::vector<Tensor> encode(const Tensor& image);
    // returns d_{dec_blocks}; registers "dec.0".."dec.{dec_blocks}"
    Tensor decode(const std::vector<Tensor>& enc_feats);
    // [B, L+1, H, W] per-pixel probabilities
    Tensor segment_forward(const Tensor& image);
    // registers "fusion"
    Tensor fuse(const Tensor& enc_deep, const Tensor& dec_final);
    struct ClassifyOut {
        Tensor logits;  // [B,K]
        Tensor probs;   // [B,K]
    };
    ClassifyOut classify_forward(const Tensor& image);

    // --- feature registry ---
    Tensor get_feature(const std::string& layer_id) const;
    std::vector<std::string> feature_ids() const;  // Table-4 order
    uint64_t forward_pass_count() const { return pass_counter_; }

    // Diagnostics/tests: force the gated alpha to a fixed value (or clear).
    void set_alpha_override(std::optional<double> a) { alpha_override_ = a; }
    // Current gate value sigmoid(w); nullopt when the variant has no gate.
    std::optional<double> gate_alpha() const;

private:
    Tensor add_param(const std::string& name, Shape shape, uint64_t seed, bool he_init);
    void init_params(uint64_t seed);
    Tensor conv_block(const Tensor& x, const std::string& prefix);
    void check_image(const Tensor& image) const;
    void begin_forward();
    void register_feature(const std::string& id, const Tensor& t);

    ModelConfig cfg_;
    uint64_t seed_ = 0;
    std::vector<std::string> order_;
    std::map<std::string, Tensor> params_;
    std::map<std::string, Tensor> registry_;
    uint64_t pass_counter_ = 0;
    std::optional<double> alpha_override_;
};

}  // namespace sail

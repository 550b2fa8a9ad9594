#include "sail/model.hpp"

#include <algorithm>
#include <cmath>

namespace sail {

HeadVariant head_variant_from_string(const std::string& s) {
    if (s == "gated") return HeadVariant::gated;
    if (s == "enc_only") return HeadVariant::enc_only;
    if (s == "dec_only") return HeadVariant::dec_only;
    if (s == "merge") return HeadVariant::merge;
    if (s == "multiply") return HeadVariant::multiply;
    if (s == "ch_multiply") return HeadVariant::ch_multiply;
    throw ConfigError("unknown head variant '" + s + "'");
}

std::string head_variant_to_string(HeadVariant v) {
    switch (v) {
        case HeadVariant::gated: return "gated";
        case HeadVariant::enc_only: return "enc_only";
        case HeadVariant::dec_only: return "dec_only";
        case HeadVariant::merge: return "merge";
        case HeadVariant::multiply: return "multiply";
        case HeadVariant::ch_multiply: return "ch_multiply";
    }
    throw ConfigError("unknown head variant");
}

int ModelConfig::scaled_fusion_extent(int input_extent) {
    if (input_extent >= 224) return 32;
    double target = 32.0 * input_extent / 224.0;
    // nearest power of two (ties go up)
    int best = 1;
    double best_err = std::fabs(std::log2(target) - 0.0);
    for (int p = 1; (1 << p) <= input_extent; ++p) {
        double err = std::fabs(std::log2(target) - p);
        if (err <= best_err) {
            best = 1 << p;
            best_err = err;
        }
    }
    return best;
}

void ModelConfig::validate_and_fill() {
    if (input_h < 8 || input_w < 8) throw ConfigError("model: input size too small");
    if (base_channels < 1) throw ConfigError("model: base_channels must be >= 1");
    if (enc_blocks < 1) throw ConfigError("model: enc_blocks must be >= 1");
    if (dec_blocks != enc_blocks)
        throw ConfigError("model: dec_blocks must equal enc_blocks (U-shape symmetry)");
    if (num_seg_classes < 2) throw ConfigError("model: num_seg_classes must be >= 2");
    if (num_cls_classes < 2) throw ConfigError("model: num_cls_classes must be >= 2");
    int down = 1 << enc_blocks;
    if (input_h % down != 0 || input_w % down != 0)
        throw ConfigError("model: input size must be divisible by 2^enc_blocks");
    if (fusion_h == 0) fusion_h = scaled_fusion_extent(input_h);
    if (fusion_w == 0) fusion_w = scaled_fusion_extent(input_w);
    if (fusion_c < 1) throw ConfigError("model: fusion_c must be >= 1");
    int deep_h = input_h / down, deep_w = input_w / down;
    if (fusion_h < deep_h || fusion_w < deep_w)
        throw ConfigError("model: fusion size must be >= deepest encoder feature size");
    if (fusion_h > input_h || fusion_w > input_w)
        throw ConfigError("model: fusion size must be <= input size");
}

SailModel::SailModel(ModelConfig cfg, uint64_t seed) : cfg_(cfg), seed_(seed) {
    cfg_.validate_and_fill();
    init_params(seed);
}

// He-normal weights, uniform(+-1/sqrt(fan_in)) biases. Every parameter draws
// from its own stream keyed by name, so initialization is independent of
// creation order and identical across head variants for shared parameters.
Tensor SailModel::add_param(const std::string& name, Shape shape, uint64_t seed, bool he_init) {
    Rng rng(mix_seed(seed, fnv1a64(name)));
    Tensor t = Tensor::zeros(std::move(shape), true);
    int64_t n = t.numel();
    if (he_init) {
        int64_t fan_in = 1;
        for (size_t i = 1; i < t.shape().size(); ++i) fan_in *= t.shape()[i];
        double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (int64_t i = 0; i < n; ++i) t.data()[i] = std_dev * rng.normal();
    } else {
        // bias: fan_in of the conv this bias belongs to is encoded by caller
        // via shape[0] ... biases are drawn uniform around zero below
        for (int64_t i = 0; i < n; ++i) t.data()[i] = rng.uniform(-1.0, 1.0);
    }
    order_.push_back(name);
    params_.emplace(name, t);
    return t;
}

void SailModel::init_params(uint64_t seed) {
    auto conv_pair = [&](const std::string& prefix, int cout, int cin, int k) {
        add_param(prefix + ".weight", {cout, cin, k, k}, seed, true);
        Tensor b = add_param(prefix + ".bias", {cout}, seed, false);
        double bound = 1.0 / std::sqrt(static_cast<double>(cin) * k * k);
        for (int64_t i = 0; i < b.numel(); ++i) b.data()[i] *= bound;
    };
    int base = cfg_.base_channels;
    int nb = cfg_.enc_blocks;

    conv_pair("enc.stem.conv1", base, 1, 3);
    conv_pair("enc.stem.conv2", base, base, 3);
    for (int i = 0; i < nb; ++i) {
        int cin = base << i;
        int cout = base << (i + 1);
        conv_pair("enc." + std::to_string(i) + ".conv1", cout, cin, 3);
        conv_pair("enc." + std::to_string(i) + ".conv2", cout, cout, 3);
    }
    // decoder stage 0 = stem on the deepest encoder feature
    int deep_c = base << nb;
    conv_pair("dec.0.conv1", deep_c, deep_c, 3);
    conv_pair("dec.0.conv2", deep_c, deep_c, 3);
    for (int j = 1; j <= cfg_.dec_blocks; ++j) {
        int cout = base << (nb - j);
        int cin = (base << (nb - j + 1)) + cout;  // upsampled previous + skip
        conv_pair("dec." + std::to_string(j) + ".conv1", cout, cin, 3);
        conv_pair("dec." + std::to_string(j) + ".conv2", cout, cout, 3);
    }
    conv_pair("seg.conv", cfg_.num_seg_classes, base, 1);

    bool use_enc = cfg_.head_variant != HeadVariant::dec_only;
    bool use_dec = cfg_.head_variant != HeadVariant::enc_only;
    if (use_enc) conv_pair("fusion.proj_enc", cfg_.fusion_c, deep_c, 1);
    if (use_dec) conv_pair("fusion.proj_dec", cfg_.fusion_c, base, 1);
    if (cfg_.head_variant == HeadVariant::gated) {
        Tensor w = add_param("fusion.gate_w", {1}, seed, false);
        w.data()[0] = 0.0;  // alpha starts at 0.5
    }
    if (cfg_.head_variant == HeadVariant::merge)
        conv_pair("fusion.merge", cfg_.fusion_c, 2 * cfg_.fusion_c, 1);
    conv_pair("head.conv", cfg_.num_cls_classes, cfg_.fusion_c, 1);
}

Tensor SailModel::param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw LookupError("unknown parameter '" + name + "'");
    return it->second;
}

std::vector<std::pair<std::string, Tensor>> SailModel::parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(order_.size());
    for (const auto& n : order_) out.emplace_back(n, params_.at(n));
    return out;
}

void SailModel::zero_grad() const {
    for (const auto& [name, t] : params_) t.zero_grad();
}

int64_t SailModel::param_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
}

SailModel SailModel::clone() const {
    SailModel m(cfg_, seed_);
    for (auto& name : m.order_) {
        Tensor src = params_.at(name);
        m.params_.at(name).vec() = src.vec();
    }
    return m;
}

void SailModel::set_head_variant(HeadVariant v) {
    std::vector<std::string> needed;
    if (v != HeadVariant::dec_only) needed.push_back("fusion.proj_enc.weight");
    if (v != HeadVariant::enc_only) needed.push_back("fusion.proj_dec.weight");
    if (v == HeadVariant::gated) needed.push_back("fusion.gate_w");
    if (v == HeadVariant::merge) needed.push_back("fusion.merge.weight");
    for (const auto& n : needed)
        if (!params_.count(n))
            throw ConfigError("cannot switch to variant " + head_variant_to_string(v) +
                              ": missing parameter " + n);
    cfg_.head_variant = v;
}

void SailModel::check_image(const Tensor& image) const {
    if (image.ndim() != 4 || image.dim(1) != 1 || image.dim(2) != cfg_.input_h ||
        image.dim(3) != cfg_.input_w)
        throw ShapeError("model: expected image [B,1," + std::to_string(cfg_.input_h) + "," +
                         std::to_string(cfg_.input_w) + "], got " + shape_str(image.shape()));
}

void SailModel::begin_forward() {
    registry_.clear();
    ++pass_counter_;
}

void SailModel::register_feature(const std::string& id, const Tensor& t) {
    registry_[id] = t;
}

Tensor SailModel::conv_block(const Tensor& x, const std::string& prefix) {
    Tensor h = relu(conv2d(x, params_.at(prefix + ".conv1.weight"),
                           params_.at(prefix + ".conv1.bias"), 1, 1));
    return relu(conv2d(h, params_.at(prefix + ".conv2.weight"),
                       params_.at(prefix + ".conv2.bias"), 1, 1));
}

std::vector<Tensor> SailModel::encode(const Tensor& image) {
    check_image(image);
    begin_forward();
    std::vector<Tensor> feats;
    feats.reserve(cfg_.enc_blocks + 1);
    Tensor e = conv_block(image, "enc.stem");
    feats.push_back(e);
    for (int i = 0; i < cfg_.enc_blocks; ++i) {
        e = conv_block(max_pool2d(e, 2, 2), "enc." + std::to_string(i));
        feats.push_back(e);
        register_feature("enc." + std::to_string(i), e);
    }
    return feats;
}

Tensor SailModel::decode(const std::vector<Tensor>& enc_feats) {
    if (static_cast<int>(enc_feats.size()) != cfg_.enc_blocks + 1)
        throw Error("decode: expected " + std::to_string(cfg_.enc_blocks + 1) +
                    " encoder features, got " + std::to_string(enc_feats.size()));
    Tensor d = conv_block(enc_feats.back(), "dec.0");
    register_feature("dec.0", d);
    for (int j = 1; j <= cfg_.dec_blocks; ++j) {
        const Tensor& skip = enc_feats[static_cast<size_t>(cfg_.enc_blocks - j)];
        Tensor up = bilinear_upsample(d, skip.dim(2), skip.dim(3));
        d = conv_block(concat_channels(up, skip), "dec." + std::to_string(j));
        register_feature("dec." + std::to_string(j), d);
    }
    return d;
}

Tensor SailModel::segment_forward(const Tensor& image) {
    Tensor d = decode(encode(image));
    Tensor logits = conv2d(d, params_.at("seg.conv.weight"), params_.at("seg.conv.bias"), 1, 0);
    return softmax_channels(logits);
}

Tensor SailModel::fuse(const Tensor& enc_deep, const Tensor& dec_final) {
    const int fh = cfg_.fusion_h, fw = cfg_.fusion_w;
    auto project = [&](const Tensor& x, const std::string& name) {
        return conv2d(x, params_.at(name + ".weight"), params_.at(name + ".bias"), 1, 0);
    };
    Tensor out;
    switch (cfg_.head_variant) {
        case HeadVariant::enc_only:
            out = project(bilinear_upsample(enc_deep, fh, fw), "fusion.proj_enc");
            break;
        case HeadVariant::dec_only:
            out = project(adaptive_avg_pool(dec_final, fh, fw), "fusion.proj_dec");
            break;
        default: {
            Tensor e_hat = project(bilinear_upsample(enc_deep, fh, fw), "fusion.proj_enc");
            Tensor d_hat = project(adaptive_avg_pool(dec_final, fh, fw), "fusion.proj_dec");
            if (cfg_.head_variant == HeadVariant::gated) {
                Tensor alpha = alpha_override_
                                   ? Tensor::scalar(*alpha_override_)
                                   : sigmoid(params_.at("fusion.gate_w"));
                out = lerp(e_hat, d_hat, alpha);
            } else if (cfg_.head_variant == HeadVariant::merge) {
                out = project(concat_channels(e_hat, d_hat), "fusion.merge");
            } else if (cfg_.head_variant == HeadVariant::multiply) {
                out = mul(e_hat, d_hat);
            } else {  // ch_multiply
                out = channel_scale(e_hat, sigmoid(global_avg_pool(d_hat)));
            }
            break;
        }
    }
    register_feature("fusion", out);
    return out;
}

SailModel::ClassifyOut SailModel::classify_forward(const Tensor& image) {
    std::vector<Tensor> feats = encode(image);
    Tensor d = decode(feats);
    Tensor f = fuse(feats.back(), d);
    Tensor cls = conv2d(f, params_.at("head.conv.weight"), params_.at("head.conv.bias"), 1, 0);
    Tensor logits = global_avg_pool(cls);
    return {logits, softmax(logits)};
}

Tensor SailModel::get_feature(const std::string& layer_id) const {
    auto it = registry_.find(layer_id);
    if (it == registry_.end()) {
        std::string valid;
        for (const auto& id : feature_ids()) valid += (valid.empty() ? "" : ", ") + id;
        throw LookupError("unknown or stale layer id '" + layer_id + "' (valid: " + valid + ")");
    }
    return it->second;
}

std::vector<std::string> SailModel::feature_ids() const {
    std::vector<std::string> ids;
    for (int i = 0; i < cfg_.enc_blocks; ++i) ids.push_back("enc." + std::to_string(i));
    for (int j = 0; j <= cfg_.dec_blocks; ++j) ids.push_back("dec." + std::to_string(j));
    ids.push_back("fusion");
    return ids;
}

std::optional<double> SailModel::gate_alpha() const {
    if (cfg_.head_variant != HeadVariant::gated) return std::nullopt;
    double w = params_.at("fusion.gate_w").data()[0];
    if (w >= 0.0) return 1.0 / (1.0 + std::exp(-w));
    double e = std::exp(w);
    return e / (1.0 + e);
}

}  // namespace sail

#include <doctest.h>

#include "oracles.hpp"
#include "sail/model.hpp"

using namespace sail;

namespace {

ModelConfig tiny_config(HeadVariant v = HeadVariant::gated) {
    ModelConfig cfg;
    cfg.input_h = cfg.input_w = 16;
    cfg.base_channels = 4;
    cfg.enc_blocks = cfg.dec_blocks = 2;
    cfg.num_seg_classes = 5;
    cfg.num_cls_classes = 2;
    cfg.fusion_h = cfg.fusion_w = 4;
    cfg.head_variant = v;
    return cfg;
}

Tensor tiny_image(uint64_t seed = 11, int b = 1) {
    Rng rng(seed);
    return oracle::rand_tensor({b, 1, 16, 16}, rng, 0.0, 1.0);
}

}  // namespace

TEST_CASE("model config validation and fusion defaults") {
    ModelConfig cfg;  // 32x32 defaults
    cfg.validate_and_fill();
    CHECK(cfg.fusion_h == 4);
    CHECK(cfg.fusion_w == 4);
    CHECK(ModelConfig::scaled_fusion_extent(224) == 32);
    CHECK(ModelConfig::scaled_fusion_extent(448) == 32);
    CHECK(ModelConfig::scaled_fusion_extent(112) == 16);
    CHECK(ModelConfig::scaled_fusion_extent(32) == 4);

    ModelConfig bad = tiny_config();
    bad.dec_blocks = 3;
    CHECK_THROWS_AS(bad.validate_and_fill(), ConfigError);

    bad = tiny_config();
    bad.input_h = 20;  // not divisible by 2^2... it is; use odd split
    bad.input_w = 18;
    CHECK_THROWS_AS(bad.validate_and_fill(), ConfigError);

    bad = tiny_config();
    bad.fusion_h = 2;  // smaller than the 4x4 deepest feature
    CHECK_THROWS_AS(bad.validate_and_fill(), ConfigError);

    bad = tiny_config();
    bad.fusion_w = 32;  // larger than the input
    CHECK_THROWS_AS(bad.validate_and_fill(), ConfigError);

    CHECK(head_variant_from_string("ch_multiply") == HeadVariant::ch_multiply);
    CHECK(head_variant_to_string(HeadVariant::merge) == "merge");
    CHECK_THROWS_AS(head_variant_from_string("bogus"), ConfigError);
}

TEST_CASE("forward shapes and probability normalization") {
    SailModel model(tiny_config(), 42);
    Tensor img = tiny_image(1, 2);

    Tensor seg = model.segment_forward(img);
    CHECK(seg.shape() == Shape{2, 5, 16, 16});
    for (int b = 0; b < 2; ++b)
        for (int p = 0; p < 16 * 16; ++p) {
            double sum = 0.0;
            for (int c = 0; c < 5; ++c) sum += seg.data()[(b * 5 + c) * 256 + p];
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        }

    auto out = model.classify_forward(img);
    CHECK(out.logits.shape() == Shape{2, 2});
    CHECK(out.probs.shape() == Shape{2, 2});
    for (int b = 0; b < 2; ++b)
        CHECK(out.probs.data()[b * 2] + out.probs.data()[b * 2 + 1] ==
              doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS(model.segment_forward(Tensor::zeros({1, 1, 8, 16})), ShapeError);
    CHECK_THROWS_AS(model.classify_forward(Tensor::zeros({1, 2, 16, 16})), ShapeError);
}

TEST_CASE("feature registry ids, shapes, and staleness") {
    SailModel model(tiny_config(), 42);
    CHECK(model.feature_ids() ==
          std::vector<std::string>{"enc.0", "enc.1", "dec.0", "dec.1", "dec.2", "fusion"});
    CHECK_THROWS_AS(model.get_feature("enc.0"), LookupError);  // no forward yet

    model.classify_forward(tiny_image());
    CHECK(model.get_feature("enc.0").shape() == Shape{1, 8, 8, 8});
    CHECK(model.get_feature("enc.1").shape() == Shape{1, 16, 4, 4});
    CHECK(model.get_feature("dec.0").shape() == Shape{1, 16, 4, 4});
    CHECK(model.get_feature("dec.1").shape() == Shape{1, 8, 8, 8});
    CHECK(model.get_feature("dec.2").shape() == Shape{1, 4, 16, 16});
    CHECK(model.get_feature("fusion").shape() == Shape{1, 8, 4, 4});
    CHECK_THROWS_AS(model.get_feature("enc.7"), LookupError);

    uint64_t passes = model.forward_pass_count();
    model.segment_forward(tiny_image());  // registry rebuilt without "fusion"
    CHECK(model.forward_pass_count() == passes + 1);
    CHECK_THROWS_AS(model.get_feature("fusion"), LookupError);

    SailModel big(ModelConfig{}, 0);
    big.classify_forward(Tensor::zeros({1, 1, 32, 32}));
    CHECK(big.get_feature("enc.0").shape() == Shape{1, 16, 16, 16});  // input/2
    CHECK(big.get_feature("fusion").shape() == Shape{1, 8, 4, 4});
}

TEST_CASE("initialization is deterministic and shared across variants") {
    SailModel a(tiny_config(), 7);
    SailModel b(tiny_config(), 7);
    SailModel c(tiny_config(), 8);
    bool all_equal = true, any_diff_seed = false;
    for (const auto& name : a.param_names()) {
        if (a.param(name).vec() != b.param(name).vec()) all_equal = false;
        if (a.param(name).vec() != c.param(name).vec()) any_diff_seed = true;
    }
    CHECK(all_equal);
    CHECK(any_diff_seed);

    // per-name parameter streams: the backbone does not depend on which
    // fusion parameters exist
    SailModel enc_only(tiny_config(HeadVariant::enc_only), 7);
    for (const auto& name : enc_only.param_names()) {
        CAPTURE(name);
        CHECK(a.has_param(name));
        CHECK(a.param(name).vec() == enc_only.param(name).vec());
    }
    CHECK(a.has_param("fusion.gate_w"));
    CHECK(a.param("fusion.gate_w").data()[0] == 0.0);  // alpha starts at 0.5
    CHECK(a.gate_alpha() == doctest::Approx(0.5));
    CHECK(!enc_only.has_param("fusion.proj_dec.weight"));
    CHECK(!enc_only.gate_alpha().has_value());

    SailModel merge(tiny_config(HeadVariant::merge), 7);
    CHECK(merge.has_param("fusion.merge.weight"));
    CHECK(merge.param("fusion.merge.weight").shape() == Shape{8, 16, 1, 1});
}

TEST_CASE("gated fusion decomposes exactly at alpha overrides") {
    Tensor img = tiny_image(3);
    SailModel gated(tiny_config(), 7);

    gated.set_alpha_override(1.0);  // pure encoder branch
    Tensor p1 = gated.classify_forward(img).probs;
    SailModel enc_only = gated.clone();
    enc_only.set_head_variant(HeadVariant::enc_only);
    Tensor pe = enc_only.classify_forward(img).probs;
    CHECK(p1.vec() == pe.vec());

    gated.set_alpha_override(0.0);  // pure decoder branch
    Tensor p0 = gated.classify_forward(img).probs;
    SailModel dec_only = gated.clone();
    dec_only.set_head_variant(HeadVariant::dec_only);
    Tensor pd = dec_only.classify_forward(img).probs;
    CHECK(p0.vec() == pd.vec());

    gated.set_alpha_override(std::nullopt);
    CHECK(p0.vec() != gated.classify_forward(img).probs.vec());

    // equal branches pass through the convex combination unchanged
    SailModel twin(tiny_config(), 7);
    Tensor pd_w = twin.param("fusion.proj_dec.weight"), pe_w = twin.param("fusion.proj_enc.weight");
    // force identical branch outputs by projecting everything to zero
    for (auto& v : pd_w.vec()) v = 0.0;
    for (auto& v : pe_w.vec()) v = 0.0;
    Tensor pd_b = twin.param("fusion.proj_dec.bias"), pe_b = twin.param("fusion.proj_enc.bias");
    pe_b.vec() = pd_b.vec();
    twin.classify_forward(img);
    Tensor fused = twin.get_feature("fusion");
    for (int c = 0; c < 8; ++c)
        for (int p = 0; p < 16; ++p)
            CHECK(fused.data()[c * 16 + p] == doctest::Approx(pd_b.data()[c]).epsilon(1e-15));
}

TEST_CASE("head variant switch requires existing parameters") {
    SailModel enc_only(tiny_config(HeadVariant::enc_only), 7);
    CHECK_THROWS_AS(enc_only.set_head_variant(HeadVariant::gated), ConfigError);
    CHECK_THROWS_AS(enc_only.set_head_variant(HeadVariant::dec_only), ConfigError);

    SailModel gated(tiny_config(), 7);
    gated.set_head_variant(HeadVariant::multiply);  // uses both projections
    CHECK(gated.classify_forward(tiny_image()).probs.all_finite());
}

TEST_CASE("zeroed decoder produces zero output and enc_only ignores it") {
    SailModel model(tiny_config(), 9);
    for (const auto& name : model.param_names())
        if (name.rfind("dec.", 0) == 0)
            for (auto& v : model.param(name).vec()) v = 0.0;
    Tensor img = tiny_image(5);
    model.segment_forward(img);
    Tensor d = model.get_feature("dec.2");
    for (double v : d.vec()) CHECK(v == 0.0);

    SailModel eo(tiny_config(HeadVariant::enc_only), 9);
    Tensor before = eo.classify_forward(img).logits;
    for (const auto& name : eo.param_names())
        if (name.rfind("dec.", 0) == 0)
            for (auto& v : eo.param(name).vec()) v = 0.0;
    Tensor after = eo.classify_forward(img).logits;
    CHECK(before.vec() == after.vec());
}

TEST_CASE("clone is a deep copy") {
    SailModel model(tiny_config(), 13);
    Tensor img = tiny_image(6);
    Tensor base = model.classify_forward(img).probs;

    SailModel copy = model.clone();
    CHECK(copy.param_count() == model.param_count());
    CHECK(copy.classify_forward(img).probs.vec() == base.vec());
    CHECK(!copy.param("head.conv.weight").same_storage(model.param("head.conv.weight")));

    for (auto& v : model.param("head.conv.weight").vec()) v += 1.0;
    CHECK(copy.classify_forward(img).probs.vec() == base.vec());
    CHECK(model.classify_forward(img).probs.vec() != base.vec());
}

TEST_CASE("segmentation and classification paths are parameter-disjoint heads") {
    SailModel model(tiny_config(), 21);
    Tensor img = tiny_image(8);
    Tensor seg = model.segment_forward(img);

    // classification-head edits leave segmentation untouched
    for (auto& v : model.param("head.conv.weight").vec()) v += 0.5;
    for (auto& v : model.param("fusion.proj_enc.weight").vec()) v += 0.5;
    CHECK(model.segment_forward(img).vec() == seg.vec());

    // seg-head edits leave classification untouched
    Tensor cls = model.classify_forward(img).logits;
    for (auto& v : model.param("seg.conv.weight").vec()) v += 0.5;
    CHECK(model.classify_forward(img).logits.vec() == cls.vec());
}

#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "sail/attribution.hpp"
#include "sail/ops.hpp"
#include "sail/synth.hpp"

using namespace sail;

namespace {

ModelConfig small_config(HeadVariant v = HeadVariant::gated) {
    ModelConfig cfg;
    cfg.input_h = 32;
    cfg.input_w = 32;
    cfg.base_channels = 4;
    cfg.enc_blocks = 2;
    cfg.dec_blocks = 2;
    cfg.num_seg_classes = 9;
    cfg.num_cls_classes = 2;
    cfg.fusion_h = 8;
    cfg.fusion_w = 8;
    cfg.head_variant = v;
    return cfg;
}

Tensor scene_image() {
    SynthConfig scfg;
    return generate_scene(3, scfg, 1).to_tensor();
}

struct FeatCapture {
    Shape shape;
    std::vector<double> act, grad;
};

// Same extraction compute_cam performs, via the public API only.
FeatCapture capture(SailModel& model, const Tensor& image, int k, const std::string& id) {
    FeatCapture fc;
    {
        Tape tape;
        auto out = model.classify_forward(image);
        backward(pick(out.logits, k));
        Tensor f = model.get_feature(id);
        fc.shape = f.shape();
        fc.act = f.vec();
        fc.grad = f.has_grad() ? f.grad_vec() : std::vector<double>(fc.act.size(), 0.0);
    }
    model.zero_grad();
    return fc;
}

// Upsample a raw feature-plane map to model input size and max-normalize.
std::vector<double> finish_map(std::vector<double> raw, int fh, int fw, int H, int W) {
    Tensor up = bilinear_upsample(Tensor::from_data({1, 1, fh, fw}, std::move(raw)), H, W);
    std::vector<double> v = up.vec();
    double mx = *std::max_element(v.begin(), v.end());
    if (mx > 0.0)
        for (double& x : v) x /= mx;
    return v;
}

void check_close(const std::vector<double>& a, const std::vector<double>& b, double tol) {
    REQUIRE(a.size() == b.size());
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    CHECK(worst <= tol);
}

}  // namespace

TEST_CASE("cam method names round-trip") {
    for (CamMethod m : {CamMethod::gradcam, CamMethod::gradcampp, CamMethod::hirescam})
        CHECK(cam_method_from_string(cam_method_to_string(m)) == m);
    CHECK(cam_method_to_string(CamMethod::gradcampp) == "gradcampp");
    CHECK_THROWS_AS(cam_method_from_string("grad-cam"), ConfigError);
    CHECK_THROWS_AS(cam_method_from_string(""), ConfigError);
}

TEST_CASE("normalize_map") {
    std::vector<double> v{0.0, 2.0, 4.0};
    CHECK(!normalize_map(v));
    CHECK(v == std::vector<double>{0.0, 0.5, 1.0});
    CHECK(!normalize_map(v));  // idempotent once max is 1
    CHECK(v == std::vector<double>{0.0, 0.5, 1.0});

    std::vector<double> zeros(5, 0.0);
    CHECK(normalize_map(zeros));
    CHECK(zeros == std::vector<double>(5, 0.0));

    std::vector<double> one{3.0};
    CHECK(!normalize_map(one));
    CHECK(one[0] == 1.0);
}

TEST_CASE("gradcam at the fusion layer matches the chain rule done by hand") {
    SailModel model(small_config(), 17);
    Tensor img = scene_image();
    const int k = 1;

    AttributionMap got = grad_cam(model, img, k, "fusion");

    // d z_k / d fusion[c,p] = W_head[k,c] / plane: a 1x1 conv feeding global
    // average pooling spreads the class weight uniformly over the plane.
    FeatCapture fc = capture(model, img, k, "fusion");
    Tensor W = model.param("head.conv.weight");
    const int C = fc.shape[1], fh = fc.shape[2], fw = fc.shape[3];
    const double plane = static_cast<double>(fh) * fw;
    REQUIRE(W.shape() == Shape{2, C, 1, 1});

    // the backward gradient itself must equal the analytic value
    for (int c = 0; c < C; ++c) {
        double expected_g = W.data()[k * C + c] / plane;
        for (int p = 0; p < fh * fw; ++p)
            CHECK(std::abs(fc.grad[static_cast<size_t>(c * fh * fw + p)] - expected_g) <= 1e-12);
    }

    // gradcam weights are the per-channel gradient means = W[k,c]/plane
    std::vector<double> raw(static_cast<size_t>(fh) * fw, 0.0);
    for (int c = 0; c < C; ++c)
        for (int p = 0; p < fh * fw; ++p)
            raw[static_cast<size_t>(p)] +=
                W.data()[k * C + c] / plane * fc.act[static_cast<size_t>(c * fh * fw + p)];
    for (double& v : raw) v = std::max(v, 0.0);

    std::vector<double> expected = finish_map(raw, fh, fw, 32, 32);
    CHECK(!got.zero_map);
    check_close(got.values, expected, 1e-12);
    CHECK(got.target_class == k);
    CHECK(got.layer_id == "fusion");
    CHECK(got.height == 32);
    CHECK(got.width == 32);
}

TEST_CASE("hirescam equals gradcam where the gradient is spatially constant") {
    // after fusion the only ops are a 1x1 conv and global pooling, so the
    // class gradient is constant over the plane and the two weightings agree
    for (HeadVariant v : {HeadVariant::gated, HeadVariant::merge, HeadVariant::enc_only}) {
        SailModel model(small_config(v), 23);
        Tensor img = scene_image();
        for (int k : {0, 1}) {
            AttributionMap a = grad_cam(model, img, k, "fusion");
            AttributionMap b = hirescam(model, img, k, "fusion");
            CHECK(a.zero_map == b.zero_map);
            check_close(a.values, b.values, 1e-10);
        }
    }
}

TEST_CASE("all three methods reproduce a public-api recomputation at a conv layer") {
    SailModel model(small_config(), 29);
    Tensor img = scene_image();
    const int k = 0;
    const std::string id = "dec.1";  // gradients vary spatially here

    FeatCapture fc = capture(model, img, k, id);
    const int C = fc.shape[1], fh = fc.shape[2], fw = fc.shape[3];
    const int64_t plane = static_cast<int64_t>(fh) * fw;

    // the layer sits on the gradient path, so the test exercises real values
    double gnorm = 0.0;
    for (double g : fc.grad) gnorm += std::abs(g);
    REQUIRE(gnorm > 0.0);

    for (CamMethod method :
         {CamMethod::gradcam, CamMethod::gradcampp, CamMethod::hirescam}) {
        std::vector<double> raw(static_cast<size_t>(plane), 0.0);
        for (int c = 0; c < C; ++c) {
            const double* a = fc.act.data() + c * plane;
            const double* g = fc.grad.data() + c * plane;
            if (method == CamMethod::hirescam) {
                for (int64_t p = 0; p < plane; ++p) raw[static_cast<size_t>(p)] += g[p] * a[p];
            } else {
                double w = 0.0;
                if (method == CamMethod::gradcam) {
                    for (int64_t p = 0; p < plane; ++p) w += g[p];
                    w /= static_cast<double>(plane);
                } else {
                    double act_sum = 0.0;
                    for (int64_t p = 0; p < plane; ++p) act_sum += a[p];
                    for (int64_t p = 0; p < plane; ++p) {
                        double g2 = g[p] * g[p];
                        w += g2 / (2.0 * g2 + act_sum * g2 * g[p] + 1e-12) *
                             std::max(g[p], 0.0);
                    }
                }
                for (int64_t p = 0; p < plane; ++p) raw[static_cast<size_t>(p)] += w * a[p];
            }
        }
        for (double& v : raw) v = std::max(v, 0.0);
        std::vector<double> expected = finish_map(raw, fh, fw, 32, 32);

        AttributionMap got = compute_cam(model, img, k, id, method);
        check_close(got.values, expected, 1e-12);
    }
}

TEST_CASE("gradcam and hirescam ignore positive rescaling of the class row") {
    SailModel base(small_config(), 31);
    Tensor img = scene_image();
    const int k = 1;

    SailModel scaled = base.clone();
    {
        Tensor W = scaled.param("head.conv.weight");
        Tensor b = scaled.param("head.conv.bias");
        const int C = W.shape()[1];
        for (int c = 0; c < C; ++c) W.data()[k * C + c] *= 3.0;
        b.data()[k] *= 3.0;
    }

    for (const std::string& id : {std::string("fusion"), std::string("enc.0")}) {
        for (CamMethod m : {CamMethod::gradcam, CamMethod::hirescam}) {
            AttributionMap a = compute_cam(base, img, k, id, m);
            AttributionMap b = compute_cam(scaled, img, k, id, m);
            CHECK(a.zero_map == b.zero_map);
            check_close(a.values, b.values, 1e-12);
        }
    }
}

TEST_CASE("gradcampp drops channels whose gradients are all negative") {
    SailModel model(small_config(), 37);
    Tensor img = scene_image();
    const int k = 1;
    {
        Tensor W = model.param("head.conv.weight");
        const int C = W.shape()[1];
        for (int c = 0; c < C; ++c)
            W.data()[k * C + c] = -std::abs(W.data()[k * C + c]) - 0.01;
    }
    // at fusion every gradient equals W[k,c]/plane < 0, so alpha*relu(g) = 0
    AttributionMap pp = grad_cam_pp(model, img, k, "fusion");
    CHECK(pp.zero_map);
    for (double v : pp.values) CHECK(v == 0.0);
}

TEST_CASE("layers off the classification path yield flagged zero maps") {
    SailModel model(small_config(HeadVariant::enc_only), 41);
    Tensor img = scene_image();
    for (const std::string& id : {std::string("dec.0"), std::string("dec.1"),
                                  std::string("dec.2")}) {
        for (CamMethod m : {CamMethod::gradcam, CamMethod::gradcampp, CamMethod::hirescam}) {
            AttributionMap map = compute_cam(model, img, 1, id, m);
            CHECK(map.zero_map);
            for (double v : map.values) CHECK(v == 0.0);
        }
    }
    // the encoder path still carries signal
    AttributionMap enc = grad_cam(model, img, 1, "fusion");
    CHECK(!enc.zero_map);
}

TEST_CASE("compute_cam leaves the model in its prior state") {
    SailModel model(small_config(), 43);
    Tensor img = scene_image();

    std::vector<std::pair<std::string, std::vector<double>>> before;
    for (const auto& [name, t] : model.parameters()) before.emplace_back(name, t.vec());
    Tensor probs0 = model.classify_forward(img).probs;
    std::vector<double> p0 = probs0.vec();

    for (CamMethod m : {CamMethod::gradcam, CamMethod::gradcampp, CamMethod::hirescam})
        compute_cam(model, img, 0, "dec.2", m);

    for (const auto& [name, vals] : before) {
        Tensor t = model.param(name);
        CHECK(t.vec() == vals);
        if (t.has_grad())
            for (double g : t.grad_vec()) CHECK(g == 0.0);
    }
    CHECK(model.classify_forward(img).probs.vec() == p0);
}

TEST_CASE("every registered layer produces a well-formed map") {
    SailModel model(small_config(), 47);
    Tensor img = scene_image();
    for (const auto& id : model.feature_ids()) {
        for (CamMethod m : {CamMethod::gradcam, CamMethod::gradcampp, CamMethod::hirescam}) {
            AttributionMap map = compute_cam(model, img, 1, id, m);
            REQUIRE(map.values.size() == 32u * 32u);
            double mx = 0.0;
            for (double v : map.values) {
                CHECK(std::isfinite(v));
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
                mx = std::max(mx, v);
            }
            CHECK(map.zero_map == (mx == 0.0));
            if (!map.zero_map) CHECK(mx == 1.0);
        }
    }
}

TEST_CASE("compute_cam argument validation") {
    SailModel model(small_config(), 53);
    Tensor img = scene_image();

    Tensor batch2 = Tensor::zeros({2, 1, 32, 32});
    CHECK_THROWS_AS(grad_cam(model, batch2, 0, "fusion"), ShapeError);
    CHECK_THROWS_AS(grad_cam(model, img, 2, "fusion"), Error);
    CHECK_THROWS_AS(grad_cam(model, img, -1, "fusion"), Error);
    CHECK_THROWS_AS(grad_cam(model, img, 0, "enc.9"), LookupError);
    CHECK_THROWS_WITH_AS(grad_cam(model, img, 0, "bogus"),
                         doctest::Contains("fusion"), LookupError);
}

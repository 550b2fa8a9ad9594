#include "sail/attribution.hpp"

#include <algorithm>
#include <cmath>

namespace sail {

CamMethod cam_method_from_string(const std::string& s) {
    if (s == "gradcam") return CamMethod::gradcam;
    if (s == "gradcampp") return CamMethod::gradcampp;
    if (s == "hirescam") return CamMethod::hirescam;
    throw ConfigError("unknown CAM method '" + s + "'");
}

std::string cam_method_to_string(CamMethod m) {
    switch (m) {
        case CamMethod::gradcam: return "gradcam";
        case CamMethod::gradcampp: return "gradcampp";
        case CamMethod::hirescam: return "hirescam";
    }
    throw Error("bad CamMethod");
}

bool normalize_map(std::vector<double>& values) {
    double mx = 0.0;
    for (double v : values) mx = std::max(mx, v);
    if (mx <= 0.0) return true;
    for (double& v : values) v /= mx;
    return false;
}

namespace {

// Raw CAM on one sample's feature [C,Fh,Fw]; all math off-tape.
std::vector<double> cam_raw(const std::vector<double>& act, const std::vector<double>& grad,
                            int C, int Fh, int Fw, CamMethod method) {
    const int64_t plane = static_cast<int64_t>(Fh) * Fw;
    std::vector<double> raw(static_cast<size_t>(plane), 0.0);
    if (method == CamMethod::hirescam) {
        for (int c = 0; c < C; ++c) {
            const double* a = act.data() + c * plane;
            const double* g = grad.data() + c * plane;
            for (int64_t p = 0; p < plane; ++p) raw[static_cast<size_t>(p)] += g[p] * a[p];
        }
    } else {
        for (int c = 0; c < C; ++c) {
            const double* a = act.data() + c * plane;
            const double* g = grad.data() + c * plane;
            double w = 0.0;
            if (method == CamMethod::gradcam) {
                for (int64_t p = 0; p < plane; ++p) w += g[p];
                w /= static_cast<double>(plane);
            } else {  // gradcampp: exp-form closed-form alpha weights
                double act_sum = 0.0;
                for (int64_t p = 0; p < plane; ++p) act_sum += a[p];
                for (int64_t p = 0; p < plane; ++p) {
                    double g2 = g[p] * g[p];
                    double alpha = g2 / (2.0 * g2 + act_sum * g2 * g[p] + 1e-12);
                    w += alpha * std::max(g[p], 0.0);
                }
            }
            for (int64_t p = 0; p < plane; ++p) raw[static_cast<size_t>(p)] += w * a[p];
        }
    }
    for (double& v : raw) v = std::max(v, 0.0);
    return raw;
}

}  // namespace

AttributionMap compute_cam(SailModel& model, const Tensor& image, int class_k,
                           const std::string& layer_id, CamMethod method) {
    const ModelConfig& cfg = model.config();
    if (image.ndim() != 4 || image.shape()[0] != 1)
        throw ShapeError("compute_cam: expected a single [1,1,H,W] image, got " +
                         shape_str(image.shape()));
    if (class_k < 0 || class_k >= cfg.num_cls_classes)
        throw Error("compute_cam: class " + std::to_string(class_k) + " out of range");

    std::vector<double> act, grad;
    Shape fshape;
    {
        Tape tape;
        auto out = model.classify_forward(image);
        Tensor score = pick(out.logits, class_k);
        backward(score);
        Tensor feat = model.get_feature(layer_id);
        fshape = feat.shape();
        act = feat.vec();
        if (feat.has_grad())
            grad = feat.grad_vec();
        else
            grad.assign(act.size(), 0.0);  // feature off the gradient path
    }
    model.zero_grad();

    std::vector<double> raw =
        cam_raw(act, grad, fshape[1], fshape[2], fshape[3], method);

    Tensor small = Tensor::from_data({1, 1, fshape[2], fshape[3]}, raw);
    Tensor up = bilinear_upsample(small, cfg.input_h, cfg.input_w);

    AttributionMap map;
    map.height = cfg.input_h;
    map.width = cfg.input_w;
    map.values = up.vec();
    map.target_class = class_k;
    map.method = method;
    map.layer_id = layer_id;
    map.zero_map = normalize_map(map.values);
    return map;
}

AttributionMap grad_cam(SailModel& model, const Tensor& image, int class_k,
                        const std::string& layer_id) {
    return compute_cam(model, image, class_k, layer_id, CamMethod::gradcam);
}

AttributionMap grad_cam_pp(SailModel& model, const Tensor& image, int class_k,
                           const std::string& layer_id) {
    return compute_cam(model, image, class_k, layer_id, CamMethod::gradcampp);
}

AttributionMap hirescam(SailModel& model, const Tensor& image, int class_k,
                        const std::string& layer_id) {
    return compute_cam(model, image, class_k, layer_id, CamMethod::hirescam);
}

}  // namespace sail

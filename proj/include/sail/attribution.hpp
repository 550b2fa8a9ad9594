#pragma once

#include <string>
#include <vector>

#include "sail/model.hpp"

namespace sail {

enum class CamMethod { gradcam, gradcampp, hirescam };

CamMethod cam_method_from_string(const std::string& s);
std::string cam_method_to_string(CamMethod m);

struct AttributionMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;  // max-normalized to [0,1]; all zero iff zero_map
    int target_class = 0;
    CamMethod method = CamMethod::gradcam;
    std::string layer_id;
    bool zero_map = false;

    double at(int r, int c) const { return values[static_cast<size_t>(r) * width + c]; }
};

// Divides by the max when positive; returns true (zero-map flag) when the map
// is identically zero (values left untouched).
bool normalize_map(std::vector<double>& values);

// Forward + backward of the pre-softmax logit z_k under a private tape, CAM
// weighting at the registered layer, bilinear upsample to input size,
// max-normalize. The model's parameters are left unchanged (grads zeroed).
AttributionMap compute_cam(SailModel& model, const Tensor& image, int class_k,
                           const std::string& layer_id, CamMethod method);

// Convenience wrappers matching the three method names.
AttributionMap grad_cam(SailModel& model, const Tensor& image, int class_k,
                        const std::string& layer_id);
AttributionMap grad_cam_pp(SailModel& model, const Tensor& image, int class_k,
                           const std::string& layer_id);
AttributionMap hirescam(SailModel& model, const Tensor& image, int class_k,
                        const std::string& layer_id);

}  // namespace sail

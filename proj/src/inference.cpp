#include "mseg/inference.hpp"

#include <cstring>
#include <stdexcept>

namespace mseg {

namespace {

const Image2D& sample_input(const SliceSample& s, const std::string& name) {
    for (const auto& [n, img] : s.inputs) {
        if (n == name) return img;
    }
    throw std::invalid_argument("predict: case '" + s.case_id + "' lacks input '" + name + "'");
}

}  // namespace

std::vector<std::pair<SlicePlane, Volume3D>> predict_probability_volumes(
    const Model& model, const MultiModalCase& mcase, int batch_size) {
    validate_case(mcase);
    if (batch_size < 1) throw std::invalid_argument("predict: batch_size must be >= 1");
    if (mcase.modalities.empty()) throw std::invalid_argument("predict: case has no modalities");
    const int S = model.config.input_size;
    const auto names = model.config.input_names();
    const Volume3D& geom = mcase.modalities[0].second;

    std::vector<std::pair<SlicePlane, Volume3D>> out;
    for (SlicePlane plane : {SlicePlane::Axial, SlicePlane::Coronal, SlicePlane::Sagittal}) {
        const auto samples = extract_slices(mcase, plane, S);
        std::vector<std::pair<int, Image2D>> preds;
        preds.reserve(samples.size());
        for (size_t start = 0; start < samples.size(); start += size_t(batch_size)) {
            const size_t count = std::min(size_t(batch_size), samples.size() - start);
            std::vector<std::pair<std::string, TensorPtr>> inputs;
            inputs.reserve(names.size());
            for (const auto& name : names) {
                auto x = Tensor::zeros({int(count), 1, S, S});
                for (size_t b = 0; b < count; ++b) {
                    const Image2D& img = sample_input(samples[start + b], name);
                    std::memcpy(x->data.data() + b * size_t(S) * S, img.v.data(),
                                sizeof(float) * size_t(S) * S);
                }
                inputs.emplace_back(name, std::move(x));
            }
            const TensorPtr prob =
                model_forward(model, static_cast<Tape*>(nullptr), inputs, /*train=*/false);
            for (size_t b = 0; b < count; ++b) {
                Image2D img = Image2D::zeros(S, S);
                // Lesion channel of [B, 2, S, S].
                std::memcpy(img.v.data(), prob->data.data() + (b * 2 + 1) * size_t(S) * S,
                            sizeof(float) * size_t(S) * S);
                preds.emplace_back(samples[start + b].index, std::move(img));
            }
        }
        out.emplace_back(plane, assemble_plane_volume(preds, plane, geom.dims, geom.spacing, S));
    }
    return out;
}

Volume3D predict_case(const Model& model, const MultiModalCase& mcase, FusionMethod method,
                      float tau, int batch_size) {
    return mpr_reconstruct(predict_probability_volumes(model, mcase, batch_size), method, tau);
}

}  // namespace mseg

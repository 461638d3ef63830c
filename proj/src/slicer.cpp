#include "mseg/slicer.hpp"

#include <algorithm>
#include <stdexcept>

namespace mseg {

const char* plane_name(SlicePlane p) {
    switch (p) {
        case SlicePlane::Axial: return "axial";
        case SlicePlane::Coronal: return "coronal";
        default: return "sagittal";
    }
}

int plane_axis(SlicePlane p) {
    switch (p) {
        case SlicePlane::Axial: return 2;
        case SlicePlane::Coronal: return 1;
        default: return 0;
    }
}

std::array<int, 2> plane_slice_dims(SlicePlane p, const std::array<int, 3>& dims) {
    switch (p) {
        case SlicePlane::Axial: return {dims[0], dims[1]};
        case SlicePlane::Coronal: return {dims[0], dims[2]};
        default: return {dims[1], dims[2]};
    }
}

std::array<int, 3> plane_voxel(SlicePlane p, int index, int row, int col) {
    switch (p) {
        case SlicePlane::Axial: return {row, col, index};
        case SlicePlane::Coronal: return {row, index, col};
        default: return {index, row, col};
    }
}

bool SliceSample::target_has_lesion() const {
    if (!target) return false;
    for (float t : target->v)
        if (t != 0.0f) return true;
    return false;
}

int pad_size(const std::array<int, 3>& dims) {
    return std::max({dims[0], dims[1], dims[2]});
}

std::vector<SliceSample> extract_slices(const MultiModalCase& mcase, SlicePlane plane, int S) {
    validate_case(mcase);
    const auto& dims = mcase.modalities.front().second.dims;
    const auto [rows, cols] = plane_slice_dims(plane, dims);
    if (S < rows || S < cols)
        throw std::invalid_argument("pad size smaller than slice dimensions");
    const int row_off = (S - rows) / 2;
    const int col_off = (S - cols) / 2;
    const int n_slices = dims[plane_axis(plane)];

    auto cut = [&](auto value_at, int index) {
        Image2D img = Image2D::zeros(S, S);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
                const auto [x, y, z] = plane_voxel(plane, index, r, c);
                img.at(row_off + r, col_off + c) = value_at(x, y, z);
            }
        return img;
    };

    std::vector<SliceSample> out;
    out.reserve(size_t(n_slices));
    for (int k = 0; k < n_slices; ++k) {
        SliceSample s;
        s.case_id = mcase.case_id;
        s.plane = plane;
        s.index = k;
        s.crop_offsets = {row_off, col_off};
        for (const auto& [name, vol] : mcase.modalities)
            s.inputs.emplace_back(
                name, cut([&](int x, int y, int z) { return vol.at_f(x, y, z); }, k));
        if (mcase.truth)
            s.target = cut(
                [&](int x, int y, int z) { return float(mcase.truth->at_u(x, y, z)); }, k);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<SliceSample> select_training_slices(const std::vector<SliceSample>& samples) {
    std::vector<SliceSample> out;
    for (const auto& s : samples) {
        if (!s.target) throw std::invalid_argument("training slice without a target");
        if (s.target_has_lesion()) out.push_back(s);
    }
    return out;
}

Volume3D assemble_plane_volume(const std::vector<std::pair<int, Image2D>>& preds,
                               SlicePlane plane, const std::array<int, 3>& dims,
                               const std::array<double, 3>& spacing, int S) {
    const auto [rows, cols] = plane_slice_dims(plane, dims);
    if (S < rows || S < cols)
        throw std::invalid_argument("pad size smaller than slice dimensions");
    const int row_off = (S - rows) / 2;
    const int col_off = (S - cols) / 2;
    const int n_slices = dims[plane_axis(plane)];

    std::vector<const Image2D*> by_index(size_t(n_slices), nullptr);
    for (const auto& [idx, img] : preds) {
        if (idx < 0 || idx >= n_slices)
            throw std::invalid_argument("prediction index out of range");
        if (by_index[size_t(idx)])
            throw std::invalid_argument("duplicate prediction index");
        if (img.rows != S || img.cols != S)
            throw std::invalid_argument("prediction shape mismatch");
        by_index[size_t(idx)] = &img;
    }
    for (int k = 0; k < n_slices; ++k)
        if (!by_index[size_t(k)]) throw std::invalid_argument("missing prediction index");

    Volume3D vol = Volume3D::zeros_f32(dims, spacing);
    for (int k = 0; k < n_slices; ++k)
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
                const auto [x, y, z] = plane_voxel(plane, k, r, c);
                vol.f32[size_t(vol.index(x, y, z))] =
                    by_index[size_t(k)]->at(row_off + r, col_off + c);
            }
    return vol;
}

}  // namespace mseg

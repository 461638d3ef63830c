#pragma once

// 3D <-> 2D bridge: cut a case into padded square slices along the three
// orthogonal planes, and stack per-slice predictions back into a 3D volume.
//
// Plane conventions (fixed):
//   Axial    slices along z; slice rows = x, cols = y
//   Coronal  slices along y; slice rows = x, cols = z
//   Sagittal slices along x; slice rows = y, cols = z
// Each slice is centered in an S x S zero field at offsets
// floor((S - rows)/2), floor((S - cols)/2).

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mseg/volume.hpp"

namespace mseg {

enum class SlicePlane { Axial, Coronal, Sagittal };

const char* plane_name(SlicePlane p);

// Axis index sliced over: Axial -> 2 (z), Coronal -> 1 (y), Sagittal -> 0 (x).
int plane_axis(SlicePlane p);

// In-plane (rows, cols) of an unpadded slice for a volume of the given dims.
std::array<int, 2> plane_slice_dims(SlicePlane p, const std::array<int, 3>& dims);

// Voxel coordinate for (slice index, row, col) under the plane convention.
std::array<int, 3> plane_voxel(SlicePlane p, int index, int row, int col);

struct Image2D {
    int rows = 0, cols = 0;
    std::vector<float> v;  // row-major, cols fastest

    static Image2D zeros(int rows, int cols) {
        return Image2D{rows, cols, std::vector<float>(size_t(rows) * cols, 0.0f)};
    }
    float& at(int r, int c) { return v[size_t(r) * cols + c]; }
    float at(int r, int c) const { return v[size_t(r) * cols + c]; }
};

struct SliceSample {
    std::string case_id;
    SlicePlane plane = SlicePlane::Axial;
    int index = 0;                                      // position along the plane axis
    std::vector<std::pair<std::string, Image2D>> inputs;  // modality name -> S x S image
    std::optional<Image2D> target;                      // S x S, values in {0,1}
    std::array<int, 2> crop_offsets{0, 0};              // (row, col) of the slice in the pad

    bool target_has_lesion() const;
};

// Padded square side for a volume: max over the three dims.
int pad_size(const std::array<int, 3>& dims);

// One sample per index along the plane's axis. S must cover both in-plane
// dims. Targets are extracted from case truth when present.
std::vector<SliceSample> extract_slices(const MultiModalCase& mcase, SlicePlane plane, int S);

// Keep only samples whose target contains at least one lesion pixel,
// preserving order. Every sample must carry a target.
std::vector<SliceSample> select_training_slices(const std::vector<SliceSample>& samples);

// Inverse of extract_slices geometry: un-pad each S x S probability map and
// stack along the plane axis. Requires exactly one prediction per index.
Volume3D assemble_plane_volume(const std::vector<std::pair<int, Image2D>>& preds,
                               SlicePlane plane, const std::array<int, 3>& dims,
                               const std::array<double, 3>& spacing, int S);

}  // namespace mseg

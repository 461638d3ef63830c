#pragma once

// Synthetic multi-modal brain phantom: an ellipsoidal "brain" of mid-gray
// tissue containing a handful of non-overlapping spherical lesions, rendered
// into three pseudo-modalities ("flair", "t1", "t2") plus an exact truth
// mask. Deterministic for a given spec, so goldens stay stable.

#include <array>
#include <cstdint>
#include <vector>

#include "mseg/volume.hpp"

namespace mseg {

struct PhantomSpec {
    std::array<int, 3> dims{64, 64, 64};        // >= 16 per axis
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::array<int, 2> lesion_count_range{3, 6};     // inclusive, min <= max, min >= 0
    std::array<double, 2> lesion_radius_range_mm{2.0, 6.0};  // 0 < min <= max
    double noise_sigma = 0.05;  // additive Gaussian, >= 0
    uint64_t seed = 0;
};

// A placed lesion: a sphere in physical (mm) space, i.e. an ellipsoid in
// voxel coordinates when spacing is anisotropic.
struct PhantomLesion {
    std::array<double, 3> center_vox;  // continuous voxel coordinates
    double radius_mm;
};

struct PhantomResult {
    MultiModalCase mcase;
    std::vector<PhantomLesion> lesions;
    std::array<double, 3> brain_center_vox;     // (dims-1)/2
    std::array<double, 3> brain_semi_axes_vox;  // 0.42 * dims
};

void validate_phantom_spec(const PhantomSpec& spec);

// Full generation including placement geometry, for tests that need an
// independent handle on where the lesions ended up.
PhantomResult generate_phantom_detailed(const PhantomSpec& spec);

// The plain product: case "phantom-<seed>" with modalities flair, t1, t2 and
// a truth mask. Throws VolioError when a lesion cannot be placed inside the
// brain after bounded retries (dims too small for the radius range).
MultiModalCase generate_phantom(const PhantomSpec& spec);

}  // namespace mseg

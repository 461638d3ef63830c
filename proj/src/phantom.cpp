#include "mseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mseg/rng.hpp"

namespace mseg {

namespace {

constexpr double kBrainAxisFraction = 0.42;  // semi-axis as fraction of each dim
constexpr double kTissueIntensity = 0.5;
constexpr double kLesionBright = 0.9;  // flair, t2
constexpr double kLesionDark = 0.2;    // t1
constexpr int kPlacementRetries = 200;

double sq(double x) { return x * x; }

// Normalized distance of a voxel-space point from the brain center: <= 1
// means inside the brain ellipsoid.
double brain_norm(const std::array<double, 3>& p, const std::array<double, 3>& c,
                  const std::array<double, 3>& a) {
    return std::sqrt(sq((p[0] - c[0]) / a[0]) + sq((p[1] - c[1]) / a[1]) +
                     sq((p[2] - c[2]) / a[2]));
}

double mm_dist(const std::array<double, 3>& p, const std::array<double, 3>& q,
               const std::array<double, 3>& s) {
    return std::sqrt(sq((p[0] - q[0]) * s[0]) + sq((p[1] - q[1]) * s[1]) +
                     sq((p[2] - q[2]) * s[2]));
}

}  // namespace

void validate_phantom_spec(const PhantomSpec& spec) {
    using Code = VolioError::Code;
    for (int d : spec.dims)
        if (d < 16) throw VolioError(Code::invalid_volume, "phantom dims must be >= 16 per axis");
    for (double s : spec.spacing)
        if (!(s > 0.0)) throw VolioError(Code::invalid_volume, "phantom spacing must be positive");
    if (spec.lesion_count_range[0] < 0 || spec.lesion_count_range[1] < spec.lesion_count_range[0])
        throw VolioError(Code::invalid_volume, "lesion count range empty or negative");
    if (!(spec.lesion_radius_range_mm[0] > 0.0) ||
        spec.lesion_radius_range_mm[1] < spec.lesion_radius_range_mm[0])
        throw VolioError(Code::invalid_volume, "lesion radius range empty or non-positive");
    if (spec.noise_sigma < 0.0)
        throw VolioError(Code::invalid_volume, "noise sigma must be >= 0");
}

PhantomResult generate_phantom_detailed(const PhantomSpec& spec) {
    validate_phantom_spec(spec);
    Rng rng(spec.seed);

    PhantomResult res;
    for (int i = 0; i < 3; ++i) {
        res.brain_center_vox[i] = (spec.dims[i] - 1) / 2.0;
        res.brain_semi_axes_vox[i] = kBrainAxisFraction * spec.dims[i];
    }
    const auto& center = res.brain_center_vox;
    const auto& axes = res.brain_semi_axes_vox;

    // A lesion sphere of radius r mm stays inside the brain ellipsoid when
    // the center's normalized distance plus r * max_i 1/(spacing_i*axes_i)
    // is <= 1 (the sphere's worst-case normalized extent lies along the axis
    // with the smallest physical semi-axis).
    double inv_min_phys_axis = 0.0;
    for (int i = 0; i < 3; ++i)
        inv_min_phys_axis = std::max(inv_min_phys_axis, 1.0 / (spec.spacing[i] * axes[i]));
    const double max_spacing = std::max({spec.spacing[0], spec.spacing[1], spec.spacing[2]});

    const int count = static_cast<int>(
        rng.uniform_int(spec.lesion_count_range[0], spec.lesion_count_range[1]));

    for (int li = 0; li < count; ++li) {
        bool placed = false;
        for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
            const double r =
                rng.uniform(spec.lesion_radius_range_mm[0], spec.lesion_radius_range_mm[1]);
            std::array<double, 3> c;
            for (int i = 0; i < 3; ++i) c[i] = rng.uniform(0.0, spec.dims[i] - 1.0);
            if (brain_norm(c, center, axes) + r * inv_min_phys_axis > 1.0) continue;
            bool overlaps = false;
            for (const auto& other : res.lesions) {
                if (mm_dist(c, other.center_vox, spec.spacing) <
                    r + other.radius_mm + max_spacing) {
                    overlaps = true;
                    break;
                }
            }
            if (overlaps) continue;
            res.lesions.push_back({c, r});
            placed = true;
        }
        if (!placed)
            throw VolioError(VolioError::Code::invalid_volume,
                             "could not place lesion inside brain after retries; "
                             "dims too small for radius range");
    }

    MultiModalCase& mc = res.mcase;
    mc.case_id = "phantom-" + std::to_string(spec.seed);
    Volume3D truth = Volume3D::zeros_u8(spec.dims, spec.spacing);
    Volume3D base_bright = Volume3D::zeros_f32(spec.dims, spec.spacing);  // flair/t2
    Volume3D base_dark = Volume3D::zeros_f32(spec.dims, spec.spacing);    // t1

    for (int z = 0; z < spec.dims[2]; ++z)
        for (int y = 0; y < spec.dims[1]; ++y)
            for (int x = 0; x < spec.dims[0]; ++x) {
                const std::array<double, 3> p{double(x), double(y), double(z)};
                if (brain_norm(p, center, axes) > 1.0) continue;
                const int64_t idx = truth.index(x, y, z);
                bool in_lesion = false;
                for (const auto& l : res.lesions)
                    if (mm_dist(p, l.center_vox, spec.spacing) <= l.radius_mm) {
                        in_lesion = true;
                        break;
                    }
                if (in_lesion) {
                    truth.u8[idx] = 1;
                    base_bright.f32[idx] = kLesionBright;
                    base_dark.f32[idx] = kLesionDark;
                } else {
                    base_bright.f32[idx] = kTissueIntensity;
                    base_dark.f32[idx] = kTissueIntensity;
                }
            }

    // Noise is drawn per modality in a fixed order so the output is a pure
    // function of the spec.
    auto noisy = [&](const Volume3D& base) {
        Volume3D v = base;
        for (auto& f : v.f32) {
            f = static_cast<float>(f + spec.noise_sigma * rng.normal());
            f = std::clamp(f, 0.0f, 1.0f);
        }
        return v;
    };
    mc.modalities.emplace_back("flair", noisy(base_bright));
    mc.modalities.emplace_back("t1", noisy(base_dark));
    mc.modalities.emplace_back("t2", noisy(base_bright));
    mc.truth = std::move(truth);
    validate_case(mc);
    return res;
}

MultiModalCase generate_phantom(const PhantomSpec& spec) {
    return std::move(generate_phantom_detailed(spec).mcase);
}

}  // namespace mseg

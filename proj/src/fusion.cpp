#include "mseg/fusion.hpp"

#include <cmath>
#include <stdexcept>

namespace mseg {

namespace {

// Shared preconditions: non-empty list, expected element kind, matching grids.
void check_inputs(const std::vector<Volume3D>& vols, size_t min_count, ElementKind kind,
                  const char* what) {
    if (vols.size() < min_count) {
        throw std::invalid_argument(std::string(what) + ": need at least " +
                                    std::to_string(min_count) + " input volumes, got " +
                                    std::to_string(vols.size()));
    }
    for (size_t i = 0; i < vols.size(); ++i) {
        validate_volume(vols[i]);
        if (vols[i].kind != kind) {
            throw std::invalid_argument(std::string(what) + ": input " + std::to_string(i) +
                                        " has the wrong element kind");
        }
        if (!vols[i].same_grid(vols[0])) {
            throw std::invalid_argument(std::string(what) + ": input " + std::to_string(i) +
                                        " disagrees with input 0 on dims/spacing");
        }
    }
}

void check_probability_range(const Volume3D& v, const char* what) {
    for (float x : v.f32) {
        if (!(x >= 0.0f && x <= 1.0f)) {
            throw std::invalid_argument(std::string(what) +
                                        ": probability value outside [0,1]");
        }
    }
}

}  // namespace

FusionMethod parse_fusion_method(const std::string& name) {
    if (name == "majority") return FusionMethod::MajorityVote;
    if (name == "averaging") return FusionMethod::Averaging;
    if (name == "staple") return FusionMethod::Staple;
    throw std::invalid_argument("unknown fusion method '" + name +
                                "' (expected majority|averaging|staple)");
}

std::string fusion_method_name(FusionMethod m) {
    switch (m) {
        case FusionMethod::MajorityVote: return "majority";
        case FusionMethod::Averaging: return "averaging";
        case FusionMethod::Staple: return "staple";
    }
    throw std::invalid_argument("invalid FusionMethod value");
}

Volume3D binarize_volume(const Volume3D& prob, float tau) {
    validate_volume(prob);
    if (prob.kind != ElementKind::f32) {
        throw std::invalid_argument("binarize_volume: expected an f32 probability volume");
    }
    check_probability_range(prob, "binarize_volume");
    Volume3D out = Volume3D::zeros_u8(prob.dims, prob.spacing);
    for (size_t i = 0; i < prob.f32.size(); ++i) {
        out.u8[i] = prob.f32[i] > tau ? 1 : 0;
    }
    return out;
}

Volume3D majority_vote(const std::vector<Volume3D>& masks) {
    check_inputs(masks, 1, ElementKind::u8, "majority_vote");
    const size_t n = masks.size();
    Volume3D out = Volume3D::zeros_u8(masks[0].dims, masks[0].spacing);
    for (size_t i = 0; i < out.u8.size(); ++i) {
        size_t votes = 0;
        for (const Volume3D& m : masks) votes += m.u8[i];
        out.u8[i] = 2 * votes > n ? 1 : 0;  // strict majority, ties to background
    }
    return out;
}

Volume3D average_fusion(const std::vector<Volume3D>& probs, float tau) {
    check_inputs(probs, 1, ElementKind::f32, "average_fusion");
    for (const Volume3D& p : probs) check_probability_range(p, "average_fusion");
    const double n = double(probs.size());
    Volume3D out = Volume3D::zeros_u8(probs[0].dims, probs[0].spacing);
    for (size_t i = 0; i < out.u8.size(); ++i) {
        double sum = 0.0;
        for (const Volume3D& p : probs) sum += p.f32[i];
        out.u8[i] = sum / n > double(tau) ? 1 : 0;
    }
    return out;
}

StapleResult staple(const std::vector<Volume3D>& masks, int max_iter, double tol) {
    check_inputs(masks, 2, ElementKind::u8, "staple");
    if (max_iter < 1) throw std::invalid_argument("staple: max_iter must be >= 1");
    if (!(tol > 0.0)) throw std::invalid_argument("staple: tol must be positive");

    const size_t n = masks.size();
    const size_t v = size_t(masks[0].voxel_count());

    // Fixed foreground prior: mean foreground fraction across the inputs.
    int64_t fg_total = 0;
    for (const Volume3D& m : masks) fg_total += m.foreground_count();
    const double f = double(fg_total) / (double(n) * double(v));
    if (f <= 0.0 || f >= 1.0) {
        throw std::invalid_argument(
            "staple: prior is degenerate (inputs are all empty or all full)");
    }

    StapleResult r;
    r.sensitivity.assign(n, 0.99);
    r.specificity.assign(n, 0.99);

    std::vector<double> w(v, 0.0);
    std::vector<double> num_p(n), num_q(n);
    for (int it = 1; it <= max_iter; ++it) {
        // E-step: posterior foreground weight per voxel.
        for (size_t i = 0; i < v; ++i) {
            double a = f, b = 1.0 - f;
            for (size_t j = 0; j < n; ++j) {
                if (masks[j].u8[i]) {
                    a *= r.sensitivity[j];
                    b *= 1.0 - r.specificity[j];
                } else {
                    a *= 1.0 - r.sensitivity[j];
                    b *= r.specificity[j];
                }
            }
            const double den = a + b;
            w[i] = den > 0.0 ? a / den : 0.5;
        }
        // M-step: re-estimate each rater's sensitivity and specificity.
        double sum_w = 0.0;
        num_p.assign(n, 0.0);
        num_q.assign(n, 0.0);
        for (size_t i = 0; i < v; ++i) {
            sum_w += w[i];
            const double cw = 1.0 - w[i];
            for (size_t j = 0; j < n; ++j) {
                if (masks[j].u8[i]) {
                    num_p[j] += w[i];
                } else {
                    num_q[j] += cw;
                }
            }
        }
        const double sum_cw = double(v) - sum_w;
        double delta = 0.0;
        for (size_t j = 0; j < n; ++j) {
            const double p_new = sum_w > 0.0 ? num_p[j] / sum_w : r.sensitivity[j];
            const double q_new = sum_cw > 0.0 ? num_q[j] / sum_cw : r.specificity[j];
            delta = std::max(delta, std::abs(p_new - r.sensitivity[j]));
            delta = std::max(delta, std::abs(q_new - r.specificity[j]));
            r.sensitivity[j] = p_new;
            r.specificity[j] = q_new;
        }
        r.iterations = it;
        if (delta < tol) {
            r.converged = true;
            break;
        }
    }

    r.consensus = Volume3D::zeros_u8(masks[0].dims, masks[0].spacing);
    for (size_t i = 0; i < v; ++i) r.consensus.u8[i] = w[i] > 0.5 ? 1 : 0;
    return r;
}

Volume3D mpr_reconstruct(const std::vector<std::pair<SlicePlane, Volume3D>>& plane_probs,
                         FusionMethod method, float tau) {
    bool seen[3] = {false, false, false};
    for (const auto& [plane, prob] : plane_probs) {
        const int a = plane_axis(plane);
        if (seen[a]) {
            throw std::invalid_argument(std::string("mpr_reconstruct: duplicate ") +
                                        plane_name(plane) + " volume");
        }
        seen[a] = true;
        (void)prob;
    }
    for (SlicePlane p : {SlicePlane::Axial, SlicePlane::Coronal, SlicePlane::Sagittal}) {
        if (!seen[plane_axis(p)]) {
            throw std::invalid_argument(std::string("mpr_reconstruct: missing ") +
                                        plane_name(p) + " volume");
        }
    }

    std::vector<Volume3D> soft;
    soft.reserve(plane_probs.size());
    for (const auto& [plane, prob] : plane_probs) soft.push_back(prob);

    switch (method) {
        case FusionMethod::MajorityVote: {
            std::vector<Volume3D> hard;
            hard.reserve(soft.size());
            for (const Volume3D& p : soft) hard.push_back(binarize_volume(p, tau));
            return majority_vote(hard);
        }
        case FusionMethod::Averaging:
            return average_fusion(soft, tau);
        case FusionMethod::Staple: {
            std::vector<Volume3D> hard;
            hard.reserve(soft.size());
            for (const Volume3D& p : soft) hard.push_back(binarize_volume(p, tau));
            return staple(hard).consensus;
        }
    }
    throw std::invalid_argument("mpr_reconstruct: invalid FusionMethod value");
}

Volume3D ensemble_fuse(const std::vector<Volume3D>& member_masks) {
    return majority_vote(member_masks);
}

}  // namespace mseg

#pragma once

// Combining several segmentations of the same volume into one: strict
// majority voting, probability averaging, and STAPLE consensus estimation,
// plus the three-plane reconstruction step that turns per-plane probability
// volumes into a single 3D mask.

#include <string>
#include <utility>
#include <vector>

#include "mseg/slicer.hpp"
#include "mseg/volume.hpp"

namespace mseg {

enum class FusionMethod { MajorityVote, Averaging, Staple };

// Accepts "majority", "averaging", "staple" (case-sensitive); throws on others.
FusionMethod parse_fusion_method(const std::string& name);
std::string fusion_method_name(FusionMethod m);

// Probability volume (f32, values in [0,1]) -> mask; strictly greater than tau.
Volume3D binarize_volume(const Volume3D& prob, float tau = 0.5f);

// Voxelwise strict majority: foreground iff votes > N/2, so exact ties on
// even N go to background.
Volume3D majority_vote(const std::vector<Volume3D>& masks);

// Voxelwise mean of probability volumes, thresholded strictly at tau.
Volume3D average_fusion(const std::vector<Volume3D>& probs, float tau = 0.5f);

struct StapleResult {
    Volume3D consensus;                // binary mask, W > 0.5
    std::vector<double> sensitivity;   // p_j per input
    std::vector<double> specificity;   // q_j per input
    int iterations = 0;
    bool converged = false;
};

// Expectation-maximization consensus over >=2 binary masks with a fixed
// foreground prior f = mean foreground fraction of the inputs. Initial
// p_j = q_j = 0.99; stops when every p_j/q_j moves less than tol, or after
// max_iter iterations. All-empty and all-full input sets have a degenerate
// prior and are rejected.
StapleResult staple(const std::vector<Volume3D>& masks, int max_iter = 100, double tol = 1e-6);

// Fuse the three plane-wise probability volumes into one mask. Exactly one
// entry per plane is required. MajorityVote binarizes each volume at tau and
// votes; Averaging averages the soft maps then thresholds at tau; Staple
// binarizes at tau and takes the consensus.
Volume3D mpr_reconstruct(const std::vector<std::pair<SlicePlane, Volume3D>>& plane_probs,
                         FusionMethod method, float tau = 0.5f);

// Majority vote across cross-validation member predictions (same strict tie
// rule; a single member passes through unchanged).
Volume3D ensemble_fuse(const std::vector<Volume3D>& member_masks);

}  // namespace mseg

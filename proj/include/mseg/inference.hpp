#pragma once

// Deployment path for a trained model: slice a case along the three planes,
// run the network in eval mode over slice batches, reassemble one probability
// volume per plane, and fuse them into a single binary mask.

#include <utility>
#include <vector>

#include "mseg/fusion.hpp"
#include "mseg/network.hpp"
#include "mseg/slicer.hpp"
#include "mseg/volume.hpp"

namespace mseg {

// One probability volume (lesion-channel softmax output) per plane, in the
// order axial, coronal, sagittal. The case's in-plane dims must fit the
// model's input size; slices are run in batches of at most batch_size.
std::vector<std::pair<SlicePlane, Volume3D>> predict_probability_volumes(
    const Model& model, const MultiModalCase& mcase, int batch_size = 15);

// Per-plane probabilities fused into one binary mask via the chosen method.
Volume3D predict_case(const Model& model, const MultiModalCase& mcase,
                      FusionMethod method = FusionMethod::MajorityVote, float tau = 0.5f,
                      int batch_size = 15);

}  // namespace mseg

#pragma once

// Multi-branch 2D encoder-decoder for slice segmentation.
//
// Each branch runs one stack of input images (usually a single modality)
// through a bottleneck-residual downsampling backbone that exposes feature
// maps at five scales. At every scale the branches' maps are fused by a
// cross-modality block; a chain of upsample-fusion blocks then decodes the
// coarsest fused map back up the pyramid, and a final upsampling head
// restores the input resolution before a two-channel softmax.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mseg/autodiff.hpp"
#include "mseg/params.hpp"
#include "mseg/tensor.hpp"

namespace mseg {

// Spatial halving rules used throughout the encoder. The stem (7x7, stride 2,
// pad 3) and the strided stage convolutions (3x3, stride 2, pad 1) round up;
// the 3x3 stride-2 max-pool rounds down, realized by padding 1 on even inputs
// and 0 on odd ones. The mix is deliberate: it reproduces the reference
// resolution chain 218 -> 109 -> 54 -> 27 -> 14 -> 7 while keeping clean
// power-of-two chains like 64 -> 32 -> 16 -> 8 -> 4 -> 2.
int halve_ceil(int s);
int halve_floor(int s);

struct ModelConfig {
    // One inner list per branch; each entry is an input image name. A branch
    // with several names stacks them as input channels (the single-branch
    // multi-channel variant); the default is one modality per branch.
    std::vector<std::vector<std::string>> branches{{"flair"}, {"t1"}, {"t2"}};
    int input_size = 64;

    int stem_width = 64;
    std::array<int, 5> width_mult{1, 4, 8, 16, 32};  // per-level encoder widths / stem_width
    std::array<int, 4> stage_depths{1, 1, 1, 1};     // residual blocks per stage (levels 2-5)
    bool share_weights = false;                      // must stay false: branches are independent
    uint64_t seed = 0;
    float bn_momentum = 0.9f;
    float bn_eps = 1e-5f;

    int branch_count() const { return int(branches.size()); }
    int level_width(int level) const;  // encoder channels at level 1..5
    int fused_width(int level) const;  // channels after cross-branch fusion at level 1..5
    std::array<int, 5> level_sizes() const;     // spatial dims at levels 1..5
    std::array<int, 4> decoder_widths() const;  // up-fusion output channels for levels 4,3,2,1
    std::vector<std::string> input_names() const;  // all names, branch order
};

// Throws std::invalid_argument on: empty/duplicate input names, weight
// sharing enabled, non-positive widths/depths, or an input size whose
// five-level resolution chain is not strictly decreasing.
void validate_model_config(const ModelConfig& cfg);

template <typename T>
struct ModelT {
    ModelConfig config;
    ParamStoreT<T> params;
};
using Model = ModelT<float>;

// Creates every parameter deterministically from config.seed: conv/upconv
// weights ~ N(0, 2/(cin+cout)) over channel counts, biases zero, norm scale 1
// / shift 0, running stats (0, 1). Branches draw from one sequential stream,
// so same-seed branches still hold distinct values.
template <typename T>
ModelT<T> build_model_t(const ModelConfig& cfg);
Model build_model(const ModelConfig& cfg);

// Runs one branch encoder. x is [N, stack, S, S] where stack is the branch's
// input-name count. Returns feature maps at levels 1..5 (finest first).
// tape == nullptr runs without recording; train selects batch-vs-running
// normalization statistics.
template <typename T>
std::array<TensorPtrT<T>, 5> encoder_forward(const ModelT<T>& model, TapeT<T>* tape, int branch,
                                             const TensorPtrT<T>& x, bool train);

// Cross-branch fusion at one level: per branch, norm+rectify -> 1x1 conv
// halving channels -> norm+rectify -> 3x3 conv, then concatenate across
// branches. features must hold one same-shaped map per branch.
template <typename T>
TensorPtrT<T> mmff_forward(const ModelT<T>& model, TapeT<T>* tape, int level,
                           const std::vector<TensorPtrT<T>>& features, bool train);

// One decoder step at `level` (the level of `high`): low is normalized,
// channel-halved, upsampled by a 2x2 stride-2 transposed conv, aligned to
// high's spatial dims, concatenated with high, then fused by 1x1-halve and
// 3x3 convs. low must be strictly coarser than high.
template <typename T>
TensorPtrT<T> msfu_forward(const ModelT<T>& model, TapeT<T>* tape, int level,
                           const TensorPtrT<T>& low, const TensorPtrT<T>& high, bool train);

// Full forward pass. inputs bind image tensors ([N,1,S,S]) to names; order
// is irrelevant, binding is by name, and the name set must match the config
// exactly. Output is [N,2,S,S] with a per-pixel softmax over the channels
// (background, lesion).
template <typename T>
TensorPtrT<T> model_forward(const ModelT<T>& model, TapeT<T>* tape,
                            const std::vector<std::pair<std::string, TensorPtrT<T>>>& inputs,
                            bool train);

// Threshold a probability map: values strictly greater than tau become 1.
// A [N,2,H,W] input is reduced to its lesion channel first; [N,1,H,W] is
// thresholded as-is. Output is [N,1,H,W] of {0,1}.
template <typename T>
TensorPtrT<T> binarize(const TensorPtrT<T>& prob, T tau = T(0.5));

#define MSEG_NETWORK_EXTERN(T)                                                                 \
    extern template ModelT<T> build_model_t<T>(const ModelConfig&);                           \
    extern template std::array<TensorPtrT<T>, 5> encoder_forward<T>(                          \
        const ModelT<T>&, TapeT<T>*, int, const TensorPtrT<T>&, bool);                        \
    extern template TensorPtrT<T> mmff_forward<T>(const ModelT<T>&, TapeT<T>*, int,           \
                                                  const std::vector<TensorPtrT<T>>&, bool);   \
    extern template TensorPtrT<T> msfu_forward<T>(const ModelT<T>&, TapeT<T>*, int,           \
                                                  const TensorPtrT<T>&, const TensorPtrT<T>&, \
                                                  bool);                                       \
    extern template TensorPtrT<T> model_forward<T>(                                           \
        const ModelT<T>&, TapeT<T>*, const std::vector<std::pair<std::string, TensorPtrT<T>>>&, \
        bool);                                                                                 \
    extern template TensorPtrT<T> binarize<T>(const TensorPtrT<T>&, T);

MSEG_NETWORK_EXTERN(float)
MSEG_NETWORK_EXTERN(double)
#undef MSEG_NETWORK_EXTERN

}  // namespace mseg

#pragma once

// The layer set the segmentation network needs, each op differentiable
// through the tape. Passing tape == nullptr runs forward-only inference:
// nothing is recorded and intermediates free as their last reference drops.
//
// Layer I/O uses the canonical 4D layout batch x channels x height x width.
//
// conv2d and conv_transpose2d accumulate each output element in a strictly
// ascending reduction order (bias first, then channel-major kernel taps), so
// their forward results are bit-identical to a naive nested-loop reference.
// The im2col/GEMM implementation only blocks for cache reuse in ways that
// preserve that per-element order.

#include "mseg/tensor.hpp"

namespace mseg {

// x [N,Ci,H,W], w [Co,Ci,k,k], b [Co]; output floor((H+2p-k)/stride)+1.
template <typename T>
TensorPtrT<T> conv2d(TapeT<T>* tape, const TensorPtrT<T>& x, const TensorPtrT<T>& w,
                     const TensorPtrT<T>& b, int stride, int padding);

/// Fixed 2x2 kernel, stride 2: output is exactly 2H x 2W. w [Ci,Co,2,2], b [Co].
template <typename T>
TensorPtrT<T> conv_transpose2d(TapeT<T>* tape, const TensorPtrT<T>& x, const TensorPtrT<T>& w,
                               const TensorPtrT<T>& b);

// gamma/beta/run_mean/run_var are per-channel [C]. Training mode normalizes
// by biased batch statistics and folds them into the running buffers as
// run = momentum*run + (1-momentum)*batch; eval mode normalizes by the
// running buffers. Gradients flow to x, gamma, beta.
template <typename T>
TensorPtrT<T> batchnorm2d(TapeT<T>* tape, const TensorPtrT<T>& x, const TensorPtrT<T>& gamma,
                          const TensorPtrT<T>& beta, const TensorPtrT<T>& run_mean,
                          const TensorPtrT<T>& run_var, bool train, T momentum, T eps);

template <typename T>
TensorPtrT<T> relu(TapeT<T>* tape, const TensorPtrT<T>& x);

// Window positions outside the input are treated as -infinity (never win).
// Gradient routes to the argmax; ties break to the first window position in
// row-major scan order so gradients are reproducible.
template <typename T>
TensorPtrT<T> maxpool2d(TapeT<T>* tape, const TensorPtrT<T>& x, int k, int stride, int padding);

template <typename T>
TensorPtrT<T> concat_channels(TapeT<T>* tape, const std::vector<TensorPtrT<T>>& xs);

template <typename T>
TensorPtrT<T> add(TapeT<T>* tape, const TensorPtrT<T>& x, const TensorPtrT<T>& y);

template <typename T>
TensorPtrT<T> mul(TapeT<T>* tape, const TensorPtrT<T>& x, const TensorPtrT<T>& y);

// Elementwise x / y.
template <typename T>
TensorPtrT<T> div_el(TapeT<T>* tape, const TensorPtrT<T>& x, const TensorPtrT<T>& y);

// a*x + b elementwise, for folding constants into the graph.
template <typename T>
TensorPtrT<T> scalar_affine(TapeT<T>* tape, const TensorPtrT<T>& x, T a, T b);

// Softmax across the channel axis at every pixel; output sums to 1 per pixel.
template <typename T>
TensorPtrT<T> softmax_channels(TapeT<T>* tape, const TensorPtrT<T>& x);

// Reduce to a single-element tensor.
template <typename T>
TensorPtrT<T> sum_all(TapeT<T>* tape, const TensorPtrT<T>& x);

// Slice one channel: [N,C,H,W] -> [N,1,H,W].
template <typename T>
TensorPtrT<T> select_channel(TapeT<T>* tape, const TensorPtrT<T>& x, int c);

// Resize the spatial dims by zero-padding or cropping, per axis independently:
// growing pads with zeros on the bottom/right (content stays anchored at the
// top-left); shrinking center-crops with the offset rounded down.
template <typename T>
TensorPtrT<T> pad_crop2d(TapeT<T>* tape, const TensorPtrT<T>& x, int out_h, int out_w);

// One Adam update on a single tensor. t is the 1-based step count after this
// update (i.e. pass 1 on the first call); bias correction uses it directly.
template <typename T>
void adam_update(std::vector<T>& param, const std::vector<T>& grad, std::vector<T>& m,
                 std::vector<T>& v, int64_t t, T lr, T beta1, T beta2, T eps);

#define MSEG_AUTODIFF_EXTERN(T)                                                                  \
    extern template TensorPtrT<T> conv2d<T>(TapeT<T>*, const TensorPtrT<T>&,                    \
                                            const TensorPtrT<T>&, const TensorPtrT<T>&, int,    \
                                            int);                                               \
    extern template TensorPtrT<T> conv_transpose2d<T>(TapeT<T>*, const TensorPtrT<T>&,          \
                                                      const TensorPtrT<T>&,                     \
                                                      const TensorPtrT<T>&);                    \
    extern template TensorPtrT<T> batchnorm2d<T>(TapeT<T>*, const TensorPtrT<T>&,               \
                                                 const TensorPtrT<T>&, const TensorPtrT<T>&,    \
                                                 const TensorPtrT<T>&, const TensorPtrT<T>&,    \
                                                 bool, T, T);                                   \
    extern template TensorPtrT<T> relu<T>(TapeT<T>*, const TensorPtrT<T>&);                     \
    extern template TensorPtrT<T> maxpool2d<T>(TapeT<T>*, const TensorPtrT<T>&, int, int, int); \
    extern template TensorPtrT<T> concat_channels<T>(TapeT<T>*,                                 \
                                                     const std::vector<TensorPtrT<T>>&);        \
    extern template TensorPtrT<T> add<T>(TapeT<T>*, const TensorPtrT<T>&,                       \
                                         const TensorPtrT<T>&);                                 \
    extern template TensorPtrT<T> mul<T>(TapeT<T>*, const TensorPtrT<T>&,                       \
                                         const TensorPtrT<T>&);                                 \
    extern template TensorPtrT<T> div_el<T>(TapeT<T>*, const TensorPtrT<T>&,                    \
                                            const TensorPtrT<T>&);                              \
    extern template TensorPtrT<T> scalar_affine<T>(TapeT<T>*, const TensorPtrT<T>&, T, T);      \
    extern template TensorPtrT<T> softmax_channels<T>(TapeT<T>*, const TensorPtrT<T>&);         \
    extern template TensorPtrT<T> sum_all<T>(TapeT<T>*, const TensorPtrT<T>&);                  \
    extern template TensorPtrT<T> select_channel<T>(TapeT<T>*, const TensorPtrT<T>&, int);      \
    extern template TensorPtrT<T> pad_crop2d<T>(TapeT<T>*, const TensorPtrT<T>&, int, int);     \
    extern template void adam_update<T>(std::vector<T>&, const std::vector<T>&,                 \
                                        std::vector<T>&, std::vector<T>&, int64_t, T, T, T, T);

MSEG_AUTODIFF_EXTERN(float)
MSEG_AUTODIFF_EXTERN(double)
#undef MSEG_AUTODIFF_EXTERN

}  // namespace mseg

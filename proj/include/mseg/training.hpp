#pragma once

// Optimization loop for the segmentation model: soft Dice loss, stepped
// learning-rate decay, seeded epoch shuffling over the pooled three-plane
// lesion slices, Adam updates, and validation-driven selection of the best
// parameters via full 3D reconstruction on held-out cases.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "mseg/network.hpp"
#include "mseg/tensor.hpp"
#include "mseg/volume.hpp"

namespace mseg {

struct TrainConfig {
    double lr0 = 1e-4;
    double lr_decay = 0.95;
    int lr_decay_interval = 400;  // optimizer steps between decays
    int batch_size = 15;
    int max_epochs = 1000;
    uint64_t seed = 0;    // epoch shuffling; model init draws from ModelConfig::seed
    int val_interval = 1;  // epochs between validation passes
};

// Throws std::invalid_argument unless every field is positive and the decay
// factor lies in (0, 1]. max_epochs = 0 is rejected too: a run that never
// trains can select no parameters.
void validate_train_config(const TrainConfig& cfg);

// lr0 * decay^floor(step / interval); step is the 0-based update count.
double lr_at(int64_t step, const TrainConfig& cfg);

// Soft Dice loss over the whole tensor (batch pooled):
//   1 - 2*sum(p*g) / (sum(p^2) + sum(g^2)).
// Shapes must match exactly. When both sums are zero (p and g identically
// zero) the loss is defined as exactly 0 and returned as a constant without
// touching the tape — an empty prediction of an empty target is correct.
template <typename T>
TensorPtrT<T> dice_loss(TapeT<T>* tape, const TensorPtrT<T>& p, const TensorPtrT<T>& g);

// One epoch's batches: a seeded shuffle of indices 0..sample_count-1 cut
// into batch_size chunks, keeping the trailing partial chunk.
std::vector<std::vector<size_t>> make_batches(size_t sample_count, int batch_size,
                                              uint64_t seed);

struct TrainReport {
    std::vector<double> epoch_loss;               // mean batch loss; index = epoch-1
    std::vector<std::pair<int, double>> val_dsc;  // (epoch, mean validation DSC)
    int best_epoch = 0;    // 1-based; first epoch attaining the max recorded DSC
    std::string best_checkpoint;  // written when a checkpoint dir was given
};

struct TrainOutcome {
    TrainReport report;
    Model model;  // carries the best-validation-epoch parameters
};

// Build a model from model_cfg and optimize it on the lesion-bearing slices
// of train_cases (all three planes pooled; slices shuffled per epoch from
// cfg.seed). Every optimizer step uses lr_at(step). Every val_interval
// epochs the current model segments each validation case through the full
// 3D reconstruction path (majority voting) and the mean per-case DSC is
// recorded; the parameters of the best epoch (first on ties) are returned
// and, when checkpoint_dir is non-empty, saved there as best.ckpt. If no
// validation ever runs inside the epoch budget, the final parameters are
// returned with best_epoch = 0.
//
// metrics_log, when given, receives one tab-separated line per epoch:
//   epoch <tab> step <tab> lr <tab> loss <tab> val_dsc   ("na" off-cadence)
//
// Throws on: invalid configs; empty/overlapping case sets; cases without
// truth; an empty training pool after lesion filtering.
TrainOutcome train(const ModelConfig& model_cfg, const std::vector<MultiModalCase>& train_cases,
                   const std::vector<MultiModalCase>& val_cases, const TrainConfig& cfg,
                   const std::string& checkpoint_dir = "", std::ostream* metrics_log = nullptr);

extern template TensorPtrT<float> dice_loss<float>(TapeT<float>*, const TensorPtrT<float>&,
                                                   const TensorPtrT<float>&);
extern template TensorPtrT<double> dice_loss<double>(TapeT<double>*, const TensorPtrT<double>&,
                                                     const TensorPtrT<double>&);

}  // namespace mseg

#include "mseg/training.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <unordered_set>

#include "mseg/autodiff.hpp"
#include "mseg/inference.hpp"
#include "mseg/metrics.hpp"
#include "mseg/rng.hpp"
#include "mseg/slicer.hpp"

namespace mseg {

void validate_train_config(const TrainConfig& cfg) {
    if (!(cfg.lr0 > 0.0)) throw std::invalid_argument("train config: lr0 must be positive");
    if (!(cfg.lr_decay > 0.0 && cfg.lr_decay <= 1.0)) {
        throw std::invalid_argument("train config: lr_decay must be in (0, 1]");
    }
    if (cfg.lr_decay_interval < 1) {
        throw std::invalid_argument("train config: lr_decay_interval must be >= 1");
    }
    if (cfg.batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (cfg.max_epochs < 1) throw std::invalid_argument("train config: max_epochs must be >= 1");
    if (cfg.val_interval < 1) {
        throw std::invalid_argument("train config: val_interval must be >= 1");
    }
}

double lr_at(int64_t step, const TrainConfig& cfg) {
    if (step < 0) throw std::invalid_argument("lr_at: step must be >= 0");
    return cfg.lr0 * std::pow(cfg.lr_decay, double(step / cfg.lr_decay_interval));
}

template <typename T>
TensorPtrT<T> dice_loss(TapeT<T>* tape, const TensorPtrT<T>& p, const TensorPtrT<T>& g) {
    if (!p || !g) throw std::invalid_argument("dice_loss: null tensor");
    if (p->shape != g->shape) throw std::invalid_argument("dice_loss: shape mismatch");
    bool any = false;
    for (const T v : p->data) {
        if (v != T(0)) {
            any = true;
            break;
        }
    }
    if (!any) {
        for (const T v : g->data) {
            if (v != T(0)) {
                any = true;
                break;
            }
        }
    }
    if (!any) return TensorT<T>::zeros({1, 1, 1, 1});
    const auto num = sum_all(tape, mul(tape, p, g));
    const auto den = add(tape, sum_all(tape, mul(tape, p, p)), sum_all(tape, mul(tape, g, g)));
    return scalar_affine(tape, div_el(tape, num, den), T(-2), T(1));
}

std::vector<std::vector<size_t>> make_batches(size_t sample_count, int batch_size,
                                              uint64_t seed) {
    if (sample_count == 0) throw std::invalid_argument("make_batches: empty sample list");
    if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size must be >= 1");
    std::vector<size_t> idx(sample_count);
    std::iota(idx.begin(), idx.end(), size_t(0));
    Rng rng(seed);
    rng.shuffle(idx);
    std::vector<std::vector<size_t>> batches;
    for (size_t s = 0; s < sample_count; s += size_t(batch_size)) {
        const size_t e = std::min(sample_count, s + size_t(batch_size));
        batches.emplace_back(idx.begin() + ptrdiff_t(s), idx.begin() + ptrdiff_t(e));
    }
    return batches;
}

namespace {

const Image2D& input_of(const SliceSample& s, const std::string& name) {
    for (const auto& [n, img] : s.inputs) {
        if (n == name) return img;
    }
    throw std::invalid_argument("train: case '" + s.case_id + "' lacks input '" + name + "'");
}

std::string fmt_d(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

TrainOutcome train(const ModelConfig& model_cfg, const std::vector<MultiModalCase>& train_cases,
                   const std::vector<MultiModalCase>& val_cases, const TrainConfig& cfg,
                   const std::string& checkpoint_dir, std::ostream* metrics_log) {
    validate_model_config(model_cfg);
    validate_train_config(cfg);
    if (train_cases.empty()) throw std::invalid_argument("train: no training cases");
    if (val_cases.empty()) throw std::invalid_argument("train: no validation cases");
    std::unordered_set<std::string> train_ids;
    for (const auto& c : train_cases) {
        validate_case(c);
        if (!c.truth) throw std::invalid_argument("train: case '" + c.case_id + "' has no truth");
        if (!train_ids.insert(c.case_id).second) {
            throw std::invalid_argument("train: duplicate training case '" + c.case_id + "'");
        }
    }
    for (const auto& c : val_cases) {
        validate_case(c);
        if (!c.truth) throw std::invalid_argument("train: case '" + c.case_id + "' has no truth");
        if (train_ids.count(c.case_id)) {
            throw std::invalid_argument("train: case '" + c.case_id +
                                        "' is in both the training and validation sets");
        }
    }

    const int S = model_cfg.input_size;
    std::vector<SliceSample> pool;
    for (const auto& c : train_cases) {
        for (SlicePlane pl : {SlicePlane::Axial, SlicePlane::Coronal, SlicePlane::Sagittal}) {
            auto kept = select_training_slices(extract_slices(c, pl, S));
            for (auto& s : kept) pool.push_back(std::move(s));
        }
    }
    if (pool.empty()) {
        throw std::runtime_error("train: no lesion-bearing slices in the training cases");
    }

    TrainOutcome out;
    out.model = build_model(model_cfg);
    Model& model = out.model;
    AdamState adam = AdamState::make(model.params);
    const auto names = model_cfg.input_names();
    TrainReport& rep = out.report;

    double best_dsc = -1.0;
    std::vector<std::vector<float>> best_params;
    std::string ckpt_path;
    if (!checkpoint_dir.empty()) {
        std::filesystem::create_directories(checkpoint_dir);
        ckpt_path = (std::filesystem::path(checkpoint_dir) / "best.ckpt").string();
    }

    if (metrics_log) *metrics_log << "epoch\tstep\tlr\tloss\tval_dsc\n";

    const size_t plane_elems = size_t(S) * size_t(S);
    int64_t step = 0;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        // Distinct, reproducible shuffle stream per epoch.
        const uint64_t epoch_seed = cfg.seed + 0x9E3779B97F4A7C15ull * uint64_t(epoch);
        const auto batches = make_batches(pool.size(), cfg.batch_size, epoch_seed);
        double loss_sum = 0.0;
        for (const auto& batch : batches) {
            const int B = int(batch.size());
            std::vector<std::pair<std::string, TensorPtr>> inputs;
            inputs.reserve(names.size());
            for (const auto& name : names) {
                auto x = Tensor::zeros({B, 1, S, S});
                for (int b = 0; b < B; ++b) {
                    const Image2D& img = input_of(pool[batch[size_t(b)]], name);
                    std::memcpy(x->data.data() + size_t(b) * plane_elems, img.v.data(),
                                sizeof(float) * plane_elems);
                }
                inputs.emplace_back(name, std::move(x));
            }
            auto target = Tensor::zeros({B, 1, S, S});
            for (int b = 0; b < B; ++b) {
                std::memcpy(target->data.data() + size_t(b) * plane_elems,
                            pool[batch[size_t(b)]].target->v.data(),
                            sizeof(float) * plane_elems);
            }

            Tape tape;
            const TensorPtr prob = model_forward(model, &tape, inputs, /*train=*/true);
            const TensorPtr lesion = select_channel(&tape, prob, 1);
            const TensorPtr loss = dice_loss(&tape, lesion, target);
            loss_sum += double(loss->data[0]);
            model.params.zero_grads();
            tape.backward(loss);
            adam_step(model.params, adam, float(lr_at(step, cfg)));
            ++step;
        }
        rep.epoch_loss.push_back(loss_sum / double(batches.size()));

        std::optional<double> val;
        if (epoch % cfg.val_interval == 0) {
            double sum = 0.0;
            for (const auto& vc : val_cases) {
                const Volume3D mask =
                    predict_case(model, vc, FusionMethod::MajorityVote, 0.5f, cfg.batch_size);
                sum += dsc(mask, *vc.truth);
            }
            val = sum / double(val_cases.size());
            rep.val_dsc.emplace_back(epoch, *val);
            if (*val > best_dsc) {
                best_dsc = *val;
                rep.best_epoch = epoch;
                best_params.clear();
                for (const auto& e : model.params.entries()) {
                    best_params.push_back(e.tensor->data);
                }
                if (!ckpt_path.empty()) {
                    save_checkpoint(model.params, ckpt_path);
                    rep.best_checkpoint = ckpt_path;
                }
            }
        }
        if (metrics_log) {
            *metrics_log << epoch << '\t' << step << '\t' << fmt_d(lr_at(step - 1, cfg)) << '\t'
                         << fmt_d(rep.epoch_loss.back()) << '\t' << (val ? fmt_d(*val) : "na")
                         << '\n';
        }
    }

    if (!best_params.empty()) {
        auto& entries = model.params.entries();
        for (size_t i = 0; i < entries.size(); ++i) entries[i].tensor->data = best_params[i];
    } else if (!ckpt_path.empty()) {
        // No validation cadence fired; keep the final parameters.
        save_checkpoint(model.params, ckpt_path);
        rep.best_checkpoint = ckpt_path;
    }
    return out;
}

template TensorPtrT<float> dice_loss<float>(TapeT<float>*, const TensorPtrT<float>&,
                                            const TensorPtrT<float>&);
template TensorPtrT<double> dice_loss<double>(TapeT<double>*, const TensorPtrT<double>&,
                                              const TensorPtrT<double>&);

}  // namespace mseg

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "mseg/inference.hpp"
#include "mseg/metrics.hpp"
#include "mseg/phantom.hpp"
#include "mseg/rng.hpp"
#include "mseg/training.hpp"
#include "oracles.hpp"

using namespace mseg;

namespace {

ModelConfig tiny_model_cfg(int input_size = 24, uint64_t seed = 7) {
    ModelConfig cfg;
    cfg.input_size = input_size;
    cfg.stem_width = 4;
    cfg.width_mult = {1, 2, 4, 8, 16};
    cfg.stage_depths = {1, 1, 1, 1};
    cfg.seed = seed;
    return cfg;
}

MultiModalCase phantom_case(uint64_t seed, std::array<int, 3> dims = {24, 24, 24}) {
    PhantomSpec spec;
    spec.dims = dims;
    spec.lesion_count_range = {2, 3};
    spec.lesion_radius_range_mm = {2.0, 4.0};
    spec.seed = seed;
    return generate_phantom(spec);
}

TrainConfig quick_train_cfg() {
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.max_epochs = 2;
    cfg.seed = 5;
    return cfg;
}

bool same_params(const Model& a, const Model& b) {
    const auto& ea = a.params.entries();
    const auto& eb = b.params.entries();
    if (ea.size() != eb.size()) return false;
    for (size_t i = 0; i < ea.size(); ++i) {
        if (ea[i].name != eb[i].name || ea[i].tensor->data != eb[i].tensor->data) return false;
    }
    return true;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("config validation rejects non-positive fields") {
    CHECK_NOTHROW(validate_train_config(TrainConfig{}));
    TrainConfig c;
    c.lr0 = 0.0;
    CHECK_THROWS(validate_train_config(c));
    c = TrainConfig{};
    c.lr_decay = 0.0;
    CHECK_THROWS(validate_train_config(c));
    c.lr_decay = 1.5;
    CHECK_THROWS(validate_train_config(c));
    c = TrainConfig{};
    c.lr_decay_interval = 0;
    CHECK_THROWS(validate_train_config(c));
    c = TrainConfig{};
    c.batch_size = 0;
    CHECK_THROWS(validate_train_config(c));
    c = TrainConfig{};
    c.max_epochs = 0;  // a zero-epoch run can select nothing
    CHECK_THROWS(validate_train_config(c));
    c = TrainConfig{};
    c.val_interval = 0;
    CHECK_THROWS(validate_train_config(c));
}

TEST_CASE("learning rate decays stepwise") {
    const TrainConfig cfg;
    CHECK(lr_at(0, cfg) == 1e-4);
    CHECK(lr_at(399, cfg) == 1e-4);
    CHECK(lr_at(400, cfg) == 9.5e-5);
    CHECK(lr_at(401, cfg) == 9.5e-5);
    CHECK(lr_at(800, cfg) == 9.025e-5);
    CHECK_THROWS(lr_at(-1, cfg));

    TrainConfig fast;
    fast.lr0 = 1.0;
    fast.lr_decay = 0.5;
    fast.lr_decay_interval = 2;
    CHECK(lr_at(0, fast) == 1.0);
    CHECK(lr_at(1, fast) == 1.0);
    CHECK(lr_at(2, fast) == 0.5);
    CHECK(lr_at(5, fast) == 0.25);
}

TEST_CASE("dice loss matches its closed forms") {
    // p = g, binary and nonempty -> exactly 0.
    auto g = TensorT<double>::zeros({1, 1, 3, 3});
    g->data = {0, 1, 1, 0, 0, 1, 0, 0, 0};
    CHECK(dice_loss<double>(nullptr, g, g)->data[0] == 0.0);

    // Disjoint nonempty -> exactly 1.
    auto p = TensorT<double>::zeros({1, 1, 3, 3});
    p->data = {1, 0, 0, 1, 1, 0, 0, 0, 0};
    CHECK(dice_loss<double>(nullptr, p, g)->data[0] == 1.0);

    // Four foreground pixels, p = 0.5 everywhere on N pixels.
    const int N = 64;
    auto half = TensorT<double>::full({1, 1, 8, 8}, 0.5);
    auto four = TensorT<double>::zeros({1, 1, 8, 8});
    for (int i = 0; i < 4; ++i) four->data[size_t(i) * 7] = 1.0;
    const double expect = 1.0 - (2.0 * 4.0 * 0.5) / (4.0 + 0.25 * N);
    CHECK(dice_loss<double>(nullptr, half, four)->data[0] ==
          doctest::Approx(expect).epsilon(1e-12));

    // Both empty -> exactly 0 without touching the tape.
    TapeT<double> tape;
    auto z = TensorT<double>::zeros({1, 1, 2, 2});
    CHECK(dice_loss<double>(&tape, z, z)->data[0] == 0.0);
    CHECK(tape.size() == 0);

    auto wrong = TensorT<double>::zeros({1, 1, 2, 3});
    CHECK_THROWS(dice_loss<double>(nullptr, wrong, z));

    // Range invariant on random inputs.
    Rng rng(59);
    for (int trial = 0; trial < 20; ++trial) {
        auto pr = oracle::random_tensor(rng, {2, 1, 5, 5}, false, 0.0, 1.0);
        auto gr = TensorT<double>::zeros({2, 1, 5, 5});
        for (auto& v : gr->data) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
        const double dl = dice_loss<double>(nullptr, pr, gr)->data[0];
        CHECK(dl >= 0.0);
        CHECK(dl <= 1.0);
    }
}

TEST_CASE("dice loss gradient matches finite differences") {
    Rng rng(61);
    auto p = oracle::random_tensor(rng, {2, 1, 4, 4}, true, 0.05, 0.95);
    auto g = TensorT<double>::zeros({2, 1, 4, 4});
    for (auto& v : g->data) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
    g->data[0] = 1.0;

    TapeT<double> tape;
    const auto loss = dice_loss(&tape, p, g);
    tape.backward(loss);
    const std::vector<double> analytic(p->grad.begin(), p->grad.end());
    REQUIRE(analytic.size() == p->data.size());

    const auto loss_fn = [&]() { return dice_loss<double>(nullptr, p, g)->data[0]; };
    CHECK(oracle::max_fd_rel_err(p->data, analytic, loss_fn) < 1e-4);
}

TEST_CASE("epoch batches cover the pool once, deterministically") {
    const auto batches = make_batches(45, 15, 13);
    REQUIRE(batches.size() == 3);
    std::vector<size_t> all;
    for (const auto& b : batches) {
        CHECK(b.size() == 15);
        all.insert(all.end(), b.begin(), b.end());
    }
    std::sort(all.begin(), all.end());
    std::vector<size_t> want(45);
    std::iota(want.begin(), want.end(), size_t(0));
    CHECK(all == want);

    CHECK(make_batches(45, 15, 13) == batches);       // same seed, same order
    CHECK(make_batches(45, 15, 14) != batches);       // another stream
    CHECK(make_batches(10, 3, 1).back().size() == 1);  // partial tail kept
    CHECK(make_batches(4, 100, 1).size() == 1);
    CHECK_THROWS(make_batches(0, 15, 1));
    CHECK_THROWS(make_batches(45, 0, 1));

    // Plane histogram across one epoch equals the pool's histogram.
    std::vector<int> plane_of(45);
    for (size_t i = 0; i < plane_of.size(); ++i) plane_of[i] = int(i % 3);
    std::array<int, 3> pool_hist{0, 0, 0}, epoch_hist{0, 0, 0};
    for (int p : plane_of) ++pool_hist[size_t(p)];
    for (const auto& b : batches)
        for (size_t i : b) ++epoch_hist[size_t(plane_of[i])];
    CHECK(epoch_hist == pool_hist);
}

TEST_CASE("training validates its case sets") {
    const ModelConfig mcfg = tiny_model_cfg();
    const TrainConfig tcfg = quick_train_cfg();
    const MultiModalCase a = phantom_case(1);
    const MultiModalCase b = phantom_case(2);

    CHECK_THROWS(train(mcfg, {}, {b}, tcfg));
    CHECK_THROWS(train(mcfg, {a}, {}, tcfg));
    CHECK_THROWS(train(mcfg, {a}, {a}, tcfg));  // overlap
    MultiModalCase no_truth = phantom_case(3);
    no_truth.truth.reset();
    CHECK_THROWS(train(mcfg, {no_truth}, {b}, tcfg));
    CHECK_THROWS(train(mcfg, {a}, {no_truth}, tcfg));

    // All-background truth leaves nothing to train on after lesion filtering.
    MultiModalCase clean = phantom_case(4);
    std::fill(clean.truth->u8.begin(), clean.truth->u8.end(), uint8_t(0));
    CHECK_THROWS(train(mcfg, {clean}, {b}, tcfg));
}

TEST_CASE("a short training run is reproducible and checkpoints its best epoch") {
    const ModelConfig mcfg = tiny_model_cfg();
    const TrainConfig tcfg = quick_train_cfg();
    const std::vector<MultiModalCase> train_set{phantom_case(11), phantom_case(12)};
    const std::vector<MultiModalCase> val_set{phantom_case(13)};

    const auto dir = std::filesystem::temp_directory_path() / "mseg_train_test_ckpt";
    std::filesystem::remove_all(dir);
    std::ostringstream log1, log2;

    const TrainOutcome run1 = train(mcfg, train_set, val_set, tcfg, dir.string(), &log1);
    const TrainOutcome run2 = train(mcfg, train_set, val_set, tcfg, dir.string(), &log2);

    REQUIRE(run1.report.epoch_loss.size() == 2);
    REQUIRE(run1.report.val_dsc.size() == 2);
    CHECK(run1.report.val_dsc[0].first == 1);
    CHECK(run1.report.val_dsc[1].first == 2);
    for (double l : run1.report.epoch_loss) {
        CHECK(std::isfinite(l));
        CHECK(l >= 0.0);
        CHECK(l <= 1.0);
    }
    // Best epoch attains the maximum recorded validation DSC, first on ties.
    const int best = run1.report.best_epoch;
    REQUIRE(best >= 1);
    double best_val = -1.0;
    int first_argmax = 0;
    for (const auto& [e, v] : run1.report.val_dsc) {
        if (v > best_val) {
            best_val = v;
            first_argmax = e;
        }
    }
    CHECK(best == first_argmax);

    // Bitwise reproducibility of the whole run.
    CHECK(run1.report.epoch_loss == run2.report.epoch_loss);
    CHECK(run1.report.val_dsc == run2.report.val_dsc);
    CHECK(run1.report.best_epoch == run2.report.best_epoch);
    CHECK(log1.str() == log2.str());
    CHECK(same_params(run1.model, run2.model));

    // The metrics log is one header plus one line per epoch.
    const std::string log = log1.str();
    CHECK(log.rfind("epoch\tstep\tlr\tloss\tval_dsc\n", 0) == 0);
    CHECK(std::count(log.begin(), log.end(), '\n') == 3);

    // The checkpoint holds the returned (best-epoch) parameters.
    REQUIRE(!run1.report.best_checkpoint.empty());
    Model reloaded = build_model(mcfg);
    load_checkpoint(reloaded.params, run1.report.best_checkpoint);
    CHECK(same_params(run1.model, reloaded));
    std::filesystem::remove_all(dir);
}

TEST_CASE("prediction reassembles per-plane probability volumes") {
    const ModelConfig mcfg = tiny_model_cfg();
    const Model model = build_model(mcfg);
    const MultiModalCase mcase = phantom_case(21, {20, 20, 20});

    const auto probs = predict_probability_volumes(model, mcase, 7);
    REQUIRE(probs.size() == 3);
    CHECK(probs[0].first == SlicePlane::Axial);
    CHECK(probs[1].first == SlicePlane::Coronal);
    CHECK(probs[2].first == SlicePlane::Sagittal);
    for (const auto& [plane, vol] : probs) {
        CHECK(vol.dims == mcase.modalities[0].second.dims);
        CHECK(vol.kind == ElementKind::f32);
        for (float v : vol.f32) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }

    // Batch size cannot change per-sample results.
    const auto probs1 = predict_probability_volumes(model, mcase, 1);
    for (size_t i = 0; i < probs.size(); ++i) CHECK(probs[i].second.f32 == probs1[i].second.f32);

    // The fused prediction composes the probability volumes with one fusion.
    const Volume3D fused = predict_case(model, mcase);
    CHECK(fused.u8 == mpr_reconstruct(probs, FusionMethod::MajorityVote).u8);

    CHECK_THROWS(predict_probability_volumes(model, mcase, 0));
    MultiModalCase missing = mcase;
    missing.modalities.erase(missing.modalities.begin());  // drop flair
    CHECK_THROWS(predict_probability_volumes(model, missing, 7));
}

}  // TEST_SUITE

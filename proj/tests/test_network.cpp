#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "mseg/network.hpp"
#include "mseg/rng.hpp"

using namespace mseg;

namespace {

ModelConfig toy_cfg() {
    ModelConfig cfg;
    cfg.branches = {{"flair"}, {"t1"}, {"t2"}};
    cfg.input_size = 64;
    cfg.stem_width = 4;
    cfg.width_mult = {1, 2, 4, 8, 16};
    cfg.stage_depths = {1, 1, 1, 1};
    cfg.seed = 11;
    return cfg;
}

TensorPtr random_image(Rng& rng, int n, int s) {
    auto t = Tensor::zeros({n, 1, s, s});
    for (auto& v : t->data) v = float(rng.uniform(0.0, 1.0));
    return t;
}

std::vector<std::pair<std::string, TensorPtr>> toy_inputs(Rng& rng, const ModelConfig& cfg,
                                                          int n = 1) {
    std::vector<std::pair<std::string, TensorPtr>> in;
    for (const auto& name : cfg.input_names())
        in.emplace_back(name, random_image(rng, n, cfg.input_size));
    return in;
}

}  // namespace

TEST_SUITE("network") {

TEST_CASE("config validation rejects bad setups") {
    auto ok = toy_cfg();
    CHECK_NOTHROW(validate_model_config(ok));

    auto c1 = ok;
    c1.share_weights = true;
    CHECK_THROWS(validate_model_config(c1));

    auto c2 = ok;
    c2.branches.clear();
    CHECK_THROWS(validate_model_config(c2));

    auto c3 = ok;
    c3.branches = {{"flair"}, {"flair"}};
    CHECK_THROWS(validate_model_config(c3));

    auto c4 = ok;
    c4.branches = {{"flair", "t1", "t1"}};
    CHECK_THROWS(validate_model_config(c4));

    auto c5 = ok;
    c5.branches = {{}};
    CHECK_THROWS(validate_model_config(c5));

    auto c6 = ok;
    c6.input_size = 18;  // resolution chain bottoms out before level 5
    CHECK_THROWS(validate_model_config(c6));

    auto c7 = ok;
    c7.stem_width = 0;
    CHECK_THROWS(validate_model_config(c7));

    auto c8 = ok;
    c8.stage_depths = {1, 0, 1, 1};
    CHECK_THROWS(validate_model_config(c8));
}

TEST_CASE("width plan reproduces the reference backbone and fusion widths") {
    ModelConfig cfg;  // defaults: 3 branches, stem 64, multipliers (1,4,8,16,32)
    CHECK(cfg.level_width(1) == 64);
    CHECK(cfg.level_width(2) == 256);
    CHECK(cfg.level_width(3) == 512);
    CHECK(cfg.level_width(4) == 1024);
    CHECK(cfg.level_width(5) == 2048);
    CHECK(cfg.fused_width(1) == 96);
    CHECK(cfg.fused_width(2) == 384);
    CHECK(cfg.fused_width(3) == 768);
    CHECK(cfg.fused_width(4) == 1536);
    CHECK(cfg.fused_width(5) == 3072);
    CHECK(cfg.decoder_widths() == std::array<int, 4>{1536, 768, 384, 144});
}

TEST_CASE("resolution chains match the documented arithmetic") {
    ModelConfig big;
    big.input_size = 218;
    CHECK(big.level_sizes() == std::array<int, 5>{109, 54, 27, 14, 7});

    ModelConfig toy;
    toy.input_size = 64;
    CHECK(toy.level_sizes() == std::array<int, 5>{32, 16, 8, 4, 2});
}

TEST_CASE("encoder emits the expected feature-map shapes at both scales") {
    for (int S : {218, 64}) {
        ModelConfig cfg;
        cfg.branches = {{"flair"}};
        cfg.input_size = S;
        cfg.stem_width = 2;
        cfg.width_mult = {1, 2, 4, 8, 16};
        cfg.seed = 3;
        auto model = build_model(cfg);
        auto x = Tensor::zeros({1, 1, S, S});
        auto feats = encoder_forward<float>(model, nullptr, 0, x, false);
        const auto sizes = cfg.level_sizes();
        for (int l = 0; l < 5; ++l) {
            CHECK(feats[size_t(l)]->dim(1) == cfg.level_width(l + 1));
            CHECK(feats[size_t(l)]->dim(2) == sizes[size_t(l)]);
            CHECK(feats[size_t(l)]->dim(3) == sizes[size_t(l)]);
        }
    }
}

TEST_CASE("initialization statistics follow the documented scheme") {
    ModelConfig cfg;  // default widths so stage-2 has a 3x3 64->64 conv
    cfg.branches = {{"flair"}};
    cfg.seed = 21;
    auto model = build_model(cfg);

    const auto& w = model.params.get("b0.s2.k0.c2.w");
    REQUIRE(w->shape == std::vector<int>{64, 64, 3, 3});
    double s = 0, ss = 0;
    for (float v : w->data) {
        s += v;
        ss += double(v) * v;
    }
    const double n = double(w->data.size());
    const double sd = std::sqrt(ss / n - (s / n) * (s / n));
    CHECK(sd == doctest::Approx(0.125).epsilon(0.05));
    CHECK(std::abs(s / n) < 0.01);

    for (const auto& e : model.params.entries()) {
        auto ends_with = [&](const char* suf) {
            const std::string s2(suf);
            return e.name.size() >= s2.size() &&
                   e.name.compare(e.name.size() - s2.size(), s2.size(), s2) == 0;
        };
        if (ends_with(".b") || ends_with(".beta") || ends_with(".rmean"))
            for (float v : e.tensor->data) REQUIRE(v == 0.0f);
        if (ends_with(".gamma") || ends_with(".rvar"))
            for (float v : e.tensor->data) REQUIRE(v == 1.0f);
    }
}

TEST_CASE("same seed gives identical models; branches are distinct draws") {
    auto cfg = toy_cfg();
    auto m1 = build_model(cfg);
    auto m2 = build_model(cfg);
    for (const auto& e : m1.params.entries())
        REQUIRE(e.tensor->data == m2.params.get(e.name)->data);

    CHECK(m1.params.get("b0.stem.w")->data != m1.params.get("b1.stem.w")->data);
    CHECK(m1.params.get("b1.stem.w")->data != m1.params.get("b2.stem.w")->data);

    auto cfg2 = cfg;
    cfg2.seed = 12;
    auto m3 = build_model(cfg2);
    CHECK(m3.params.get("b0.stem.w")->data != m1.params.get("b0.stem.w")->data);
}

TEST_CASE("encoder rejects wrong input shapes") {
    auto model = build_model(toy_cfg());
    auto bad_size = Tensor::zeros({1, 1, 32, 32});
    CHECK_THROWS(encoder_forward<float>(model, nullptr, 0, bad_size, false));
    auto bad_chan = Tensor::zeros({1, 2, 64, 64});
    CHECK_THROWS(encoder_forward<float>(model, nullptr, 0, bad_chan, false));
    auto ok = Tensor::zeros({1, 1, 64, 64});
    CHECK_THROWS(encoder_forward<float>(model, nullptr, 3, ok, false));
}

TEST_CASE("zero input stays finite through the whole network") {
    auto cfg = toy_cfg();
    auto model = build_model(cfg);
    std::vector<std::pair<std::string, TensorPtr>> in;
    for (const auto& name : cfg.input_names()) in.emplace_back(name, Tensor::zeros({1, 1, 64, 64}));
    auto out = model_forward<float>(model, nullptr, in, true);
    for (float v : out->data) REQUIRE(std::isfinite(v));
}

TEST_CASE("cross-branch fusion halves then concatenates channel counts") {
    ModelConfig cfg;
    cfg.branches = {{"flair"}, {"t1"}, {"t2"}};
    cfg.input_size = 64;
    cfg.stem_width = 64;
    cfg.width_mult = {1, 1, 1, 1, 1};
    cfg.seed = 5;
    auto model = build_model(cfg);

    Rng rng(9);
    std::vector<TensorPtr> feats;
    for (int b = 0; b < 3; ++b) {
        auto f = Tensor::zeros({2, 64, 9, 9});
        for (auto& v : f->data) v = float(rng.uniform(-1.0, 1.0));
        feats.push_back(f);
    }
    auto fused = mmff_forward<float>(model, nullptr, 1, feats, false);
    CHECK(fused->shape == std::vector<int>{2, 96, 9, 9});  // 3 x 64/2

    ModelConfig sb = cfg;
    sb.branches = {{"flair"}};
    auto sbm = build_model(sb);
    auto one = mmff_forward<float>(sbm, nullptr, 1, {feats[0]}, false);
    CHECK(one->shape == std::vector<int>{2, 32, 9, 9});  // 64/2, spatial unchanged

    feats[2] = Tensor::zeros({2, 64, 8, 9});
    CHECK_THROWS(mmff_forward<float>(model, nullptr, 1, feats, false));
    CHECK_THROWS(mmff_forward<float>(model, nullptr, 1, {feats[0]}, false));  // count mismatch
}

TEST_CASE("decoder steps upsample to the skip's dims with the documented widths") {
    auto cfg = toy_cfg();
    // widths: levels (4,8,16,32,64); fused (6,12,24,48,96); decoder (48,24,12,6)
    CHECK(cfg.decoder_widths() == std::array<int, 4>{48, 24, 12, 6});
    auto model = build_model(cfg);

    Rng rng(13);
    auto mk = [&](int c, int h) {
        auto t = Tensor::zeros({1, c, h, h});
        for (auto& v : t->data) v = float(rng.uniform(-1.0, 1.0));
        return t;
    };
    // level-4 step: low = fused level-5 map (96ch 2x2), high = fused level-4 (48ch 4x4)
    auto u4 = msfu_forward<float>(model, nullptr, 4, mk(96, 2), mk(48, 4), false);
    CHECK(u4->shape == std::vector<int>{1, 48, 4, 4});
    auto u3 = msfu_forward<float>(model, nullptr, 3, u4, mk(24, 8), false);
    CHECK(u3->shape == std::vector<int>{1, 24, 8, 8});

    // odd skip dims force the alignment path (u 2x2 -> 4x4 vs skip 5x5 pads; 7x7 -> 14 vs 13 crops)
    ModelConfig odd = toy_cfg();
    odd.input_size = 218;
    auto om = build_model(odd);
    auto pad_case = msfu_forward<float>(om, nullptr, 4, mk(96, 7), mk(48, 14), false);
    CHECK(pad_case->shape == std::vector<int>{1, 48, 14, 14});
    auto crop_case = msfu_forward<float>(om, nullptr, 3, pad_case, mk(24, 27), false);
    CHECK(crop_case->shape == std::vector<int>{1, 24, 27, 27});

    CHECK_THROWS(msfu_forward<float>(model, nullptr, 4, mk(96, 4), mk(48, 4), false));
    CHECK_THROWS(msfu_forward<float>(model, nullptr, 4, mk(96, 5), mk(48, 4), false));
}

TEST_CASE("full forward emits a valid per-pixel distribution at toy scale") {
    auto cfg = toy_cfg();
    auto model = build_model(cfg);
    Rng rng(31);
    auto in = toy_inputs(rng, cfg, 2);
    auto out = model_forward<float>(model, nullptr, in, false);
    REQUIRE(out->shape == std::vector<int>{2, 2, 64, 64});
    const size_t plane = 64 * 64;
    for (int n = 0; n < 2; ++n)
        for (size_t j = 0; j < plane; ++j) {
            const float p0 = out->data[size_t(n) * 2 * plane + j];
            const float p1 = out->data[size_t(n) * 2 * plane + plane + j];
            REQUIRE(p0 >= 0.0f);
            REQUIRE(p1 >= 0.0f);
            REQUIRE(std::abs(p0 + p1 - 1.0f) <= 1e-6f);
        }
}

TEST_CASE("input binding is by name, not by position") {
    auto cfg = toy_cfg();
    auto model = build_model(cfg);
    Rng rng(37);
    auto in = toy_inputs(rng, cfg);
    auto out1 = model_forward<float>(model, nullptr, in, false);

    auto permuted = std::vector<std::pair<std::string, TensorPtr>>{in[2], in[0], in[1]};
    auto out2 = model_forward<float>(model, nullptr, permuted, false);
    CHECK(out1->data == out2->data);

    auto missing = std::vector<std::pair<std::string, TensorPtr>>{in[0], in[1]};
    CHECK_THROWS(model_forward<float>(model, nullptr, missing, false));

    auto extra = in;
    extra.emplace_back("pd", in[0].second);
    CHECK_THROWS(model_forward<float>(model, nullptr, extra, false));

    auto dup = std::vector<std::pair<std::string, TensorPtr>>{in[0], in[1], in[2], in[0]};
    CHECK_THROWS(model_forward<float>(model, nullptr, dup, false));

    auto wrong = std::vector<std::pair<std::string, TensorPtr>>{
        in[0], in[1], {"t2", Tensor::zeros({1, 1, 32, 32})}};
    CHECK_THROWS(model_forward<float>(model, nullptr, wrong, false));
}

TEST_CASE("a stacked-input branch consumes its names as channels") {
    ModelConfig cfg;
    cfg.branches = {{"flair", "t1", "t2"}};  // single branch, 3-channel stem
    cfg.input_size = 64;
    cfg.stem_width = 4;
    cfg.width_mult = {1, 2, 4, 8, 16};
    cfg.seed = 7;
    auto model = build_model(cfg);
    CHECK(model.params.get("b0.stem.w")->shape == std::vector<int>{4, 3, 7, 7});

    Rng rng(41);
    auto in = toy_inputs(rng, cfg);
    auto out = model_forward<float>(model, nullptr, in, false);
    CHECK(out->shape == std::vector<int>{1, 2, 64, 64});
}

TEST_CASE("gradients reach every trainable parameter") {
    ModelConfig cfg;
    cfg.branches = {{"flair"}, {"t1"}};
    cfg.input_size = 32;
    cfg.stem_width = 4;
    cfg.width_mult = {1, 2, 4, 8, 16};
    cfg.seed = 17;
    auto model = build_model(cfg);

    Rng rng(43);
    std::vector<std::pair<std::string, TensorPtr>> in;
    for (const auto& name : cfg.input_names()) in.emplace_back(name, random_image(rng, 2, 32));

    Tape tape;
    auto out = model_forward<float>(model, &tape, in, true);
    auto r = Tensor::zeros(out->shape);
    for (auto& v : r->data) v = float(rng.uniform(-1.0, 1.0));
    auto loss = sum_all<float>(&tape, mul<float>(&tape, out, r));
    tape.backward(loss);

    for (const auto& e : model.params.entries()) {
        if (!e.trainable) continue;
        double norm = 0;
        for (size_t i = 0; i < e.tensor->data.size(); ++i) {
            const double g = e.tensor->grad_at(int64_t(i));
            norm += g * g;
        }
        INFO("parameter: ", e.name);
        REQUIRE(norm > 0.0);
    }
}

TEST_CASE("branches are isolated: mutating one leaves the others' outputs unchanged") {
    auto cfg = toy_cfg();
    auto model = build_model(cfg);
    Rng rng(47);
    auto x = random_image(rng, 1, 64);

    auto before = encoder_forward<float>(model, nullptr, 0, x, false);
    for (auto& e : model.params.entries())
        if (e.name.rfind("b1.", 0) == 0)
            for (auto& v : e.tensor->data) v += 0.5f;
    auto after = encoder_forward<float>(model, nullptr, 0, x, false);
    for (int l = 0; l < 5; ++l) CHECK(before[size_t(l)]->data == after[size_t(l)]->data);

    auto b1_before = encoder_forward<float>(model, nullptr, 1, x, false);
    for (auto& e : model.params.entries())
        if (e.name.rfind("b0.", 0) == 0)
            for (auto& v : e.tensor->data) v += 0.25f;
    auto b1_after = encoder_forward<float>(model, nullptr, 1, x, false);
    for (int l = 0; l < 5; ++l) CHECK(b1_before[size_t(l)]->data == b1_after[size_t(l)]->data);
}

TEST_CASE("thresholding is strict and matches an elementwise scan") {
    auto two = Tensor::zeros({1, 2, 2, 2});
    two->data = {0.49f, 0.5f, 0.9f, 1.0f,   // background channel (ignored)
                 0.51f, 0.5f, 0.1f, 0.75f};  // lesion channel
    auto bin = binarize<float>(two, 0.5f);
    REQUIRE(bin->shape == std::vector<int>{1, 1, 2, 2});
    CHECK(bin->data == std::vector<float>{1, 0, 0, 1});

    Rng rng(53);
    auto soft = Tensor::zeros({2, 1, 5, 5});
    for (auto& v : soft->data) v = float(rng.uniform(0.0, 1.0));
    auto b2 = binarize<float>(soft, 0.5f);
    for (size_t i = 0; i < soft->data.size(); ++i)
        CHECK(b2->data[i] == (soft->data[i] > 0.5f ? 1.0f : 0.0f));

    CHECK_THROWS(binarize<float>(Tensor::zeros({1, 3, 2, 2}), 0.5f));
}

TEST_CASE("full-resolution forward works at the reference input size") {
    ModelConfig cfg;
    cfg.branches = {{"flair"}, {"t1"}, {"t2"}};
    cfg.input_size = 218;
    cfg.stem_width = 2;
    cfg.width_mult = {1, 2, 4, 8, 16};
    cfg.seed = 29;
    auto model = build_model(cfg);
    Rng rng(59);
    auto in = toy_inputs(rng, cfg);
    auto out = model_forward<float>(model, nullptr, in, false);
    REQUIRE(out->shape == std::vector<int>{1, 2, 218, 218});
    const size_t plane = 218 * 218;
    for (size_t j = 0; j < plane; ++j)
        REQUIRE(std::abs(out->data[j] + out->data[plane + j] - 1.0f) <= 1e-6f);
}

TEST_CASE("all-zero input produces a spatially constant probability map") {
    // At initialization every conv bias and every norm shift is zero, so a
    // zero input propagates an exactly-zero map through the whole stack and
    // the softmax emits 0.5 at every pixel in both modes. (With arbitrary
    // trained parameters the transposed-conv upsamplers impose a parity
    // texture on constant inputs, so exact constancy is an init-state
    // property, not a general one.)
    auto cfg = toy_cfg();
    cfg.seed = 61;
    auto model = build_model(cfg);
    std::vector<std::pair<std::string, TensorPtr>> in;
    for (const auto& name : cfg.input_names()) in.emplace_back(name, Tensor::zeros({1, 1, 64, 64}));
    for (bool train : {false, true}) {
        auto out = model_forward<float>(model, nullptr, in, train);
        for (float v : out->data) REQUIRE(v == 0.5f);
    }
}

}  // TEST_SUITE

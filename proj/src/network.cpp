#include "mseg/network.hpp"

#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include "mseg/rng.hpp"

namespace mseg {

int halve_ceil(int s) { return (s - 1) / 2 + 1; }
int halve_floor(int s) { return s / 2; }

namespace {

int halve_channels(int c) { return c / 2 > 0 ? c / 2 : 1; }

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace

int ModelConfig::level_width(int level) const {
    if (level < 1 || level > 5) fail("level_width: level must be 1..5");
    return stem_width * width_mult[size_t(level - 1)];
}

int ModelConfig::fused_width(int level) const {
    return branch_count() * halve_channels(level_width(level));
}

std::array<int, 5> ModelConfig::level_sizes() const {
    std::array<int, 5> r{};
    r[0] = halve_ceil(input_size);
    r[1] = halve_floor(r[0]);
    for (int i = 2; i < 5; ++i) r[i] = halve_ceil(r[i - 1]);
    return r;
}

std::array<int, 4> ModelConfig::decoder_widths() const {
    std::array<int, 4> u{};
    int low = fused_width(5);
    for (int l = 4; l >= 1; --l) {
        low = halve_channels(halve_channels(low) + fused_width(l));
        u[size_t(4 - l)] = low;
    }
    return u;
}

std::vector<std::string> ModelConfig::input_names() const {
    std::vector<std::string> r;
    for (const auto& br : branches)
        for (const auto& n : br) r.push_back(n);
    return r;
}

void validate_model_config(const ModelConfig& cfg) {
    if (cfg.branches.empty()) fail("model config: need at least one branch");
    std::set<std::string> seen;
    for (const auto& br : cfg.branches) {
        if (br.empty()) fail("model config: branch with no input names");
        for (const auto& name : br) {
            if (name.empty()) fail("model config: empty input name");
            if (!seen.insert(name).second)
                fail("model config: duplicate input name '" + name + "'");
        }
    }
    if (cfg.share_weights)
        fail("model config: weight sharing between branches is not supported");
    if (cfg.stem_width < 1) fail("model config: stem width must be positive");
    for (int m : cfg.width_mult)
        if (m < 1) fail("model config: width multipliers must be positive");
    for (int d : cfg.stage_depths)
        if (d < 1) fail("model config: stage depths must be positive");
    if (!(cfg.bn_momentum >= 0.0f && cfg.bn_momentum < 1.0f))
        fail("model config: norm momentum must be in [0,1)");
    if (!(cfg.bn_eps > 0.0f)) fail("model config: norm epsilon must be positive");
    int prev = cfg.input_size;
    for (int s : cfg.level_sizes()) {
        if (s < 1 || s >= prev)
            fail("model config: input size " + std::to_string(cfg.input_size) +
                 " does not give a strictly decreasing five-level resolution chain");
        prev = s;
    }
}

namespace {

// Parameter creation. Weights draw from one shared stream in a fixed
// traversal order, so the full parameter set is a pure function of the seed.
// Biases on convolutions that feed a normalization layer stay fixed at zero
// (the normalization cancels per-channel constants, so such biases would get
// an exactly-zero gradient and only drift on rounding noise under Adam);
// live_bias marks the one conv whose output is used directly.
template <typename T>
struct Maker {
    ParamStoreT<T>& P;
    Rng& rng;

    void conv(const std::string& n, int co, int ci, int k, bool live_bias = false) {
        auto w = P.create(n + ".w", {co, ci, k, k}, true);
        const double sd = std::sqrt(2.0 / (double(ci) + double(co)));
        for (auto& v : w->data) v = T(sd * rng.normal());
        P.create(n + ".b", {co}, live_bias);
    }
    void upconv(const std::string& n, int ci, int co) {
        auto w = P.create(n + ".w", {ci, co, 2, 2}, true);
        const double sd = std::sqrt(2.0 / (double(ci) + double(co)));
        for (auto& v : w->data) v = T(sd * rng.normal());
        P.create(n + ".b", {co}, false);
    }
    void norm(const std::string& n, int c) {
        auto g = P.create(n + ".gamma", {c}, true);
        for (auto& v : g->data) v = T(1);
        P.create(n + ".beta", {c}, true);
        P.create(n + ".rmean", {c}, false);
        auto rv = P.create(n + ".rvar", {c}, false);
        for (auto& v : rv->data) v = T(1);
    }
};

// Forward-pass helpers bound to one model + tape + mode.
template <typename T>
struct Runner {
    const ModelT<T>& m;
    TapeT<T>* tape;
    bool train;

    const TensorPtrT<T>& g(const std::string& n) const { return m.params.get(n); }
    TensorPtrT<T> conv(const std::string& n, const TensorPtrT<T>& x, int stride, int pad) const {
        return conv2d<T>(tape, x, g(n + ".w"), g(n + ".b"), stride, pad);
    }
    TensorPtrT<T> up(const std::string& n, const TensorPtrT<T>& x) const {
        return conv_transpose2d<T>(tape, x, g(n + ".w"), g(n + ".b"));
    }
    TensorPtrT<T> norm(const std::string& n, const TensorPtrT<T>& x) const {
        return batchnorm2d<T>(tape, x, g(n + ".gamma"), g(n + ".beta"), g(n + ".rmean"),
                              g(n + ".rvar"), train, T(m.config.bn_momentum),
                              T(m.config.bn_eps));
    }
    TensorPtrT<T> norm_act(const std::string& n, const TensorPtrT<T>& x) const {
        return relu<T>(tape, norm(n, x));
    }
};

std::string branch_prefix(int b) { return "b" + std::to_string(b); }

std::string block_prefix(int b, int stage, int k) {
    return branch_prefix(b) + ".s" + std::to_string(stage) + ".k" + std::to_string(k);
}

}  // namespace

template <typename T>
ModelT<T> build_model_t(const ModelConfig& cfg) {
    validate_model_config(cfg);
    ModelT<T> model;
    model.config = cfg;
    Rng rng(cfg.seed);
    Maker<T> mk{model.params, rng};
    const int M = cfg.branch_count();

    for (int b = 0; b < M; ++b) {
        mk.conv(branch_prefix(b) + ".stem", cfg.level_width(1),
                int(cfg.branches[size_t(b)].size()), 7);
        mk.norm(branch_prefix(b) + ".stembn", cfg.level_width(1));
        int in = cfg.level_width(1);
        for (int s = 2; s <= 5; ++s) {
            const int out = cfg.level_width(s);
            const int mid = std::max(1, out / 4);
            for (int k = 0; k < cfg.stage_depths[size_t(s - 2)]; ++k) {
                const std::string kp = block_prefix(b, s, k);
                mk.conv(kp + ".c1", mid, in, 1);
                mk.norm(kp + ".bn1", mid);
                mk.conv(kp + ".c2", mid, mid, 3);
                mk.norm(kp + ".bn2", mid);
                mk.conv(kp + ".c3", out, mid, 1);
                mk.norm(kp + ".bn3", out);
                if (k == 0) {
                    mk.conv(kp + ".proj", out, in, 1);
                    mk.norm(kp + ".projbn", out);
                }
                in = out;
            }
        }
    }

    for (int l = 1; l <= 5; ++l) {
        const int c = cfg.level_width(l), half = halve_channels(c);
        for (int b = 0; b < M; ++b) {
            const std::string p = "f" + std::to_string(l) + ".b" + std::to_string(b);
            mk.norm(p + ".bn1", c);
            mk.conv(p + ".c1", half, c, 1);
            mk.norm(p + ".bn2", half);
            mk.conv(p + ".c2", half, half, 3);
        }
    }

    int low = cfg.fused_width(5);
    for (int l = 4; l >= 1; --l) {
        const std::string p = "u" + std::to_string(l);
        const int lh = halve_channels(low);
        const int cat = lh + cfg.fused_width(l);
        const int out = halve_channels(cat);
        mk.norm(p + ".bn1", low);
        mk.conv(p + ".c1", lh, low, 1);
        mk.norm(p + ".bn2", lh);
        mk.upconv(p + ".up", lh, lh);
        mk.norm(p + ".bn3", cat);
        mk.conv(p + ".c2", out, cat, 1);
        mk.norm(p + ".bn4", out);
        mk.conv(p + ".c3", out, out, 3);
        low = out;
    }

    const int hh = halve_channels(low);
    mk.norm("head.bn1", low);
    mk.upconv("head.up", low, hh);
    mk.norm("head.bn2", hh);
    mk.conv("head.conv", 2, hh, 3, /*live_bias=*/true);
    return model;
}

Model build_model(const ModelConfig& cfg) { return build_model_t<float>(cfg); }

template <typename T>
std::array<TensorPtrT<T>, 5> encoder_forward(const ModelT<T>& model, TapeT<T>* tape, int branch,
                                             const TensorPtrT<T>& x, bool train) {
    const auto& cfg = model.config;
    if (branch < 0 || branch >= cfg.branch_count()) fail("encoder: branch index out of range");
    if (!x || x->shape.size() != 4) fail("encoder: input must be a 4D tensor");
    const int S = cfg.input_size;
    const int stack = int(cfg.branches[size_t(branch)].size());
    if (x->dim(1) != stack || x->dim(2) != S || x->dim(3) != S)
        fail("encoder: expected input [N," + std::to_string(stack) + "," + std::to_string(S) +
             "," + std::to_string(S) + "]");

    Runner<T> r{model, tape, train};
    const std::string bp = branch_prefix(branch);
    std::array<TensorPtrT<T>, 5> out{};
    out[0] = r.norm_act(bp + ".stembn", r.conv(bp + ".stem", x, 2, 3));
    // Pool to exactly floor(H/2): pad 1 when the input dim is even, 0 when odd.
    auto cur = maxpool2d<T>(tape, out[0], 3, 2, out[0]->dim(2) % 2 == 0 ? 1 : 0);
    for (int s = 2; s <= 5; ++s) {
        const int stage_stride = s == 2 ? 1 : 2;
        for (int k = 0; k < cfg.stage_depths[size_t(s - 2)]; ++k) {
            const std::string kp = block_prefix(branch, s, k);
            const int st = k == 0 ? stage_stride : 1;
            auto h = r.norm_act(kp + ".bn1", r.conv(kp + ".c1", cur, st, 0));
            h = r.norm_act(kp + ".bn2", r.conv(kp + ".c2", h, 1, 1));
            h = r.norm(kp + ".bn3", r.conv(kp + ".c3", h, 1, 0));
            auto sc = k == 0 ? r.norm(kp + ".projbn", r.conv(kp + ".proj", cur, st, 0)) : cur;
            cur = relu<T>(tape, add<T>(tape, h, sc));
        }
        out[size_t(s - 1)] = cur;
    }
    return out;
}

template <typename T>
TensorPtrT<T> mmff_forward(const ModelT<T>& model, TapeT<T>* tape, int level,
                           const std::vector<TensorPtrT<T>>& features, bool train) {
    const auto& cfg = model.config;
    if (level < 1 || level > 5) fail("fusion: level must be 1..5");
    if (int(features.size()) != cfg.branch_count())
        fail("fusion: need exactly one feature map per branch");
    for (const auto& f : features) {
        if (!f || f->shape.size() != 4) fail("fusion: feature maps must be 4D");
        if (f->shape != features[0]->shape) fail("fusion: feature map shapes disagree");
    }
    Runner<T> r{model, tape, train};
    std::vector<TensorPtrT<T>> parts;
    for (int b = 0; b < cfg.branch_count(); ++b) {
        const std::string p = "f" + std::to_string(level) + ".b" + std::to_string(b);
        auto h = r.norm_act(p + ".bn1", features[size_t(b)]);
        h = r.conv(p + ".c1", h, 1, 0);
        h = r.norm_act(p + ".bn2", h);
        parts.push_back(r.conv(p + ".c2", h, 1, 1));
    }
    return parts.size() == 1 ? parts[0] : concat_channels<T>(tape, parts);
}

template <typename T>
TensorPtrT<T> msfu_forward(const ModelT<T>& model, TapeT<T>* tape, int level,
                           const TensorPtrT<T>& low, const TensorPtrT<T>& high, bool train) {
    if (level < 1 || level > 4) fail("decoder: level must be 1..4");
    if (!low || !high || low->shape.size() != 4 || high->shape.size() != 4)
        fail("decoder: inputs must be 4D tensors");
    if (low->dim(0) != high->dim(0)) fail("decoder: batch sizes disagree");
    if (!(low->dim(2) < high->dim(2) && low->dim(3) < high->dim(3)))
        fail("decoder: low-resolution map must be strictly coarser than the skip map");

    Runner<T> r{model, tape, train};
    const std::string p = "u" + std::to_string(level);
    auto h = r.norm_act(p + ".bn1", low);
    h = r.conv(p + ".c1", h, 1, 0);
    h = r.norm_act(p + ".bn2", h);
    h = r.up(p + ".up", h);
    h = pad_crop2d<T>(tape, h, high->dim(2), high->dim(3));
    auto cat = concat_channels<T>(tape, {h, high});
    cat = r.norm_act(p + ".bn3", cat);
    cat = r.conv(p + ".c2", cat, 1, 0);
    cat = r.norm_act(p + ".bn4", cat);
    return r.conv(p + ".c3", cat, 1, 1);
}

template <typename T>
TensorPtrT<T> model_forward(const ModelT<T>& model, TapeT<T>* tape,
                            const std::vector<std::pair<std::string, TensorPtrT<T>>>& inputs,
                            bool train) {
    const auto& cfg = model.config;
    const int S = cfg.input_size;

    std::map<std::string, TensorPtrT<T>> byname;
    for (const auto& [name, img] : inputs)
        if (!byname.emplace(name, img).second) fail("forward: duplicate input '" + name + "'");
    const auto names = cfg.input_names();
    if (byname.size() != names.size())
        fail("forward: input name set does not match the model's configured inputs");
    int N = -1;
    for (const auto& name : names) {
        auto it = byname.find(name);
        if (it == byname.end()) fail("forward: missing input '" + name + "'");
        const auto& img = it->second;
        if (!img || img->shape.size() != 4 || img->dim(1) != 1 || img->dim(2) != S ||
            img->dim(3) != S)
            fail("forward: input '" + name + "' must be [N,1," + std::to_string(S) + "," +
                 std::to_string(S) + "]");
        if (N < 0)
            N = img->dim(0);
        else if (img->dim(0) != N)
            fail("forward: inputs have different batch sizes");
    }

    std::array<TensorPtrT<T>, 5> fused{};
    {
        std::vector<std::array<TensorPtrT<T>, 5>> feats;
        for (int b = 0; b < cfg.branch_count(); ++b) {
            const auto& br = cfg.branches[size_t(b)];
            TensorPtrT<T> xb;
            if (br.size() == 1) {
                xb = byname.at(br[0]);
            } else {
                std::vector<TensorPtrT<T>> stack;
                for (const auto& nm : br) stack.push_back(byname.at(nm));
                xb = concat_channels<T>(tape, stack);
            }
            feats.push_back(encoder_forward<T>(model, tape, b, xb, train));
        }
        for (int l = 1; l <= 5; ++l) {
            std::vector<TensorPtrT<T>> per;
            per.reserve(feats.size());
            for (const auto& f : feats) per.push_back(f[size_t(l - 1)]);
            fused[size_t(l - 1)] = mmff_forward<T>(model, tape, l, per, train);
        }
    }  // branch activations release here when not recording

    auto d = fused[4];
    for (int l = 4; l >= 1; --l) d = msfu_forward<T>(model, tape, l, d, fused[size_t(l - 1)], train);

    Runner<T> r{model, tape, train};
    auto h = r.norm_act("head.bn1", d);
    h = r.up("head.up", h);
    h = pad_crop2d<T>(tape, h, S, S);
    h = r.norm_act("head.bn2", h);
    h = r.conv("head.conv", h, 1, 1);
    return softmax_channels<T>(tape, h);
}

template <typename T>
TensorPtrT<T> binarize(const TensorPtrT<T>& prob, T tau) {
    if (!prob || prob->shape.size() != 4) fail("binarize: need a 4D probability map");
    const int N = prob->dim(0), C = prob->dim(1), H = prob->dim(2), W = prob->dim(3);
    if (C != 1 && C != 2) fail("binarize: expected 1 or 2 channels");
    const int src_c = C - 1;  // lesion channel of a 2-channel map, else the only channel
    const size_t plane = size_t(H) * W;
    auto out = TensorT<T>::zeros({N, 1, H, W});
    for (int n = 0; n < N; ++n) {
        const T* p = prob->data.data() + (size_t(n) * C + src_c) * plane;
        T* o = out->data.data() + size_t(n) * plane;
        for (size_t j = 0; j < plane; ++j) o[j] = p[j] > tau ? T(1) : T(0);
    }
    return out;
}

#define MSEG_NETWORK_INSTANTIATE(T)                                                            \
    template ModelT<T> build_model_t<T>(const ModelConfig&);                                   \
    template std::array<TensorPtrT<T>, 5> encoder_forward<T>(const ModelT<T>&, TapeT<T>*, int, \
                                                             const TensorPtrT<T>&, bool);      \
    template TensorPtrT<T> mmff_forward<T>(const ModelT<T>&, TapeT<T>*, int,                   \
                                           const std::vector<TensorPtrT<T>>&, bool);           \
    template TensorPtrT<T> msfu_forward<T>(const ModelT<T>&, TapeT<T>*, int,                   \
                                           const TensorPtrT<T>&, const TensorPtrT<T>&, bool);  \
    template TensorPtrT<T> model_forward<T>(                                                   \
        const ModelT<T>&, TapeT<T>*, const std::vector<std::pair<std::string, TensorPtrT<T>>>&, \
        bool);                                                                                 \
    template TensorPtrT<T> binarize<T>(const TensorPtrT<T>&, T);

MSEG_NETWORK_INSTANTIATE(float)
MSEG_NETWORK_INSTANTIATE(double)
#undef MSEG_NETWORK_INSTANTIATE

}  // namespace mseg

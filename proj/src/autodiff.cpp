#include "mseg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace mseg {

namespace {

void check(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
}

template <typename T>
bool want_grad(TapeT<T>* tape, std::initializer_list<const TensorPtrT<T>*> ins) {
    if (!tape) return false;
    for (auto* p : ins)
        if (*p && (*p)->requires_grad) return true;
    return false;
}

// If no gradient ever reached t, there is nothing to propagate.
template <typename T>
const T* grad_or_null(const TensorPtrT<T>& t) {
    return t->grad.empty() ? nullptr : t->grad.data();
}

// ---- GEMM kernels ----------------------------------------------------------

// C[i][j] += sum_k A[i][k]*B[k][j], with each C element accumulated in
// strictly ascending k order. The k-panel loop only improves B reuse; for a
// fixed (i,j) the panels are visited in order, so the reduction order is
// unchanged. ldc lets C rows live inside a larger tensor.
template <typename T>
void gemm_accum(int I, int K, int J, const T* A, const T* B, T* C, size_t ldc) {
    constexpr int kPanel = 256;
    for (int k0 = 0; k0 < K; k0 += kPanel) {
        const int k1 = std::min(K, k0 + kPanel);
        for (int i = 0; i < I; ++i) {
            const T* a = A + size_t(i) * K;
            T* c = C + size_t(i) * ldc;
            for (int k = k0; k < k1; ++k) {
                const T av = a[k];
                const T* brow = B + size_t(k) * J;
                for (int j = 0; j < J; ++j) c[j] += av * brow[j];
            }
        }
    }
}

// C[k][j] += sum_i A[i][k]*B[i][j]  (A^T * B; no ordering constraint).
template <typename T>
void gemm_at_b(int I, int K, int J, const T* A, size_t lda, const T* B, size_t ldb, T* C) {
    for (int i = 0; i < I; ++i) {
        const T* arow = A + size_t(i) * lda;
        const T* brow = B + size_t(i) * ldb;
        for (int k = 0; k < K; ++k) {
            const T av = arow[k];
            T* crow = C + size_t(k) * J;
            for (int j = 0; j < J; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[i][k] += sum_j A[i][j]*B[k][j]  (A * B^T; no ordering constraint).
template <typename T>
void gemm_a_bt(int I, int K, int J, const T* A, size_t lda, const T* B, T* C) {
    for (int i = 0; i < I; ++i) {
        const T* arow = A + size_t(i) * lda;
        T* crow = C + size_t(i) * K;
        for (int k = 0; k < K; ++k) {
            const T* brow = B + size_t(k) * J;
            T acc = 0;
            for (int j = 0; j < J; ++j) acc += arow[j] * brow[j];
            crow[k] += acc;
        }
    }
}

// ---- im2col ----------------------------------------------------------------

// Lower output rows [r0,r1) of one image into a K x (r1-r0)*OW column matrix,
// K = Ci*k*k with rows ordered (ci, kh, kw) — the same order the reference
// convolution sums in.
template <typename T>
void im2col_rows(const T* x, int Ci, int H, int W, int k, int stride, int pad, int OW, int r0,
                 int r1, T* col) {
    const int J = (r1 - r0) * OW;
    int krow = 0;
    for (int ci = 0; ci < Ci; ++ci)
        for (int kh = 0; kh < k; ++kh)
            for (int kw = 0; kw < k; ++kw, ++krow) {
                T* dst = col + size_t(krow) * J;
                for (int oh = r0; oh < r1; ++oh) {
                    const int ih = oh * stride - pad + kh;
                    T* drow = dst + size_t(oh - r0) * OW;
                    if (ih < 0 || ih >= H) {
                        std::fill(drow, drow + OW, T(0));
                        continue;
                    }
                    const T* src = x + (size_t(ci) * H + ih) * W;
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride - pad + kw;
                        drow[ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
                    }
                }
            }
}

// Scatter-add the column matrix of output rows [r0,r1) back into dx.
template <typename T>
void col2im_rows_add(const T* col, int Ci, int H, int W, int k, int stride, int pad, int OW,
                     int r0, int r1, T* dx) {
    const int J = (r1 - r0) * OW;
    int krow = 0;
    for (int ci = 0; ci < Ci; ++ci)
        for (int kh = 0; kh < k; ++kh)
            for (int kw = 0; kw < k; ++kw, ++krow) {
                const T* src = col + size_t(krow) * J;
                for (int oh = r0; oh < r1; ++oh) {
                    const int ih = oh * stride - pad + kh;
                    if (ih < 0 || ih >= H) continue;
                    const T* srow = src + size_t(oh - r0) * OW;
                    T* drow = dx + (size_t(ci) * H + ih) * W;
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride - pad + kw;
                        if (iw >= 0 && iw < W) drow[iw] += srow[ow];
                    }
                }
            }
}

// Output rows per im2col slab, capped so the column buffer stays modest.
int conv_slab_rows(int K, int OW, int OH, size_t elem_size) {
    const size_t budget = 32u << 20;
    size_t rows = budget / (size_t(K) * size_t(OW) * elem_size);
    return int(std::clamp<size_t>(rows, 1, size_t(OH)));
}

}  // namespace

// ---- conv2d ----------------------------------------------------------------

template <typename T>
TensorPtrT<T> conv2d(TapeT<T>* tape, const TensorPtrT<T>& x, const TensorPtrT<T>& w,
                     const TensorPtrT<T>& b, int stride, int padding) {
    check(x && w && b, "conv2d: null operand");
    check(x->shape.size() == 4 && w->shape.size() == 4 && b->shape.size() == 1,
          "conv2d: x must be 4D, w 4D, b 1D");
    const int N = x->dim(0), Ci = x->dim(1), H = x->dim(2), W = x->dim(3);
    const int Co = w->dim(0), k = w->dim(2);
    check(w->dim(1) == Ci, "conv2d: channel mismatch between input and weights");
    check(w->dim(3) == k, "conv2d: kernel must be square");
    check(b->dim(0) == Co, "conv2d: bias length != output channels");
    check(stride >= 1 && padding >= 0, "conv2d: bad stride/padding");
    const int OH = (H + 2 * padding - k) / stride + 1;
    const int OW = (W + 2 * padding - k) / stride + 1;
    check(H + 2 * padding >= k && W + 2 * padding >= k && OH >= 1 && OW >= 1,
          "conv2d: output would be empty");

    auto out = TensorT<T>::zeros({N, Co, OH, OW});
    const int K = Ci * k * k;
    const int slab = conv_slab_rows(K, OW, OH, sizeof(T));
    std::vector<T> col(size_t(K) * size_t(slab) * size_t(OW));

    for (int n = 0; n < N; ++n) {
        const T* xn = x->data.data() + size_t(n) * Ci * H * W;
        T* on = out->data.data() + size_t(n) * Co * OH * OW;
        for (int r0 = 0; r0 < OH; r0 += slab) {
            const int r1 = std::min(OH, r0 + slab);
            im2col_rows(xn, Ci, H, W, k, stride, padding, OW, r0, r1, col.data());
            // Bias seeds each accumulator before the GEMM adds the taps.
            for (int co = 0; co < Co; ++co)
                std::fill(on + (size_t(co) * OH + r0) * OW, on + (size_t(co) * OH + r1) * OW,
                          b->data[size_t(co)]);
            gemm_accum(Co, K, (r1 - r0) * OW, w->data.data(), col.data(),
                       on + size_t(r0) * OW, size_t(OH) * OW);
        }
    }

    if (want_grad(tape, {&x, &w, &b})) {
        out->requires_grad = true;
        tape->record([x, w, b, out, stride, padding, N, Ci, H, W, Co, k, OH, OW, K]() {
            const T* dy = grad_or_null(out);
            if (!dy) return;
            const int slab = conv_slab_rows(K, OW, OH, sizeof(T));
            const int J = slab * OW;
            std::vector<T> col, dcol;
            if (w->requires_grad || x->requires_grad) col.resize(size_t(K) * J);
            if (x->requires_grad) dcol.resize(size_t(K) * J);

            if (b->requires_grad) {
                T* db = b->grad_buf();
                for (int n = 0; n < N; ++n)
                    for (int co = 0; co < Co; ++co) {
                        const T* row = dy + (size_t(n) * Co + co) * OH * OW;
                        T acc = 0;
                        for (int j = 0; j < OH * OW; ++j) acc += row[j];
                        db[co] += acc;
                    }
            }
            if (!w->requires_grad && !x->requires_grad) return;
            T* dw = w->requires_grad ? w->grad_buf() : nullptr;
            T* dx = x->requires_grad ? x->grad_buf() : nullptr;
            for (int n = 0; n < N; ++n) {
                const T* xn = x->data.data() + size_t(n) * Ci * H * W;
                const T* dyn = dy + size_t(n) * Co * OH * OW;
                for (int r0 = 0; r0 < OH; r0 += slab) {
                    const int r1 = std::min(OH, r0 + slab);
                    const int Js = (r1 - r0) * OW;
                    if (!col.empty())
                        im2col_rows(xn, Ci, H, W, k, stride, padding, OW, r0, r1, col.data());
                    if (dw)
                        gemm_a_bt(Co, K, Js, dyn + size_t(r0) * OW, size_t(OH) * OW, col.data(),
                                  dw);
                    if (dx) {
                        std::fill(dcol.begin(), dcol.begin() + size_t(K) * Js, T(0));
                        gemm_at_b(Co, K, Js, w->data.data(), size_t(K), dyn + size_t(r0) * OW,
                                  size_t(OH) * OW, dcol.data());
                        col2im_rows_add(dcol.data(), Ci, H, W, k, stride, padding, OW, r0, r1,
                                        dx + size_t(n) * Ci * H * W);
                    }
                }
            }
        });
    }
    return out;
}

// ---- conv_transpose2d (2x2, stride 2) ---------------------------------------

template <typename T>
TensorPtrT<T> conv_transpose2d(TapeT<T>* tape, const TensorPtrT<T>& x, const TensorPtrT<T>& w,
                               const TensorPtrT<T>& b) {
    check(x && w && b, "conv_transpose2d: null operand");
    check(x->shape.size() == 4 && w->shape.size() == 4 && b->shape.size() == 1,
          "conv_transpose2d: x must be 4D, w 4D, b 1D");
    const int N = x->dim(0), Ci = x->dim(1), H = x->dim(2), W = x->dim(3);
    check(w->dim(0) == Ci && w->dim(2) == 2 && w->dim(3) == 2,
          "conv_transpose2d: weights must be [Ci,Co,2,2] matching input channels");
    const int Co = w->dim(1);
    check(b->dim(0) == Co, "conv_transpose2d: bias length != output channels");
    const int OH = 2 * H, OW = 2 * W;

    auto out = TensorT<T>::zeros({N, Co, OH, OW});
    // Stride == kernel, so the four kernel taps (a,b) tile disjoint output
    // subgrids; each subgrid is a plain GEMM over the input channels.
    std::vector<T> wt(size_t(2) * 2 * Co * Ci);  // [a][b][co][ci]
    for (int ci = 0; ci < Ci; ++ci)
        for (int co = 0; co < Co; ++co)
            for (int a = 0; a < 2; ++a)
                for (int c = 0; c < 2; ++c)
                    wt[((size_t(a) * 2 + c) * Co + co) * Ci + ci] =
                        w->data[((size_t(ci) * Co + co) * 2 + a) * 2 + c];

    std::vector<T> scratch(size_t(Co) * H * W);
    for (int n = 0; n < N; ++n) {
        const T* xn = x->data.data() + size_t(n) * Ci * H * W;
        T* on = out->data.data() + size_t(n) * Co * OH * OW;
        for (int a = 0; a < 2; ++a)
            for (int c = 0; c < 2; ++c) {
                for (int co = 0; co < Co; ++co)
                    std::fill(scratch.begin() + size_t(co) * H * W,
                              scratch.begin() + size_t(co + 1) * H * W, b->data[size_t(co)]);
                gemm_accum(Co, Ci, H * W, wt.data() + (size_t(a) * 2 + c) * Co * Ci, xn,
                           scratch.data(), size_t(H) * W);
                for (int co = 0; co < Co; ++co) {
                    const T* s = scratch.data() + size_t(co) * H * W;
                    T* dst = on + size_t(co) * OH * OW;
                    for (int h = 0; h < H; ++h)
                        for (int ww = 0; ww < W; ++ww)
                            dst[size_t(2 * h + a) * OW + 2 * ww + c] = s[size_t(h) * W + ww];
                }
            }
    }

    if (want_grad(tape, {&x, &w, &b})) {
        out->requires_grad = true;
        tape->record([x, w, b, out, N, Ci, H, W, Co, OH, OW]() {
            const T* dy = grad_or_null(out);
            if (!dy) return;
            if (b->requires_grad) {
                T* db = b->grad_buf();
                for (int n = 0; n < N; ++n)
                    for (int co = 0; co < Co; ++co) {
                        const T* row = dy + (size_t(n) * Co + co) * OH * OW;
                        T acc = 0;
                        for (int j = 0; j < OH * OW; ++j) acc += row[j];
                        db[co] += acc;
                    }
            }
            if (!x->requires_grad && !w->requires_grad) return;
            T* dx = x->requires_grad ? x->grad_buf() : nullptr;
            T* dw = w->requires_grad ? w->grad_buf() : nullptr;
            std::vector<T> dsub(size_t(Co) * H * W);  // gathered dy subgrid
            for (int n = 0; n < N; ++n) {
                const T* xn = x->data.data() + size_t(n) * Ci * H * W;
                const T* dyn = dy + size_t(n) * Co * OH * OW;
                for (int a = 0; a < 2; ++a)
                    for (int c = 0; c < 2; ++c) {
                        for (int co = 0; co < Co; ++co) {
                            const T* src = dyn + size_t(co) * OH * OW;
                            T* d = dsub.data() + size_t(co) * H * W;
                            for (int h = 0; h < H; ++h)
                                for (int ww = 0; ww < W; ++ww)
                                    d[size_t(h) * W + ww] =
                                        src[size_t(2 * h + a) * OW + 2 * ww + c];
                        }
                        // dx[ci] += sum_co w[ci,co,a,c] * dsub[co]
                        if (dx)
                            for (int ci = 0; ci < Ci; ++ci) {
                                T* dst = dx + (size_t(n) * Ci + ci) * H * W;
                                for (int co = 0; co < Co; ++co) {
                                    const T wv =
                                        w->data[((size_t(ci) * Co + co) * 2 + a) * 2 + c];
                                    const T* s = dsub.data() + size_t(co) * H * W;
                                    for (int j = 0; j < H * W; ++j) dst[j] += wv * s[j];
                                }
                            }
                        // dw[ci,co,a,c] += sum_hw x[ci,hw] * dsub[co,hw]
                        if (dw)
                            for (int ci = 0; ci < Ci; ++ci)
                                for (int co = 0; co < Co; ++co) {
                                    const T* xp = xn + size_t(ci) * H * W;
                                    const T* s = dsub.data() + size_t(co) * H * W;
                                    T acc = 0;
                                    for (int j = 0; j < H * W; ++j) acc += xp[j] * s[j];
                                    dw[((size_t(ci) * Co + co) * 2 + a) * 2 + c] += acc;
                                }
                    }
            }
        });
    }
    return out;
}

// ---- batchnorm2d -------------------------------------------------------------

template <typename T>
TensorPtrT<T> batchnorm2d(TapeT<T>* tape, const TensorPtrT<T>& x, const TensorPtrT<T>& gamma,
                          const TensorPtrT<T>& beta, const TensorPtrT<T>& run_mean,
                          const TensorPtrT<T>& run_var, bool train, T momentum, T eps) {
    check(x && gamma && beta && run_mean && run_var, "batchnorm2d: null operand");
    check(x->shape.size() == 4, "batchnorm2d: x must be 4D");
    const int N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
    check(N >= 1, "batchnorm2d: zero-size batch");
    check(gamma->numel() == C && beta->numel() == C && run_mean->numel() == C &&
              run_var->numel() == C,
          "batchnorm2d: per-channel parameter length != channel count");

    const int64_t plane = int64_t(H) * W;
    const int64_t m = int64_t(N) * plane;  // samples per channel statistic
    std::vector<T> mean(size_t(C), T(0));
    std::vector<T> inv_std(size_t(C), T(0));
    if (train) {
        for (int c = 0; c < C; ++c) {
            T s = 0;
            for (int n = 0; n < N; ++n) {
                const T* p = x->data.data() + (size_t(n) * C + c) * plane;
                for (int64_t j = 0; j < plane; ++j) s += p[j];
            }
            const T mu = s / T(m);
            T v = 0;
            for (int n = 0; n < N; ++n) {
                const T* p = x->data.data() + (size_t(n) * C + c) * plane;
                for (int64_t j = 0; j < plane; ++j) v += (p[j] - mu) * (p[j] - mu);
            }
            v /= T(m);  // biased, used consistently for batch and running stats
            mean[size_t(c)] = mu;
            inv_std[size_t(c)] = T(1) / std::sqrt(v + eps);
            run_mean->data[size_t(c)] = momentum * run_mean->data[size_t(c)] + (T(1) - momentum) * mu;
            run_var->data[size_t(c)] = momentum * run_var->data[size_t(c)] + (T(1) - momentum) * v;
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mean[size_t(c)] = run_mean->data[size_t(c)];
            inv_std[size_t(c)] = T(1) / std::sqrt(run_var->data[size_t(c)] + eps);
        }
    }

    auto out = TensorT<T>::zeros({N, C, H, W});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* p = x->data.data() + (size_t(n) * C + c) * plane;
            T* o = out->data.data() + (size_t(n) * C + c) * plane;
            const T mu = mean[size_t(c)], is = inv_std[size_t(c)];
            const T g = gamma->data[size_t(c)], bt = beta->data[size_t(c)];
            for (int64_t j = 0; j < plane; ++j) o[j] = g * (p[j] - mu) * is + bt;
        }

    if (want_grad(tape, {&x, &gamma, &beta})) {
        out->requires_grad = true;
        // mean/inv_std are captured by value: later forwards may overwrite
        // the running buffers before this closure runs.
        tape->record([x, gamma, beta, out, train, mean, inv_std, N, C, plane, m]() {
            const T* dy = grad_or_null(out);
            if (!dy) return;
            T* dg = gamma->requires_grad ? gamma->grad_buf() : nullptr;
            T* db = beta->requires_grad ? beta->grad_buf() : nullptr;
            T* dx = x->requires_grad ? x->grad_buf() : nullptr;
            for (int c = 0; c < C; ++c) {
                const T mu = mean[size_t(c)], is = inv_std[size_t(c)];
                T s1 = 0, s2 = 0;  // sum dy, sum dy*xhat
                for (int n = 0; n < N; ++n) {
                    const T* p = x->data.data() + (size_t(n) * C + c) * plane;
                    const T* d = dy + (size_t(n) * C + c) * plane;
                    for (int64_t j = 0; j < plane; ++j) {
                        s1 += d[j];
                        s2 += d[j] * (p[j] - mu) * is;
                    }
                }
                if (db) db[c] += s1;
                if (dg) dg[c] += s2;
                if (!dx) continue;
                const T g = gamma->data[size_t(c)];
                if (train) {
                    const T k1 = s1 / T(m), k2 = s2 / T(m);
                    for (int n = 0; n < N; ++n) {
                        const T* p = x->data.data() + (size_t(n) * C + c) * plane;
                        const T* d = dy + (size_t(n) * C + c) * plane;
                        T* o = dx + (size_t(n) * C + c) * plane;
                        for (int64_t j = 0; j < plane; ++j) {
                            const T xh = (p[j] - mu) * is;
                            o[j] += g * is * (d[j] - k1 - xh * k2);
                        }
                    }
                } else {
                    for (int n = 0; n < N; ++n) {
                        const T* d = dy + (size_t(n) * C + c) * plane;
                        T* o = dx + (size_t(n) * C + c) * plane;
                        for (int64_t j = 0; j < plane; ++j) o[j] += g * is * d[j];
                    }
                }
            }
        });
    }
    return out;
}

// ---- pointwise and structural ops -------------------------------------------

template <typename T>
TensorPtrT<T> relu(TapeT<T>* tape, const TensorPtrT<T>& x) {
    check(bool(x), "relu: null operand");
    auto out = TensorT<T>::zeros(x->shape);
    for (size_t i = 0; i < x->data.size(); ++i) out->data[i] = std::max(T(0), x->data[i]);
    if (want_grad(tape, {&x})) {
        out->requires_grad = true;
        tape->record([x, out]() {
            const T* dy = grad_or_null(out);
            if (!dy || !x->requires_grad) return;
            T* dx = x->grad_buf();
            for (size_t i = 0; i < x->data.size(); ++i)
                if (x->data[i] > T(0)) dx[i] += dy[i];
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> maxpool2d(TapeT<T>* tape, const TensorPtrT<T>& x, int k, int stride, int padding) {
    check(bool(x), "maxpool2d: null operand");
    check(x->shape.size() == 4, "maxpool2d: x must be 4D");
    check(k >= 1 && stride >= 1 && padding >= 0 && padding < k, "maxpool2d: bad geometry");
    const int N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
    const int OH = (H + 2 * padding - k) / stride + 1;
    const int OW = (W + 2 * padding - k) / stride + 1;
    check(H + 2 * padding >= k && W + 2 * padding >= k && OH >= 1 && OW >= 1,
          "maxpool2d: output would be empty");

    auto out = TensorT<T>::zeros({N, C, OH, OW});
    auto argmax = std::make_shared<std::vector<int64_t>>(out->data.size());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* p = x->data.data() + (size_t(n) * C + c) * H * W;
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    T best = -std::numeric_limits<T>::infinity();
                    int64_t arg = -1;
                    for (int kh = 0; kh < k; ++kh) {
                        const int ih = oh * stride - padding + kh;
                        if (ih < 0 || ih >= H) continue;  // out of bounds: -inf, never wins
                        for (int kw = 0; kw < k; ++kw) {
                            const int iw = ow * stride - padding + kw;
                            if (iw < 0 || iw >= W) continue;
                            const T v = p[size_t(ih) * W + iw];
                            if (v > best) {  // strict: first position wins ties
                                best = v;
                                arg = size_t(ih) * W + iw;
                            }
                        }
                    }
                    const size_t oi = ((size_t(n) * C + c) * OH + oh) * OW + ow;
                    out->data[oi] = best;
                    (*argmax)[oi] = (size_t(n) * C + c) * H * W + arg;
                }
        }

    if (want_grad(tape, {&x})) {
        out->requires_grad = true;
        tape->record([x, out, argmax]() {
            const T* dy = grad_or_null(out);
            if (!dy || !x->requires_grad) return;
            T* dx = x->grad_buf();
            for (size_t i = 0; i < out->data.size(); ++i) dx[(*argmax)[i]] += dy[i];
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> concat_channels(TapeT<T>* tape, const std::vector<TensorPtrT<T>>& xs) {
    check(!xs.empty(), "concat_channels: empty input list");
    const int N = xs[0]->dim(0), H = xs[0]->dim(2), W = xs[0]->dim(3);
    int C = 0;
    for (const auto& t : xs) {
        check(t && t->shape.size() == 4, "concat_channels: inputs must be 4D");
        check(t->dim(0) == N && t->dim(2) == H && t->dim(3) == W,
              "concat_channels: batch/spatial dims disagree");
        C += t->dim(1);
    }
    auto out = TensorT<T>::zeros({N, C, H, W});
    const size_t plane = size_t(H) * W;
    for (int n = 0; n < N; ++n) {
        size_t coff = 0;
        for (const auto& t : xs) {
            const size_t tc = size_t(t->dim(1));
            std::memcpy(out->data.data() + (size_t(n) * C + coff) * plane,
                        t->data.data() + size_t(n) * tc * plane, tc * plane * sizeof(T));
            coff += tc;
        }
    }
    bool any = false;
    if (tape)
        for (const auto& t : xs) any |= t->requires_grad;
    if (any) {
        out->requires_grad = true;
        tape->record([xs, out, N, C, plane]() {
            const T* dy = grad_or_null(out);
            if (!dy) return;
            size_t coff = 0;
            for (const auto& t : xs) {
                const size_t tc = size_t(t->dim(1));
                if (t->requires_grad) {
                    T* dx = t->grad_buf();
                    for (int n = 0; n < N; ++n) {
                        const T* src = dy + (size_t(n) * C + coff) * plane;
                        T* dst = dx + size_t(n) * tc * plane;
                        for (size_t j = 0; j < tc * plane; ++j) dst[j] += src[j];
                    }
                }
                coff += tc;
            }
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> add(TapeT<T>* tape, const TensorPtrT<T>& x, const TensorPtrT<T>& y) {
    check(x && y && x->shape == y->shape, "add: shape mismatch");
    auto out = TensorT<T>::zeros(x->shape);
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = x->data[i] + y->data[i];
    if (want_grad(tape, {&x, &y})) {
        out->requires_grad = true;
        tape->record([x, y, out]() {
            const T* dy = grad_or_null(out);
            if (!dy) return;
            if (x->requires_grad) {
                T* dx = x->grad_buf();
                for (size_t i = 0; i < out->data.size(); ++i) dx[i] += dy[i];
            }
            if (y->requires_grad) {
                T* dyy = y->grad_buf();
                for (size_t i = 0; i < out->data.size(); ++i) dyy[i] += dy[i];
            }
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> mul(TapeT<T>* tape, const TensorPtrT<T>& x, const TensorPtrT<T>& y) {
    check(x && y && x->shape == y->shape, "mul: shape mismatch");
    auto out = TensorT<T>::zeros(x->shape);
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = x->data[i] * y->data[i];
    if (want_grad(tape, {&x, &y})) {
        out->requires_grad = true;
        tape->record([x, y, out]() {
            const T* dy = grad_or_null(out);
            if (!dy) return;
            if (x->requires_grad) {
                T* dx = x->grad_buf();
                for (size_t i = 0; i < out->data.size(); ++i) dx[i] += dy[i] * y->data[i];
            }
            if (y->requires_grad) {
                T* dyy = y->grad_buf();
                for (size_t i = 0; i < out->data.size(); ++i) dyy[i] += dy[i] * x->data[i];
            }
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> div_el(TapeT<T>* tape, const TensorPtrT<T>& x, const TensorPtrT<T>& y) {
    check(x && y && x->shape == y->shape, "div_el: shape mismatch");
    auto out = TensorT<T>::zeros(x->shape);
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = x->data[i] / y->data[i];
    if (want_grad(tape, {&x, &y})) {
        out->requires_grad = true;
        tape->record([x, y, out]() {
            const T* dy = grad_or_null(out);
            if (!dy) return;
            if (x->requires_grad) {
                T* dx = x->grad_buf();
                for (size_t i = 0; i < out->data.size(); ++i) dx[i] += dy[i] / y->data[i];
            }
            if (y->requires_grad) {
                T* dyy = y->grad_buf();
                for (size_t i = 0; i < out->data.size(); ++i)
                    dyy[i] -= dy[i] * x->data[i] / (y->data[i] * y->data[i]);
            }
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> scalar_affine(TapeT<T>* tape, const TensorPtrT<T>& x, T a, T b) {
    check(bool(x), "scalar_affine: null operand");
    auto out = TensorT<T>::zeros(x->shape);
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = a * x->data[i] + b;
    if (want_grad(tape, {&x})) {
        out->requires_grad = true;
        tape->record([x, out, a]() {
            const T* dy = grad_or_null(out);
            if (!dy || !x->requires_grad) return;
            T* dx = x->grad_buf();
            for (size_t i = 0; i < out->data.size(); ++i) dx[i] += a * dy[i];
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> softmax_channels(TapeT<T>* tape, const TensorPtrT<T>& x) {
    check(x && x->shape.size() == 4, "softmax_channels: x must be 4D");
    const int N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
    const size_t plane = size_t(H) * W;
    auto out = TensorT<T>::zeros(x->shape);
    for (int n = 0; n < N; ++n)
        for (size_t j = 0; j < plane; ++j) {
            const size_t base = size_t(n) * C * plane + j;
            T mx = x->data[base];
            for (int c = 1; c < C; ++c) mx = std::max(mx, x->data[base + size_t(c) * plane]);
            T s = 0;
            for (int c = 0; c < C; ++c) {
                const T e = std::exp(x->data[base + size_t(c) * plane] - mx);
                out->data[base + size_t(c) * plane] = e;
                s += e;
            }
            for (int c = 0; c < C; ++c) out->data[base + size_t(c) * plane] /= s;
        }
    if (want_grad(tape, {&x})) {
        out->requires_grad = true;
        tape->record([x, out, N, C, plane]() {
            const T* dy = grad_or_null(out);
            if (!dy || !x->requires_grad) return;
            T* dx = x->grad_buf();
            for (int n = 0; n < N; ++n)
                for (size_t j = 0; j < plane; ++j) {
                    const size_t base = size_t(n) * C * plane + j;
                    T dot = 0;
                    for (int c = 0; c < C; ++c)
                        dot += dy[base + size_t(c) * plane] * out->data[base + size_t(c) * plane];
                    for (int c = 0; c < C; ++c) {
                        const size_t i = base + size_t(c) * plane;
                        dx[i] += out->data[i] * (dy[i] - dot);
                    }
                }
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> sum_all(TapeT<T>* tape, const TensorPtrT<T>& x) {
    check(bool(x), "sum_all: null operand");
    auto out = TensorT<T>::zeros({1});
    T s = 0;
    for (const T v : x->data) s += v;
    out->data[0] = s;
    if (want_grad(tape, {&x})) {
        out->requires_grad = true;
        tape->record([x, out]() {
            const T* dy = grad_or_null(out);
            if (!dy || !x->requires_grad) return;
            T* dx = x->grad_buf();
            for (size_t i = 0; i < x->data.size(); ++i) dx[i] += dy[0];
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> select_channel(TapeT<T>* tape, const TensorPtrT<T>& x, int c) {
    check(x && x->shape.size() == 4, "select_channel: x must be 4D");
    const int N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
    check(c >= 0 && c < C, "select_channel: channel out of range");
    const size_t plane = size_t(H) * W;
    auto out = TensorT<T>::zeros({N, 1, H, W});
    for (int n = 0; n < N; ++n)
        std::memcpy(out->data.data() + size_t(n) * plane,
                    x->data.data() + (size_t(n) * C + c) * plane, plane * sizeof(T));
    if (want_grad(tape, {&x})) {
        out->requires_grad = true;
        tape->record([x, out, c, N, C, plane]() {
            const T* dy = grad_or_null(out);
            if (!dy || !x->requires_grad) return;
            T* dx = x->grad_buf();
            for (int n = 0; n < N; ++n) {
                const T* src = dy + size_t(n) * plane;
                T* dst = dx + (size_t(n) * C + c) * plane;
                for (size_t j = 0; j < plane; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> pad_crop2d(TapeT<T>* tape, const TensorPtrT<T>& x, int out_h, int out_w) {
    check(x && x->shape.size() == 4, "pad_crop2d: x must be 4D");
    check(out_h >= 1 && out_w >= 1, "pad_crop2d: output dims must be positive");
    const int N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
    // Overlap window: crop takes the centered (floor) region of the source;
    // pad leaves the destination anchored at the top-left.
    const int src_h = out_h < H ? (H - out_h) / 2 : 0;
    const int src_w = out_w < W ? (W - out_w) / 2 : 0;
    const int len_h = std::min(H, out_h), len_w = std::min(W, out_w);

    auto out = TensorT<T>::zeros({N, C, out_h, out_w});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* src = x->data.data() + ((size_t(n) * C + c) * H + src_h) * W + src_w;
            T* dst = out->data.data() + (size_t(n) * C + c) * out_h * out_w;
            for (int h = 0; h < len_h; ++h)
                std::memcpy(dst + size_t(h) * out_w, src + size_t(h) * W,
                            size_t(len_w) * sizeof(T));
        }
    if (want_grad(tape, {&x})) {
        out->requires_grad = true;
        tape->record([x, out, N, C, H, W, out_h, out_w, src_h, src_w, len_h, len_w]() {
            const T* dy = grad_or_null(out);
            if (!dy || !x->requires_grad) return;
            T* dx = x->grad_buf();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    T* dst = dx + ((size_t(n) * C + c) * H + src_h) * W + src_w;
                    const T* src = dy + (size_t(n) * C + c) * out_h * out_w;
                    for (int h = 0; h < len_h; ++h)
                        for (int w = 0; w < len_w; ++w)
                            dst[size_t(h) * W + w] += src[size_t(h) * out_w + w];
                }
        });
    }
    return out;
}

// ---- Adam -------------------------------------------------------------------

template <typename T>
void adam_update(std::vector<T>& param, const std::vector<T>& grad, std::vector<T>& m,
                 std::vector<T>& v, int64_t t, T lr, T beta1, T beta2, T eps) {
    check(param.size() == grad.size() && param.size() == m.size() && param.size() == v.size(),
          "adam_update: buffer sizes disagree");
    check(t >= 1, "adam_update: step count must be >= 1");
    const T bc1 = T(1) - std::pow(beta1, T(t));
    const T bc2 = T(1) - std::pow(beta2, T(t));
    for (size_t i = 0; i < param.size(); ++i) {
        m[i] = beta1 * m[i] + (T(1) - beta1) * grad[i];
        v[i] = beta2 * v[i] + (T(1) - beta2) * grad[i] * grad[i];
        const T mhat = m[i] / bc1;
        const T vhat = v[i] / bc2;
        param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

// ---- explicit instantiations --------------------------------------------------

#define MSEG_AUTODIFF_INSTANTIATE(T)                                                          \
    template TensorPtrT<T> conv2d<T>(TapeT<T>*, const TensorPtrT<T>&, const TensorPtrT<T>&,  \
                                     const TensorPtrT<T>&, int, int);                         \
    template TensorPtrT<T> conv_transpose2d<T>(TapeT<T>*, const TensorPtrT<T>&,              \
                                               const TensorPtrT<T>&, const TensorPtrT<T>&);  \
    template TensorPtrT<T> batchnorm2d<T>(TapeT<T>*, const TensorPtrT<T>&,                   \
                                          const TensorPtrT<T>&, const TensorPtrT<T>&,        \
                                          const TensorPtrT<T>&, const TensorPtrT<T>&, bool,  \
                                          T, T);                                              \
    template TensorPtrT<T> relu<T>(TapeT<T>*, const TensorPtrT<T>&);                         \
    template TensorPtrT<T> maxpool2d<T>(TapeT<T>*, const TensorPtrT<T>&, int, int, int);     \
    template TensorPtrT<T> concat_channels<T>(TapeT<T>*, const std::vector<TensorPtrT<T>>&); \
    template TensorPtrT<T> add<T>(TapeT<T>*, const TensorPtrT<T>&, const TensorPtrT<T>&);    \
    template TensorPtrT<T> mul<T>(TapeT<T>*, const TensorPtrT<T>&, const TensorPtrT<T>&);    \
    template TensorPtrT<T> div_el<T>(TapeT<T>*, const TensorPtrT<T>&, const TensorPtrT<T>&); \
    template TensorPtrT<T> scalar_affine<T>(TapeT<T>*, const TensorPtrT<T>&, T, T);          \
    template TensorPtrT<T> softmax_channels<T>(TapeT<T>*, const TensorPtrT<T>&);             \
    template TensorPtrT<T> sum_all<T>(TapeT<T>*, const TensorPtrT<T>&);                      \
    template TensorPtrT<T> select_channel<T>(TapeT<T>*, const TensorPtrT<T>&, int);          \
    template TensorPtrT<T> pad_crop2d<T>(TapeT<T>*, const TensorPtrT<T>&, int, int);         \
    template void adam_update<T>(std::vector<T>&, const std::vector<T>&, std::vector<T>&,    \
                                 std::vector<T>&, int64_t, T, T, T, T);

MSEG_AUTODIFF_INSTANTIATE(float)
MSEG_AUTODIFF_INSTANTIATE(double)
#undef MSEG_AUTODIFF_INSTANTIATE

}  // namespace mseg

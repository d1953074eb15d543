/*
 * Register-blocked same-padding convolution kernels (channels-last).
 *
 * Each output element is a sequential sum over a fixed index order; blocking
 * only changes which elements are computed together, never the order of the
 * additions inside one element.  Compile with -ffp-contract=off.
 *
 * State inputs are pre-padded by the caller: [B, W + 2hw, N + 2hh, C].
 */
#ifndef NEURALGPU_CONV_IMPL_H
#define NEURALGPU_CONV_IMPL_H

#include <stddef.h>
#include <string.h>

#define ROWS 4

#define DEFINE_KERNELS(T, SUF, VL)                                                   \
typedef T vec_##SUF __attribute__((vector_size((VL) * sizeof(T))));                   \
                                                                                     \
static inline vec_##SUF load_##SUF(const T *p) {                                     \
    vec_##SUF v;                                                                     \
    memcpy(&v, p, sizeof v);                                                         \
    return v;                                                                        \
}                                                                                    \
static inline void store_##SUF(T *p, vec_##SUF v) { memcpy(p, &v, sizeof v); }       \
                                                                                     \
/* o[r, j] += sum_k a[r*ar + k*ak] * b[k*bk + j] for r < nr, j < nv*VL */            \
static inline void block_##SUF(int nr, int nv, const T *a, ptrdiff_t ar,             \
                               ptrdiff_t ak, const T *b, ptrdiff_t bk, ptrdiff_t nk, \
                               T *o, ptrdiff_t orow) {                               \
    vec_##SUF acc[ROWS][4];                                                          \
    for (int r = 0; r < nr; r++)                                                     \
        for (int j = 0; j < nv; j++) acc[r][j] = load_##SUF(o + r * orow + j * (VL)); \
    for (ptrdiff_t k = 0; k < nk; k++) {                                             \
        vec_##SUF bv[4];                                                             \
        for (int j = 0; j < nv; j++) bv[j] = load_##SUF(b + k * bk + j * (VL));       \
        for (int r = 0; r < nr; r++) {                                               \
            T s = a[r * ar + k * ak];                                                \
            for (int j = 0; j < nv; j++) acc[r][j] += s * bv[j];                     \
        }                                                                            \
    }                                                                                \
    for (int r = 0; r < nr; r++)                                                     \
        for (int j = 0; j < nv; j++) store_##SUF(o + r * orow + j * (VL), acc[r][j]); \
}                                                                                    \
                                                                                     \
static void full_##SUF##_4x4(const T *a, ptrdiff_t ar, ptrdiff_t ak, const T *b,    \
                             ptrdiff_t bk, ptrdiff_t nk, T *o, ptrdiff_t orow) {     \
    block_##SUF(ROWS, 4, a, ar, ak, b, bk, nk, o, orow);                             \
}                                                                                    \
static void full_##SUF##_4x1(const T *a, ptrdiff_t ar, ptrdiff_t ak, const T *b,    \
                             ptrdiff_t bk, ptrdiff_t nk, T *o, ptrdiff_t orow) {     \
    block_##SUF(ROWS, 1, a, ar, ak, b, bk, nk, o, orow);                             \
}                                                                                    \
static void full_##SUF##_1x4(const T *a, ptrdiff_t ar, ptrdiff_t ak, const T *b,    \
                             ptrdiff_t bk, ptrdiff_t nk, T *o, ptrdiff_t orow) {     \
    block_##SUF(1, 4, a, ar, ak, b, bk, nk, o, orow);                                \
}                                                                                    \
static void full_##SUF##_1x1(const T *a, ptrdiff_t ar, ptrdiff_t ak, const T *b,    \
                             ptrdiff_t bk, ptrdiff_t nk, T *o, ptrdiff_t orow) {     \
    block_##SUF(1, 1, a, ar, ak, b, bk, nk, o, orow);                                \
}                                                                                    \
                                                                                     \
static void scalar_##SUF(int nr, ptrdiff_t ncol, const T *a, ptrdiff_t ar,           \
                         ptrdiff_t ak, const T *b, ptrdiff_t bk, ptrdiff_t nk, T *o, \
                         ptrdiff_t orow) {                                           \
    for (int r = 0; r < nr; r++)                                                     \
        for (ptrdiff_t j = 0; j < ncol; j++) {                                       \
            T acc = o[r * orow + j];                                                 \
            for (ptrdiff_t k = 0; k < nk; k++) acc += a[r * ar + k * ak] * b[k * bk + j]; \
            o[r * orow + j] = acc;                                                   \
        }                                                                            \
}                                                                                    \
                                                                                     \
/* Dispatch one block of nr (1 or ROWS) rows over all ncol columns. */               \
static void rows_##SUF(int nr, ptrdiff_t ncol, const T *a, ptrdiff_t ar,             \
                       ptrdiff_t ak, const T *b, ptrdiff_t bk, ptrdiff_t nk, T *o,   \
                       ptrdiff_t orow) {                                             \
    ptrdiff_t j = 0;                                                                 \
    for (; j + 4 * (VL) <= ncol; j += 4 * (VL)) {                                    \
        if (nr == ROWS) full_##SUF##_4x4(a, ar, ak, b + j, bk, nk, o + j, orow);      \
        else full_##SUF##_1x4(a, ar, ak, b + j, bk, nk, o + j, orow);                 \
    }                                                                                \
    for (; j + (VL) <= ncol; j += (VL)) {                                            \
        if (nr == ROWS) full_##SUF##_4x1(a, ar, ak, b + j, bk, nk, o + j, orow);      \
        else full_##SUF##_1x1(a, ar, ak, b + j, bk, nk, o + j, orow);                 \
    }                                                                                \
    if (j < ncol) scalar_##SUF(nr, ncol - j, a, ar, ak, b + j, bk, nk, o + j, orow);  \
}                                                                                    \
                                                                                     \
/* out[b,x,y,:] += sum over taps (u,v) ascending, channels ascending. */             \
static void conv_forward_##SUF(const T *sp, const T *ker, T *out, ptrdiff_t nb,      \
                               ptrdiff_t nw, ptrdiff_t nn, ptrdiff_t cin,            \
                               ptrdiff_t kw, ptrdiff_t kh, ptrdiff_t cout) {         \
    ptrdiff_t wp = nw + kw - 1, np_ = nn + kh - 1;                                   \
    for (ptrdiff_t b = 0; b < nb; b++)                                               \
        for (ptrdiff_t x = 0; x < nw; x++)                                           \
            for (ptrdiff_t y = 0; y < nn;) {                                         \
                int nr = (y + ROWS <= nn) ? ROWS : 1;                                \
                T *o = out + ((b * nw + x) * nn + y) * cout;                         \
                for (ptrdiff_t u = 0; u < kw; u++)                                   \
                    for (ptrdiff_t v = 0; v < kh; v++) {                             \
                        const T *a = sp + ((b * wp + x + u) * np_ + y + v) * cin;    \
                        const T *kb = ker + (u * kh + v) * cin * cout;               \
                        rows_##SUF(nr, cout, a, cin, 1, kb, cout, cin, o, cout);     \
                    }                                                                \
                y += nr;                                                             \
            }                                                                        \
}                                                                                    \
                                                                                     \
/* out[u,v,c,:] += sum over positions (b,x,y) in row-major order. */                 \
static void conv_grad_kernel_##SUF(const T *sp, const T *g, T *out, ptrdiff_t nb,    \
                                   ptrdiff_t nw, ptrdiff_t nn, ptrdiff_t cin,        \
                                   ptrdiff_t kw, ptrdiff_t kh, ptrdiff_t cout) {     \
    ptrdiff_t wp = nw + kw - 1, np_ = nn + kh - 1;                                   \
    for (ptrdiff_t u = 0; u < kw; u++)                                               \
        for (ptrdiff_t v = 0; v < kh; v++)                                           \
            for (ptrdiff_t c = 0; c < cin;) {                                        \
                int nr = (c + ROWS <= cin) ? ROWS : 1;                               \
                T *o = out + ((u * kh + v) * cin + c) * cout;                        \
                for (ptrdiff_t b = 0; b < nb; b++)                                   \
                    for (ptrdiff_t x = 0; x < nw; x++) {                             \
                        const T *a = sp + ((b * wp + x + u) * np_ + v) * cin + c;    \
                        const T *gb = g + (b * nw + x) * nn * cout;                  \
                        rows_##SUF(nr, cout, a, 1, cin, gb, cout, nn, o, cout);      \
                    }                                                                \
                c += nr;                                                             \
            }                                                                        \
}

DEFINE_KERNELS(double, f64, 8)
DEFINE_KERNELS(float, f32, 16)

#endif

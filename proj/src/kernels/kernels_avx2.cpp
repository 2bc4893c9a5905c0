// AVX2+FMA variants. Compiled with -mavx2 -mfma in its own TU; only reached
// when runtime dispatch has confirmed cpu support. Equivalence with the
// scalar reference path is enforced by tests/test_kernels.cpp.

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "pcmf/kernels.hpp"

namespace pcmf::kernels::detail {

namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d swapped = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

// exp on 4 lanes: round-to-nearest power-of-two reduction plus a degree-13
// Taylor polynomial on |r| <= ln(2)/2. Inputs above 709 go to +inf, inputs
// below -708 flush to 0 (the subnormal strip is not reproduced).
inline __m256d exp_pd(__m256d x) {
    const __m256d log2e = _mm256_set1_pd(1.4426950408889634074);
    const __m256d ln2_hi = _mm256_set1_pd(6.93145751953125e-1);
    const __m256d ln2_lo = _mm256_set1_pd(1.42860682030941723212e-6);

    const __m256d too_big = _mm256_cmp_pd(x, _mm256_set1_pd(709.0), _CMP_GT_OQ);
    const __m256d too_small = _mm256_cmp_pd(x, _mm256_set1_pd(-708.0), _CMP_LT_OQ);

    __m256d kf = _mm256_round_pd(_mm256_mul_pd(x, log2e),
                                 _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    __m256d r = _mm256_fnmadd_pd(kf, ln2_hi, x);
    r = _mm256_fnmadd_pd(kf, ln2_lo, r);

    // Horner on 1/i! for i = 13 .. 0
    __m256d p = _mm256_set1_pd(1.0 / 6227020800.0);
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 479001600.0));
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 39916800.0));
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 3628800.0));
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 362880.0));
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 40320.0));
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 5040.0));
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 720.0));
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 120.0));
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 24.0));
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 6.0));
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(0.5));
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0));
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0));

    // scale by 2^k through the exponent field (k is in [-1022, 1023] here)
    __m128i k32 = _mm256_cvtpd_epi32(kf);
    __m256i k64 = _mm256_cvtepi32_epi64(k32);
    __m256i pow2 = _mm256_slli_epi64(_mm256_add_epi64(k64, _mm256_set1_epi64x(1023)), 52);
    __m256d res = _mm256_mul_pd(p, _mm256_castsi256_pd(pow2));

    res = _mm256_blendv_pd(res, _mm256_set1_pd(std::numeric_limits<double>::infinity()), too_big);
    res = _mm256_blendv_pd(res, _mm256_setzero_pd(), too_small);
    return res;
}

// log on 4 lanes: exponent/mantissa split with the mantissa folded into
// [sqrt(1/2), sqrt(2)], then 2*atanh((m-1)/(m+1)) via an odd series up to
// t^19. Handles zero (-inf), negatives (NaN), subnormals, inf and NaN.
inline __m256d log_pd(__m256d x) {
    const __m256d dbl_min = _mm256_set1_pd(2.2250738585072014e-308);
    const __m256d two54 = _mm256_set1_pd(18014398509481984.0);  // 2^54
    const __m256d zero = _mm256_setzero_pd();

    const __m256d is_zero = _mm256_cmp_pd(x, zero, _CMP_EQ_OQ);
    const __m256d is_neg = _mm256_cmp_pd(x, zero, _CMP_LT_OQ);
    const __m256d is_nan = _mm256_cmp_pd(x, x, _CMP_UNORD_Q);
    const __m256d is_inf =
        _mm256_cmp_pd(x, _mm256_set1_pd(std::numeric_limits<double>::infinity()), _CMP_EQ_OQ);

    // promote positive subnormals into the normal range
    const __m256d is_sub = _mm256_andnot_pd(is_zero, _mm256_cmp_pd(x, dbl_min, _CMP_LT_OQ));
    const __m256d sub_pos = _mm256_andnot_pd(is_neg, is_sub);
    __m256d xs = _mm256_blendv_pd(x, _mm256_mul_pd(x, two54), sub_pos);
    __m256d e_shift = _mm256_and_pd(sub_pos, _mm256_set1_pd(54.0));

    __m256i bits = _mm256_castpd_si256(xs);
    __m256i e_raw = _mm256_srli_epi64(bits, 52);
    e_raw = _mm256_and_si256(e_raw, _mm256_set1_epi64x(0x7FF));
    // biased exponent -> double via the 2^52 bit trick
    __m256i e_mag = _mm256_or_si256(e_raw, _mm256_set1_epi64x(0x4330000000000000LL));
    __m256d e = _mm256_sub_pd(_mm256_castsi256_pd(e_mag), _mm256_set1_pd(4503599627370496.0 + 1023.0));
    e = _mm256_sub_pd(e, e_shift);

    __m256i mant = _mm256_and_si256(bits, _mm256_set1_epi64x(0x000FFFFFFFFFFFFFLL));
    __m256d m = _mm256_castsi256_pd(_mm256_or_si256(mant, _mm256_set1_epi64x(0x3FF0000000000000LL)));

    // fold m > sqrt(2) down one octave
    const __m256d sqrt2 = _mm256_set1_pd(1.4142135623730951);
    const __m256d fold = _mm256_cmp_pd(m, sqrt2, _CMP_GT_OQ);
    m = _mm256_blendv_pd(m, _mm256_mul_pd(m, _mm256_set1_pd(0.5)), fold);
    e = _mm256_add_pd(e, _mm256_and_pd(fold, _mm256_set1_pd(1.0)));

    const __m256d one = _mm256_set1_pd(1.0);
    __m256d t = _mm256_div_pd(_mm256_sub_pd(m, one), _mm256_add_pd(m, one));
    __m256d s = _mm256_mul_pd(t, t);

    __m256d q = _mm256_set1_pd(1.0 / 19.0);
    q = _mm256_fmadd_pd(q, s, _mm256_set1_pd(1.0 / 17.0));
    q = _mm256_fmadd_pd(q, s, _mm256_set1_pd(1.0 / 15.0));
    q = _mm256_fmadd_pd(q, s, _mm256_set1_pd(1.0 / 13.0));
    q = _mm256_fmadd_pd(q, s, _mm256_set1_pd(1.0 / 11.0));
    q = _mm256_fmadd_pd(q, s, _mm256_set1_pd(1.0 / 9.0));
    q = _mm256_fmadd_pd(q, s, _mm256_set1_pd(1.0 / 7.0));
    q = _mm256_fmadd_pd(q, s, _mm256_set1_pd(1.0 / 5.0));
    q = _mm256_fmadd_pd(q, s, _mm256_set1_pd(1.0 / 3.0));

    __m256d t2 = _mm256_add_pd(t, t);
    __m256d logm = _mm256_fmadd_pd(_mm256_mul_pd(t2, s), q, t2);

    const __m256d ln2_hi = _mm256_set1_pd(6.93145751953125e-1);
    const __m256d ln2_lo = _mm256_set1_pd(1.42860682030941723212e-6);
    __m256d res = _mm256_fmadd_pd(e, ln2_lo, logm);
    res = _mm256_fmadd_pd(e, ln2_hi, res);

    const __m256d ninf = _mm256_set1_pd(-std::numeric_limits<double>::infinity());
    const __m256d qnan = _mm256_set1_pd(std::numeric_limits<double>::quiet_NaN());
    res = _mm256_blendv_pd(res, ninf, is_zero);
    res = _mm256_blendv_pd(res, qnan, is_neg);
    res = _mm256_blendv_pd(res, _mm256_set1_pd(std::numeric_limits<double>::infinity()), is_inf);
    res = _mm256_blendv_pd(res, qnan, is_nan);
    return res;
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
    double res = hsum(acc);
    for (; i < n; ++i) res += a[i] * b[i];
    return res;
}

double sum_avx2(const double* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double res = hsum(acc);
    for (; i < n; ++i) res += x[i];
    return res;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d yv = _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
        _mm256_storeu_pd(y + i, yv);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void exp_avx2(const double* x, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, exp_pd(_mm256_loadu_pd(x + i)));
    for (; i < n; ++i) {
        alignas(32) double buf[4] = {x[i], 0.0, 0.0, 0.0};
        alignas(32) double out[4];
        _mm256_store_pd(out, exp_pd(_mm256_load_pd(buf)));
        y[i] = out[0];
    }
}

void log_avx2(const double* x, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, log_pd(_mm256_loadu_pd(x + i)));
    for (; i < n; ++i) {
        alignas(32) double buf[4] = {x[i], 1.0, 1.0, 1.0};
        alignas(32) double out[4];
        _mm256_store_pd(out, log_pd(_mm256_load_pd(buf)));
        y[i] = out[0];
    }
}

void logistic_avx2(const double* t, double* p, std::size_t n) {
    const __m256d lo = _mm256_set1_pd(-30.0);
    const __m256d hi = _mm256_set1_pd(30.0);
    const __m256d one = _mm256_set1_pd(1.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d c = _mm256_min_pd(_mm256_max_pd(_mm256_loadu_pd(t + i), lo), hi);
        __m256d e = exp_pd(_mm256_sub_pd(_mm256_setzero_pd(), c));
        _mm256_storeu_pd(p + i, _mm256_div_pd(one, _mm256_add_pd(one, e)));
    }
    for (; i < n; ++i) {
        alignas(32) double buf[4] = {-std::clamp(t[i], -30.0, 30.0), 0.0, 0.0, 0.0};
        alignas(32) double out[4];
        _mm256_store_pd(out, exp_pd(_mm256_load_pd(buf)));
        p[i] = 1.0 / (1.0 + out[0]);
    }
}

double xlogy_minus_y_avx2(const double* x, const double* lam, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    const __m256d floorv = _mm256_set1_pd(rate_floor);
    __m256d acc = zero;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d xv = _mm256_loadu_pd(x + i);
        __m256d lv = _mm256_loadu_pd(lam + i);
        __m256d pos = _mm256_cmp_pd(xv, zero, _CMP_GT_OQ);
        __m256d lzero = _mm256_cmp_pd(lv, zero, _CMP_EQ_OQ);
        __m256d leff = _mm256_blendv_pd(lv, floorv, _mm256_and_pd(pos, lzero));
        __m256d term_pos = _mm256_fmsub_pd(xv, log_pd(leff), leff);
        __m256d term_zero = _mm256_sub_pd(zero, lv);
        acc = _mm256_add_pd(acc, _mm256_blendv_pd(term_zero, term_pos, pos));
    }
    double res = hsum(acc);
    for (; i < n; ++i) {
        if (x[i] > 0.0) {
            const double l = lam[i] == 0.0 ? rate_floor : lam[i];
            res += x[i] * std::log(l) - l;
        } else {
            res += -lam[i];
        }
    }
    return res;
}

double bregman_terms_avx2(const double* x, const double* lam, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    const __m256d floorv = _mm256_set1_pd(rate_floor);
    __m256d acc = zero;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d xv = _mm256_loadu_pd(x + i);
        __m256d lv = _mm256_loadu_pd(lam + i);
        __m256d pos = _mm256_cmp_pd(xv, zero, _CMP_GT_OQ);
        __m256d lzero = _mm256_cmp_pd(lv, zero, _CMP_EQ_OQ);
        __m256d leff = _mm256_blendv_pd(lv, floorv, _mm256_and_pd(pos, lzero));
        __m256d lg = log_pd(_mm256_div_pd(xv, leff));
        __m256d term_pos = _mm256_fmadd_pd(xv, lg, _mm256_sub_pd(leff, xv));
        acc = _mm256_add_pd(acc, _mm256_blendv_pd(lv, term_pos, pos));
    }
    double res = hsum(acc);
    for (; i < n; ++i) {
        if (x[i] > 0.0) {
            const double l = lam[i] == 0.0 ? rate_floor : lam[i];
            res += x[i] * std::log(x[i] / l) - x[i] + l;
        } else {
            res += lam[i];
        }
    }
    return res;
}

// mask with the low `rem` (1..3) lanes active, for row tails
inline __m256i tail_mask(std::size_t rem) {
    alignas(32) static constexpr std::int64_t bits[8] = {-1, -1, -1, -1, 0, 0, 0, 0};
    return _mm256_loadu_si256(reinterpret_cast<const __m256i*>(bits + 4 - rem));
}

void weighted_colsum_avx2(const double* p, const double* mat, std::size_t m, std::size_t k,
                          double* out) {
    // one pass over the matrix with the k running sums held in registers;
    // wider rows fall back to a per-row fused multiply-add over the output
    if (k <= 20) {
        const std::size_t nb = k / 4, rem = k % 4;
        const __m256i mask = rem ? tail_mask(rem) : _mm256_setzero_si256();
        __m256d acc[5];
        for (std::size_t b = 0; b < 5; ++b) acc[b] = _mm256_setzero_pd();
        if (rem && m > 0) {
            // all but the last row: full-width tail load; the lanes past the row
            // end read into the next row but are discarded by the masked store
            for (std::size_t j = 0; j + 1 < m; ++j) {
                const __m256d pv = _mm256_set1_pd(p[j]);
                const double* row = mat + j * k;
                for (std::size_t b = 0; b < nb; ++b)
                    acc[b] = _mm256_fmadd_pd(pv, _mm256_loadu_pd(row + 4 * b), acc[b]);
                acc[nb] = _mm256_fmadd_pd(pv, _mm256_loadu_pd(row + 4 * nb), acc[nb]);
            }
            // last row: masked load, nothing past the matrix is touched
            const __m256d pv = _mm256_set1_pd(p[m - 1]);
            const double* row = mat + (m - 1) * k;
            for (std::size_t b = 0; b < nb; ++b)
                acc[b] = _mm256_fmadd_pd(pv, _mm256_loadu_pd(row + 4 * b), acc[b]);
            acc[nb] = _mm256_fmadd_pd(pv, _mm256_maskload_pd(row + 4 * nb, mask), acc[nb]);
        } else {
            for (std::size_t j = 0; j < m; ++j) {
                const __m256d pv = _mm256_set1_pd(p[j]);
                const double* row = mat + j * k;
                for (std::size_t b = 0; b < nb; ++b)
                    acc[b] = _mm256_fmadd_pd(pv, _mm256_loadu_pd(row + 4 * b), acc[b]);
            }
        }
        for (std::size_t b = 0; b < nb; ++b) _mm256_storeu_pd(out + 4 * b, acc[b]);
        if (rem) _mm256_maskstore_pd(out + 4 * nb, mask, acc[nb]);
    } else {
        for (std::size_t t = 0; t < k; ++t) out[t] = 0.0;
        for (std::size_t j = 0; j < m; ++j) axpy_avx2(p[j], mat + j * k, out, k);
    }
}

void rank1_update_avx2(const double* p, const double* v, double* mat, std::size_t m,
                       std::size_t k) {
    for (std::size_t j = 0; j < m; ++j) axpy_avx2(p[j], v, mat + j * k, k);
}

void row_dots_avx2(const double* mat, const double* v, std::size_t m, std::size_t k,
                   double* out) {
    for (std::size_t j = 0; j < m; ++j) out[j] = dot_avx2(mat + j * k, v, k);
}

void axpy2_avx2(double alpha, const double* x, const double* w, double* y1, double* y2,
                std::size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d z = _mm256_mul_pd(av, _mm256_loadu_pd(x + i));
        _mm256_storeu_pd(y1 + i, _mm256_add_pd(_mm256_loadu_pd(y1 + i), z));
        _mm256_storeu_pd(y2 + i, _mm256_fmadd_pd(z, _mm256_loadu_pd(w + i),
                                                 _mm256_loadu_pd(y2 + i)));
    }
    for (; i < n; ++i) {
        const double z = alpha * x[i];
        y1[i] += z;
        y2[i] += z * w[i];
    }
}

void matmul_avx2(const double* a, const double* b, std::size_t n, std::size_t m, std::size_t k,
                 double* out) {
    if (k > 20) {
        for (std::size_t i = 0; i < n; ++i) weighted_colsum_avx2(a + i * m, b, m, k, out + i * k);
        return;
    }
    const std::size_t nb = k / 4, rem = k % 4;
    const __m256i mask = rem ? tail_mask(rem) : _mm256_setzero_si256();
    std::size_t i = 0;
    // two rows of A at a time so each pass over B feeds two output rows
    for (; i + 2 <= n; i += 2) {
        const double* a0 = a + i * m;
        const double* a1 = a0 + m;
        __m256d acc0[5], acc1[5];
        for (std::size_t blk = 0; blk < 5; ++blk) acc0[blk] = acc1[blk] = _mm256_setzero_pd();
        for (std::size_t j = 0; j < m; ++j) {
            const __m256d p0 = _mm256_set1_pd(a0[j]);
            const __m256d p1 = _mm256_set1_pd(a1[j]);
            const double* row = b + j * k;
            for (std::size_t blk = 0; blk < nb; ++blk) {
                const __m256d v = _mm256_loadu_pd(row + 4 * blk);
                acc0[blk] = _mm256_fmadd_pd(p0, v, acc0[blk]);
                acc1[blk] = _mm256_fmadd_pd(p1, v, acc1[blk]);
            }
            if (rem) {
                // full-width load reads into the next row; those lanes are
                // masked out at the store. The last row gets a masked load.
                const __m256d v = j + 1 < m ? _mm256_loadu_pd(row + 4 * nb)
                                            : _mm256_maskload_pd(row + 4 * nb, mask);
                acc0[nb] = _mm256_fmadd_pd(p0, v, acc0[nb]);
                acc1[nb] = _mm256_fmadd_pd(p1, v, acc1[nb]);
            }
        }
        double* o0 = out + i * k;
        double* o1 = o0 + k;
        for (std::size_t blk = 0; blk < nb; ++blk) {
            _mm256_storeu_pd(o0 + 4 * blk, acc0[blk]);
            _mm256_storeu_pd(o1 + 4 * blk, acc1[blk]);
        }
        if (rem) {
            _mm256_maskstore_pd(o0 + 4 * nb, mask, acc0[nb]);
            _mm256_maskstore_pd(o1 + 4 * nb, mask, acc1[nb]);
        }
    }
    if (i < n) weighted_colsum_avx2(a + i * m, b, m, k, out + i * k);
}

void matmul_tn_acc_avx2(const double* a, const double* b, std::size_t n, std::size_t m,
                        std::size_t k, double* out) {
    const std::size_t nb = k / 4, rem = k % 4;
    std::size_t i = 0;
    if (k <= 20) {
        const __m256i mask = rem ? tail_mask(rem) : _mm256_setzero_si256();
        // four rows of A/B at a time so each output row is touched once per four
        for (; i + 4 <= n; i += 4) {
            const double* ar[4];
            __m256d bv[4][5];
            for (std::size_t r = 0; r < 4; ++r) {
                ar[r] = a + (i + r) * m;
                const double* br = b + (i + r) * k;
                for (std::size_t blk = 0; blk < nb; ++blk) bv[r][blk] = _mm256_loadu_pd(br + 4 * blk);
                if (rem) bv[r][nb] = _mm256_maskload_pd(br + 4 * nb, mask);
            }
            for (std::size_t j = 0; j < m; ++j) {
                double* o = out + j * k;
                const __m256d p0 = _mm256_set1_pd(ar[0][j]);
                const __m256d p1 = _mm256_set1_pd(ar[1][j]);
                const __m256d p2 = _mm256_set1_pd(ar[2][j]);
                const __m256d p3 = _mm256_set1_pd(ar[3][j]);
                for (std::size_t blk = 0; blk < nb; ++blk) {
                    __m256d ov = _mm256_loadu_pd(o + 4 * blk);
                    ov = _mm256_fmadd_pd(p0, bv[0][blk], ov);
                    ov = _mm256_fmadd_pd(p1, bv[1][blk], ov);
                    ov = _mm256_fmadd_pd(p2, bv[2][blk], ov);
                    ov = _mm256_fmadd_pd(p3, bv[3][blk], ov);
                    _mm256_storeu_pd(o + 4 * blk, ov);
                }
                if (rem) {
                    __m256d ov = _mm256_maskload_pd(o + 4 * nb, mask);
                    ov = _mm256_fmadd_pd(p0, bv[0][nb], ov);
                    ov = _mm256_fmadd_pd(p1, bv[1][nb], ov);
                    ov = _mm256_fmadd_pd(p2, bv[2][nb], ov);
                    ov = _mm256_fmadd_pd(p3, bv[3][nb], ov);
                    _mm256_maskstore_pd(o + 4 * nb, mask, ov);
                }
            }
        }
    }
    for (; i < n; ++i) rank1_update_avx2(a + i * m, b + i * k, out, m, k);
}

void scatter_axpy_avx2(const double* x, const std::uint32_t* cols, const double* vals,
                       std::size_t c0, std::size_t c1, std::size_t k, double* out) {
    for (std::size_t c = c0; c < c1; ++c)
        axpy_avx2(x[c], vals + c * k, out + static_cast<std::size_t>(cols[c]) * k, k);
}

void scatter_axpy2_avx2(const double* x, const std::uint32_t* cols, const double* vals,
                        std::size_t c0, std::size_t c1, const double* w, std::size_t k,
                        double* y1, double* y2) {
    for (std::size_t c = c0; c < c1; ++c) {
        const __m256d xv = _mm256_set1_pd(x[c]);
        const double* v = vals + c * k;
        const std::size_t j = static_cast<std::size_t>(cols[c]) * k;
        std::size_t t = 0;
        for (; t + 4 <= k; t += 4) {
            const __m256d z = _mm256_mul_pd(xv, _mm256_loadu_pd(v + t));
            _mm256_storeu_pd(y1 + j + t, _mm256_add_pd(_mm256_loadu_pd(y1 + j + t), z));
            _mm256_storeu_pd(
                y2 + j + t,
                _mm256_fmadd_pd(z, _mm256_loadu_pd(w + t), _mm256_loadu_pd(y2 + j + t)));
        }
        for (; t < k; ++t) {
            const double z = x[c] * v[t];
            y1[j + t] += z;
            y2[j + t] += z * w[t];
        }
    }
}

void gather_rowsum_avx2(const double* x, const std::uint32_t* cols, const double* vals,
                        std::size_t c0, std::size_t c1, const double* gate, std::size_t k,
                        double* acc) {
    if (gate) {
        for (std::size_t c = c0; c < c1; ++c) {
            const __m256d xv = _mm256_set1_pd(x[c]);
            const double* v = vals + c * k;
            const double* g = gate + static_cast<std::size_t>(cols[c]) * k;
            std::size_t t = 0;
            for (; t + 4 <= k; t += 4) {
                const __m256d vg = _mm256_mul_pd(_mm256_loadu_pd(v + t), _mm256_loadu_pd(g + t));
                _mm256_storeu_pd(acc + t, _mm256_fmadd_pd(xv, vg, _mm256_loadu_pd(acc + t)));
            }
            for (; t < k; ++t) acc[t] += x[c] * v[t] * g[t];
        }
    } else {
        for (std::size_t c = c0; c < c1; ++c) axpy_avx2(x[c], vals + c * k, acc, k);
    }
}

}  // namespace

const OpsTable avx2_table = {
    dot_avx2,     sum_avx2,      axpy_avx2,          exp_avx2,
    log_avx2,     logistic_avx2, xlogy_minus_y_avx2, bregman_terms_avx2,
    weighted_colsum_avx2, rank1_update_avx2, row_dots_avx2, axpy2_avx2,
    scatter_axpy_avx2, scatter_axpy2_avx2, gather_rowsum_avx2,
    matmul_avx2, matmul_tn_acc_avx2,
};

}  // namespace pcmf::kernels::detail

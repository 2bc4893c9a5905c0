#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace pcmf::kernels {

// Instruction-set variants. Every operation has a scalar reference
// implementation; SIMD variants are selected at runtime from cpuid and must
// agree with the reference within documented tolerances (equivalence-tested).
enum class Isa { scalar, avx2 };

// Best ISA supported by this CPU among the compiled-in variants.
Isa best_isa();
// Currently active ISA (defaults to best_isa() on first use).
Isa active_isa();
// Override the active ISA (tests use this to exercise both paths).
// Throws input_error if the requested ISA is unavailable on this machine.
void force_isa(Isa isa);
std::string isa_name(Isa isa);

// ---- vector primitives -------------------------------------------------

// sum_i a[i] * b[i]
double dot(const double* a, const double* b, std::size_t n);
// sum_i x[i]
double sum(const double* x, std::size_t n);
// y[i] += alpha * x[i]
void axpy(double alpha, const double* x, double* y, std::size_t n);
// y1[i] += alpha * x[i]  and  y2[i] += alpha * x[i] * w[i]
void axpy2(double alpha, const double* x, const double* w, double* y1, double* y2,
           std::size_t n);
// y[i] = exp(x[i]); results below exp(-708) may flush to zero
void exp_apply(const double* x, double* y, std::size_t n);
// y[i] = log(x[i]); log(0) = -inf, log(negative) = NaN
void log_apply(const double* x, double* y, std::size_t n);
// p[i] = 1 / (1 + exp(-t[i])) with t clamped to [-30, 30] first
void logistic_apply(const double* t, double* p, std::size_t n);

// ---- row-major matrix primitives (matrix is m rows by k columns) ----------

// out[t] = sum_j p[j] * mat[j*k + t]; out is overwritten
void weighted_colsum(const double* p, const double* mat, std::size_t m, std::size_t k,
                     double* out);
// mat[j*k + t] += p[j] * v[t]
void rank1_update(const double* p, const double* v, double* mat, std::size_t m, std::size_t k);
// out[j] = dot(row j of mat, v)
void row_dots(const double* mat, const double* v, std::size_t m, std::size_t k, double* out);

// out = A * B with A n-by-m and B m-by-k, all row-major; out is overwritten.
void matmul(const double* a, const double* b, std::size_t n, std::size_t m, std::size_t k,
            double* out);
// out += A^T * B with A n-by-m and B n-by-k, all row-major; out is m-by-k.
void matmul_tn_acc(const double* a, const double* b, std::size_t n, std::size_t m, std::size_t k,
                   double* out);

// ---- batched sparse-cell passes -------------------------------------------
// All three walk a contiguous cell range of a sparse matrix stored row-major:
// cell c carries weight x[c], a k-vector vals + c*k, and a target row cols[c].

// out[cols[c]*k + t] += x[c] * vals[c*k + t] for every cell c in [c0, c1)
void scatter_axpy(const double* x, const std::uint32_t* cols, const double* vals,
                  std::size_t c0, std::size_t c1, std::size_t k, double* out);
// y1[cols[c]*k + t] += x[c] * vals[c*k + t]
// y2[cols[c]*k + t] += x[c] * vals[c*k + t] * w[t]    (w is one k-vector)
void scatter_axpy2(const double* x, const std::uint32_t* cols, const double* vals,
                   std::size_t c0, std::size_t c1, const double* w, std::size_t k, double* y1,
                   double* y2);
// acc[t] += sum over c in [c0, c1) of x[c] * vals[c*k + t] * gate[cols[c]*k + t];
// gate == nullptr means gate identically one. acc is accumulated, not cleared.
void gather_rowsum(const double* x, const std::uint32_t* cols, const double* vals,
                   std::size_t c0, std::size_t c1, const double* gate, std::size_t k, double* acc);

// ---- count-model reductions ---------------------------------------------
// Both use the convention 0*log(0) = 0 and floor lam at 1e-12 for entries
// where x > 0 and lam == 0 (the floor applies to that entry's lam entirely).

// sum_i [ x[i]*log(lam[i]) - lam[i] ]   (the lgamma(x+1) part is separate)
double xlogy_minus_y(const double* x, const double* lam, std::size_t n);
// sum_i [ x[i]*log(x[i]/lam[i]) - x[i] + lam[i] ]
double bregman_terms(const double* x, const double* lam, std::size_t n);

// Floor used by the reductions above.
inline constexpr double rate_floor = 1e-12;

// ---- dispatch table (one entry per operation) ----------------------------

struct OpsTable {
    double (*dot)(const double*, const double*, std::size_t);
    double (*sum)(const double*, std::size_t);
    void (*axpy)(double, const double*, double*, std::size_t);
    void (*exp_apply)(const double*, double*, std::size_t);
    void (*log_apply)(const double*, double*, std::size_t);
    void (*logistic_apply)(const double*, double*, std::size_t);
    double (*xlogy_minus_y)(const double*, const double*, std::size_t);
    double (*bregman_terms)(const double*, const double*, std::size_t);
    void (*weighted_colsum)(const double*, const double*, std::size_t, std::size_t, double*);
    void (*rank1_update)(const double*, const double*, double*, std::size_t, std::size_t);
    void (*row_dots)(const double*, const double*, std::size_t, std::size_t, double*);
    void (*axpy2)(double, const double*, const double*, double*, double*, std::size_t);
    void (*scatter_axpy)(const double*, const std::uint32_t*, const double*, std::size_t,
                         std::size_t, std::size_t, double*);
    void (*scatter_axpy2)(const double*, const std::uint32_t*, const double*, std::size_t,
                          std::size_t, const double*, std::size_t, double*, double*);
    void (*gather_rowsum)(const double*, const std::uint32_t*, const double*, std::size_t,
                          std::size_t, const double*, std::size_t, double*);
    void (*matmul)(const double*, const double*, std::size_t, std::size_t, std::size_t, double*);
    void (*matmul_tn_acc)(const double*, const double*, std::size_t, std::size_t, std::size_t,
                          double*);
};

namespace detail {
extern const OpsTable scalar_table;
#ifdef PCMF_WITH_AVX2
extern const OpsTable avx2_table;
#endif
}  // namespace detail

}  // namespace pcmf::kernels

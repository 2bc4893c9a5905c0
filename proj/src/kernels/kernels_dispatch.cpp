// Runtime ISA selection. The active table is picked once from cpuid and can
// be overridden by tests to exercise every compiled-in variant.

#include <atomic>

#include "pcmf/common.hpp"
#include "pcmf/kernels.hpp"

namespace pcmf::kernels {

namespace {

bool cpu_has_avx2_fma() {
#if defined(PCMF_WITH_AVX2) && defined(__GNUC__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const OpsTable* table_for(Isa isa) {
#ifdef PCMF_WITH_AVX2
    if (isa == Isa::avx2) return &detail::avx2_table;
#endif
    (void)isa;
    return &detail::scalar_table;
}

std::atomic<Isa> g_active{cpu_has_avx2_fma() ? Isa::avx2 : Isa::scalar};
std::atomic<const OpsTable*> g_table{table_for(g_active.load())};

}  // namespace

Isa best_isa() { return cpu_has_avx2_fma() ? Isa::avx2 : Isa::scalar; }

Isa active_isa() { return g_active.load(std::memory_order_relaxed); }

void force_isa(Isa isa) {
    if (isa == Isa::avx2 && best_isa() != Isa::avx2)
        throw input_error("avx2 kernels unavailable on this machine");
    g_active.store(isa, std::memory_order_relaxed);
    g_table.store(table_for(isa), std::memory_order_relaxed);
}

std::string isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

double dot(const double* a, const double* b, std::size_t n) {
    return g_table.load(std::memory_order_relaxed)->dot(a, b, n);
}
double sum(const double* x, std::size_t n) {
    return g_table.load(std::memory_order_relaxed)->sum(x, n);
}
void axpy(double alpha, const double* x, double* y, std::size_t n) {
    g_table.load(std::memory_order_relaxed)->axpy(alpha, x, y, n);
}
void exp_apply(const double* x, double* y, std::size_t n) {
    g_table.load(std::memory_order_relaxed)->exp_apply(x, y, n);
}
void log_apply(const double* x, double* y, std::size_t n) {
    g_table.load(std::memory_order_relaxed)->log_apply(x, y, n);
}
void logistic_apply(const double* t, double* p, std::size_t n) {
    g_table.load(std::memory_order_relaxed)->logistic_apply(t, p, n);
}
double xlogy_minus_y(const double* x, const double* lam, std::size_t n) {
    return g_table.load(std::memory_order_relaxed)->xlogy_minus_y(x, lam, n);
}
double bregman_terms(const double* x, const double* lam, std::size_t n) {
    return g_table.load(std::memory_order_relaxed)->bregman_terms(x, lam, n);
}
void weighted_colsum(const double* p, const double* mat, std::size_t m, std::size_t k,
                     double* out) {
    g_table.load(std::memory_order_relaxed)->weighted_colsum(p, mat, m, k, out);
}
void rank1_update(const double* p, const double* v, double* mat, std::size_t m, std::size_t k) {
    g_table.load(std::memory_order_relaxed)->rank1_update(p, v, mat, m, k);
}
void row_dots(const double* mat, const double* v, std::size_t m, std::size_t k, double* out) {
    g_table.load(std::memory_order_relaxed)->row_dots(mat, v, m, k, out);
}
void axpy2(double alpha, const double* x, const double* w, double* y1, double* y2,
           std::size_t n) {
    g_table.load(std::memory_order_relaxed)->axpy2(alpha, x, w, y1, y2, n);
}
void scatter_axpy(const double* x, const std::uint32_t* cols, const double* vals, std::size_t c0,
                  std::size_t c1, std::size_t k, double* out) {
    g_table.load(std::memory_order_relaxed)->scatter_axpy(x, cols, vals, c0, c1, k, out);
}
void scatter_axpy2(const double* x, const std::uint32_t* cols, const double* vals, std::size_t c0,
                   std::size_t c1, const double* w, std::size_t k, double* y1, double* y2) {
    g_table.load(std::memory_order_relaxed)->scatter_axpy2(x, cols, vals, c0, c1, w, k, y1, y2);
}
void gather_rowsum(const double* x, const std::uint32_t* cols, const double* vals, std::size_t c0,
                   std::size_t c1, const double* gate, std::size_t k, double* acc) {
    g_table.load(std::memory_order_relaxed)->gather_rowsum(x, cols, vals, c0, c1, gate, k, acc);
}

}  // namespace pcmf::kernels

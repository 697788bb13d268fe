#pragma once

// Worker-count control and deterministic parallel reductions.
//
// Every parallel loop in this library partitions its work into chunks whose
// boundaries depend only on the problem size, never on the thread count.
// Per-chunk partials are combined serially in chunk order, so results are
// bit-identical whether the code runs on 1 thread or 64.

#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace triage {

// 0 = library default (whatever OpenMP picks).
void set_jobs(int n);
int effective_jobs();

#ifdef _OPENMP
#define TRIAGE_PRAGMA(x) _Pragma(#x)
#define TRIAGE_OMP_FOR TRIAGE_PRAGMA(omp parallel for schedule(static))
#else
#define TRIAGE_OMP_FOR
#endif

// Applies fn(chunk_index) to every chunk in [0, n_chunks).
template <typename Fn>
void parallel_for_chunks(std::int64_t n_chunks, Fn&& fn) {
    TRIAGE_OMP_FOR
    for (std::int64_t c = 0; c < n_chunks; ++c) fn(c);
}

// Sum of term(i) over [0, n), accumulated per fixed-size chunk and combined
// in chunk order.
template <typename Term>
double deterministic_sum(std::int64_t n, std::int64_t chunk_size, Term&& term) {
    if (n <= 0) return 0.0;
    if (chunk_size < 1) chunk_size = 1;
    const std::int64_t n_chunks = (n + chunk_size - 1) / chunk_size;
    std::vector<double> partial(static_cast<std::size_t>(n_chunks), 0.0);
    TRIAGE_OMP_FOR
    for (std::int64_t c = 0; c < n_chunks; ++c) {
        const std::int64_t lo = c * chunk_size;
        const std::int64_t hi = lo + chunk_size < n ? lo + chunk_size : n;
        double acc = 0.0;
        for (std::int64_t i = lo; i < hi; ++i) acc += term(i);
        partial[static_cast<std::size_t>(c)] = acc;
    }
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

} // namespace triage

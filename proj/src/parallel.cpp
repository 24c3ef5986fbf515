#include "mrio/parallel.hpp"

#include <algorithm>
#include <thread>
#include <vector>

namespace mrio {

namespace {
int g_threads = int(std::thread::hardware_concurrency());
}

void set_thread_count(int n) { g_threads = std::max(1, n); }
int thread_count() { return std::max(1, g_threads); }

void parallel_for_chunks(size_t begin, size_t end,
                         const std::function<void(size_t, size_t)>& fn) {
    const size_t n = end > begin ? end - begin : 0;
    if (n == 0) return;
    const int nt = std::min<size_t>(size_t(thread_count()), n);
    if (nt <= 1 || n < 1024) {
        fn(begin, end);
        return;
    }
    std::vector<std::thread> workers;
    workers.reserve(size_t(nt));
    const size_t chunk = (n + size_t(nt) - 1) / size_t(nt);
    for (int t = 0; t < nt; ++t) {
        size_t lo = begin + size_t(t) * chunk;
        size_t hi = std::min(end, lo + chunk);
        if (lo >= hi) break;
        workers.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    for (auto& w : workers) w.join();
}

void parallel_for(size_t begin, size_t end, const std::function<void(size_t)>& fn) {
    parallel_for_chunks(begin, end, [&fn](size_t lo, size_t hi) {
        for (size_t i = lo; i < hi; ++i) fn(i);
    });
}

}  // namespace mrio

#include "osnet/engine.hpp"

#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace osnet::engine {

namespace {
std::atomic<ConvPath> g_conv_path{ConvPath::kDirect};
std::atomic<bool> g_deterministic{false};
std::atomic<int> g_num_threads{0};
}  // namespace

void set_conv_path(ConvPath path) { g_conv_path.store(path); }
ConvPath conv_path() { return g_conv_path.load(); }

void set_deterministic(bool on) { g_deterministic.store(on); }
bool deterministic() { return g_deterministic.load(); }

void set_num_threads(int n) { g_num_threads.store(n); }

int num_threads() {
    if (g_deterministic.load()) return 1;
    int n = g_num_threads.load();
    if (n > 0) return n;
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace osnet::engine

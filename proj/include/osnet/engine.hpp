#pragma once

namespace osnet::engine {

enum class ConvPath {
    kDirect,   // blocked direct loops, double accumulator (the oracle path)
    kLowered,  // im2col + GEMM, storage-precision accumulator, fixed k order
};

// Process-wide kernel configuration. All kernels use owner-computes loop
// structures with a fixed reduction order, so results are bitwise identical
// for any thread count; deterministic mode additionally pins one thread.
void set_conv_path(ConvPath path);
ConvPath conv_path();

void set_deterministic(bool on);
bool deterministic();

// 0 = library default. Ignored (treated as 1) in deterministic mode.
void set_num_threads(int n);
int num_threads();

}  // namespace osnet::engine

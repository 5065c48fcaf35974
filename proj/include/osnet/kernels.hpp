#pragma once

#include <cstdint>
#include <vector>

namespace osnet::kernels {

// Geometry of one grouped 2-D convolution. icpg = input channels per group;
// weight layout is (c_out, icpg, kh, kw), data layout NCHW row-major.
struct ConvDims {
    int64_t n = 0, c_in = 0, h_in = 0, w_in = 0;
    int64_t c_out = 0, icpg = 0, kh = 0, kw = 0;
    int64_t sh = 1, sw = 1, ph = 0, pw = 0;
    int64_t groups = 1;
    int64_t h_out = 0, w_out = 0;

    int64_t ocpg() const { return c_out / groups; }
    int64_t out_numel() const { return n * c_out * h_out * w_out; }
};

// Production kernels. All use owner-computes decompositions with a fixed
// per-element reduction order, so output bytes do not depend on the thread
// count. Backward kernels accumulate (+=) into the given gradient buffers.
template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, const ConvDims& d);

// im2col + GEMM path. Accumulates in storage precision with the same
// (ic, kh, kw) reduction order as the direct path.
template <typename T>
void conv2d_forward_lowered(const T* x, const T* w, const T* bias, T* y, const ConvDims& d);

template <typename T>
void conv2d_backward_input(const T* w, const T* gy, T* gx, const ConvDims& d);

template <typename T>
void conv2d_backward_weight(const T* x, const T* gy, T* gw, const ConvDims& d);

template <typename T>
void conv2d_backward_bias(const T* gy, T* gb, const ConvDims& d);

// Pooling geometry reuses ConvDims with kh/kw as the window and icpg unused.
// Max pooling records the flat (h_in*w_in)-plane index of the first maximum
// in row-major scan order; ties and the backward route follow that choice.
template <typename T>
void maxpool_forward(const T* x, T* y, int32_t* argmax, const ConvDims& d);

template <typename T>
void maxpool_backward(const T* gy, const int32_t* argmax, T* gx, const ConvDims& d);

// Average pooling divides by the full window area (zero padding included).
template <typename T>
void avgpool_forward(const T* x, T* y, const ConvDims& d);

template <typename T>
void avgpool_backward(const T* gy, T* gx, const ConvDims& d);

}  // namespace osnet::kernels

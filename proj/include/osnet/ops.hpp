#pragma once

#include <vector>

#include "osnet/kernels.hpp"
#include "osnet/tape.hpp"
#include "osnet/tensor.hpp"

namespace osnet {

// Grouped convolution parameters. Weight layout (c_out, c_in/groups, kh, kw);
// depthwise is groups == c_in with one input channel per group.
template <typename T>
struct ConvKernelT {
    TensorPtrT<T> weight;
    TensorPtrT<T> bias;  // optional, (c_out)
    int64_t stride_h = 1, stride_w = 1;
    int64_t pad_h = 0, pad_w = 0;
    int64_t groups = 1;
};

// Batch norm state. scale/shift are learnable; running stats are buffers
// updated only by training-mode forwards.
template <typename T>
struct BatchNorm2dT {
    TensorPtrT<T> scale, shift;
    TensorPtrT<T> running_mean, running_var;
    double momentum = 0.1;
    double epsilon = 1e-5;
};

template <typename T>
TensorPtrT<T> conv2d(const CtxT<T>& ctx, const TensorPtrT<T>& x, const ConvKernelT<T>& k);

template <typename T>
TensorPtrT<T> pointwise_conv(const CtxT<T>& ctx, const TensorPtrT<T>& x, const ConvKernelT<T>& k);

template <typename T>
TensorPtrT<T> depthwise_conv(const CtxT<T>& ctx, const TensorPtrT<T>& x, const ConvKernelT<T>& k);

template <typename T>
TensorPtrT<T> batchnorm2d(const CtxT<T>& ctx, const TensorPtrT<T>& x, BatchNorm2dT<T>& bn);

template <typename T>
TensorPtrT<T> instance_norm2d(const CtxT<T>& ctx, const TensorPtrT<T>& x, const TensorPtrT<T>& scale,
                              const TensorPtrT<T>& shift, double epsilon = 1e-5);

template <typename T>
TensorPtrT<T> relu(const CtxT<T>& ctx, const TensorPtrT<T>& x);

template <typename T>
TensorPtrT<T> sigmoid(const CtxT<T>& ctx, const TensorPtrT<T>& x);

template <typename T>
TensorPtrT<T> global_avg_pool(const CtxT<T>& ctx, const TensorPtrT<T>& x);

template <typename T>
TensorPtrT<T> max_pool2d(const CtxT<T>& ctx, const TensorPtrT<T>& x, int64_t window, int64_t stride,
                         int64_t pad = 0);

template <typename T>
TensorPtrT<T> avg_pool2d(const CtxT<T>& ctx, const TensorPtrT<T>& x, int64_t window, int64_t stride,
                         int64_t pad = 0);

template <typename T>
TensorPtrT<T> linear(const CtxT<T>& ctx, const TensorPtrT<T>& x, const TensorPtrT<T>& weight,
                     const TensorPtrT<T>& bias = {});

template <typename T>
TensorPtrT<T> add(const CtxT<T>& ctx, const TensorPtrT<T>& a, const TensorPtrT<T>& b);

template <typename T>
TensorPtrT<T> scale_by(const CtxT<T>& ctx, const TensorPtrT<T>& x, double alpha);

// y = x * s with s of shape (ns, cs), ns in {1, n}, cs in {1, c}, broadcast
// over batch, channel, and the spatial axes as needed. Covers channel-wise
// gates (n,c), stream-wise scalar gates (n,1) and static gates (1,c).
template <typename T>
TensorPtrT<T> broadcast_scale(const CtxT<T>& ctx, const TensorPtrT<T>& x, const TensorPtrT<T>& s);

template <typename T>
TensorPtrT<T> concat_channels(const CtxT<T>& ctx, const std::vector<TensorPtrT<T>>& parts);

template <typename T>
TensorPtrT<T> reshape(const CtxT<T>& ctx, const TensorPtrT<T>& x, Shape shape);

template <typename T>
TensorPtrT<T> sum_all(const CtxT<T>& ctx, const TensorPtrT<T>& x);

// Scalar <x, w> against fixed (non-learnable) weights; handy as a smooth
// probe loss in gradient checks.
template <typename T>
TensorPtrT<T> inner_const(const CtxT<T>& ctx, const TensorPtrT<T>& x, std::vector<T> w);

// Runs the reverse sweep from a scalar loss.
template <typename T>
void backward(TapeT<T>& tape, const TensorPtrT<T>& loss);

}  // namespace osnet

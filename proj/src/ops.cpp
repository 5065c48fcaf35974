#include "osnet/ops.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "osnet/engine.hpp"
#include "osnet/reference.hpp"

namespace osnet {

namespace {

using kernels::ConvDims;

template <typename T>
void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

template <typename T>
ConvDims conv_dims(const TensorPtrT<T>& x, const ConvKernelT<T>& k, const char* opname) {
    if (!x || !k.weight) throw std::invalid_argument(std::string(opname) + ": null tensor");
    if (x->ndim() != 4)
        throw std::invalid_argument(std::string(opname) + ": input must be 4-D, got " + shape_str(x->shape()));
    if (k.weight->ndim() != 4)
        throw std::invalid_argument(std::string(opname) + ": weight must be 4-D, got " + shape_str(k.weight->shape()));
    ConvDims d;
    d.n = x->dim(0);
    d.c_in = x->dim(1);
    d.h_in = x->dim(2);
    d.w_in = x->dim(3);
    d.c_out = k.weight->dim(0);
    d.icpg = k.weight->dim(1);
    d.kh = k.weight->dim(2);
    d.kw = k.weight->dim(3);
    d.sh = k.stride_h;
    d.sw = k.stride_w;
    d.ph = k.pad_h;
    d.pw = k.pad_w;
    d.groups = k.groups;
    if (d.groups < 1 || d.c_out % d.groups != 0)
        throw std::invalid_argument(std::string(opname) + ": out channels " + std::to_string(d.c_out) +
                                    " not divisible by groups " + std::to_string(d.groups));
    if (d.c_in != d.groups * d.icpg)
        throw std::invalid_argument(std::string(opname) + ": input shape " + shape_str(x->shape()) +
                                    " incompatible with weight " + shape_str(k.weight->shape()) + " and groups " +
                                    std::to_string(d.groups));
    if (d.sh < 1 || d.sw < 1 || d.ph < 0 || d.pw < 0)
        throw std::invalid_argument(std::string(opname) + ": invalid stride/padding");
    if (k.bias && (k.bias->ndim() != 1 || k.bias->dim(0) != d.c_out))
        throw std::invalid_argument(std::string(opname) + ": bias shape " + shape_str(k.bias->shape()) +
                                    " must be (" + std::to_string(d.c_out) + ")");
    d.h_out = (d.h_in + 2 * d.ph - d.kh) / d.sh + 1;
    d.w_out = (d.w_in + 2 * d.pw - d.kw) / d.sw + 1;
    if (d.h_in + 2 * d.ph < d.kh || d.w_in + 2 * d.pw < d.kw || d.h_out < 1 || d.w_out < 1)
        throw std::invalid_argument(std::string(opname) + ": zero-sized output for input " + shape_str(x->shape()) +
                                    " with kernel " + shape_str(k.weight->shape()));
    return d;
}

template <typename T>
ConvDims pool_dims(const TensorPtrT<T>& x, int64_t window, int64_t stride, int64_t pad, const char* opname) {
    if (!x || x->ndim() != 4)
        throw std::invalid_argument(std::string(opname) + ": input must be 4-D");
    if (window < 1 || stride < 1 || pad < 0 || pad >= window)
        throw std::invalid_argument(std::string(opname) + ": invalid window/stride/pad");
    ConvDims d;
    d.n = x->dim(0);
    d.c_in = x->dim(1);
    d.h_in = x->dim(2);
    d.w_in = x->dim(3);
    d.c_out = d.c_in;
    d.kh = d.kw = window;
    d.sh = d.sw = stride;
    d.ph = d.pw = pad;
    d.h_out = (d.h_in + 2 * pad - window) / stride + 1;
    d.w_out = (d.w_in + 2 * pad - window) / stride + 1;
    if (d.h_in + 2 * pad < window || d.w_in + 2 * pad < window || d.h_out < 1 || d.w_out < 1)
        throw std::invalid_argument(std::string(opname) + ": zero-sized output for input " + shape_str(x->shape()));
    return d;
}

template <typename T>
bool grad_wanted(const CtxT<T>& ctx, std::initializer_list<TensorPtrT<T>> inputs) {
    if (!ctx.tape) return false;
    for (const auto& t : inputs)
        if (t && t->requires_grad()) return true;
    return false;
}

}  // namespace

template <typename T>
TensorPtrT<T> conv2d(const CtxT<T>& ctx, const TensorPtrT<T>& x, const ConvKernelT<T>& k) {
    const ConvDims d = conv_dims(x, k, "conv2d");
    auto y = make_tensor<T>({d.n, d.c_out, d.h_out, d.w_out});
    const T* bias = k.bias ? k.bias->data() : nullptr;
    if (engine::conv_path() == engine::ConvPath::kLowered)
        kernels::conv2d_forward_lowered(x->data(), k.weight->data(), bias, y->data(), d);
    else
        kernels::conv2d_forward(x->data(), k.weight->data(), bias, y->data(), d);
    if (grad_wanted(ctx, {x, k.weight, k.bias})) {
        y->set_requires_grad(true);
        auto w = k.weight;
        auto b = k.bias;
        ctx.tape->record([x, w, b, y, d]() {
            if (!y->has_grad()) return;
            const T* gy = y->grad().data();
            if (x->requires_grad()) kernels::conv2d_backward_input(w->data(), gy, x->grad().data(), d);
            if (w->requires_grad()) kernels::conv2d_backward_weight(x->data(), gy, w->grad().data(), d);
            if (b && b->requires_grad()) kernels::conv2d_backward_bias(gy, b->grad().data(), d);
        });
    }
    return y;
}

template <typename T>
TensorPtrT<T> pointwise_conv(const CtxT<T>& ctx, const TensorPtrT<T>& x, const ConvKernelT<T>& k) {
    if (k.weight && (k.weight->dim(2) != 1 || k.weight->dim(3) != 1))
        throw std::invalid_argument("pointwise_conv: kernel must be 1x1, got " + shape_str(k.weight->shape()));
    return conv2d(ctx, x, k);
}

template <typename T>
TensorPtrT<T> depthwise_conv(const CtxT<T>& ctx, const TensorPtrT<T>& x, const ConvKernelT<T>& k) {
    if (x && k.groups != x->dim(1))
        throw std::invalid_argument("depthwise_conv: groups " + std::to_string(k.groups) +
                                    " must equal input channels " + std::to_string(x->dim(1)));
    if (k.weight && k.weight->dim(1) != 1)
        throw std::invalid_argument("depthwise_conv: weight must have one input channel per group, got " +
                                    shape_str(k.weight->shape()));
    return conv2d(ctx, x, k);
}

template <typename T>
TensorPtrT<T> batchnorm2d(const CtxT<T>& ctx, const TensorPtrT<T>& x, BatchNorm2dT<T>& bn) {
    if (!x || x->ndim() != 4) throw std::invalid_argument("batchnorm2d: input must be 4-D");
    if (bn.epsilon <= 0) throw std::invalid_argument("batchnorm2d: epsilon must be positive");
    const int64_t n = x->dim(0), c = x->dim(1), h = x->dim(2), w = x->dim(3);
    if (bn.scale->numel() != c || bn.shift->numel() != c)
        throw std::invalid_argument("batchnorm2d: scale/shift length " + std::to_string(bn.scale->numel()) +
                                    " != channels " + std::to_string(c));
    auto y = make_tensor<T>(x->shape());
    const int64_t plane = h * w;
    const int64_t per_c = n * plane;
    const int nt = engine::num_threads();

    auto saved_mean = std::make_shared<std::vector<double>>(c);
    auto saved_inv = std::make_shared<std::vector<double>>(c);

    if (ctx.training) {
#pragma omp parallel for schedule(static) num_threads(nt)
        for (int64_t ci = 0; ci < c; ++ci) {
            double sum = 0.0, sq = 0.0;
            for (int64_t ni = 0; ni < n; ++ni) {
                const T* xs = x->data() + (ni * c + ci) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    const double v = xs[i];
                    sum += v;
                    sq += v * v;
                }
            }
            const double mean = sum / per_c;
            double var = sq / per_c - mean * mean;
            if (var < 0) var = 0;  // cancellation guard
            const double inv = 1.0 / std::sqrt(var + bn.epsilon);
            (*saved_mean)[ci] = mean;
            (*saved_inv)[ci] = inv;
            const double g = bn.scale->at(ci), s = bn.shift->at(ci);
            for (int64_t ni = 0; ni < n; ++ni) {
                const T* xs = x->data() + (ni * c + ci) * plane;
                T* ys = y->data() + (ni * c + ci) * plane;
                for (int64_t i = 0; i < plane; ++i)
                    ys[i] = static_cast<T>((xs[i] - mean) * inv * g + s);
            }
            const double m = bn.momentum;
            bn.running_mean->at(ci) = static_cast<T>((1 - m) * bn.running_mean->at(ci) + m * mean);
            bn.running_var->at(ci) = static_cast<T>((1 - m) * bn.running_var->at(ci) + m * var);
        }
    } else {
#pragma omp parallel for schedule(static) num_threads(nt)
        for (int64_t ci = 0; ci < c; ++ci) {
            const double mean = bn.running_mean->at(ci);
            const double inv = 1.0 / std::sqrt(static_cast<double>(bn.running_var->at(ci)) + bn.epsilon);
            (*saved_mean)[ci] = mean;
            (*saved_inv)[ci] = inv;
            const double g = bn.scale->at(ci), s = bn.shift->at(ci);
            for (int64_t ni = 0; ni < n; ++ni) {
                const T* xs = x->data() + (ni * c + ci) * plane;
                T* ys = y->data() + (ni * c + ci) * plane;
                for (int64_t i = 0; i < plane; ++i)
                    ys[i] = static_cast<T>((xs[i] - mean) * inv * g + s);
            }
        }
    }

    if (grad_wanted(ctx, {x, bn.scale, bn.shift})) {
        y->set_requires_grad(true);
        auto scale = bn.scale;
        auto shift = bn.shift;
        const bool training = ctx.training;
        ctx.tape->record([x, y, scale, shift, saved_mean, saved_inv, n, c, plane, training]() {
            if (!y->has_grad()) return;
            const T* gy = y->grad().data();
            // grad buffers allocate lazily; materialize them before the
            // parallel region
            T* gscale = scale->requires_grad() ? scale->grad().data() : nullptr;
            T* gshift = shift->requires_grad() ? shift->grad().data() : nullptr;
            T* gx = x->requires_grad() ? x->grad().data() : nullptr;
            const int nth = engine::num_threads();
#pragma omp parallel for schedule(static) num_threads(nth)
            for (int64_t ci = 0; ci < c; ++ci) {
                const double mean = (*saved_mean)[ci];
                const double inv = (*saved_inv)[ci];
                const double g = scale->at(ci);
                double sum_gy = 0.0, sum_gy_xh = 0.0;
                for (int64_t ni = 0; ni < n; ++ni) {
                    const T* xs = x->data() + (ni * c + ci) * plane;
                    const T* gs = gy + (ni * c + ci) * plane;
                    for (int64_t i = 0; i < plane; ++i) {
                        const double xh = (xs[i] - mean) * inv;
                        sum_gy += gs[i];
                        sum_gy_xh += gs[i] * xh;
                    }
                }
                if (gscale) gscale[ci] += static_cast<T>(sum_gy_xh);
                if (gshift) gshift[ci] += static_cast<T>(sum_gy);
                if (gx) {
                    const double m = static_cast<double>(n * plane);
                    for (int64_t ni = 0; ni < n; ++ni) {
                        const T* xs = x->data() + (ni * c + ci) * plane;
                        const T* gs = gy + (ni * c + ci) * plane;
                        T* gxs = gx + (ni * c + ci) * plane;
                        for (int64_t i = 0; i < plane; ++i) {
                            const double xh = (xs[i] - mean) * inv;
                            double d;
                            if (training)
                                d = g * inv * (gs[i] - sum_gy / m - xh * sum_gy_xh / m);
                            else
                                d = g * inv * gs[i];
                            gxs[i] += static_cast<T>(d);
                        }
                    }
                }
            }
        });
    }
    return y;
}

template <typename T>
TensorPtrT<T> instance_norm2d(const CtxT<T>& ctx, const TensorPtrT<T>& x, const TensorPtrT<T>& scale,
                              const TensorPtrT<T>& shift, double epsilon) {
    if (!x || x->ndim() != 4) throw std::invalid_argument("instance_norm2d: input must be 4-D");
    if (epsilon <= 0) throw std::invalid_argument("instance_norm2d: epsilon must be positive");
    const int64_t n = x->dim(0), c = x->dim(1), h = x->dim(2), w = x->dim(3);
    if (scale->numel() != c || shift->numel() != c)
        throw std::invalid_argument("instance_norm2d: scale/shift length != channels");
    const int64_t plane = h * w;
    auto y = make_tensor<T>(x->shape());
    auto saved_mean = std::make_shared<std::vector<double>>(n * c);
    auto saved_inv = std::make_shared<std::vector<double>>(n * c);
    const int nt = engine::num_threads();
#pragma omp parallel for collapse(2) schedule(static) num_threads(nt)
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t ci = 0; ci < c; ++ci) {
            const T* xs = x->data() + (ni * c + ci) * plane;
            double sum = 0.0, sq = 0.0;
            for (int64_t i = 0; i < plane; ++i) {
                sum += xs[i];
                sq += static_cast<double>(xs[i]) * xs[i];
            }
            const double mean = sum / plane;
            double var = sq / plane - mean * mean;
            if (var < 0) var = 0;
            const double inv = 1.0 / std::sqrt(var + epsilon);
            (*saved_mean)[ni * c + ci] = mean;
            (*saved_inv)[ni * c + ci] = inv;
            const double g = scale->at(ci), s = shift->at(ci);
            T* ys = y->data() + (ni * c + ci) * plane;
            for (int64_t i = 0; i < plane; ++i) ys[i] = static_cast<T>((xs[i] - mean) * inv * g + s);
        }

    if (grad_wanted(ctx, {x, scale, shift})) {
        y->set_requires_grad(true);
        ctx.tape->record([x, y, scale, shift, saved_mean, saved_inv, n, c, plane]() {
            if (!y->has_grad()) return;
            const T* gy = y->grad().data();
            T* gsc = scale->requires_grad() ? scale->grad().data() : nullptr;
            T* gsh = shift->requires_grad() ? shift->grad().data() : nullptr;
            T* gx = x->requires_grad() ? x->grad().data() : nullptr;
            const int nth = engine::num_threads();
            // One thread owns all samples of one channel so the scale/shift
            // gradient reduction stays race-free and order-fixed.
#pragma omp parallel for schedule(static) num_threads(nth)
            for (int64_t ci = 0; ci < c; ++ci) {
                const double g = scale->at(ci);
                double gscale = 0.0, gshift = 0.0;
                for (int64_t ni = 0; ni < n; ++ni) {
                    const int64_t sc = ni * c + ci;
                    const double mean = (*saved_mean)[sc], inv = (*saved_inv)[sc];
                    const T* xs = x->data() + sc * plane;
                    const T* gs = gy + sc * plane;
                    double sum_gy = 0.0, sum_gy_xh = 0.0;
                    for (int64_t i = 0; i < plane; ++i) {
                        const double xh = (xs[i] - mean) * inv;
                        sum_gy += gs[i];
                        sum_gy_xh += gs[i] * xh;
                    }
                    gscale += sum_gy_xh;
                    gshift += sum_gy;
                    if (gx) {
                        T* gxs = gx + sc * plane;
                        const double m = static_cast<double>(plane);
                        for (int64_t i = 0; i < plane; ++i) {
                            const double xh = (xs[i] - mean) * inv;
                            gxs[i] += static_cast<T>(g * inv * (gs[i] - sum_gy / m - xh * sum_gy_xh / m));
                        }
                    }
                }
                if (gsc) gsc[ci] += static_cast<T>(gscale);
                if (gsh) gsh[ci] += static_cast<T>(gshift);
            }
        });
    }
    return y;
}

template <typename T>
TensorPtrT<T> relu(const CtxT<T>& ctx, const TensorPtrT<T>& x) {
    auto y = make_tensor<T>(x->shape());
    const int64_t m = x->numel();
    const int nt = engine::num_threads();
#pragma omp parallel for schedule(static) num_threads(nt)
    for (int64_t i = 0; i < m; ++i) y->at(i) = x->at(i) > T(0) ? x->at(i) : T(0);
    if (grad_wanted(ctx, {x})) {
        y->set_requires_grad(true);
        ctx.tape->record([x, y, m]() {
            if (!y->has_grad() || !x->requires_grad()) return;
            const T* gy = y->grad().data();
            T* gx = x->grad().data();
            const int nth = engine::num_threads();
            // subgradient at exactly 0 is 0
#pragma omp parallel for schedule(static) num_threads(nth)
            for (int64_t i = 0; i < m; ++i)
                if (x->at(i) > T(0)) gx[i] += gy[i];
        });
    }
    return y;
}

template <typename T>
TensorPtrT<T> sigmoid(const CtxT<T>& ctx, const TensorPtrT<T>& x) {
    auto y = make_tensor<T>(x->shape());
    const int64_t m = x->numel();
    const int nt = engine::num_threads();
#pragma omp parallel for schedule(static) num_threads(nt)
    for (int64_t i = 0; i < m; ++i) {
        const double v = x->at(i);
        double r;
        if (v >= 0) {
            r = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            r = e / (1.0 + e);
        }
        y->at(i) = static_cast<T>(r);
    }
    if (grad_wanted(ctx, {x})) {
        y->set_requires_grad(true);
        ctx.tape->record([x, y, m]() {
            if (!y->has_grad() || !x->requires_grad()) return;
            const T* gy = y->grad().data();
            T* gx = x->grad().data();
            const int nth = engine::num_threads();
#pragma omp parallel for schedule(static) num_threads(nth)
            for (int64_t i = 0; i < m; ++i) {
                const double s = y->at(i);
                gx[i] += static_cast<T>(gy[i] * s * (1.0 - s));
            }
        });
    }
    return y;
}

template <typename T>
TensorPtrT<T> global_avg_pool(const CtxT<T>& ctx, const TensorPtrT<T>& x) {
    if (!x || x->ndim() != 4) throw std::invalid_argument("global_avg_pool: input must be 4-D");
    const int64_t n = x->dim(0), c = x->dim(1), plane = x->dim(2) * x->dim(3);
    auto y = make_tensor<T>({n, c, 1, 1});
    const int nt = engine::num_threads();
#pragma omp parallel for collapse(2) schedule(static) num_threads(nt)
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t ci = 0; ci < c; ++ci) {
            const T* xs = x->data() + (ni * c + ci) * plane;
            double acc = 0.0;
            for (int64_t i = 0; i < plane; ++i) acc += xs[i];
            y->at(ni * c + ci) = static_cast<T>(acc / plane);
        }
    if (grad_wanted(ctx, {x})) {
        y->set_requires_grad(true);
        ctx.tape->record([x, y, n, c, plane]() {
            if (!y->has_grad() || !x->requires_grad()) return;
            const T* gy = y->grad().data();
            T* gx = x->grad().data();
            const int nth = engine::num_threads();
#pragma omp parallel for collapse(2) schedule(static) num_threads(nth)
            for (int64_t ni = 0; ni < n; ++ni)
                for (int64_t ci = 0; ci < c; ++ci) {
                    const T g = static_cast<T>(static_cast<double>(gy[ni * c + ci]) / plane);
                    T* gxs = gx + (ni * c + ci) * plane;
                    for (int64_t i = 0; i < plane; ++i) gxs[i] += g;
                }
        });
    }
    return y;
}

template <typename T>
TensorPtrT<T> max_pool2d(const CtxT<T>& ctx, const TensorPtrT<T>& x, int64_t window, int64_t stride, int64_t pad) {
    const ConvDims d = pool_dims(x, window, stride, pad, "max_pool2d");
    auto y = make_tensor<T>({d.n, d.c_in, d.h_out, d.w_out});
    auto argmax = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(y->numel()));
    kernels::maxpool_forward(x->data(), y->data(), argmax->data(), d);
    if (grad_wanted(ctx, {x})) {
        y->set_requires_grad(true);
        ctx.tape->record([x, y, argmax, d]() {
            if (!y->has_grad() || !x->requires_grad()) return;
            kernels::maxpool_backward(y->grad().data(), argmax->data(), x->grad().data(), d);
        });
    }
    return y;
}

template <typename T>
TensorPtrT<T> avg_pool2d(const CtxT<T>& ctx, const TensorPtrT<T>& x, int64_t window, int64_t stride, int64_t pad) {
    const ConvDims d = pool_dims(x, window, stride, pad, "avg_pool2d");
    auto y = make_tensor<T>({d.n, d.c_in, d.h_out, d.w_out});
    kernels::avgpool_forward(x->data(), y->data(), d);
    if (grad_wanted(ctx, {x})) {
        y->set_requires_grad(true);
        ctx.tape->record([x, y, d]() {
            if (!y->has_grad() || !x->requires_grad()) return;
            kernels::avgpool_backward(y->grad().data(), x->grad().data(), d);
        });
    }
    return y;
}

template <typename T>
TensorPtrT<T> linear(const CtxT<T>& ctx, const TensorPtrT<T>& x, const TensorPtrT<T>& weight,
                     const TensorPtrT<T>& bias) {
    if (!x || x->ndim() != 2) throw std::invalid_argument("linear: input must be 2-D, got " + shape_str(x->shape()));
    if (!weight || weight->ndim() != 2)
        throw std::invalid_argument("linear: weight must be 2-D, got " + shape_str(weight->shape()));
    const int64_t n = x->dim(0), cin = x->dim(1), cout = weight->dim(0);
    if (weight->dim(1) != cin)
        throw std::invalid_argument("linear: input " + shape_str(x->shape()) + " incompatible with weight " +
                                    shape_str(weight->shape()));
    if (bias && bias->numel() != cout) throw std::invalid_argument("linear: bias length != out features");
    auto y = make_tensor<T>({n, cout});
    const int nt = engine::num_threads();
#pragma omp parallel for collapse(2) schedule(static) num_threads(nt)
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t co = 0; co < cout; ++co) {
            const T* xr = x->data() + ni * cin;
            const T* wr = weight->data() + co * cin;
            double acc = bias ? static_cast<double>(bias->at(co)) : 0.0;
            for (int64_t ci = 0; ci < cin; ++ci) acc += static_cast<double>(xr[ci]) * wr[ci];
            y->at(ni * cout + co) = static_cast<T>(acc);
        }
    if (grad_wanted(ctx, {x, weight, bias})) {
        y->set_requires_grad(true);
        ctx.tape->record([x, weight, bias, y, n, cin, cout]() {
            if (!y->has_grad()) return;
            const T* gy = y->grad().data();
            const int nth = engine::num_threads();
            if (x->requires_grad()) {
                T* gx = x->grad().data();
#pragma omp parallel for schedule(static) num_threads(nth)
                for (int64_t ni = 0; ni < n; ++ni) {
                    T* gxr = gx + ni * cin;
                    for (int64_t co = 0; co < cout; ++co) {
                        const T g = gy[ni * cout + co];
                        const T* wr = weight->data() + co * cin;
                        for (int64_t ci = 0; ci < cin; ++ci) gxr[ci] += g * wr[ci];
                    }
                }
            }
            if (weight->requires_grad()) {
                T* gw = weight->grad().data();
#pragma omp parallel for schedule(static) num_threads(nth)
                for (int64_t co = 0; co < cout; ++co)
                    for (int64_t ci = 0; ci < cin; ++ci) {
                        double acc = 0.0;
                        for (int64_t ni = 0; ni < n; ++ni)
                            acc += static_cast<double>(gy[ni * cout + co]) * x->at(ni * cin + ci);
                        gw[co * cin + ci] += static_cast<T>(acc);
                    }
            }
            if (bias && bias->requires_grad()) {
                T* gb = bias->grad().data();
                for (int64_t co = 0; co < cout; ++co) {
                    double acc = 0.0;
                    for (int64_t ni = 0; ni < n; ++ni) acc += gy[ni * cout + co];
                    gb[co] += static_cast<T>(acc);
                }
            }
        });
    }
    return y;
}

template <typename T>
TensorPtrT<T> add(const CtxT<T>& ctx, const TensorPtrT<T>& a, const TensorPtrT<T>& b) {
    if (a->shape() != b->shape())
        throw std::invalid_argument("add: shape mismatch " + shape_str(a->shape()) + " vs " + shape_str(b->shape()));
    auto y = make_tensor<T>(a->shape());
    const int64_t m = y->numel();
    const int nt = engine::num_threads();
#pragma omp parallel for schedule(static) num_threads(nt)
    for (int64_t i = 0; i < m; ++i) y->at(i) = a->at(i) + b->at(i);
    if (grad_wanted(ctx, {a, b})) {
        y->set_requires_grad(true);
        ctx.tape->record([a, b, y, m]() {
            if (!y->has_grad()) return;
            const T* gy = y->grad().data();
            if (a->requires_grad()) {
                T* ga = a->grad().data();
                for (int64_t i = 0; i < m; ++i) ga[i] += gy[i];
            }
            if (b->requires_grad()) {
                T* gb = b->grad().data();
                for (int64_t i = 0; i < m; ++i) gb[i] += gy[i];
            }
        });
    }
    return y;
}

template <typename T>
TensorPtrT<T> scale_by(const CtxT<T>& ctx, const TensorPtrT<T>& x, double alpha) {
    auto y = make_tensor<T>(x->shape());
    const int64_t m = y->numel();
    for (int64_t i = 0; i < m; ++i) y->at(i) = static_cast<T>(alpha * x->at(i));
    if (grad_wanted(ctx, {x})) {
        y->set_requires_grad(true);
        ctx.tape->record([x, y, m, alpha]() {
            if (!y->has_grad() || !x->requires_grad()) return;
            const T* gy = y->grad().data();
            T* gx = x->grad().data();
            for (int64_t i = 0; i < m; ++i) gx[i] += static_cast<T>(alpha * gy[i]);
        });
    }
    return y;
}

template <typename T>
TensorPtrT<T> broadcast_scale(const CtxT<T>& ctx, const TensorPtrT<T>& x, const TensorPtrT<T>& s) {
    if (!x || x->ndim() != 4) throw std::invalid_argument("broadcast_scale: x must be 4-D");
    if (!s || s->ndim() != 2) throw std::invalid_argument("broadcast_scale: scale must be 2-D (ns, cs)");
    const int64_t n = x->dim(0), c = x->dim(1), plane = x->dim(2) * x->dim(3);
    const int64_t ns = s->dim(0), cs = s->dim(1);
    if ((ns != 1 && ns != n) || (cs != 1 && cs != c))
        throw std::invalid_argument("broadcast_scale: scale " + shape_str(s->shape()) + " not broadcastable to " +
                                    shape_str(x->shape()));
    auto y = make_tensor<T>(x->shape());
    const int nt = engine::num_threads();
#pragma omp parallel for collapse(2) schedule(static) num_threads(nt)
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t ci = 0; ci < c; ++ci) {
            const T sv = s->at((ns == 1 ? 0 : ni) * cs + (cs == 1 ? 0 : ci));
            const T* xs = x->data() + (ni * c + ci) * plane;
            T* ys = y->data() + (ni * c + ci) * plane;
            for (int64_t i = 0; i < plane; ++i) ys[i] = xs[i] * sv;
        }
    if (grad_wanted(ctx, {x, s})) {
        y->set_requires_grad(true);
        ctx.tape->record([x, s, y, n, c, plane, ns, cs]() {
            if (!y->has_grad()) return;
            const T* gy = y->grad().data();
            const int nth = engine::num_threads();
            if (x->requires_grad()) {
                T* gx = x->grad().data();
#pragma omp parallel for collapse(2) schedule(static) num_threads(nth)
                for (int64_t ni = 0; ni < n; ++ni)
                    for (int64_t ci = 0; ci < c; ++ci) {
                        const T sv = s->at((ns == 1 ? 0 : ni) * cs + (cs == 1 ? 0 : ci));
                        const T* gys = gy + (ni * c + ci) * plane;
                        T* gxs = gx + (ni * c + ci) * plane;
                        for (int64_t i = 0; i < plane; ++i) gxs[i] += gys[i] * sv;
                    }
            }
            if (s->requires_grad()) {
                T* gs = s->grad().data();
                // Owner per scale element: reduce its broadcast fiber in fixed order.
#pragma omp parallel for collapse(2) schedule(static) num_threads(nth)
                for (int64_t si = 0; si < ns; ++si)
                    for (int64_t sj = 0; sj < cs; ++sj) {
                        double acc = 0.0;
                        const int64_t ni_lo = ns == 1 ? 0 : si, ni_hi = ns == 1 ? n : si + 1;
                        const int64_t ci_lo = cs == 1 ? 0 : sj, ci_hi = cs == 1 ? c : sj + 1;
                        for (int64_t ni = ni_lo; ni < ni_hi; ++ni)
                            for (int64_t ci = ci_lo; ci < ci_hi; ++ci) {
                                const T* xs = x->data() + (ni * c + ci) * plane;
                                const T* gys = gy + (ni * c + ci) * plane;
                                for (int64_t i = 0; i < plane; ++i)
                                    acc += static_cast<double>(gys[i]) * xs[i];
                            }
                        gs[si * cs + sj] += static_cast<T>(acc);
                    }
            }
        });
    }
    return y;
}

template <typename T>
TensorPtrT<T> concat_channels(const CtxT<T>& ctx, const std::vector<TensorPtrT<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
    const int64_t n = parts[0]->dim(0), h = parts[0]->dim(2), w = parts[0]->dim(3);
    int64_t c_total = 0;
    for (const auto& p : parts) {
        if (p->ndim() != 4 || p->dim(0) != n || p->dim(2) != h || p->dim(3) != w)
            throw std::invalid_argument("concat_channels: incompatible part " + shape_str(p->shape()));
        c_total += p->dim(1);
    }
    auto y = make_tensor<T>({n, c_total, h, w});
    const int64_t plane = h * w;
    int64_t c_off = 0;
    for (const auto& p : parts) {
        const int64_t pc = p->dim(1);
        for (int64_t ni = 0; ni < n; ++ni)
            std::copy(p->data() + ni * pc * plane, p->data() + (ni + 1) * pc * plane,
                      y->data() + (ni * c_total + c_off) * plane);
        c_off += pc;
    }
    bool want = false;
    for (const auto& p : parts) want = want || p->requires_grad();
    if (ctx.tape && want) {
        y->set_requires_grad(true);
        ctx.tape->record([parts, y, n, c_total, plane]() {
            if (!y->has_grad()) return;
            const T* gy = y->grad().data();
            int64_t off = 0;
            for (const auto& p : parts) {
                const int64_t pc = p->dim(1);
                if (p->requires_grad()) {
                    T* gp = p->grad().data();
                    for (int64_t ni = 0; ni < n; ++ni) {
                        const T* src = gy + (ni * c_total + off) * plane;
                        T* dst = gp + ni * pc * plane;
                        for (int64_t i = 0; i < pc * plane; ++i) dst[i] += src[i];
                    }
                }
                off += pc;
            }
        });
    }
    return y;
}

template <typename T>
TensorPtrT<T> reshape(const CtxT<T>& ctx, const TensorPtrT<T>& x, Shape shape) {
    if (shape_numel(shape) != x->numel())
        throw std::invalid_argument("reshape: element count mismatch " + shape_str(x->shape()) + " -> " +
                                    shape_str(shape));
    auto y = make_tensor<T>(std::move(shape), x->values());
    if (grad_wanted(ctx, {x})) {
        y->set_requires_grad(true);
        const int64_t m = x->numel();
        ctx.tape->record([x, y, m]() {
            if (!y->has_grad() || !x->requires_grad()) return;
            const T* gy = y->grad().data();
            T* gx = x->grad().data();
            for (int64_t i = 0; i < m; ++i) gx[i] += gy[i];
        });
    }
    return y;
}

template <typename T>
TensorPtrT<T> sum_all(const CtxT<T>& ctx, const TensorPtrT<T>& x) {
    auto y = make_tensor<T>({1});
    double acc = 0.0;
    for (int64_t i = 0; i < x->numel(); ++i) acc += x->at(i);
    y->at(0) = static_cast<T>(acc);
    if (grad_wanted(ctx, {x})) {
        y->set_requires_grad(true);
        ctx.tape->record([x, y]() {
            if (!y->has_grad() || !x->requires_grad()) return;
            const T g = y->grad()[0];
            T* gx = x->grad().data();
            for (int64_t i = 0; i < x->numel(); ++i) gx[i] += g;
        });
    }
    return y;
}

template <typename T>
TensorPtrT<T> inner_const(const CtxT<T>& ctx, const TensorPtrT<T>& x, std::vector<T> w) {
    if (static_cast<int64_t>(w.size()) != x->numel())
        throw std::invalid_argument("inner_const: weight length != input numel");
    auto y = make_tensor<T>({1});
    double acc = 0.0;
    for (int64_t i = 0; i < x->numel(); ++i) acc += static_cast<double>(x->at(i)) * w[static_cast<size_t>(i)];
    y->at(0) = static_cast<T>(acc);
    if (grad_wanted(ctx, {x})) {
        y->set_requires_grad(true);
        auto ws = std::make_shared<std::vector<T>>(std::move(w));
        ctx.tape->record([x, y, ws]() {
            if (!y->has_grad() || !x->requires_grad()) return;
            const T g = y->grad()[0];
            T* gx = x->grad().data();
            for (int64_t i = 0; i < x->numel(); ++i) gx[i] += g * (*ws)[static_cast<size_t>(i)];
        });
    }
    return y;
}

template <typename T>
void backward(TapeT<T>& tape, const TensorPtrT<T>& loss) {
    tape.backward(loss);
}

#define OSNET_INSTANTIATE_OPS(T)                                                                            \
    template TensorPtrT<T> conv2d<T>(const CtxT<T>&, const TensorPtrT<T>&, const ConvKernelT<T>&);          \
    template TensorPtrT<T> pointwise_conv<T>(const CtxT<T>&, const TensorPtrT<T>&, const ConvKernelT<T>&);  \
    template TensorPtrT<T> depthwise_conv<T>(const CtxT<T>&, const TensorPtrT<T>&, const ConvKernelT<T>&);  \
    template TensorPtrT<T> batchnorm2d<T>(const CtxT<T>&, const TensorPtrT<T>&, BatchNorm2dT<T>&);          \
    template TensorPtrT<T> instance_norm2d<T>(const CtxT<T>&, const TensorPtrT<T>&, const TensorPtrT<T>&,   \
                                              const TensorPtrT<T>&, double);                                \
    template TensorPtrT<T> relu<T>(const CtxT<T>&, const TensorPtrT<T>&);                                   \
    template TensorPtrT<T> sigmoid<T>(const CtxT<T>&, const TensorPtrT<T>&);                                \
    template TensorPtrT<T> global_avg_pool<T>(const CtxT<T>&, const TensorPtrT<T>&);                        \
    template TensorPtrT<T> max_pool2d<T>(const CtxT<T>&, const TensorPtrT<T>&, int64_t, int64_t, int64_t);  \
    template TensorPtrT<T> avg_pool2d<T>(const CtxT<T>&, const TensorPtrT<T>&, int64_t, int64_t, int64_t);  \
    template TensorPtrT<T> linear<T>(const CtxT<T>&, const TensorPtrT<T>&, const TensorPtrT<T>&,            \
                                     const TensorPtrT<T>&);                                                 \
    template TensorPtrT<T> add<T>(const CtxT<T>&, const TensorPtrT<T>&, const TensorPtrT<T>&);              \
    template TensorPtrT<T> scale_by<T>(const CtxT<T>&, const TensorPtrT<T>&, double);                       \
    template TensorPtrT<T> broadcast_scale<T>(const CtxT<T>&, const TensorPtrT<T>&, const TensorPtrT<T>&);  \
    template TensorPtrT<T> concat_channels<T>(const CtxT<T>&, const std::vector<TensorPtrT<T>>&);           \
    template TensorPtrT<T> reshape<T>(const CtxT<T>&, const TensorPtrT<T>&, Shape);                         \
    template TensorPtrT<T> sum_all<T>(const CtxT<T>&, const TensorPtrT<T>&);                                \
    template TensorPtrT<T> inner_const<T>(const CtxT<T>&, const TensorPtrT<T>&, std::vector<T>);            \
    template void backward<T>(TapeT<T>&, const TensorPtrT<T>&);

OSNET_INSTANTIATE_OPS(float)
OSNET_INSTANTIATE_OPS(double)

#undef OSNET_INSTANTIATE_OPS

}  // namespace osnet

#include "osnet/kernels.hpp"

#include <algorithm>
#include <limits>
#include <vector>

#include "osnet/engine.hpp"

namespace osnet::kernels {

namespace {

// Valid kernel-tap range for one output coordinate: taps land inside the
// input, so the inner loops can run branch-free. Skipped taps are exactly
// the zero-padding terms, which leaves the accumulation order of the
// remaining terms identical to the bounds-checked reference.
inline void tap_range(int64_t o, int64_t stride, int64_t pad, int64_t k, int64_t in, int64_t& lo, int64_t& hi) {
    const int64_t base = o * stride - pad;
    lo = base < 0 ? -base : 0;
    hi = std::min(k, in - base);
}

// Output coordinate range with tap k inside the input (used by the
// weight-gradient gather).
inline void out_range(int64_t k, int64_t stride, int64_t pad, int64_t in, int64_t out, int64_t& lo, int64_t& hi) {
    // need 0 <= o*stride - pad + k <= in-1
    const int64_t num = pad - k;
    lo = num <= 0 ? 0 : (num + stride - 1) / stride;
    const int64_t top = in - 1 + pad - k;
    hi = top < 0 ? 0 : std::min(out, top / stride + 1);
    lo = std::min(lo, hi);
}

}  // namespace

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, const ConvDims& d) {
    const int64_t ocpg = d.ocpg();
    const int nt = engine::num_threads();
#pragma omp parallel for collapse(2) schedule(static) num_threads(nt)
    for (int64_t n = 0; n < d.n; ++n)
        for (int64_t oc = 0; oc < d.c_out; ++oc) {
            const int64_t g = oc / ocpg;
            const T* wo = w + oc * d.icpg * d.kh * d.kw;
            const T* xn = x + (n * d.c_in + g * d.icpg) * d.h_in * d.w_in;
            T* yo = y + (n * d.c_out + oc) * d.h_out * d.w_out;
            const double b = bias ? static_cast<double>(bias[oc]) : 0.0;
            for (int64_t oh = 0; oh < d.h_out; ++oh) {
                int64_t kh_lo, kh_hi;
                tap_range(oh, d.sh, d.ph, d.kh, d.h_in, kh_lo, kh_hi);
                for (int64_t ow = 0; ow < d.w_out; ++ow) {
                    int64_t kw_lo, kw_hi;
                    tap_range(ow, d.sw, d.pw, d.kw, d.w_in, kw_lo, kw_hi);
                    double acc = b;
                    for (int64_t ic = 0; ic < d.icpg; ++ic) {
                        const T* xc = xn + ic * d.h_in * d.w_in;
                        const T* wc = wo + ic * d.kh * d.kw;
                        for (int64_t kh = kh_lo; kh < kh_hi; ++kh) {
                            const T* xrow = xc + (oh * d.sh - d.ph + kh) * d.w_in + (ow * d.sw - d.pw);
                            const T* wrow = wc + kh * d.kw;
                            for (int64_t kw = kw_lo; kw < kw_hi; ++kw)
                                acc += static_cast<double>(xrow[kw]) * static_cast<double>(wrow[kw]);
                        }
                    }
                    yo[oh * d.w_out + ow] = static_cast<T>(acc);
                }
            }
        }
}

template <typename T>
void conv2d_forward_lowered(const T* x, const T* w, const T* bias, T* y, const ConvDims& d) {
    const int64_t ocpg = d.ocpg();
    const int64_t K = d.icpg * d.kh * d.kw;
    const int64_t P = d.h_out * d.w_out;
    const int nt = engine::num_threads();
#pragma omp parallel num_threads(nt)
    {
        std::vector<T> col(static_cast<size_t>(K * P));
#pragma omp for schedule(static)
        for (int64_t n = 0; n < d.n; ++n) {
            for (int64_t g = 0; g < d.groups; ++g) {
                // im2col: row (ic,kh,kw), column (oh,ow)
                const T* xg = x + (n * d.c_in + g * d.icpg) * d.h_in * d.w_in;
                T* cp = col.data();
                for (int64_t ic = 0; ic < d.icpg; ++ic)
                    for (int64_t kh = 0; kh < d.kh; ++kh)
                        for (int64_t kw = 0; kw < d.kw; ++kw) {
                            for (int64_t oh = 0; oh < d.h_out; ++oh) {
                                const int64_t ih = oh * d.sh - d.ph + kh;
                                if (ih < 0 || ih >= d.h_in) {
                                    std::fill(cp, cp + d.w_out, T(0));
                                    cp += d.w_out;
                                    continue;
                                }
                                const T* xrow = xg + (ic * d.h_in + ih) * d.w_in;
                                for (int64_t ow = 0; ow < d.w_out; ++ow) {
                                    const int64_t iw = ow * d.sw - d.pw + kw;
                                    *cp++ = (iw < 0 || iw >= d.w_in) ? T(0) : xrow[iw];
                                }
                            }
                        }
                // GEMM: Y[ocpg x P] = W[ocpg x K] * col[K x P], k-major accumulation
                for (int64_t i = 0; i < ocpg; ++i) {
                    const int64_t oc = g * ocpg + i;
                    T* yrow = y + (n * d.c_out + oc) * P;
                    std::fill(yrow, yrow + P, bias ? bias[oc] : T(0));
                    const T* wrow = w + oc * K;
                    for (int64_t k = 0; k < K; ++k) {
                        const T a = wrow[k];
                        const T* brow = col.data() + k * P;
                        for (int64_t j = 0; j < P; ++j) yrow[j] += a * brow[j];
                    }
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward_input(const T* w, const T* gy, T* gx, const ConvDims& d) {
    const int64_t ocpg = d.ocpg();
    const int nt = engine::num_threads();
    // Each thread owns the gx slice of one (sample, input channel) pair;
    // scatters stay thread-private and the term order is fixed.
#pragma omp parallel for collapse(2) schedule(static) num_threads(nt)
    for (int64_t n = 0; n < d.n; ++n)
        for (int64_t ic = 0; ic < d.c_in; ++ic) {
            const int64_t g = ic / d.icpg;
            const int64_t icg = ic % d.icpg;
            T* gxs = gx + (n * d.c_in + ic) * d.h_in * d.w_in;
            for (int64_t ocg = 0; ocg < ocpg; ++ocg) {
                const int64_t oc = g * ocpg + ocg;
                const T* gys = gy + (n * d.c_out + oc) * d.h_out * d.w_out;
                const T* ws = w + (oc * d.icpg + icg) * d.kh * d.kw;
                for (int64_t oh = 0; oh < d.h_out; ++oh) {
                    int64_t kh_lo, kh_hi;
                    tap_range(oh, d.sh, d.ph, d.kh, d.h_in, kh_lo, kh_hi);
                    for (int64_t ow = 0; ow < d.w_out; ++ow) {
                        int64_t kw_lo, kw_hi;
                        tap_range(ow, d.sw, d.pw, d.kw, d.w_in, kw_lo, kw_hi);
                        const T gyv = gys[oh * d.w_out + ow];
                        for (int64_t kh = kh_lo; kh < kh_hi; ++kh) {
                            T* gxrow = gxs + (oh * d.sh - d.ph + kh) * d.w_in + (ow * d.sw - d.pw);
                            const T* wrow = ws + kh * d.kw;
                            for (int64_t kw = kw_lo; kw < kw_hi; ++kw) gxrow[kw] += wrow[kw] * gyv;
                        }
                    }
                }
            }
        }
}

template <typename T>
void conv2d_backward_weight(const T* x, const T* gy, T* gw, const ConvDims& d) {
    const int64_t ocpg = d.ocpg();
    const int nt = engine::num_threads();
    // Gather form: one thread owns all taps of one output channel and
    // reduces over (n, oh, ow) in fixed order with a double accumulator.
#pragma omp parallel for schedule(static) num_threads(nt)
    for (int64_t oc = 0; oc < d.c_out; ++oc) {
        const int64_t g = oc / ocpg;
        for (int64_t ic = 0; ic < d.icpg; ++ic)
            for (int64_t kh = 0; kh < d.kh; ++kh) {
                int64_t oh_lo, oh_hi;
                out_range(kh, d.sh, d.ph, d.h_in, d.h_out, oh_lo, oh_hi);
                for (int64_t kw = 0; kw < d.kw; ++kw) {
                    int64_t ow_lo, ow_hi;
                    out_range(kw, d.sw, d.pw, d.w_in, d.w_out, ow_lo, ow_hi);
                    double acc = 0.0;
                    for (int64_t n = 0; n < d.n; ++n) {
                        const T* gys = gy + (n * d.c_out + oc) * d.h_out * d.w_out;
                        const T* xs = x + (n * d.c_in + g * d.icpg + ic) * d.h_in * d.w_in;
                        for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                            const T* gyrow = gys + oh * d.w_out;
                            const T* xrow = xs + (oh * d.sh - d.ph + kh) * d.w_in - d.pw + kw;
                            for (int64_t ow = ow_lo; ow < ow_hi; ++ow)
                                acc += static_cast<double>(gyrow[ow]) * static_cast<double>(xrow[ow * d.sw]);
                        }
                    }
                    gw[((oc * d.icpg + ic) * d.kh + kh) * d.kw + kw] += static_cast<T>(acc);
                }
            }
    }
}

template <typename T>
void conv2d_backward_bias(const T* gy, T* gb, const ConvDims& d) {
    const int nt = engine::num_threads();
#pragma omp parallel for schedule(static) num_threads(nt)
    for (int64_t oc = 0; oc < d.c_out; ++oc) {
        double acc = 0.0;
        for (int64_t n = 0; n < d.n; ++n) {
            const T* gys = gy + (n * d.c_out + oc) * d.h_out * d.w_out;
            for (int64_t i = 0; i < d.h_out * d.w_out; ++i) acc += static_cast<double>(gys[i]);
        }
        gb[oc] += static_cast<T>(acc);
    }
}

template <typename T>
void maxpool_forward(const T* x, T* y, int32_t* argmax, const ConvDims& d) {
    const int nt = engine::num_threads();
#pragma omp parallel for collapse(2) schedule(static) num_threads(nt)
    for (int64_t n = 0; n < d.n; ++n)
        for (int64_t c = 0; c < d.c_in; ++c) {
            const T* xs = x + (n * d.c_in + c) * d.h_in * d.w_in;
            const int64_t base = (n * d.c_in + c) * d.h_out * d.w_out;
            for (int64_t oh = 0; oh < d.h_out; ++oh) {
                int64_t kh_lo, kh_hi;
                tap_range(oh, d.sh, d.ph, d.kh, d.h_in, kh_lo, kh_hi);
                for (int64_t ow = 0; ow < d.w_out; ++ow) {
                    int64_t kw_lo, kw_hi;
                    tap_range(ow, d.sw, d.pw, d.kw, d.w_in, kw_lo, kw_hi);
                    T best = std::numeric_limits<T>::lowest();
                    int32_t best_idx = -1;
                    for (int64_t kh = kh_lo; kh < kh_hi; ++kh) {
                        const int64_t ih = oh * d.sh - d.ph + kh;
                        for (int64_t kw = kw_lo; kw < kw_hi; ++kw) {
                            const int64_t iw = ow * d.sw - d.pw + kw;
                            const T v = xs[ih * d.w_in + iw];
                            if (v > best) {
                                best = v;
                                best_idx = static_cast<int32_t>(ih * d.w_in + iw);
                            }
                        }
                    }
                    y[base + oh * d.w_out + ow] = best;
                    argmax[base + oh * d.w_out + ow] = best_idx;
                }
            }
        }
}

template <typename T>
void maxpool_backward(const T* gy, const int32_t* argmax, T* gx, const ConvDims& d) {
    const int nt = engine::num_threads();
#pragma omp parallel for collapse(2) schedule(static) num_threads(nt)
    for (int64_t n = 0; n < d.n; ++n)
        for (int64_t c = 0; c < d.c_in; ++c) {
            const int64_t base = (n * d.c_in + c) * d.h_out * d.w_out;
            T* gxs = gx + (n * d.c_in + c) * d.h_in * d.w_in;
            for (int64_t i = 0; i < d.h_out * d.w_out; ++i)
                if (argmax[base + i] >= 0) gxs[argmax[base + i]] += gy[base + i];
        }
}

template <typename T>
void avgpool_forward(const T* x, T* y, const ConvDims& d) {
    const double inv_area = 1.0 / static_cast<double>(d.kh * d.kw);
    const int nt = engine::num_threads();
#pragma omp parallel for collapse(2) schedule(static) num_threads(nt)
    for (int64_t n = 0; n < d.n; ++n)
        for (int64_t c = 0; c < d.c_in; ++c) {
            const T* xs = x + (n * d.c_in + c) * d.h_in * d.w_in;
            T* ys = y + (n * d.c_in + c) * d.h_out * d.w_out;
            for (int64_t oh = 0; oh < d.h_out; ++oh) {
                int64_t kh_lo, kh_hi;
                tap_range(oh, d.sh, d.ph, d.kh, d.h_in, kh_lo, kh_hi);
                for (int64_t ow = 0; ow < d.w_out; ++ow) {
                    int64_t kw_lo, kw_hi;
                    tap_range(ow, d.sw, d.pw, d.kw, d.w_in, kw_lo, kw_hi);
                    double acc = 0.0;
                    for (int64_t kh = kh_lo; kh < kh_hi; ++kh) {
                        const T* xrow = xs + (oh * d.sh - d.ph + kh) * d.w_in + (ow * d.sw - d.pw);
                        for (int64_t kw = kw_lo; kw < kw_hi; ++kw) acc += static_cast<double>(xrow[kw]);
                    }
                    ys[oh * d.w_out + ow] = static_cast<T>(acc * inv_area);
                }
            }
        }
}

template <typename T>
void avgpool_backward(const T* gy, T* gx, const ConvDims& d) {
    const double inv_area = 1.0 / static_cast<double>(d.kh * d.kw);
    const int nt = engine::num_threads();
#pragma omp parallel for collapse(2) schedule(static) num_threads(nt)
    for (int64_t n = 0; n < d.n; ++n)
        for (int64_t c = 0; c < d.c_in; ++c) {
            const T* gys = gy + (n * d.c_in + c) * d.h_out * d.w_out;
            T* gxs = gx + (n * d.c_in + c) * d.h_in * d.w_in;
            for (int64_t oh = 0; oh < d.h_out; ++oh) {
                int64_t kh_lo, kh_hi;
                tap_range(oh, d.sh, d.ph, d.kh, d.h_in, kh_lo, kh_hi);
                for (int64_t ow = 0; ow < d.w_out; ++ow) {
                    int64_t kw_lo, kw_hi;
                    tap_range(ow, d.sw, d.pw, d.kw, d.w_in, kw_lo, kw_hi);
                    const T g = static_cast<T>(static_cast<double>(gys[oh * d.w_out + ow]) * inv_area);
                    for (int64_t kh = kh_lo; kh < kh_hi; ++kh) {
                        T* gxrow = gxs + (oh * d.sh - d.ph + kh) * d.w_in + (ow * d.sw - d.pw);
                        for (int64_t kw = kw_lo; kw < kw_hi; ++kw) gxrow[kw] += g;
                    }
                }
            }
        }
}

#define OSNET_INSTANTIATE_KERNELS(T)                                                           \
    template void conv2d_forward<T>(const T*, const T*, const T*, T*, const ConvDims&);        \
    template void conv2d_forward_lowered<T>(const T*, const T*, const T*, T*, const ConvDims&);\
    template void conv2d_backward_input<T>(const T*, const T*, T*, const ConvDims&);           \
    template void conv2d_backward_weight<T>(const T*, const T*, T*, const ConvDims&);          \
    template void conv2d_backward_bias<T>(const T*, T*, const ConvDims&);                      \
    template void maxpool_forward<T>(const T*, T*, int32_t*, const ConvDims&);                 \
    template void maxpool_backward<T>(const T*, const int32_t*, T*, const ConvDims&);          \
    template void avgpool_forward<T>(const T*, T*, const ConvDims&);                           \
    template void avgpool_backward<T>(const T*, T*, const ConvDims&);

OSNET_INSTANTIATE_KERNELS(float)
OSNET_INSTANTIATE_KERNELS(double)

#undef OSNET_INSTANTIATE_KERNELS

}  // namespace osnet::kernels

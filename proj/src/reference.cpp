#include "osnet/reference.hpp"

#include <algorithm>
#include <limits>

namespace osnet::ref {

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, const ConvDims& d) {
    const int64_t ocpg = d.ocpg();
    for (int64_t n = 0; n < d.n; ++n)
        for (int64_t oc = 0; oc < d.c_out; ++oc) {
            const int64_t g = oc / ocpg;
            for (int64_t oh = 0; oh < d.h_out; ++oh)
                for (int64_t ow = 0; ow < d.w_out; ++ow) {
                    double acc = bias ? static_cast<double>(bias[oc]) : 0.0;
                    for (int64_t ic = 0; ic < d.icpg; ++ic)
                        for (int64_t kh = 0; kh < d.kh; ++kh)
                            for (int64_t kw = 0; kw < d.kw; ++kw) {
                                const int64_t ih = oh * d.sh - d.ph + kh;
                                const int64_t iw = ow * d.sw - d.pw + kw;
                                if (ih < 0 || ih >= d.h_in || iw < 0 || iw >= d.w_in) continue;
                                const int64_t xi = ((n * d.c_in + g * d.icpg + ic) * d.h_in + ih) * d.w_in + iw;
                                const int64_t wi = ((oc * d.icpg + ic) * d.kh + kh) * d.kw + kw;
                                acc += static_cast<double>(x[xi]) * static_cast<double>(w[wi]);
                            }
                    y[((n * d.c_out + oc) * d.h_out + oh) * d.w_out + ow] = static_cast<T>(acc);
                }
        }
}

template <typename T>
void maxpool_forward(const T* x, T* y, const ConvDims& d) {
    for (int64_t n = 0; n < d.n; ++n)
        for (int64_t c = 0; c < d.c_in; ++c)
            for (int64_t oh = 0; oh < d.h_out; ++oh)
                for (int64_t ow = 0; ow < d.w_out; ++ow) {
                    T best = std::numeric_limits<T>::lowest();
                    for (int64_t kh = 0; kh < d.kh; ++kh)
                        for (int64_t kw = 0; kw < d.kw; ++kw) {
                            const int64_t ih = oh * d.sh - d.ph + kh;
                            const int64_t iw = ow * d.sw - d.pw + kw;
                            if (ih < 0 || ih >= d.h_in || iw < 0 || iw >= d.w_in) continue;
                            best = std::max(best, x[((n * d.c_in + c) * d.h_in + ih) * d.w_in + iw]);
                        }
                    y[((n * d.c_in + c) * d.h_out + oh) * d.w_out + ow] = best;
                }
}

template <typename T>
void avgpool_forward(const T* x, T* y, const ConvDims& d) {
    const double inv_area = 1.0 / static_cast<double>(d.kh * d.kw);
    for (int64_t n = 0; n < d.n; ++n)
        for (int64_t c = 0; c < d.c_in; ++c)
            for (int64_t oh = 0; oh < d.h_out; ++oh)
                for (int64_t ow = 0; ow < d.w_out; ++ow) {
                    double acc = 0.0;
                    for (int64_t kh = 0; kh < d.kh; ++kh)
                        for (int64_t kw = 0; kw < d.kw; ++kw) {
                            const int64_t ih = oh * d.sh - d.ph + kh;
                            const int64_t iw = ow * d.sw - d.pw + kw;
                            if (ih < 0 || ih >= d.h_in || iw < 0 || iw >= d.w_in) continue;
                            acc += static_cast<double>(x[((n * d.c_in + c) * d.h_in + ih) * d.w_in + iw]);
                        }
                    y[((n * d.c_in + c) * d.h_out + oh) * d.w_out + ow] = static_cast<T>(acc * inv_area);
                }
}

template void conv2d_forward<float>(const float*, const float*, const float*, float*, const ConvDims&);
template void conv2d_forward<double>(const double*, const double*, const double*, double*, const ConvDims&);
template void maxpool_forward<float>(const float*, float*, const ConvDims&);
template void maxpool_forward<double>(const double*, double*, const ConvDims&);
template void avgpool_forward<float>(const float*, float*, const ConvDims&);
template void avgpool_forward<double>(const double*, double*, const ConvDims&);

}  // namespace osnet::ref

#pragma once

#include "osnet/kernels.hpp"

// Serial reference kernels: straight textbook loops with a bounds check in
// the innermost position and a double accumulator. They are the correctness
// oracle for the parallel and lowered paths and are kept deliberately plain.
namespace osnet::ref {

using kernels::ConvDims;

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, const ConvDims& d);

template <typename T>
void maxpool_forward(const T* x, T* y, const ConvDims& d);

template <typename T>
void avgpool_forward(const T* x, T* y, const ConvDims& d);

}  // namespace osnet::ref

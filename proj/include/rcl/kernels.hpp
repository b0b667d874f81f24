#pragma once

#include "rcl/tensor.hpp"

#include <cstddef>

// Production kernels. Loops over independent outputs are OpenMP-parallel;
// every output element is reduced by a single thread in a fixed order, so
// results do not depend on the thread count.
namespace rcl::kernels {

// C[M,N] += A[M,K] * B[K,N], all row-major with the given leading dimensions.
void gemm(std::size_t M, std::size_t N, std::size_t K,
          const double* A, std::size_t lda,
          const double* B, std::size_t ldb,
          double* C, std::size_t ldc);

// x: [N, Ci, H, W], w: [Co, Ci, k, k] with odd k, bias: [Co] or null.
// Stride 1, zero "same" padding. Overwrites out: [N, Co, H, W].
void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* bias, Tensor& out);

// Accumulates (+=) into each non-null gradient tensor.
void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& grad_out,
                     Tensor* grad_x, Tensor* grad_w, Tensor* grad_b);

void avgpool2x_forward(const Tensor& x, Tensor& out);
void avgpool2x_backward(const Tensor& grad_out, Tensor& grad_x);

void upsample2x_forward(const Tensor& x, Tensor& out);
void upsample2x_backward(const Tensor& grad_out, Tensor& grad_x);

} // namespace rcl::kernels

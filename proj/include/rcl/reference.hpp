#pragma once

#include "rcl/tensor.hpp"

// Serial, loop-nest-literal versions of the production kernels. Kept as the
// oracle for kernel tests and as the baseline in the benchmark.
namespace rcl::reference {

void gemm(std::size_t M, std::size_t N, std::size_t K,
          const double* A, std::size_t lda,
          const double* B, std::size_t ldb,
          double* C, std::size_t ldc);

void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* bias, Tensor& out);
void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& grad_out,
                     Tensor* grad_x, Tensor* grad_w, Tensor* grad_b);

void avgpool2x_forward(const Tensor& x, Tensor& out);
void avgpool2x_backward(const Tensor& grad_out, Tensor& grad_x);

void upsample2x_forward(const Tensor& x, Tensor& out);
void upsample2x_backward(const Tensor& grad_out, Tensor& grad_x);

} // namespace rcl::reference

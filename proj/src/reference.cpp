#include "rcl/reference.hpp"

namespace rcl::reference {

void gemm(std::size_t M, std::size_t N, std::size_t K,
          const double* A, std::size_t lda,
          const double* B, std::size_t ldb,
          double* C, std::size_t ldc)
{
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < K; ++k) acc += A[i * lda + k] * B[k * ldb + j];
            C[i * ldc + j] += acc;
        }
}

void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* bias, Tensor& out)
{
    const std::size_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Co = w.dim(0), k = w.dim(2);
    const long pad = static_cast<long>(k / 2);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t co = 0; co < Co; ++co)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t xx = 0; xx < W; ++xx) {
                    double acc = bias ? (*bias)[co] : 0.0;
                    for (std::size_t ci = 0; ci < Ci; ++ci)
                        for (std::size_t ky = 0; ky < k; ++ky)
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const long sy = static_cast<long>(y + ky) - pad;
                                const long sx = static_cast<long>(xx + kx) - pad;
                                if (sy < 0 || sx < 0 || sy >= static_cast<long>(H) ||
                                    sx >= static_cast<long>(W))
                                    continue;
                                acc += w.at(co, ci, ky, kx) * x.at(n, ci, sy, sx);
                            }
                    out.at(n, co, y, xx) = acc;
                }
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& grad_out,
                     Tensor* grad_x, Tensor* grad_w, Tensor* grad_b)
{
    const std::size_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Co = w.dim(0), k = w.dim(2);
    const long pad = static_cast<long>(k / 2);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t co = 0; co < Co; ++co)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t xx = 0; xx < W; ++xx) {
                    const double g = grad_out.at(n, co, y, xx);
                    if (grad_b) (*grad_b)[co] += g;
                    for (std::size_t ci = 0; ci < Ci; ++ci)
                        for (std::size_t ky = 0; ky < k; ++ky)
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const long sy = static_cast<long>(y + ky) - pad;
                                const long sx = static_cast<long>(xx + kx) - pad;
                                if (sy < 0 || sx < 0 || sy >= static_cast<long>(H) ||
                                    sx >= static_cast<long>(W))
                                    continue;
                                if (grad_w) grad_w->at(co, ci, ky, kx) += g * x.at(n, ci, sy, sx);
                                if (grad_x) grad_x->at(n, ci, sy, sx) += g * w.at(co, ci, ky, kx);
                            }
                }
}

void avgpool2x_forward(const Tensor& x, Tensor& out)
{
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < H / 2; ++y)
                for (std::size_t xx = 0; xx < W / 2; ++xx)
                    out.at(n, c, y, xx) = 0.25 * (x.at(n, c, 2 * y, 2 * xx) + x.at(n, c, 2 * y, 2 * xx + 1) +
                                                  x.at(n, c, 2 * y + 1, 2 * xx) +
                                                  x.at(n, c, 2 * y + 1, 2 * xx + 1));
}

void avgpool2x_backward(const Tensor& grad_out, Tensor& grad_x)
{
    const std::size_t N = grad_x.dim(0), C = grad_x.dim(1), H = grad_x.dim(2), W = grad_x.dim(3);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t xx = 0; xx < W; ++xx)
                    grad_x.at(n, c, y, xx) += 0.25 * grad_out.at(n, c, y / 2, xx / 2);
}

void upsample2x_forward(const Tensor& x, Tensor& out)
{
    const std::size_t N = out.dim(0), C = out.dim(1), H = out.dim(2), W = out.dim(3);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t xx = 0; xx < W; ++xx) out.at(n, c, y, xx) = x.at(n, c, y / 2, xx / 2);
}

void upsample2x_backward(const Tensor& grad_out, Tensor& grad_x)
{
    const std::size_t N = grad_out.dim(0), C = grad_out.dim(1), H = grad_out.dim(2), W = grad_out.dim(3);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t xx = 0; xx < W; ++xx) grad_x.at(n, c, y / 2, xx / 2) += grad_out.at(n, c, y, xx);
}

} // namespace rcl::reference

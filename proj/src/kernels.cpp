#include "rcl/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#include <omp.h>

namespace rcl::kernels {

namespace {

constexpr std::size_t kMR = 4;
constexpr std::size_t kNR = 32;

// GCC/Clang vector extension; 8 doubles = one AVX-512 register. aligned(8)
// permits unaligned loads/stores of rows inside C.
typedef double v8d __attribute__((vector_size(64), aligned(8)));

// 4x32 register tile: 16 vector accumulators, one broadcast per row per k.
// B is a packed panel with row stride kNR.
inline void micro_tile(std::size_t K, const double* __restrict A, std::size_t lda,
                       const double* __restrict B, double* __restrict C, std::size_t ldc)
{
    v8d acc[kMR][4] = {};
    for (std::size_t k = 0; k < K; ++k) {
        const v8d* b = reinterpret_cast<const v8d*>(B + k * kNR);
        const v8d b0 = b[0], b1 = b[1], b2 = b[2], b3 = b[3];
        for (std::size_t r = 0; r < kMR; ++r) {
            const double a = A[r * lda + k];
            acc[r][0] += a * b0;
            acc[r][1] += a * b1;
            acc[r][2] += a * b2;
            acc[r][3] += a * b3;
        }
    }
    for (std::size_t r = 0; r < kMR; ++r) {
        v8d* c = reinterpret_cast<v8d*>(C + r * ldc);
        for (std::size_t q = 0; q < 4; ++q) c[q] += acc[r][q];
    }
}

inline void edge_tile(std::size_t rows, std::size_t cols, std::size_t K, const double* A,
                      std::size_t lda, const double* B, std::size_t ldb, double* C, std::size_t ldc)
{
    for (std::size_t r = 0; r < rows; ++r) {
        double* c = C + r * ldc;
        for (std::size_t k = 0; k < K; ++k) {
            const double a = A[r * lda + k];
            const double* b = B + k * ldb;
#pragma omp simd
            for (std::size_t j = 0; j < cols; ++j) c[j] += a * b[j];
        }
    }
}

void gemm_rows(std::size_t row_begin, std::size_t row_end, std::size_t N, std::size_t K,
               const double* A, std::size_t lda, const double* B, std::size_t ldb, double* C,
               std::size_t ldc)
{
    // B panels are packed contiguously so the tile streams one cache line per k.
    thread_local std::vector<double> panel;
    panel.resize(K * kNR);
    std::size_t j = 0;
    for (; j + kNR <= N; j += kNR) {
        for (std::size_t k = 0; k < K; ++k)
            std::memcpy(panel.data() + k * kNR, B + k * ldb + j, kNR * sizeof(double));
        std::size_t i = row_begin;
        for (; i + kMR <= row_end; i += kMR)
            micro_tile(K, A + i * lda, lda, panel.data(), C + i * ldc + j, ldc);
        if (i < row_end)
            edge_tile(row_end - i, kNR, K, A + i * lda, lda, panel.data(), kNR, C + i * ldc + j, ldc);
    }
    if (j < N)
        edge_tile(row_end - row_begin, N - j, K, A + row_begin * lda, lda, B + j, ldb,
                  C + row_begin * ldc + j, ldc);
}

void gemm_serial(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t lda,
                 const double* B, std::size_t ldb, double* C, std::size_t ldc)
{
    gemm_rows(0, M, N, K, A, lda, B, ldb, C, ldc);
}

// col: [Ci*k*k, H*W]
void im2col(const double* x, std::size_t Ci, std::size_t H, std::size_t W, std::size_t k,
            double* col)
{
    const long pad = static_cast<long>(k / 2);
    const long h = static_cast<long>(H), w = static_cast<long>(W);
    std::size_t row = 0;
    for (std::size_t ci = 0; ci < Ci; ++ci)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx, ++row) {
                double* dst = col + row * H * W;
                const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
                const double* plane = x + ci * H * W;
                for (long y = 0; y < h; ++y) {
                    double* d = dst + y * w;
                    const long sy = y + dy;
                    if (sy < 0 || sy >= h) {
                        std::fill(d, d + w, 0.0);
                        continue;
                    }
                    const double* s = plane + sy * w;
                    const long x0 = std::max(0L, -dx), x1 = std::min(w, w - dx);
                    for (long xx = 0; xx < x0; ++xx) d[xx] = 0.0;
                    for (long xx = x0; xx < x1; ++xx) d[xx] = s[xx + dx];
                    for (long xx = std::max(x0, x1); xx < w; ++xx) d[xx] = 0.0;
                }
            }
}

void col2im_add(const double* col, std::size_t Ci, std::size_t H, std::size_t W, std::size_t k,
                double* x)
{
    const long pad = static_cast<long>(k / 2);
    const long h = static_cast<long>(H), w = static_cast<long>(W);
    std::size_t row = 0;
    for (std::size_t ci = 0; ci < Ci; ++ci)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx, ++row) {
                const double* src = col + row * H * W;
                const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
                double* plane = x + ci * H * W;
                for (long y = 0; y < h; ++y) {
                    const long sy = y + dy;
                    if (sy < 0 || sy >= h) continue;
                    const double* s = src + y * w;
                    double* d = plane + sy * w;
                    const long x0 = std::max(0L, -dx), x1 = std::min(w, w - dx);
                    for (long xx = x0; xx < x1; ++xx) d[xx + dx] += s[xx];
                }
            }
}

void check_conv_shapes(const Tensor& x, const Tensor& w)
{
    if (x.rank() != 4 || w.rank() != 4 || w.dim(1) != x.dim(1) || w.dim(2) != w.dim(3) ||
        w.dim(2) % 2 == 0)
        throw ShapeError("conv2d: input " + to_string(x.shape()) + " incompatible with weight " +
                         to_string(w.shape()));
}

} // namespace

void gemm(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t lda,
          const double* B, std::size_t ldb, double* C, std::size_t ldc)
{
    const std::size_t blocks = (M + kMR - 1) / kMR;
#pragma omp parallel
    {
        const std::size_t threads = static_cast<std::size_t>(omp_get_num_threads());
        const std::size_t t = static_cast<std::size_t>(omp_get_thread_num());
        const std::size_t per = (blocks + threads - 1) / threads;
        const std::size_t r0 = std::min(M, t * per * kMR);
        const std::size_t r1 = std::min(M, (t + 1) * per * kMR);
        if (r0 < r1) gemm_rows(r0, r1, N, K, A, lda, B, ldb, C, ldc);
    }
}

void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* bias, Tensor& out)
{
    check_conv_shapes(x, w);
    const std::size_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Co = w.dim(0), k = w.dim(2), K = Ci * k * k, HW = H * W;
    const long batch = static_cast<long>(N);
#pragma omp parallel
    {
        std::vector<double> col(k == 1 ? 0 : K * HW);
#pragma omp for schedule(static)
        for (long n = 0; n < batch; ++n) {
            const double* src = x.ptr() + static_cast<std::size_t>(n) * Ci * HW;
            double* dst = out.ptr() + static_cast<std::size_t>(n) * Co * HW;
            for (std::size_t co = 0; co < Co; ++co)
                std::fill(dst + co * HW, dst + (co + 1) * HW, bias ? (*bias)[co] : 0.0);
            const double* B = src;
            if (k != 1) {
                im2col(src, Ci, H, W, k, col.data());
                B = col.data();
            }
            gemm_serial(Co, HW, K, w.ptr(), K, B, HW, dst, HW);
        }
    }
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& grad_out, Tensor* grad_x,
                     Tensor* grad_w, Tensor* grad_b)
{
    check_conv_shapes(x, w);
    const std::size_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Co = w.dim(0), k = w.dim(2), K = Ci * k * k, HW = H * W;

    if (grad_b) {
        for (std::size_t co = 0; co < Co; ++co) {
            double acc = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                const double* g = grad_out.ptr() + (n * Co + co) * HW;
                for (std::size_t i = 0; i < HW; ++i) acc += g[i];
            }
            (*grad_b)[co] += acc;
        }
    }

    if (grad_w) {
        // dW[Co,K] += dOut_n[Co,HW] * col_n^T[HW,K], samples accumulated in order.
        std::vector<double> col(K * HW), colT(HW * K);
        for (std::size_t n = 0; n < N; ++n) {
            const double* src = x.ptr() + n * Ci * HW;
            const double* cp = src;
            if (k != 1) {
                im2col(src, Ci, H, W, k, col.data());
                cp = col.data();
            }
            for (std::size_t r = 0; r < K; ++r)
                for (std::size_t p = 0; p < HW; ++p) colT[p * K + r] = cp[r * HW + p];
            gemm(Co, K, HW, grad_out.ptr() + n * Co * HW, HW, colT.data(), K, grad_w->ptr(), K);
        }
    }

    if (grad_x) {
        std::vector<double> wT(K * Co);
        for (std::size_t co = 0; co < Co; ++co)
            for (std::size_t r = 0; r < K; ++r) wT[r * Co + co] = w[co * K + r];
        const long batch = static_cast<long>(N);
#pragma omp parallel
        {
            std::vector<double> dcol(K * HW);
#pragma omp for schedule(static)
            for (long n = 0; n < batch; ++n) {
                const std::size_t un = static_cast<std::size_t>(n);
                double* gx = grad_x->ptr() + un * Ci * HW;
                const double* go = grad_out.ptr() + un * Co * HW;
                if (k == 1) {
                    gemm_serial(K, HW, Co, wT.data(), Co, go, HW, gx, HW);
                } else {
                    std::fill(dcol.begin(), dcol.end(), 0.0);
                    gemm_serial(K, HW, Co, wT.data(), Co, go, HW, dcol.data(), HW);
                    col2im_add(dcol.data(), Ci, H, W, k, gx);
                }
            }
        }
    }
}

void avgpool2x_forward(const Tensor& x, Tensor& out)
{
    const std::size_t planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t h = H / 2, w = W / 2;
#pragma omp parallel for schedule(static)
    for (long p = 0; p < static_cast<long>(planes); ++p) {
        const double* s = x.ptr() + static_cast<std::size_t>(p) * H * W;
        double* d = out.ptr() + static_cast<std::size_t>(p) * h * w;
        for (std::size_t y = 0; y < h; ++y) {
            const double* r0 = s + 2 * y * W;
            const double* r1 = r0 + W;
            for (std::size_t xx = 0; xx < w; ++xx)
                d[y * w + xx] = 0.25 * (r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1]);
        }
    }
}

void avgpool2x_backward(const Tensor& grad_out, Tensor& grad_x)
{
    const std::size_t planes = grad_x.dim(0) * grad_x.dim(1), H = grad_x.dim(2), W = grad_x.dim(3);
    const std::size_t w = W / 2;
#pragma omp parallel for schedule(static)
    for (long p = 0; p < static_cast<long>(planes); ++p) {
        const double* g = grad_out.ptr() + static_cast<std::size_t>(p) * (H / 2) * w;
        double* d = grad_x.ptr() + static_cast<std::size_t>(p) * H * W;
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx) d[y * W + xx] += 0.25 * g[(y / 2) * w + xx / 2];
    }
}

void upsample2x_forward(const Tensor& x, Tensor& out)
{
    const std::size_t planes = out.dim(0) * out.dim(1), H = out.dim(2), W = out.dim(3);
    const std::size_t w = W / 2;
#pragma omp parallel for schedule(static)
    for (long p = 0; p < static_cast<long>(planes); ++p) {
        const double* s = x.ptr() + static_cast<std::size_t>(p) * (H / 2) * w;
        double* d = out.ptr() + static_cast<std::size_t>(p) * H * W;
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx) d[y * W + xx] = s[(y / 2) * w + xx / 2];
    }
}

void upsample2x_backward(const Tensor& grad_out, Tensor& grad_x)
{
    const std::size_t planes = grad_x.dim(0) * grad_x.dim(1), h = grad_x.dim(2), w = grad_x.dim(3);
    const std::size_t W = 2 * w;
#pragma omp parallel for schedule(static)
    for (long p = 0; p < static_cast<long>(planes); ++p) {
        const double* g = grad_out.ptr() + static_cast<std::size_t>(p) * 4 * h * w;
        double* d = grad_x.ptr() + static_cast<std::size_t>(p) * h * w;
        for (std::size_t y = 0; y < h; ++y) {
            const double* r0 = g + 2 * y * W;
            const double* r1 = r0 + W;
            for (std::size_t xx = 0; xx < w; ++xx)
                d[y * w + xx] += r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1];
        }
    }
}

} // namespace rcl::kernels

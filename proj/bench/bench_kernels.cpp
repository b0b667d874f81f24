#include "rcl/kernels.hpp"
#include "rcl/random.hpp"
#include "rcl/reference.hpp"

#include <benchmark/benchmark.h>

using namespace rcl;

namespace {

Tensor filled(Shape s, std::uint64_t seed)
{
    Rng rng(seed);
    Tensor t(std::move(s));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1, 1);
    return t;
}

template <auto Gemm>
void BM_gemm(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    const Tensor a = filled({n, n}, 1), b = filled({n, n}, 2);
    Tensor c(Shape{n, n});
    for (auto _ : state) {
        Gemm(n, n, n, a.ptr(), n, b.ptr(), n, c.ptr(), n);
        benchmark::DoNotOptimize(c.ptr());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

// Shapes of the first unet level on a 32x32 crop batch.
template <auto Conv>
void BM_conv_forward(benchmark::State& state)
{
    const auto ch = static_cast<std::size_t>(state.range(0));
    const Tensor x = filled({8, ch, 32, 32}, 3), w = filled({ch, ch, 3, 3}, 4), b = filled({ch}, 5);
    Tensor out(Shape{8, ch, 32, 32});
    for (auto _ : state) {
        Conv(x, w, &b, out);
        benchmark::DoNotOptimize(out.ptr());
    }
}

template <auto Conv>
void BM_conv_backward(benchmark::State& state)
{
    const auto ch = static_cast<std::size_t>(state.range(0));
    const Tensor x = filled({8, ch, 32, 32}, 3), w = filled({ch, ch, 3, 3}, 4), go = filled({8, ch, 32, 32}, 6);
    Tensor gx(x.shape()), gw(w.shape()), gb(Shape{ch});
    for (auto _ : state) {
        Conv(x, w, go, &gx, &gw, &gb);
        benchmark::DoNotOptimize(gw.ptr());
    }
}

} // namespace

BENCHMARK(BM_gemm<kernels::gemm>)->Name("gemm/kernels")->Arg(64)->Arg(256);
BENCHMARK(BM_gemm<reference::gemm>)->Name("gemm/reference")->Arg(64)->Arg(256);
BENCHMARK(BM_conv_forward<kernels::conv2d_forward>)->Name("conv_forward/kernels")->Arg(16)->Arg(32);
BENCHMARK(BM_conv_forward<reference::conv2d_forward>)->Name("conv_forward/reference")->Arg(16)->Arg(32);
BENCHMARK(BM_conv_backward<kernels::conv2d_backward>)->Name("conv_backward/kernels")->Arg(16)->Arg(32);
BENCHMARK(BM_conv_backward<reference::conv2d_backward>)->Name("conv_backward/reference")->Arg(16)->Arg(32);

BENCHMARK_MAIN();

#include <chrono>
#include <iostream>

#include "sllie/kernels.hpp"
#include "sllie/reference.hpp"

// Compares the OpenMP kernels against the serial reference implementations:
// wall time for each, plus the max abs deviation as a sanity check.

using namespace sllie;
using Clock = std::chrono::steady_clock;

namespace {

template <typename F>
double time_ms(F&& f, int reps) {
  const auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) f();
  const auto t1 = Clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void report(const char* name, double par_ms, double ser_ms, double err) {
  std::cout << name << ": parallel " << par_ms << " ms, serial " << ser_ms
            << " ms, speedup " << ser_ms / par_ms << "x, max abs err " << err << "\n";
}

}  // namespace

int main() {
  std::mt19937_64 rng(7);
  const int reps = 3;

  {
    Tensor<double> x({2, 64, 64, 16}), w({3, 3, 16, 16}), b({16});
    fill_normal(x, rng, 1.0);
    fill_normal(w, rng, 0.1);
    fill_normal(b, rng, 0.1);
    Tensor<double> yp, ys;
    const double tp = time_ms([&] { yp = kernels::conv2d_nhwc(x, w, b, 1, 1); }, reps);
    const double ts = time_ms([&] { ys = ref::conv2d_nhwc(x, w, b, 1, 1); }, reps);
    report("conv2d 64x64x16", tp, ts, max_abs_diff(yp, ys));
  }
  {
    Tensor<double> x({2, 128, 128, 32}), w({5, 5, 32}), b({32});
    fill_normal(x, rng, 1.0);
    fill_normal(w, rng, 0.1);
    fill_normal(b, rng, 0.1);
    Tensor<double> yp, ys;
    const double tp = time_ms([&] { yp = kernels::dwconv_nhwc(x, w, b); }, reps);
    const double ts = time_ms([&] { ys = ref::dwconv_nhwc(x, w, b); }, reps);
    report("dwconv5 128x128x32", tp, ts, max_abs_diff(yp, ys));
  }
  {
    const int64_t B = 4, L = 1024, C = 32, N = 16;
    Tensor<double> x({B, L, C}), delta({B, L, C}), a({C, N}), bm({B, L, N}), cm({B, L, N}),
        d({C});
    fill_normal(x, rng, 1.0);
    fill_uniform(delta, rng, 0.01, 0.1);
    fill_uniform(a, rng, -2.0, -0.1);
    fill_normal(bm, rng, 0.5);
    fill_normal(cm, rng, 0.5);
    fill_normal(d, rng, 0.5);
    Tensor<double> yp;
    const double tp =
        time_ms([&] { yp = kernels::scan_core(x, delta, a, bm, cm, d); }, reps);
    // serial oracle works on one [L,C] sequence at a time
    Tensor<double> ys({B, L, C});
    const double ts = time_ms(
        [&] {
          for (int64_t bi = 0; bi < B; ++bi) {
            Tensor<double> xs({L, C}), ds({L, C}), bs({L, N}), cs({L, N});
            std::copy_n(&x.data[size_t(bi * L * C)], L * C, xs.data.begin());
            std::copy_n(&delta.data[size_t(bi * L * C)], L * C, ds.data.begin());
            std::copy_n(&bm.data[size_t(bi * L * N)], L * N, bs.data.begin());
            std::copy_n(&cm.data[size_t(bi * L * N)], L * N, cs.data.begin());
            Tensor<double> yb = ref::scan_naive(xs, ds, a, bs, cs, d);
            std::copy_n(yb.data.begin(), L * C, &ys.data[size_t(bi * L * C)]);
          }
        },
        reps);
    report("selective scan B4 L1024 C32 N16", tp, ts, max_abs_diff(yp, ys));
  }
  return 0;
}

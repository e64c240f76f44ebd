#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "core/kernels.h"
#include "core/parallel.h"
#include "core/rng.h"

using namespace nvs;

namespace {

double time_once(const std::function<void()>& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

// Repeats until ~0.2s of work so short kernels time stably.
double time_stable(const std::function<void()>& f) {
  f();  // warm up
  double t = time_once(f);
  int reps = t > 0 ? static_cast<int>(0.2 / t) : 1000;
  reps = std::max(1, std::min(reps, 1000));
  double total = 0;
  for (int i = 0; i < reps; ++i) total += time_once(f);
  return total / reps;
}

template <class S>
std::vector<S> random_buf(int64_t n, uint64_t key) {
  Rng rng = keyed_rng(42, key);
  std::vector<S> v(static_cast<size_t>(n));
  for (S& x : v) x = static_cast<S>(rng.uniform(-1, 1));
  return v;
}

struct Variant {
  const char* name;
  std::function<void()> serial, omp;
  std::function<bool()> equal;
};

template <class S>
void bench_gemm(const char* dtype, int64_t m, int64_t n, int64_t k) {
  auto a = random_buf<S>(m * k, 1);
  auto b = random_buf<S>(k * n, 2);
  auto bt = random_buf<S>(n * k, 3);
  auto b_mn = random_buf<S>(m * n, 4);  // gemm_tn takes B as [m,n]
  std::vector<S> c_serial(static_cast<size_t>(m * n));
  std::vector<S> c_omp(static_cast<size_t>(m * n));
  std::vector<S> ct_serial(static_cast<size_t>(k * n));
  std::vector<S> ct_omp(static_cast<size_t>(k * n));

  const double flops = 2.0 * m * n * k;
  Variant variants[] = {
      {"gemm_nn",
       [&] { kern::gemm_nn_serial<S>(m, n, k, a.data(), b.data(), c_serial.data(), false); },
       [&] { kern::gemm_nn_omp<S>(m, n, k, a.data(), b.data(), c_omp.data(), false); },
       [&] { return std::memcmp(c_serial.data(), c_omp.data(), sizeof(S) * c_serial.size()) == 0; }},
      {"gemm_nt",
       [&] { kern::gemm_nt_serial<S>(m, n, k, a.data(), bt.data(), c_serial.data(), false); },
       [&] { kern::gemm_nt_omp<S>(m, n, k, a.data(), bt.data(), c_omp.data(), false); },
       [&] { return std::memcmp(c_serial.data(), c_omp.data(), sizeof(S) * c_serial.size()) == 0; }},
      {"gemm_tn",
       [&] { kern::gemm_tn_serial<S>(m, n, k, a.data(), b_mn.data(), ct_serial.data(), false); },
       [&] { kern::gemm_tn_omp<S>(m, n, k, a.data(), b_mn.data(), ct_omp.data(), false); },
       [&] { return std::memcmp(ct_serial.data(), ct_omp.data(), sizeof(S) * ct_serial.size()) == 0; }},
  };

  for (const Variant& v : variants) {
    const double ts = time_stable(v.serial);
    const double tp = time_stable(v.omp);
    std::printf("%-8s %-4s %5lldx%-5lldx%-5lld serial %8.3f ms (%6.2f GF/s)  "
                "omp %8.3f ms (%6.2f GF/s)  speedup %5.2fx  %s\n",
                v.name, dtype, static_cast<long long>(m),
                static_cast<long long>(n), static_cast<long long>(k), ts * 1e3,
                flops / ts * 1e-9, tp * 1e3, flops / tp * 1e-9, ts / tp,
                v.equal() ? "bitwise equal" : "MISMATCH");
  }
}

}  // namespace

int main() {
  std::printf("workers: %d\n\n", par::max_workers());

  // Layer-sized shapes from the radiance pipeline plus a square reference.
  bench_gemm<float>("f32", 4096, 64, 35);
  bench_gemm<float>("f32", 4096, 256, 64);
  bench_gemm<float>("f32", 8192, 32, 64);
  bench_gemm<float>("f32", 512, 512, 512);
  std::printf("\n");
  bench_gemm<double>("f64", 4096, 256, 64);
  bench_gemm<double>("f64", 512, 512, 512);
  return 0;
}

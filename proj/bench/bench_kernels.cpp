// Parallel kernels against their serial references on embedding-sized data.
// Run with --benchmark_filter to select a kernel; the Parallel variants take
// the thread count as their argument.
#include "uae/kernels.hpp"
#include "uae/model.hpp"

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

namespace {

using namespace uae::kernels;

constexpr std::array<int, 3> kDims{48, 48, 48};
constexpr std::size_t kVoxels = 48 * 48 * 48;
constexpr int kChannels = 128;

std::vector<float> random_floats(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d;
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

void set_threads(const benchmark::State& state) { set_thread_count(static_cast<int>(state.range(0))); }

template <bool Parallel>
void BM_Similarity(benchmark::State& state) {
  if (Parallel) set_threads(state);
  const auto coarse = random_floats(kVoxels * kChannels, 1), fine = random_floats(kVoxels * kChannels, 2);
  const auto tc = random_floats(kChannels, 3), tf = random_floats(kChannels, 4);
  const HeadQuery heads[] = {{coarse.data(), tc.data(), kChannels, 0.5}, {fine.data(), tf.data(), kChannels, 0.5}};
  std::vector<double> out(kVoxels);
  for (auto _ : state) {
    if (Parallel) similarity_parallel(heads, kVoxels, out);
    else similarity_serial(heads, kVoxels, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(kVoxels));
}

template <bool Parallel>
void BM_ConvolveAxis(benchmark::State& state) {
  if (Parallel) set_threads(state);
  const auto in = random_floats(96 * 96 * 96, 5);
  std::vector<float> out(in.size());
  const auto taps = uae::DescriptorBank::kernel(uae::DescriptorBank::Kernel::smooth, 2.0);
  const std::array<int, 3> dims{96, 96, 96};
  for (auto _ : state) {
    for (int axis = 0; axis < 3; ++axis) {
      if (Parallel) convolve_axis_parallel(in.data(), out.data(), dims, axis, taps);
      else convolve_axis_serial(in.data(), out.data(), dims, axis, taps);
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(in.size()) * 3);
}

template <bool Parallel>
void BM_Project(benchmark::State& state) {
  if (Parallel) set_threads(state);
  const int f = uae::DescriptorBank::kFeatureDim;
  const auto features = random_floats(kVoxels * f, 6);
  std::vector<double> w(static_cast<std::size_t>(f) * kChannels);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> d;
  for (auto& x : w) x = d(rng);
  std::vector<float> out(kVoxels * kChannels);
  for (auto _ : state) {
    if (Parallel) project_parallel(features.data(), kVoxels, f, w.data(), kChannels, out.data(), true);
    else project_serial(features.data(), kVoxels, f, w.data(), kChannels, out.data(), true);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(kVoxels));
}

template <bool Parallel>
void BM_Resample(benchmark::State& state) {
  if (Parallel) set_threads(state);
  const std::array<int, 3> in_dims{96, 96, 96};
  const auto in = random_floats(96 * 96 * 96, 8);
  std::vector<float> out(kVoxels);
  const std::array<double, 3> step{1.98, 1.98, 1.98};
  for (auto _ : state) {
    if (Parallel) resample_parallel(in.data(), in_dims, out.data(), kDims, step);
    else resample_serial(in.data(), in_dims, out.data(), kDims, step);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(kVoxels));
}

void thread_counts(benchmark::internal::Benchmark* b) {
  for (int t : {1, 2, 4, 8}) b->Arg(t);
}

BENCHMARK(BM_Similarity<false>)->Name("Similarity/serial")->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Similarity<true>)->Name("Similarity/parallel")->Apply(thread_counts)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_ConvolveAxis<false>)->Name("ConvolveAxis/serial")->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_ConvolveAxis<true>)->Name("ConvolveAxis/parallel")->Apply(thread_counts)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Project<false>)->Name("Project/serial")->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Project<true>)->Name("Project/parallel")->Apply(thread_counts)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Resample<false>)->Name("Resample/serial")->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Resample<true>)->Name("Resample/parallel")->Apply(thread_counts)->Unit(benchmark::kMillisecond)->UseRealTime();

}  // namespace

BENCHMARK_MAIN();

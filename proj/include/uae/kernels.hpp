#pragma once

// Data-parallel inner loops. Every kernel has an OpenMP implementation used
// by the library and a plain serial reference used by tests and benchmarks.
// The parallel versions never reduce across output elements, so their results
// do not depend on the thread count. They may reorder per-element sums, so
// they agree with the reference to round-off, not bitwise.

#include <array>
#include <cstddef>
#include <span>

namespace uae::kernels {

/// One embedding head participating in a weighted similarity.
struct HeadQuery {
  const float* query = nullptr;     // n_voxels * channels, channel fastest
  const float* templ = nullptr;     // channels
  int channels = 0;
  double weight = 0.0;
};

/// out[i] = sum_h weight_h * <templ_h, query_h[i]>  (double accumulation)
void similarity_parallel(std::span<const HeadQuery> heads, std::size_t n_voxels,
                         std::span<double> out);
void similarity_serial(std::span<const HeadQuery> heads, std::size_t n_voxels,
                       std::span<double> out);

/// Index of the maximum; ties resolve to the lowest index.
std::size_t argmax_first(std::span<const double> values);

/// Centered 1-D correlation along `axis` (0=x,1=y,2=z) with clamp-to-edge.
/// `kernel` has odd length. Volumes are single-channel, x fastest.
void convolve_axis_parallel(const float* in, float* out, const std::array<int, 3>& dims, int axis,
                            std::span<const double> kernel);
void convolve_axis_serial(const float* in, float* out, const std::array<int, 3>& dims, int axis,
                          std::span<const double> kernel);

/// out[v] = W^T features[v] (W is F x D row-major), optionally unit-normalized.
/// Zero vectors are replaced by e1 when normalizing; returns how many were.
std::size_t project_parallel(const float* features, std::size_t n_voxels, int f_dim,
                             const double* w, int d_dim, float* out, bool normalize);
std::size_t project_serial(const float* features, std::size_t n_voxels, int f_dim,
                           const double* w, int d_dim, float* out, bool normalize);

/// Output voxel (x,y,z) samples the input at (x,y,z) * step, trilinear with
/// clamp-to-edge.
void resample_parallel(const float* in, const std::array<int, 3>& in_dims, float* out,
                       const std::array<int, 3>& out_dims, const std::array<double, 3>& step);
void resample_serial(const float* in, const std::array<int, 3>& in_dims, float* out,
                     const std::array<int, 3>& out_dims, const std::array<double, 3>& step);

/// Caps the OpenMP team size; values < 1 restore the runtime default.
void set_thread_count(int n);

}  // namespace uae::kernels

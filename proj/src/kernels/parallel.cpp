#include "uae/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace uae::kernels {

namespace {

inline double dot4(const float* a, const float* b, int n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  int k = 0;
  for (; k + 4 <= n; k += 4) {
    s0 += static_cast<double>(a[k]) * b[k];
    s1 += static_cast<double>(a[k + 1]) * b[k + 1];
    s2 += static_cast<double>(a[k + 2]) * b[k + 2];
    s3 += static_cast<double>(a[k + 3]) * b[k + 3];
  }
  for (; k < n; ++k) s0 += static_cast<double>(a[k]) * b[k];
  return (s0 + s1) + (s2 + s3);
}

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

}  // namespace

void similarity_parallel(std::span<const HeadQuery> heads, std::size_t n_voxels,
                         std::span<double> out) {
  const auto n = static_cast<std::int64_t>(n_voxels);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (const auto& h : heads) {
      if (h.weight == 0.0) continue;
      s += h.weight * dot4(h.templ, h.query + i * h.channels, h.channels);
    }
    out[static_cast<std::size_t>(i)] = s;
  }
}

std::size_t argmax_first(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

void convolve_axis_parallel(const float* in, float* out, const std::array<int, 3>& dims, int axis,
                            std::span<const double> kernel) {
  const int nx = dims[0], ny = dims[1], nz = dims[2];
  const int radius = static_cast<int>(kernel.size() / 2);
  const int len = dims[static_cast<std::size_t>(axis)];
  const std::int64_t stride = axis == 0 ? 1 : (axis == 1 ? nx : static_cast<std::int64_t>(nx) * ny);
  // Number of independent lines and a mapping line -> first element.
  const std::int64_t lines = static_cast<std::int64_t>(nx) * ny * nz / len;

#pragma omp parallel
  {
    std::vector<float> line(static_cast<std::size_t>(len + 2 * radius));
#pragma omp for schedule(static)
    for (std::int64_t l = 0; l < lines; ++l) {
      std::int64_t base = 0;
      if (axis == 0) {
        base = l * nx;
      } else if (axis == 1) {
        const std::int64_t z = l / nx, x = l % nx;
        base = z * nx * ny + x;
      } else {
        base = l;
      }
      for (int k = -radius; k < len + radius; ++k) {
        line[static_cast<std::size_t>(k + radius)] = in[base + clampi(k, 0, len - 1) * stride];
      }
      for (int k = 0; k < len; ++k) {
        double s = 0.0;
        const float* src = line.data() + k;
        for (std::size_t t = 0; t < kernel.size(); ++t) s += kernel[t] * src[t];
        out[base + k * stride] = static_cast<float>(s);
      }
    }
  }
}

std::size_t project_parallel(const float* features, std::size_t n_voxels, int f_dim,
                             const double* w, int d_dim, float* out, bool normalize) {
  const auto n = static_cast<std::int64_t>(n_voxels);
  std::size_t zeros = 0;
#pragma omp parallel reduction(+ : zeros)
  {
    std::vector<double> acc(static_cast<std::size_t>(d_dim));
#pragma omp for schedule(static)
    for (std::int64_t v = 0; v < n; ++v) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const float* f = features + v * f_dim;
      for (int i = 0; i < f_dim; ++i) {
        const double fi = f[i];
        if (fi == 0.0) continue;
        const double* row = w + static_cast<std::size_t>(i) * static_cast<std::size_t>(d_dim);
        for (int d = 0; d < d_dim; ++d) acc[static_cast<std::size_t>(d)] += fi * row[d];
      }
      float* o = out + v * d_dim;
      if (normalize) {
        double sq = 0.0;
        for (double a : acc) sq += a * a;
        const double norm = std::sqrt(sq);
        if (norm > 0.0) {
          for (int d = 0; d < d_dim; ++d) o[d] = static_cast<float>(acc[static_cast<std::size_t>(d)] / norm);
        } else {
          std::fill(o, o + d_dim, 0.0f);
          o[0] = 1.0f;
          ++zeros;
        }
      } else {
        for (int d = 0; d < d_dim; ++d) o[d] = static_cast<float>(acc[static_cast<std::size_t>(d)]);
      }
    }
  }
  return zeros;
}

void resample_parallel(const float* in, const std::array<int, 3>& in_dims, float* out,
                       const std::array<int, 3>& out_dims, const std::array<double, 3>& step) {
  const int nx = in_dims[0], ny = in_dims[1], nz = in_dims[2];
  const std::int64_t planes = out_dims[2];
#pragma omp parallel for schedule(static)
  for (std::int64_t oz = 0; oz < planes; ++oz) {
    const double pz = std::clamp(static_cast<double>(oz) * step[2], 0.0, static_cast<double>(nz - 1));
    const int z0 = std::min(static_cast<int>(std::floor(pz)), nz - 1);
    const int z1 = std::min(z0 + 1, nz - 1);
    const double fz = pz - z0;
    for (int oy = 0; oy < out_dims[1]; ++oy) {
      const double py = std::clamp(oy * step[1], 0.0, static_cast<double>(ny - 1));
      const int y0 = std::min(static_cast<int>(std::floor(py)), ny - 1);
      const int y1 = std::min(y0 + 1, ny - 1);
      const double fy = py - y0;
      float* orow = out + (oz * out_dims[1] + oy) * static_cast<std::int64_t>(out_dims[0]);
      for (int ox = 0; ox < out_dims[0]; ++ox) {
        const double px = std::clamp(ox * step[0], 0.0, static_cast<double>(nx - 1));
        const int x0 = std::min(static_cast<int>(std::floor(px)), nx - 1);
        const int x1 = std::min(x0 + 1, nx - 1);
        const double fx = px - x0;
        auto v = [&](int x, int y, int z) {
          return static_cast<double>(in[(static_cast<std::int64_t>(z) * ny + y) * nx + x]);
        };
        const double c00 = v(x0, y0, z0) + fx * (v(x1, y0, z0) - v(x0, y0, z0));
        const double c10 = v(x0, y1, z0) + fx * (v(x1, y1, z0) - v(x0, y1, z0));
        const double c01 = v(x0, y0, z1) + fx * (v(x1, y0, z1) - v(x0, y0, z1));
        const double c11 = v(x0, y1, z1) + fx * (v(x1, y1, z1) - v(x0, y1, z1));
        const double c0 = c00 + fy * (c10 - c00);
        const double c1 = c01 + fy * (c11 - c01);
        orow[ox] = static_cast<float>(c0 + fz * (c1 - c0));
      }
    }
  }
}

void set_thread_count(int n) {
#ifdef _OPENMP
  if (n >= 1) {
    omp_set_num_threads(n);
  } else {
    omp_set_num_threads(omp_get_num_procs());
  }
#else
  (void)n;
#endif
}

}  // namespace uae::kernels

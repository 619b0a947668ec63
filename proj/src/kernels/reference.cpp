// Serial reference kernels: direct transcriptions of the definitions.

#include "uae/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace uae::kernels {

void similarity_serial(std::span<const HeadQuery> heads, std::size_t n_voxels,
                       std::span<double> out) {
  for (std::size_t i = 0; i < n_voxels; ++i) {
    double s = 0.0;
    for (const auto& h : heads) {
      double dot = 0.0;
      const float* q = h.query + i * static_cast<std::size_t>(h.channels);
      for (int k = 0; k < h.channels; ++k) dot += static_cast<double>(h.templ[k]) * q[k];
      s += h.weight * dot;
    }
    out[i] = s;
  }
}

void convolve_axis_serial(const float* in, float* out, const std::array<int, 3>& dims, int axis,
                          std::span<const double> kernel) {
  const int radius = static_cast<int>(kernel.size() / 2);
  auto idx = [&](int x, int y, int z) {
    return (static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x;
  };
  for (int z = 0; z < dims[2]; ++z) {
    for (int y = 0; y < dims[1]; ++y) {
      for (int x = 0; x < dims[0]; ++x) {
        double s = 0.0;
        for (int t = -radius; t <= radius; ++t) {
          std::array<int, 3> p{x, y, z};
          p[static_cast<std::size_t>(axis)] =
              std::clamp(p[static_cast<std::size_t>(axis)] + t, 0,
                         dims[static_cast<std::size_t>(axis)] - 1);
          s += kernel[static_cast<std::size_t>(t + radius)] * in[idx(p[0], p[1], p[2])];
        }
        out[idx(x, y, z)] = static_cast<float>(s);
      }
    }
  }
}

std::size_t project_serial(const float* features, std::size_t n_voxels, int f_dim,
                           const double* w, int d_dim, float* out, bool normalize) {
  std::size_t zeros = 0;
  for (std::size_t v = 0; v < n_voxels; ++v) {
    double sq = 0.0;
    for (int d = 0; d < d_dim; ++d) {
      double a = 0.0;
      for (int i = 0; i < f_dim; ++i) {
        a += static_cast<double>(features[v * static_cast<std::size_t>(f_dim) + static_cast<std::size_t>(i)]) *
             w[static_cast<std::size_t>(i) * static_cast<std::size_t>(d_dim) + static_cast<std::size_t>(d)];
      }
      out[v * static_cast<std::size_t>(d_dim) + static_cast<std::size_t>(d)] = static_cast<float>(a);
      sq += a * a;
    }
    if (!normalize) continue;
    float* o = out + v * static_cast<std::size_t>(d_dim);
    if (sq > 0.0) {
      // recompute in double to avoid normalizing rounded floats
      const double norm = std::sqrt(sq);
      for (int d = 0; d < d_dim; ++d) {
        double a = 0.0;
        for (int i = 0; i < f_dim; ++i) {
          a += static_cast<double>(features[v * static_cast<std::size_t>(f_dim) + static_cast<std::size_t>(i)]) *
               w[static_cast<std::size_t>(i) * static_cast<std::size_t>(d_dim) + static_cast<std::size_t>(d)];
        }
        o[d] = static_cast<float>(a / norm);
      }
    } else {
      std::fill(o, o + d_dim, 0.0f);
      o[0] = 1.0f;
      ++zeros;
    }
  }
  return zeros;
}

void resample_serial(const float* in, const std::array<int, 3>& in_dims, float* out,
                     const std::array<int, 3>& out_dims, const std::array<double, 3>& step) {
  auto at = [&](int x, int y, int z) {
    x = std::clamp(x, 0, in_dims[0] - 1);
    y = std::clamp(y, 0, in_dims[1] - 1);
    z = std::clamp(z, 0, in_dims[2] - 1);
    return static_cast<double>(in[(static_cast<std::size_t>(z) * in_dims[1] + y) * in_dims[0] + x]);
  };
  std::size_t o = 0;
  for (int oz = 0; oz < out_dims[2]; ++oz) {
    for (int oy = 0; oy < out_dims[1]; ++oy) {
      for (int ox = 0; ox < out_dims[0]; ++ox, ++o) {
        const double p[3] = {std::clamp(ox * step[0], 0.0, in_dims[0] - 1.0),
                             std::clamp(oy * step[1], 0.0, in_dims[1] - 1.0),
                             std::clamp(oz * step[2], 0.0, in_dims[2] - 1.0)};
        const int b[3] = {static_cast<int>(std::floor(p[0])), static_cast<int>(std::floor(p[1])),
                          static_cast<int>(std::floor(p[2]))};
        const double f[3] = {p[0] - b[0], p[1] - b[1], p[2] - b[2]};
        double s = 0.0;
        for (int c = 0; c < 8; ++c) {
          const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
          const double wgt = (dx ? f[0] : 1.0 - f[0]) * (dy ? f[1] : 1.0 - f[1]) *
                             (dz ? f[2] : 1.0 - f[2]);
          if (wgt != 0.0) s += wgt * at(b[0] + dx, b[1] + dy, b[2] + dz);
        }
        out[o] = static_cast<float>(s);
      }
    }
  }
}

}  // namespace uae::kernels

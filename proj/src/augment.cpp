#include "uae/augment.hpp"

#include "uae/error.hpp"
#include "uae/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace uae {

namespace {

bool in_unit(double v) { return v >= 0.0 && v <= 1.0; }

std::pair<float, float> min_max(const ScalarVolume& vol) {
  if (vol.data.empty()) return {0.0f, 0.0f};
  const auto [lo, hi] = std::minmax_element(vol.data.begin(), vol.data.end());
  return {*lo, *hi};
}

bool is_identity_curve(const std::array<double, 4>& c) {
  return c[0] == c[1] && c[2] == c[3] && std::abs(c[0] - 1.0 / 3.0) < 1e-15 &&
         std::abs(c[2] - 2.0 / 3.0) < 1e-15;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  if (hi <= lo) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Point3 center_of(const std::array<int, 3>& dims) {
  return Point3((dims[0] - 1) * 0.5, (dims[1] - 1) * 0.5, (dims[2] - 1) * 0.5);
}

// Rotation/scale about `center`, drawn from the AugmentSpec ranges.
AffineTransform random_similarity(const AugmentSpec& spec, const Point3& center,
                                  std::mt19937_64& rng) {
  const double r = spec.rotation_deg;
  const double rx = uniform(rng, -r, r);
  const double ry = uniform(rng, -r, r);
  const double rz = uniform(rng, -r, r);
  const double s = uniform(rng, spec.scale_min, spec.scale_max);
  AffineTransform t;
  t.linear = s * rotation_from_euler_deg(rx, ry, rz);
  t.translation = center - t.linear * center;
  return t;
}

void add_noise(ScalarVolume& vol, double sigma, std::mt19937_64& rng) {
  if (sigma <= 0.0) return;
  std::normal_distribution<double> n(0.0, sigma);
  for (float& v : vol.data) v = static_cast<float>(v + n(rng));
}

// Blur and noise share one stream so a patch is reproducible from its seed.
void blur_and_noise(ScalarVolume& vol, const AugmentSpec& spec, std::mt19937_64& rng) {
  const double sigma = uniform(rng, spec.blur_sigma_min, spec.blur_sigma_max);
  const double noise = uniform(rng, spec.noise_sigma_min, spec.noise_sigma_max);
  if (sigma > 0.0) vol = gaussian_blur(vol, sigma);
  const auto [lo, hi] = min_max(vol);
  add_noise(vol, noise * std::max(1e-6, static_cast<double>(hi - lo)), rng);
}

}  // namespace

AugmentSpec AugmentSpec::none() {
  AugmentSpec s;
  s.rotation_deg = 0.0;
  s.scale_min = 1.0;
  s.scale_max = 1.0;
  s.blur_sigma_max = 0.0;
  s.noise_sigma_max = 0.0;
  s.reverse_probability = 0.0;
  s.max_shift_fraction = 0.0;
  return s;
}

void AugmentSpec::validate() const {
  for (double c : bezier_control_points) {
    if (!in_unit(c)) throw Error(ErrorCode::InvalidArgument, "bezier controls must lie in [0,1]");
  }
  if (!in_unit(reverse_probability)) {
    throw Error(ErrorCode::InvalidArgument, "reverse_probability must lie in [0,1]");
  }
  if (!(rotation_deg >= 0.0)) throw Error(ErrorCode::InvalidArgument, "rotation_deg must be >= 0");
  if (!(scale_min > 0.0) || scale_max < scale_min) {
    throw Error(ErrorCode::InvalidArgument, "scale range must be positive and ordered");
  }
  if (blur_sigma_min < 0.0 || blur_sigma_max < blur_sigma_min) {
    throw Error(ErrorCode::InvalidArgument, "blur sigma range invalid");
  }
  if (noise_sigma_min < 0.0 || noise_sigma_max < noise_sigma_min) {
    throw Error(ErrorCode::InvalidArgument, "noise sigma range invalid");
  }
  for (int p : patch_size) {
    if (p < 2) throw Error(ErrorCode::InvalidArgument, "patch size must be >= 2 per axis");
  }
  if (!(min_overlap > 0.0 && min_overlap <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "min_overlap must lie in (0,1]");
  }
  if (!in_unit(max_shift_fraction)) {
    throw Error(ErrorCode::InvalidArgument, "max_shift_fraction must lie in [0,1]");
  }
}

double bezier_map(const std::array<double, 4>& c, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const auto eval = [](double p1, double p2, double s) {
    const double u = 1.0 - s;
    return 3.0 * u * u * s * p1 + 3.0 * u * s * s * p2 + s * s * s;
  };
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (eval(c[0], c[2], mid) < x) lo = mid;
    else hi = mid;
  }
  return eval(c[1], c[3], 0.5 * (lo + hi));
}

ScalarVolume bezier_intensity(const ScalarVolume& vol, const std::array<double, 4>& control) {
  const auto [lo, hi] = min_max(vol);
  if (!(hi > lo)) return vol;
  ScalarVolume out = vol;
  const double range = static_cast<double>(hi) - lo;
  for (float& v : out.data) {
    const double x = (v - static_cast<double>(lo)) / range;
    v = static_cast<float>(lo + range * bezier_map(control, x));
  }
  return out;
}

ScalarVolume intensity_reverse(const ScalarVolume& vol) {
  const auto [lo, hi] = min_max(vol);
  ScalarVolume out = vol;
  const double sum = static_cast<double>(lo) + hi;
  for (float& v : out.data) v = static_cast<float>(sum - v);
  return out;
}

std::array<double, 4> random_bezier_controls(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::array<double, 4> c{};
  for (double& v : c) v = u(rng);
  return c;
}

ScalarVolume warp_affine(const ScalarVolume& vol, const AffineTransform& t,
                         const VolumeGeometry& out_geometry) {
  const AffineTransform inv = t.inverse();
  ScalarVolume out(out_geometry);
  const auto& d = out_geometry.dims;
#pragma omp parallel for schedule(static)
  for (int z = 0; z < d[2]; ++z) {
    for (int y = 0; y < d[1]; ++y) {
      for (int x = 0; x < d[0]; ++x) {
        out.at(x, y, z) = sample_clamped(vol, inv.apply(Point3(x, y, z)));
      }
    }
  }
  return out;
}

LabelVolume warp_affine_nearest(const LabelVolume& vol, const AffineTransform& t,
                                const VolumeGeometry& out_geometry) {
  const AffineTransform inv = t.inverse();
  LabelVolume out(out_geometry);
  const auto& d = out_geometry.dims;
  const auto& s = vol.geometry.dims;
#pragma omp parallel for schedule(static)
  for (int z = 0; z < d[2]; ++z) {
    for (int y = 0; y < d[1]; ++y) {
      for (int x = 0; x < d[0]; ++x) {
        const Point3 p = inv.apply(Point3(x, y, z));
        const int ix = std::clamp(static_cast<int>(std::lround(p.x())), 0, s[0] - 1);
        const int iy = std::clamp(static_cast<int>(std::lround(p.y())), 0, s[1] - 1);
        const int iz = std::clamp(static_cast<int>(std::lround(p.z())), 0, s[2] - 1);
        out.at(x, y, z) = vol.at(ix, iy, iz);
      }
    }
  }
  return out;
}

ScalarVolume gaussian_blur(const ScalarVolume& vol, double sigma) {
  if (sigma <= 0.0) return vol;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * i * i / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = w;
    sum += w;
  }
  for (double& w : k) w /= sum;
  ScalarVolume a = vol;
  ScalarVolume b = vol;
  kernels::convolve_axis_parallel(vol.data.data(), a.data.data(), vol.geometry.dims, 0, k);
  kernels::convolve_axis_parallel(a.data.data(), b.data.data(), vol.geometry.dims, 1, k);
  kernels::convolve_axis_parallel(b.data.data(), a.data.data(), vol.geometry.dims, 2, k);
  return a;
}

std::pair<ScalarVolume, AffineTransform> geometric_augment(const ScalarVolume& vol,
                                                           const AugmentSpec& spec,
                                                           std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const AffineTransform t = random_similarity(spec, center_of(vol.geometry.dims), rng);
  const bool identity = t.linear.isIdentity(0.0) && t.translation.isZero(0.0);
  ScalarVolume out = identity ? vol : warp_affine(vol, t, vol.geometry);
  blur_and_noise(out, spec, rng);
  return {std::move(out), t};
}

double PatchPair::overlap_fraction() const {
  if (overlap.data.empty()) return 0.0;
  const auto n = std::count_if(overlap.data.begin(), overlap.data.end(),
                               [](std::uint16_t v) { return v != 0; });
  return static_cast<double>(n) / static_cast<double>(overlap.data.size());
}

PatchPair sample_patch_pair(const ScalarVolume& vol, const LabelVolume* labels,
                            const AugmentSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto& dims = vol.geometry.dims;
  const auto& ps = spec.patch_size;
  for (int a = 0; a < 3; ++a) {
    if (dims[static_cast<std::size_t>(a)] < ps[static_cast<std::size_t>(a)]) {
      throw Error(ErrorCode::VolumeTooSmall, "volume smaller than the patch size");
    }
  }
  if (labels != nullptr && labels->geometry.dims != dims) {
    throw Error(ErrorCode::GeometryMismatch, "labels do not match the volume grid");
  }

  VolumeGeometry pg;
  pg.dims = ps;
  pg.spacing = vol.geometry.spacing;
  const Point3 c = center_of(ps);
  std::mt19937_64 rng(seed);

  for (int attempt = 0; attempt < 100; ++attempt) {
    std::array<int, 3> start_a{}, start_b{};
    for (std::size_t a = 0; a < 3; ++a) {
      const int span = dims[a] - ps[a];
      start_a[a] = std::uniform_int_distribution<int>(0, span)(rng);
      const int max_shift = static_cast<int>(std::floor(spec.max_shift_fraction * ps[a]));
      const int lo = std::max(0, start_a[a] - max_shift);
      const int hi = std::min(span, start_a[a] + max_shift);
      start_b[a] = std::uniform_int_distribution<int>(lo, hi)(rng);
    }
    // source -> patch: x -> c + sR(x - start - c)
    const auto to_patch = [&](const std::array<int, 3>& start) {
      AffineTransform shift;
      shift.translation = -Point3(start[0], start[1], start[2]);
      return random_similarity(spec, c, rng).compose(shift);
    };
    const AffineTransform src_to_a = to_patch(start_a);
    const AffineTransform src_to_b = to_patch(start_b);
    const AffineTransform a_to_src = src_to_a.inverse();
    const AffineTransform a_to_b = src_to_b.compose(a_to_src);

    LabelVolume overlap(pg);
    std::size_t inside = 0;
    for (int z = 0; z < ps[2]; ++z) {
      for (int y = 0; y < ps[1]; ++y) {
        for (int x = 0; x < ps[0]; ++x) {
          const Point3 u(x, y, z);
          if (vol.geometry.contains(a_to_src.apply(u)) && pg.contains(a_to_b.apply(u))) {
            overlap.at(x, y, z) = 1;
            ++inside;
          }
        }
      }
    }
    // Patch streams are drawn even for a rejected window so attempts stay aligned.
    const std::uint64_t seed_a = rng();
    const std::uint64_t seed_b = rng();
    if (static_cast<double>(inside) < spec.min_overlap * static_cast<double>(pg.voxel_count())) {
      continue;
    }

    PatchPair out;
    out.source_to_a = src_to_a;
    out.source_to_b = src_to_b;
    out.a_to_b = a_to_b;
    out.overlap = std::move(overlap);

    const auto make_patch = [&](const AffineTransform& t, const std::array<int, 3>& start,
                                std::uint64_t s) {
      VolumeGeometry g = pg;
      g.origin = vol.geometry.to_physical(Point3(start[0], start[1], start[2]));
      ScalarVolume p = warp_affine(vol, t, g);
      std::mt19937_64 prng(s);
      if (spec.aggressive) {
        p = bezier_intensity(p, random_bezier_controls(prng));
        if (std::bernoulli_distribution(spec.reverse_probability)(prng)) p = intensity_reverse(p);
      } else if (!is_identity_curve(spec.bezier_control_points)) {
        p = bezier_intensity(p, spec.bezier_control_points);
      }
      blur_and_noise(p, spec, prng);
      return p;
    };
    out.patch_a = make_patch(src_to_a, start_a, seed_a);
    out.patch_b = make_patch(src_to_b, start_b, seed_b);
    out.overlap.geometry.origin = out.patch_a.geometry.origin;
    if (labels != nullptr) {
      out.labels_a = warp_affine_nearest(*labels, src_to_a, out.patch_a.geometry);
      out.labels_b = warp_affine_nearest(*labels, src_to_b, out.patch_b.geometry);
    }
    return out;
  }
  throw Error(ErrorCode::InsufficientOverlap, "could not place two patches with enough overlap");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finalizer over seed ^ index
  std::uint64_t z = seed ^ (index * 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace uae

#include "uae/phantom.hpp"

#include "uae/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace uae {

void PhantomSpec::validate() const {
  for (int d : dims) {
    if (d < 8) throw Error(ErrorCode::InvalidArgument, "phantom dims must be >= 8");
  }
  if (!(spacing > 0.0)) throw Error(ErrorCode::InvalidArgument, "spacing must be > 0");
  if (num_organs < 0) throw Error(ErrorCode::InvalidArgument, "num_organs must be >= 0");
  if (!(organ_axis_min > 0.0) || organ_axis_max < organ_axis_min) {
    throw Error(ErrorCode::InvalidArgument, "organ axis range invalid");
  }
  if (organ_gap < 0.0 || texture_amplitude < 0.0 || !(texture_scale > 0.0) || texture_blobs < 0) {
    throw Error(ErrorCode::InvalidArgument, "texture parameters invalid");
  }
  if (!(body_intensity > 0.0) || organ_intensity_max < organ_intensity_min || !(organ_intensity_min > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "intensities must be > 0");
  }
}

VolumeGeometry PhantomSpec::geometry() const {
  VolumeGeometry g;
  g.dims = dims;
  g.spacing = Eigen::Vector3d::Constant(spacing);
  return g;
}

bool Ellipsoid::contains(const Point3& p) const {
  const Eigen::Vector3d local = axes.transpose() * (p - center);
  return local.cwiseQuotient(semi_axes).squaredNorm() <= 1.0;
}

double Ellipsoid::volume() const {
  return 4.0 / 3.0 * std::numbers::pi * semi_axes.prod();
}

PhantomField::PhantomField(const PhantomSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const VolumeGeometry g = spec.geometry();
  const Point3 extent = g.spacing.cwiseProduct(Point3(g.dims[0] - 1, g.dims[1] - 1, g.dims[2] - 1));
  body_.center = g.origin + 0.5 * extent;
  body_.semi_axes = Eigen::Vector3d(0.45 * extent.x(), 0.37 * extent.y(), 0.43 * extent.z());

  const double r_max = spec.organ_axis_max;
  const Eigen::Vector3d inner = (body_.semi_axes.array() - r_max - spec.organ_gap).max(0.0).matrix();
  for (int i = 0; i < spec.num_organs; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      Ellipsoid e;
      for (int a = 0; a < 3; ++a) {
        e.semi_axes(a) = spec.organ_axis_min + u01(rng) * (spec.organ_axis_max - spec.organ_axis_min);
      }
      e.axes = rotation_from_euler_deg(360.0 * u01(rng), 360.0 * u01(rng), 360.0 * u01(rng));
      Eigen::Vector3d off;
      for (int a = 0; a < 3; ++a) off(a) = (2.0 * u01(rng) - 1.0) * inner(a);
      if (inner.minCoeff() <= 0.0 || off.cwiseQuotient(inner).squaredNorm() > 1.0) continue;
      e.center = body_.center + off;
      const double r = e.semi_axes.maxCoeff();
      placed = std::all_of(organs_.begin(), organs_.end(), [&](const Ellipsoid& o) {
        return (o.center - e.center).norm() > r + o.semi_axes.maxCoeff() + spec.organ_gap;
      });
      if (placed) organs_.push_back(e);
    }
    if (!placed) {
      throw Error(ErrorCode::PlacementFailure, "could not place organ " + std::to_string(i) + " after 1000 tries");
    }
  }

  std::vector<int> band(static_cast<std::size_t>(spec.num_organs));
  std::iota(band.begin(), band.end(), 0);
  std::shuffle(band.begin(), band.end(), rng);
  for (int i = 0; i < spec.num_organs; ++i) {
    const double t = (band[static_cast<std::size_t>(i)] + 0.5) / spec.num_organs;
    organ_intensity_.push_back(spec.organ_intensity_min + t * (spec.organ_intensity_max - spec.organ_intensity_min));
  }

  const Point3 lo = body_.center - body_.semi_axes;
  for (int i = 0; i < spec.texture_blobs; ++i) {
    Blob b;
    for (int a = 0; a < 3; ++a) b.center(a) = lo(a) + 2.0 * body_.semi_axes(a) * u01(rng);
    b.amplitude = (2.0 * u01(rng) - 1.0) * spec.texture_amplitude;
    blobs_.push_back(b);
  }
  cell_ = 3.0 * spec.texture_scale;
  grid_origin_ = lo;
  for (int a = 0; a < 3; ++a) {
    grid_dims_[static_cast<std::size_t>(a)] = std::max(1, static_cast<int>(std::ceil(2.0 * body_.semi_axes(a) / cell_)));
  }
  cells_.resize(static_cast<std::size_t>(grid_dims_[0]) * grid_dims_[1] * grid_dims_[2]);
  for (std::size_t i = 0; i < blobs_.size(); ++i) {
    std::array<int, 3> c{};
    for (int a = 0; a < 3; ++a) {
      c[static_cast<std::size_t>(a)] = std::clamp(static_cast<int>((blobs_[i].center(a) - grid_origin_(a)) / cell_), 0,
                                                  grid_dims_[static_cast<std::size_t>(a)] - 1);
    }
    cells_[(static_cast<std::size_t>(c[2]) * grid_dims_[1] + c[1]) * grid_dims_[0] + c[0]].push_back(static_cast<int>(i));
  }
}

double PhantomField::intensity(const Point3& p) const {
  if (!body_.contains(p)) return 0.0;
  double v = spec_.body_intensity;
  for (std::size_t i = 0; i < organs_.size(); ++i) {
    if (organs_[i].contains(p)) {
      v = organ_intensity_[i];
      break;
    }
  }
  std::array<int, 3> c{};
  for (int a = 0; a < 3; ++a) c[static_cast<std::size_t>(a)] = static_cast<int>(std::floor((p(a) - grid_origin_(a)) / cell_));
  const double inv2s2 = 0.5 / (spec_.texture_scale * spec_.texture_scale);
  const double cutoff2 = cell_ * cell_;
  for (int dz = -1; dz <= 1; ++dz) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int x = c[0] + dx, y = c[1] + dy, z = c[2] + dz;
        if (x < 0 || y < 0 || z < 0 || x >= grid_dims_[0] || y >= grid_dims_[1] || z >= grid_dims_[2]) continue;
        for (int bi : cells_[(static_cast<std::size_t>(z) * grid_dims_[1] + y) * grid_dims_[0] + x]) {
          const Blob& b = blobs_[static_cast<std::size_t>(bi)];
          const double d2 = (p - b.center).squaredNorm();
          if (d2 < cutoff2) v += b.amplitude * std::exp(-d2 * inv2s2);
        }
      }
    }
  }
  return std::max(v, 0.02);
}

std::uint16_t PhantomField::label(const Point3& p) const {
  for (std::size_t i = 0; i < organs_.size(); ++i) {
    if (organs_[i].contains(p)) return static_cast<std::uint16_t>(i + 1);
  }
  return 0;
}

std::vector<Landmark> PhantomField::landmarks() const {
  std::vector<Landmark> out;
  for (std::size_t i = 0; i < organs_.size(); ++i) {
    const Ellipsoid& e = organs_[i];
    const double r = e.semi_axes.minCoeff();
    const int base = static_cast<int>(i) * 7;
    out.push_back({base, e.center, r});
    for (int a = 0; a < 3; ++a) {
      const Point3 d = e.semi_axes(a) * e.axes.col(a);
      out.push_back({base + 1 + 2 * a, e.center + d, r});
      out.push_back({base + 2 + 2 * a, e.center - d, r});
    }
  }
  return out;
}

namespace {

template <typename F>
void rasterize(const VolumeGeometry& g, F&& f) {
#pragma omp parallel for schedule(static)
  for (int z = 0; z < g.dims[2]; ++z) {
    for (int y = 0; y < g.dims[1]; ++y) {
      for (int x = 0; x < g.dims[0]; ++x) f(x, y, z, g.to_physical(Point3(x, y, z)));
    }
  }
}

}  // namespace

Phantom gen_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  const PhantomField field(spec, seed);
  Phantom ph;
  const VolumeGeometry g = spec.geometry();
  ph.volume = ScalarVolume(g);
  ph.labels = LabelVolume(g);
  rasterize(g, [&](int x, int y, int z, const Point3& p) {
    ph.volume.at(x, y, z) = static_cast<float>(field.intensity(p));
    ph.labels.at(x, y, z) = field.label(p);
  });
  ph.landmarks = field.landmarks();
  return ph;
}

std::string_view to_string(ModalityRemap r) {
  switch (r) {
    case ModalityRemap::identity: return "identity";
    case ModalityRemap::inverted: return "inverted";
    case ModalityRemap::mri: return "mri";
  }
  return "?";
}

ModalityRemap parse_remap(std::string_view s) {
  if (s == "identity") return ModalityRemap::identity;
  if (s == "inverted") return ModalityRemap::inverted;
  if (s == "mri") return ModalityRemap::mri;
  throw Error(ErrorCode::InvalidArgument, "unknown modality remap '" + std::string(s) + "'");
}

double remap_intensity(ModalityRemap r, double v) {
  if (v <= 0.0) return 0.0;
  switch (r) {
    case ModalityRemap::identity: return v;
    case ModalityRemap::inverted: return std::max(0.02, 1.2 - v);
    case ModalityRemap::mri: {
      // piecewise-linear, non-monotone
      static constexpr double xs[] = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
      static constexpr double ys[] = {0.05, 0.7, 0.3, 0.9, 0.5, 0.15};
      const double c = std::min(v, 1.0);
      int k = std::min(4, static_cast<int>(c / 0.2));
      const double t = (c - xs[k]) / 0.2;
      return ys[k] + t * (ys[k + 1] - ys[k]);
    }
  }
  return v;
}

PhantomPair gen_pair(const PhantomSpec& spec, const AffineTransform& transform, ModalityRemap remap,
                     const std::optional<Box3>& fov, const std::vector<Corruption>& corruptions,
                     std::uint64_t seed) {
  const PhantomField field(spec, seed);
  const VolumeGeometry g = spec.geometry();

  const auto& organs = field.organs();
  if (!organs.empty()) {
    const auto in_view = std::count_if(organs.begin(), organs.end(), [&](const Ellipsoid& e) {
      return g.contains(g.to_voxel(transform.apply(e.center)));
    });
    if (2 * in_view < static_cast<long>(organs.size())) {
      throw Error(ErrorCode::InsufficientOverlap, "transform moves most organs out of view");
    }
  }

  PhantomPair pp;
  pp.transform = transform;
  pp.remap = remap;
  pp.fov = fov;
  pp.corruptions = corruptions;
  pp.a = gen_phantom(spec, seed);

  const AffineTransform inv = transform.inverse();
  Phantom& b = pp.b;
  b.volume = ScalarVolume(g);
  b.labels = LabelVolume(g);
  rasterize(g, [&](int x, int y, int z, const Point3& p) {
    const Point3 src = inv.apply(p);
    double v = remap_intensity(remap, field.intensity(src));
    for (const Corruption& c : corruptions) {
      if ((p - c.center).norm() > c.radius) continue;
      if (c.kind == CorruptionKind::occlusion) v = c.value;
      else if (v > 0.0) v = std::max(0.02, 1.2 - v);
    }
    b.volume.at(x, y, z) = static_cast<float>(v);
    b.labels.at(x, y, z) = field.label(src);
  });
  for (const Landmark& l : pp.a.landmarks) b.landmarks.push_back({l.id, transform.apply(l.position), l.radius});
  if (fov) {
    b.volume = crop(b.volume, *fov);
    b.labels = crop(b.labels, *fov);
  }
  return pp;
}

void write_landmarks(const std::vector<Landmark>& lms, const std::filesystem::path& path,
                     bool with_radius) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  f.precision(17);
  for (const Landmark& l : lms) {
    f << l.id << ' ' << l.position.x() << ' ' << l.position.y() << ' ' << l.position.z();
    if (with_radius) f << ' ' << l.radius;
    f << '\n';
  }
  if (!f) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

std::vector<Landmark> read_landmarks(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::vector<Landmark> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    std::istringstream s(line);
    Landmark l;
    if (!(s >> l.id >> l.position.x() >> l.position.y() >> l.position.z())) {
      throw Error(ErrorCode::InvalidArgument, path.string() + ":" + std::to_string(lineno) + ": expected 'id x y z'");
    }
    double r = 0.0;
    if (s >> r) l.radius = r;
    out.push_back(l);
  }
  return out;
}

std::uint64_t spec_hash(const PhantomSpec& s) {
  std::ostringstream o;
  o.precision(17);
  o << s.dims[0] << ' ' << s.dims[1] << ' ' << s.dims[2] << ' ' << s.spacing << ' ' << s.num_organs << ' '
    << s.organ_axis_min << ' ' << s.organ_axis_max << ' ' << s.organ_gap << ' ' << s.organ_intensity_min
    << ' ' << s.organ_intensity_max << ' ' << s.body_intensity << ' ' << s.texture_amplitude << ' '
    << s.texture_scale << ' ' << s.texture_blobs;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : o.str()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace uae

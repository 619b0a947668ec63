#include "run_config.hpp"

#include "uae/adareg.hpp"
#include "uae/augment.hpp"
#include "uae/error.hpp"
#include "uae/evf.hpp"
#include "uae/geometry.hpp"
#include "uae/kernels.hpp"
#include "uae/matching.hpp"
#include "uae/metrics.hpp"
#include "uae/model.hpp"
#include "uae/phantom.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using namespace uae;
using uae::cli::RunConfig;

namespace {

// Bad invocation or bad config: exit code 1. Library errors on the data
// itself exit with 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string f6(double v) { return fmt("%.6f", v); }

void warn(const std::string& s) { std::cerr << s << '\n'; }

Point3 parse_point(const std::string& s) {
  std::vector<double> v;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("point '" + s + "' is not 'x,y,z'");
    }
  }
  if (v.size() != 3) throw UsageError("point '" + s + "' is not 'x,y,z'");
  return {v[0], v[1], v[2]};
}

SimilarityWeights parse_weights(const std::string& s) {
  std::vector<double> v;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      v.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw UsageError("weights '" + s + "' are not 'coarse,fine[,semantic]'");
    }
  }
  if (v.size() != 2 && v.size() != 3) throw UsageError("weights '" + s + "' are not 'coarse,fine[,semantic]'");
  return {v[0], v[1], v.size() == 3 ? v[2] : 0.0};
}

// ------------------------------------------------------------------ files

EmbeddingSet read_embedding_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw UsageError("embedding directory " + dir.string() + " does not exist");
  EmbeddingSet set;
  set.coarse = read_embedding_volume(dir / "coarse.evf");
  set.fine = read_embedding_volume(dir / "fine.evf");
  if (fs::exists(dir / "semantic.evf")) set.semantic = read_embedding_volume(dir / "semantic.evf");
  set.validate();
  return set;
}

void write_embedding_dir(const EmbeddingSet& set, const fs::path& dir) {
  fs::create_directories(dir);
  write_volume(set.coarse, dir / "coarse.evf");
  write_volume(set.fine, dir / "fine.evf");
  if (set.semantic) write_volume(*set.semantic, dir / "semantic.evf");
}

std::vector<Landmark> read_nonempty_landmarks(const fs::path& path) {
  if (!fs::exists(path)) throw UsageError("landmark file " + path.string() + " does not exist");
  auto lms = read_landmarks(path);
  if (lms.empty()) throw UsageError("landmark file " + path.string() + " is empty");
  return lms;
}

// Pairs two landmark lists by id, in the order of `a`.
std::pair<std::vector<Landmark>, std::vector<Landmark>> pair_by_id(const std::vector<Landmark>& a,
                                                                   const std::vector<Landmark>& b) {
  std::map<int, const Landmark*> by_id;
  for (const auto& l : b) by_id[l.id] = &l;
  std::pair<std::vector<Landmark>, std::vector<Landmark>> out;
  for (const auto& l : a) {
    const auto it = by_id.find(l.id);
    if (it == by_id.end()) throw Error(ErrorCode::MismatchedLengths, "landmark id " + std::to_string(l.id) + " has no partner");
    out.first.push_back(l);
    out.second.push_back(*it->second);
  }
  if (out.first.size() != b.size()) throw Error(ErrorCode::MismatchedLengths, "landmark files list different ids");
  return out;
}

std::vector<Point3> positions(const std::vector<Landmark>& lms) {
  std::vector<Point3> p;
  for (const auto& l : lms) p.push_back(l.position);
  return p;
}

std::string matrix_rows(const Eigen::Matrix3d& m, const Eigen::Vector3d& t) {
  std::string s;
  for (int r = 0; r < 3; ++r) {
    s += fmt("%.9f", m(r, 0)) + " " + fmt("%.9f", m(r, 1)) + " " + fmt("%.9f", m(r, 2)) + " " + fmt("%.9f", t(r)) + "\n";
  }
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  f << text;
}

// Dataset manifest: `volume <scan> [<labels>]` and
// `pair <id> <fixed> <moving> [<fixed landmarks> <moving landmarks>]` lines,
// paths relative to the manifest.
struct Manifest {
  struct Volume {
    fs::path scan;
    std::optional<fs::path> labels;
  };
  struct Pair {
    std::string id;
    fs::path fixed, moving;
    std::optional<fs::path> fixed_landmarks, moving_landmarks;
  };
  std::vector<Volume> volumes;
  std::vector<Pair> pairs;
};

Manifest read_manifest(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot read manifest " + path.string());
  const fs::path base = path.parent_path();
  Manifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    std::istringstream s(line);
    std::vector<std::string> tok;
    for (std::string t; s >> t;) tok.push_back(t);
    if (tok.empty() || tok[0][0] == '#') continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (tok[0] == "volume" && (tok.size() == 2 || tok.size() == 3)) {
      Manifest::Volume v{base / tok[1], std::nullopt};
      if (tok.size() == 3) v.labels = base / tok[2];
      m.volumes.push_back(v);
    } else if (tok[0] == "pair" && (tok.size() == 4 || tok.size() == 6)) {
      Manifest::Pair p{tok[1], base / tok[2], base / tok[3], std::nullopt, std::nullopt};
      if (tok.size() == 6) {
        p.fixed_landmarks = base / tok[4];
        p.moving_landmarks = base / tok[5];
      }
      m.pairs.push_back(p);
    } else {
      throw UsageError(where + ": expected 'volume <scan> [<labels>]' or 'pair <id> <fixed> <moving> [<lm> <lm>]'");
    }
  }
  return m;
}

// ------------------------------------------------------------ subcommands

struct Globals {
  std::optional<std::uint64_t> seed;
  int threads = 0;
  std::string config;
};

RunConfig resolve_config(const Globals& g, const std::string& path) {
  RunConfig cfg;
  if (!path.empty()) {
    try {
      cfg = cli::load_run_config(path);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  }
  if (g.seed) {
    cfg.seed = *g.seed;
    cfg.train.seed = *g.seed;
  }
  std::cerr << "# resolved config\n" << cli::format_run_config(cfg) << "# end of config\n";
  return cfg;
}

struct PhantomGenArgs {
  std::string spec, out;
  int count = 1;
};

int run_phantom_gen(const Globals& g, const PhantomGenArgs& a) {
  if (!g.config.empty()) throw UsageError("phantom-gen takes its settings from the phantom spec file; drop --config");
  const RunConfig cfg = resolve_config(g, a.spec);
  if (a.count < 1) throw UsageError("--count must be >= 1");
  const fs::path out(a.out);
  fs::create_directories(out);
  std::string manifest;
  std::uint64_t attempt = 0;
  for (int i = 0; i < a.count; ++i) {
    char name_buf[16];
    std::snprintf(name_buf, sizeof name_buf, "case%03d", i);
    const std::string name = name_buf;
    std::optional<PhantomPair> pp;
    std::uint64_t seed = 0;
    for (int tries = 0; !pp; ++tries, ++attempt) {
      if (tries == 100) throw Error(ErrorCode::PlacementFailure, "no valid phantom in 100 attempts");
      seed = derive_seed(cfg.seed, attempt);
      std::mt19937_64 rng(derive_seed(seed, 1));
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      AffineTransform t;
      std::optional<Box3> fov;
      if (cfg.suite.pairs) {
        const double r = cfg.suite.max_rotation_deg, d = cfg.suite.max_translation_mm;
        t.linear = rotation_from_euler_deg(r * u(rng), r * u(rng), r * u(rng));
        const VolumeGeometry geo = cfg.phantom.geometry();
        const Point3 c = geo.origin + geo.spacing.cwiseProduct(
                                          Point3(geo.dims[0] - 1, geo.dims[1] - 1, geo.dims[2] - 1) / 2.0);
        t.translation = c - t.linear * c + Point3(d * u(rng), d * u(rng), d * u(rng));
        if (cfg.suite.fov_margin > 0) {
          const int m = cfg.suite.fov_margin;
          Box3 b;
          b.min = {m, m, m};
          b.max = {geo.dims[0] - 1 - m, geo.dims[1] - 1 - m, geo.dims[2] - 1 - m};
          fov = b;
        }
      }
      try {
        pp = gen_pair(cfg.phantom, t, cfg.suite.remap, fov, {}, seed);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::PlacementFailure && e.code() != ErrorCode::InsufficientOverlap) throw;
        warn("warning: phantom seed " + std::to_string(seed) + " rejected: " + e.what());
      }
    }
    const fs::path dir = out / name;
    fs::create_directories(dir);
    write_volume(pp->a.volume, dir / "a.evf");
    write_volume(pp->a.labels, dir / "a_labels.evf");
    write_landmarks(pp->a.landmarks, dir / "a_landmarks.txt", true);
    manifest += "volume " + name + "/a.evf " + name + "/a_labels.evf\n";
    if (cfg.suite.pairs) {
      write_volume(pp->b.volume, dir / "b.evf");
      write_volume(pp->b.labels, dir / "b_labels.evf");
      write_landmarks(pp->b.landmarks, dir / "b_landmarks.txt", true);
      write_text(dir / "transform.txt", matrix_rows(pp->transform.linear, pp->transform.translation));
      manifest += "pair " + name + " " + name + "/a.evf " + name + "/b.evf " + name + "/a_landmarks.txt " + name +
                  "/b_landmarks.txt\n";
    }
    std::cout << name << " seed=" << seed << " organs=" << pp->a.landmarks.size() / 7
              << " landmarks=" << pp->a.landmarks.size() << '\n';
  }
  write_text(out / "manifest.txt", manifest);
  return 0;
}

struct EmbedArgs {
  std::string volume, model, out;
};

int run_embed(const Globals& g, const EmbedArgs& a) {
  resolve_config(g, g.config);
  const ScalarVolume vol = read_scalar_volume(a.volume);
  const ProjectionModel model = load_model(a.model);
  const EmbeddingSet set = embed(vol, model);
  write_embedding_dir(set, a.out);
  const EmbedStats st = last_embed_stats();
  const auto& d = set.geometry().dims;
  std::cout << "grid " << d[0] << ' ' << d[1] << ' ' << d[2] << " heads " << (set.semantic ? 3 : 2) << " zero_projections "
            << st.zero_coarse + st.zero_fine + st.zero_semantic << '\n';
  return 0;
}

struct MatchArgs {
  std::string templ, point, query, method = "nn", weights;
};

SimilarityWeights choose_weights(const RunConfig& cfg, const std::string& flag, const EmbeddingSet& set) {
  SimilarityWeights w = !flag.empty() ? parse_weights(flag) : cfg.weights ? *cfg.weights : SimilarityWeights::defaults_for(set);
  w.validate(set.semantic.has_value());
  return w;
}

int run_match(const Globals& g, const MatchArgs& a) {
  const RunConfig cfg = resolve_config(g, g.config);
  const Point3 t = parse_point(a.point);
  const EmbeddingSet templ = read_embedding_dir(a.templ);
  const EmbeddingSet query = read_embedding_dir(a.query);
  const SimilarityWeights w = choose_weights(cfg, a.weights, templ);
  const MatchResult r = a.method == "nn" ? nn_match(templ, t, query, w)
                                         : fixpoint_match(t, templ, query, w, cfg.adareg.fixpoint);
  if (!r.ok) throw Error(ErrorCode::InvalidArgument, "match failed: " + r.error);
  std::cout << f6(r.point.x()) << ' ' << f6(r.point.y()) << ' ' << f6(r.point.z()) << ' ' << f6(r.similarity) << ' '
            << to_string(r.method) << ' ' << r.n_fix << '\n';
  return 0;
}

struct SimmapArgs {
  std::string templ, point, query, out, weights;
};

int run_simmap(const Globals& g, const SimmapArgs& a) {
  const RunConfig cfg = resolve_config(g, g.config);
  const Point3 t = parse_point(a.point);
  const EmbeddingSet templ = read_embedding_dir(a.templ);
  const EmbeddingSet query = read_embedding_dir(a.query);
  const ScalarVolume map = similarity_map(templ, t, query, choose_weights(cfg, a.weights, templ));
  write_volume(map, a.out);
  const auto peak = std::max_element(map.data.begin(), map.data.end()) - map.data.begin();
  const auto& d = map.geometry.dims;
  const long x = peak % d[0], y = (peak / d[0]) % d[1], z = peak / (static_cast<long>(d[0]) * d[1]);
  // Peak in image voxel units, like match output.
  std::cout << "peak " << 2 * x << ' ' << 2 * y << ' ' << 2 * z << ' ' << f6(map.data[peak]) << '\n';
  return 0;
}

struct FitArgs {
  std::string src, dst;
};

int run_fit_rigid(const Globals& g, const FitArgs& a) {
  resolve_config(g, g.config);
  const auto [src, dst] = pair_by_id(read_nonempty_landmarks(a.src), read_nonempty_landmarks(a.dst));
  const auto [t, rep] = fit_rigid(positions(src), positions(dst));
  std::cout << matrix_rows(t.rotation, t.translation) << "rss " << fmt("%.9g", rep.residual_sum_squares) << '\n';
  return 0;
}

struct AdaregArgs {
  std::string fixed, moving, model, out;
  std::optional<int> margin;
  std::string fixed_landmarks, moving_landmarks;
};

int run_adareg(const Globals& g, const AdaregArgs& a) {
  const RunConfig cfg = resolve_config(g, g.config);
  if (a.fixed_landmarks.empty() != a.moving_landmarks.empty()) {
    throw UsageError("--fixed-landmarks and --moving-landmarks go together");
  }
  const int margin = a.margin ? *a.margin : cfg.adareg.margins.empty() ? 5 : cfg.adareg.margins.front();
  const ScalarVolume fixed = read_scalar_volume(a.fixed);
  const ScalarVolume moving = read_scalar_volume(a.moving);
  const ProjectionModel model = load_model(a.model);
  const RegisteredPair pair = adareg_once(fixed, embed(fixed, model), moving, embed(moving, model), cfg.adareg, margin);

  const fs::path out(a.out);
  fs::create_directories(out);
  write_volume(pair.fixed_crop, out / "fixed_crop.evf");
  write_volume(pair.overlap, out / "overlap.evf");
  write_text(out / "transform.txt", matrix_rows(pair.moving_to_fixed.rotation, pair.moving_to_fixed.translation));

  const auto& p = pair.provenance;
  std::string m;
  m += "margin=" + std::to_string(p.margin) + "\n";
  m += "matches=" + std::to_string(p.matches) + "\n";
  m += "inliers=" + std::to_string(p.inliers) + "\n";
  m += "mean_residual_mm=" + f6(p.mean_residual_mm) + "\n";
  m += "crop_min=" + std::to_string(pair.crop_box.min[0]) + "," + std::to_string(pair.crop_box.min[1]) + "," +
       std::to_string(pair.crop_box.min[2]) + "\n";
  m += "crop_max=" + std::to_string(pair.crop_box.max[0]) + "," + std::to_string(pair.crop_box.max[1]) + "," +
       std::to_string(pair.crop_box.max[2]) + "\n";
  m += "grid_spacing=" + std::to_string(cfg.adareg.grid_spacing) + "\n";
  m += "similarity_floor=" + f6(cfg.adareg.similarity_floor) + "\n";
  m += "trim_fraction=" + f6(cfg.adareg.trim_fraction) + "\n";
  m += "matcher=" + std::string(to_string(cfg.adareg.matcher)) + "\n";
  m += "model_iteration=" + std::to_string(model.iteration) + "\n";
  m += "model_config_hash=" + std::to_string(model.config_hash) + "\n";
  if (!a.fixed_landmarks.empty()) {
    const auto [fl, ml] = pair_by_id(read_nonempty_landmarks(a.fixed_landmarks), read_nonempty_landmarks(a.moving_landmarks));
    CrossModalityCase c;
    c.fixed_landmarks = positions(fl);
    c.moving_landmarks = positions(ml);
    m += "med_before_mm=" + f6(case_med(c, nullptr, nullptr)) + "\n";
    m += "med_after_mm=" + f6(case_med(c, &pair, nullptr)) + "\n";
  }
  write_text(out / "manifest.txt", m);
  std::cout << m;
  return 0;
}

struct TrainArgs {
  std::string manifest, mode = "uae-s", out;
};

int run_train(const Globals& g, TrainArgs a) {
  RunConfig cfg = resolve_config(g, g.config);
  const Manifest m = read_manifest(a.manifest);
  const fs::path out(a.out);
  if (a.mode == "uae-m-iter") {
    if (m.pairs.empty()) throw UsageError("uae-m-iter needs 'pair' lines in the manifest");
    std::vector<CrossModalityCase> cases;
    for (const auto& p : m.pairs) {
      CrossModalityCase c;
      c.id = p.id;
      c.fixed = read_scalar_volume(p.fixed);
      c.moving = read_scalar_volume(p.moving);
      if (p.fixed_landmarks) {
        const auto [fl, ml] = pair_by_id(read_landmarks(*p.fixed_landmarks), read_landmarks(*p.moving_landmarks));
        c.fixed_landmarks = positions(fl);
        c.moving_landmarks = positions(ml);
      }
      cases.push_back(std::move(c));
    }
    cfg.train.augment.aggressive = true;
    const UaemResult r = uaem_iterate(cases, cfg.train, cfg.adareg, nullptr, true);
    for (std::size_t k = 0; k < r.models.size(); ++k) {
      const fs::path p = k + 1 == r.models.size() ? out
                                                  : out.parent_path() / (out.stem().string() + "_k" + std::to_string(k) +
                                                                         out.extension().string());
      save_model(r.models[k], p);
    }
    std::cout << format_iteration_table(r.table);
    std::cout << "initial_med_mm " << f6(r.initial_med) << '\n';
    for (std::size_t k = 0; k < r.mean_med.size(); ++k) std::cout << "mean_med_mm k=" << k << ' ' << f6(r.mean_med[k]) << '\n';
    return 0;
  }
  TrainMode mode;
  if (a.mode == "uae-s") {
    mode = TrainMode::uae_s;
  } else {
    mode = TrainMode::uae_m_selfsup;
    cfg.train.augment.aggressive = true;
  }
  if (m.volumes.empty()) throw UsageError("the manifest lists no 'volume' lines");
  std::vector<TrainingSample> data;
  for (const auto& v : m.volumes) {
    TrainingSample s{read_scalar_volume(v.scan), std::nullopt};
    if (v.labels && mode == TrainMode::uae_s) s.labels = read_label_volume(*v.labels);
    data.push_back(std::move(s));
  }
  const TrainResult r = train(data, cfg.train, mode);
  save_model(r.model, out);
  std::cout << "step,loss_fine,loss_coarse,loss_semantic\n";
  for (const auto& l : r.log) {
    std::cout << l.step << ',' << fmt("%.9g", l.fine) << ',' << fmt("%.9g", l.coarse) << ',' << fmt("%.9g", l.semantic)
              << '\n';
  }
  return 0;
}

struct EvalArgs {
  std::string predicted, truth;
  double threshold = 10.0;
  bool kv = false;
};

int run_eval(const Globals& g, const EvalArgs& a) {
  resolve_config(g, g.config);
  const auto [pred, truth] = pair_by_id(read_nonempty_landmarks(a.predicted), read_nonempty_landmarks(a.truth));
  LandmarkPairSet set;
  set.predicted = positions(pred);
  set.truth = positions(truth);
  bool radii = true;
  for (const auto& l : truth) radii = radii && l.radius > 0.0;
  if (radii) {
    for (const auto& l : truth) set.radii.push_back(l.radius);
  }
  const MetricsReport r = evaluate(set, a.threshold);
  std::cout << (a.kv ? format_report_kv(r) : format_report(r));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Universal anatomical embedding toolkit: phantoms, embeddings, matching, alignment, training and evaluation."};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random draw (overrides the config)");
  app.add_option("--threads", g.threads, "Cap on worker threads (0 keeps the runtime default)")->check(CLI::NonNegativeNumber);
  app.add_option("--config", g.config, "Run config file")->check(CLI::ExistingFile);

  std::function<int()> action;

  PhantomGenArgs pg;
  auto* c = app.add_subcommand("phantom-gen", "Generate a phantom suite and its dataset manifest");
  c->add_option("spec", pg.spec, "Run config with [phantom] and [suite] settings")->required()->check(CLI::ExistingFile);
  c->add_option("out", pg.out, "Output directory")->required();
  c->add_option("--count", pg.count, "Number of cases");
  c->callback([&] { action = [&] { return run_phantom_gen(g, pg); }; });

  EmbedArgs em;
  c = app.add_subcommand("embed", "Embed a scalar volume; writes coarse/fine[/semantic].evf");
  c->add_option("volume", em.volume)->required()->check(CLI::ExistingFile);
  c->add_option("model", em.model)->required()->check(CLI::ExistingFile);
  c->add_option("out", em.out, "Output directory")->required();
  c->callback([&] { action = [&] { return run_embed(g, em); }; });

  MatchArgs ma;
  c = app.add_subcommand("match", "Find the query point matching a template point");
  c->add_option("template", ma.templ, "Template embedding directory")->required();
  c->add_option("point", ma.point, "Template point x,y,z in image voxels")->required();
  c->add_option("query", ma.query, "Query embedding directory")->required();
  c->add_option("--method", ma.method)->check(CLI::IsMember({"nn", "fixpoint"}));
  c->add_option("--weights", ma.weights, "coarse,fine[,semantic]");
  c->callback([&] { action = [&] { return run_match(g, ma); }; });

  SimmapArgs sm;
  c = app.add_subcommand("simmap", "Write the similarity map of a template point over the query");
  c->add_option("template", sm.templ)->required();
  c->add_option("point", sm.point)->required();
  c->add_option("query", sm.query)->required();
  c->add_option("out", sm.out, "Output .evf")->required();
  c->add_option("--weights", sm.weights, "coarse,fine[,semantic]");
  c->callback([&] { action = [&] { return run_simmap(g, sm); }; });

  FitArgs fr;
  c = app.add_subcommand("fit-rigid", "Least-squares rigid fit between landmark files (paired by id)");
  c->add_option("src", fr.src)->required();
  c->add_option("dst", fr.dst)->required();
  c->callback([&] { action = [&] { return run_fit_rigid(g, fr); }; });

  AdaregArgs ar;
  c = app.add_subcommand("adareg", "Align a small-FOV moving scan to a fixed scan and crop the fixed scan");
  c->add_option("fixed", ar.fixed)->required()->check(CLI::ExistingFile);
  c->add_option("moving", ar.moving)->required()->check(CLI::ExistingFile);
  c->add_option("model", ar.model)->required()->check(CLI::ExistingFile);
  c->add_option("out", ar.out, "Output directory")->required();
  c->add_option("--margin", ar.margin, "Crop dilation in voxels (default: first configured margin)");
  c->add_option("--fixed-landmarks", ar.fixed_landmarks)->check(CLI::ExistingFile);
  c->add_option("--moving-landmarks", ar.moving_landmarks)->check(CLI::ExistingFile);
  c->callback([&] { action = [&] { return run_adareg(g, ar); }; });

  TrainArgs tr;
  c = app.add_subcommand("train", "Train a model; the loss log goes to stdout as CSV");
  c->add_option("manifest", tr.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  c->add_option("out", tr.out, "Output model file")->required();
  c->add_option("--mode", tr.mode)->check(CLI::IsMember({"uae-s", "uae-m0", "uae-m-iter"}));
  c->callback([&] { action = [&] { return run_train(g, tr); }; });

  EvalArgs ev;
  c = app.add_subcommand("eval", "Landmark metrics of predicted against true positions (paired by id)");
  c->add_option("predicted", ev.predicted)->required();
  c->add_option("truth", ev.truth)->required();
  c->add_option("--threshold", ev.threshold, "CPM distance threshold, mm")->check(CLI::PositiveNumber);
  c->add_flag("--kv", ev.kv, "key=value output");
  c->callback([&] { action = [&] { return run_eval(g, ev); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  try {
    if (g.threads > 0) kernels::set_thread_count(g.threads);
    return action();
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
